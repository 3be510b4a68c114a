from .losses import (
    PairBatch,
    class_weights,
    contrastive_dloss_dD,
    contrastive_loss,
    distance,
    loss_gradient,
    weighted_contrastive_loss,
)
from .network import (
    BackboneConfig,
    ConvBlock,
    IncompatibleWeightsError,
    ModelError,
    NumericFault,
    Parameters,
    WeightFileError,
    backward_batch,
    embed,
    export_weights,
    forward,
    forward_batch,
    import_weights,
    init_parameters,
)
from .optim import SGDState, sgd_step
from .train import (
    ClassifierHead,
    TrainConfig,
    TrainingError,
    predict_with_head,
    pretrain_classifier,
    train_classifier,
    train_siamese,
)
