"""Experiment configuration, the From/To x imbalance-level grid runner and report files.

A config is a JSON document.  Relative paths inside it resolve against the
config file's directory.  Minimal example::

    {
      "datasets": {"toy": "toy/manifest.csv"},
      "imbalance_levels": ["M"]
    }

Everything else has defaults (10 folds, 100 majority samples, scratch init,
1:1 pairing, plain loss, histogram classifier).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import __version__
from .augment import AugmentConfig
from .classify import ClassifierSpec, SearchSpace, embed_dataset, fit_classifier, grid_search
from .data import Dataset, FoldPlan, ImbalanceLevel, ImbalanceSpec, load_manifest, make_folds
from .metrics import aggregate, confusion, macro_f1
from .model import (
    BackboneConfig,
    ConvBlock,
    Parameters,
    TrainConfig,
    init_parameters,
    predict_with_head,
    pretrain_classifier,
    train_classifier,
    train_siamese,
)
from .pairing import PairingConfig
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)

MODES = ("siamese", "single_cnn")
RUN_MANIFEST_VERSION = 1
RAW_COLUMNS = (
    "mode", "from", "to", "domain", "level", "majority", "minority", "technique",
    "classifier", "fold", "macro_f1", "status", "hyperparams", "weights", "error",
)
SUMMARY_COLUMNS = (
    "mode", "technique", "classifier", "level", "majority", "scope", "from", "to", "n", "mean", "std",
)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ClassifierEntry:
    spec: ClassifierSpec
    search: bool = True

    def to_dict(self) -> dict:
        s = self.spec
        return {"kind": s.kind, "k": s.k, "svm_kernel": s.svm_kernel, "svm_cost": s.svm_cost,
                "rf_trees": s.rf_trees, "search": self.search}


@dataclass(frozen=True)
class Technique:
    name: str
    init: str = "scratch"  # scratch | imported | pretrain
    init_arg: str | None = None  # weight path or pretraining source dataset
    augment: AugmentConfig = AugmentConfig()
    pairing: PairingConfig = PairingConfig()
    loss: str = "plain"
    classifiers: tuple[ClassifierEntry, ...] = (ClassifierEntry(ClassifierSpec("histogram")),)

    def to_dict(self) -> dict:
        if self.init == "scratch":
            init: Any = "scratch"
        else:
            init = {self.init: self.init_arg}
        return {
            "name": self.name,
            "init": init,
            "augment": self.augment.to_dict(),
            "pairing": {
                "ratio": self.pairing.ratio,
                "balanced_sampling": self.pairing.balanced_sampling,
                "pairs_per_epoch": self.pairing.pairs_per_epoch,
            },
            "loss": self.loss,
            "classifier": [c.to_dict() for c in self.classifiers],
        }


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: dict[str, str]
    grid: tuple[tuple[str, str], ...]
    imbalance_levels: tuple[ImbalanceLevel, ...]
    majority_counts: tuple[int, ...] = (100,)
    techniques: tuple[Technique, ...] = ()
    folds: int = 10
    seed: int = 0
    mode: str = "siamese"
    output_dir: str = "results"
    image_size: tuple[int, int] = (32, 32)
    channels: int = 1
    backbone: BackboneConfig = BackboneConfig()
    train: TrainConfig = TrainConfig()
    pretrain_count: int = 1700
    pretrain_epochs: int | None = None
    search_space: SearchSpace = SearchSpace()

    def to_dict(self) -> dict:
        bb = self.backbone.to_dict()
        bb.pop("input_shape")
        tr = self.train.to_dict()
        for k in ("loss", "seed"):
            tr.pop(k)
        return {
            "datasets": dict(self.datasets),
            "grid": [list(g) for g in self.grid],
            "imbalance_levels": [lv.value for lv in self.imbalance_levels],
            "majority_counts": list(self.majority_counts),
            "techniques": [t.to_dict() for t in self.techniques],
            "folds": self.folds,
            "seed": self.seed,
            "mode": self.mode,
            "output_dir": self.output_dir,
            "image_size": list(self.image_size),
            "channels": self.channels,
            "backbone": bb,
            "train": tr,
            "pretrain_count": self.pretrain_count,
            "pretrain_epochs": self.pretrain_epochs,
            "search_space": {
                "k_values": list(self.search_space.k_values),
                "kernels": list(self.search_space.kernels),
                "costs": list(self.search_space.costs),
                "trees": list(self.search_space.trees),
            },
        }


_TOP_KEYS = {
    "datasets", "grid", "imbalance_levels", "majority_counts", "techniques", "folds", "seed", "mode",
    "output_dir", "image_size", "channels", "backbone", "train", "pretrain_count", "pretrain_epochs",
    "search_space",
}
_TECH_KEYS = {"name", "init", "augment", "pairing", "loss", "classifier"}
_AUG_KEYS = {"alpha", "enable_shift", "enable_scale", "enable_rotate"}
_PAIR_KEYS = {"ratio", "balanced_sampling", "pairs_per_epoch"}
_CLS_KEYS = {"kind", "k", "svm_kernel", "svm_cost", "rf_trees", "search"}
_BB_KEYS = {"conv_blocks", "embedding_dim", "normalize", "use_bias"}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "momentum", "decay", "margin"}
_SEARCH_KEYS = {"k_values", "kernels", "costs", "trees"}


def _reject_unknown(doc: dict, allowed: set, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _guard(where: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_classifier(doc, where: str) -> ClassifierEntry:
    if isinstance(doc, str):
        doc = {"kind": doc}
    _reject_unknown(doc, _CLS_KEYS, where)
    doc = dict(doc)
    search = bool(doc.pop("search", True))
    return ClassifierEntry(_guard(where, ClassifierSpec, **doc), search)


def _parse_technique(doc, index: int, base: Path) -> Technique:
    where = f"techniques[{index}]"
    _reject_unknown(doc, _TECH_KEYS, where)
    init, init_arg = "scratch", None
    raw_init = doc.get("init", "scratch")
    if isinstance(raw_init, dict):
        if len(raw_init) != 1 or next(iter(raw_init)) not in ("imported", "pretrain"):
            raise ConfigError(f"{where}.init: expected 'scratch', {{'imported': path}} or {{'pretrain': dataset}}")
        init, init_arg = next(iter(raw_init.items()))
        if init == "imported":
            init_arg = str((base / init_arg).resolve()) if not os.path.isabs(init_arg) else init_arg
    elif raw_init not in ("scratch", "scratch_random"):
        raise ConfigError(f"{where}.init: unknown initialisation {raw_init!r}")
    aug = doc.get("augment", {})
    _reject_unknown(aug, _AUG_KEYS, f"{where}.augment")
    augment = _guard(f"{where}.augment", AugmentConfig, **aug)
    pdoc = doc.get("pairing", {})
    _reject_unknown(pdoc, _PAIR_KEYS, f"{where}.pairing")
    rp, rn = _guard(f"{where}.pairing.ratio", PairingConfig.parse_ratio, pdoc.get("ratio", "1:1"))
    pairing = _guard(f"{where}.pairing", PairingConfig, rp, rn, bool(pdoc.get("balanced_sampling", False)),
                     pdoc.get("pairs_per_epoch"))
    loss = doc.get("loss", "plain")
    if loss not in ("plain", "weighted"):
        raise ConfigError(f"{where}.loss: must be 'plain' or 'weighted', got {loss!r}")
    raw_cls = doc.get("classifier", [{"kind": "histogram"}])
    if isinstance(raw_cls, (dict, str)):
        raw_cls = [raw_cls]
    classifiers = tuple(_parse_classifier(c, f"{where}.classifier[{i}]") for i, c in enumerate(raw_cls))
    if not classifiers:
        raise ConfigError(f"{where}.classifier: at least one classifier is required")
    name = doc.get("name") or _signature(init, init_arg, augment, pairing, loss)
    return Technique(name, init, init_arg, augment, pairing, loss, classifiers)


def _signature(init, init_arg, augment, pairing, loss) -> str:
    init_txt = init if init == "scratch" else f"{init}:{Path(init_arg).name if init == 'imported' else init_arg}"
    bal = "+bal" if pairing.balanced_sampling else ""
    return f"init={init_txt};aug={augment.alpha:g};pair={pairing.ratio}{bal};loss={loss}"


def config_from_dict(doc: dict, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    base = Path(base_dir)
    _reject_unknown(doc, _TOP_KEYS, "config")
    if "datasets" not in doc or not doc["datasets"]:
        raise ConfigError("config.datasets: at least one dataset is required")
    _reject_unknown(doc["datasets"], set(doc["datasets"]), "config.datasets")
    datasets = {
        name: str((base / p).resolve()) if not os.path.isabs(p) else p for name, p in doc["datasets"].items()
    }
    raw_grid = doc.get("grid", "all")
    if raw_grid == "all":
        grid = tuple((a, b) for a in datasets for b in datasets)
    else:
        grid = []
        for i, pair in enumerate(raw_grid):
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ConfigError(f"config.grid[{i}]: expected [train_on, evaluate_on]")
            for name in pair:
                if name not in datasets:
                    raise ConfigError(f"config.grid[{i}]: unknown dataset {name!r}")
            grid.append((pair[0], pair[1]))
        grid = tuple(grid)
    if "imbalance_levels" not in doc:
        raise ConfigError("config.imbalance_levels: required")
    levels = []
    for i, tok in enumerate(doc["imbalance_levels"]):
        try:
            levels.append(ImbalanceLevel.parse(tok))
        except ValueError as exc:
            raise ConfigError(f"config.imbalance_levels[{i}]: {exc}") from None
    if not levels:
        raise ConfigError("config.imbalance_levels: at least one level is required")
    majority_counts = tuple(int(m) for m in doc.get("majority_counts", [100]))
    for m in majority_counts:
        for lv in levels:
            if m <= 0 or lv.minority_per_100 * m // 100 < 1:
                raise ConfigError(
                    f"config.majority_counts: {m} with level {lv.value} leaves no minority samples "
                    f"(a single-class draw)"
                )
    mode = doc.get("mode", "siamese")
    if mode not in MODES:
        raise ConfigError(f"config.mode: must be one of {MODES}, got {mode!r}")
    image_size = tuple(int(v) for v in doc.get("image_size", [32, 32]))
    channels = int(doc.get("channels", 1))
    bb = doc.get("backbone", {})
    _reject_unknown(bb, _BB_KEYS, "config.backbone")
    backbone = _guard(
        "config.backbone",
        BackboneConfig,
        input_shape=(image_size[0], image_size[1], channels),
        conv_blocks=tuple(ConvBlock(*b) for b in bb.get("conv_blocks", [[8, 3, 1, 2], [16, 3, 1, 2], [32, 3, 1, 2]])),
        embedding_dim=int(bb.get("embedding_dim", 64)),
        normalize=bool(bb.get("normalize", True)),
        use_bias=bool(bb.get("use_bias", True)),
    )
    tr = doc.get("train", {})
    _reject_unknown(tr, _TRAIN_KEYS, "config.train")
    train = _guard("config.train", TrainConfig, **tr)
    ss = doc.get("search_space", {})
    _reject_unknown(ss, _SEARCH_KEYS, "config.search_space")
    search_space = _guard(
        "config.search_space",
        SearchSpace,
        **{k: tuple(v) for k, v in ss.items()},
    )
    raw_tech = doc.get("techniques", [{}])
    if isinstance(raw_tech, dict):
        raw_tech = [raw_tech]
    techniques = tuple(_parse_technique(t, i, base) for i, t in enumerate(raw_tech))
    names = [t.name for t in techniques]
    if len(set(names)) != len(names):
        raise ConfigError(f"config.techniques: duplicate technique names {names}")
    for t in techniques:
        if t.init == "pretrain" and t.init_arg not in datasets:
            raise ConfigError(f"techniques.{t.name}.init.pretrain: unknown dataset {t.init_arg!r}")
    folds = int(doc.get("folds", 10))
    if folds <= 0:
        raise ConfigError("config.folds: must be positive")
    out = doc.get("output_dir", "results")
    return ExperimentConfig(
        datasets=datasets,
        grid=grid,
        imbalance_levels=tuple(levels),
        majority_counts=majority_counts,
        techniques=techniques,
        folds=folds,
        seed=int(doc.get("seed", 0)),
        mode=mode,
        output_dir=str((base / out).resolve()) if not os.path.isabs(out) else out,
        image_size=image_size,
        channels=channels,
        backbone=backbone,
        train=train,
        pretrain_count=int(doc.get("pretrain_count", 1700)),
        pretrain_epochs=doc.get("pretrain_epochs"),
        search_space=search_space,
    )


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    """Load a config document, or the ``config`` block of a run manifest (for replay)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if isinstance(doc, dict) and "run_manifest_version" in doc:
        doc = doc["config"]
    return config_from_dict(doc, path.parent)


# --------------------------------------------------------------------------
# results


@dataclass
class ResultRow:
    mode: str
    from_: str
    to: str
    level: str
    majority: int
    minority: int
    technique: str
    classifier: str
    fold: int
    macro_f1: float | None
    status: str = "ok"
    hyperparams: dict = field(default_factory=dict)
    weights: str = ""  # fingerprint of the trained parameters
    error: str = ""

    @property
    def domain(self) -> str:
        return "intra" if self.from_ == self.to else "inter"

    def as_csv(self) -> list[str]:
        return [
            self.mode, self.from_, self.to, self.domain, self.level, str(self.majority), str(self.minority),
            self.technique, self.classifier, str(self.fold),
            "" if self.macro_f1 is None else f"{self.macro_f1:.4f}",
            self.status, json.dumps(self.hyperparams, sort_keys=True), self.weights, self.error,
        ]


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    fold_plans: dict[str, FoldPlan] = field(default_factory=dict)
    histories: dict[str, list[float]] = field(default_factory=dict)

    @property
    def failures(self) -> list[ResultRow]:
        return [r for r in self.rows if r.status != "ok"]

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        self.fold_plans.update(other.fold_plans)
        self.histories.update(other.histories)

    def summary(self) -> list[dict]:
        """Per-cell mean/std plus inter-, intra-domain and global averages of cell means."""
        groups: dict[tuple, dict[tuple[str, str], list[float]]] = {}
        for r in self.rows:
            if r.status != "ok":
                continue
            key = (r.mode, r.technique, r.classifier, r.level, r.majority)
            groups.setdefault(key, {}).setdefault((r.from_, r.to), []).append(r.macro_f1)
        out = []
        for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], "HMLN".index(k[3]), k[4])):
            mode, tech, clf, level, maj = key
            cells = groups[key]
            means = {}
            for (a, b), vals in cells.items():
                agg = aggregate(vals)
                means[(a, b)] = agg.mean
                out.append(dict(mode=mode, technique=tech, classifier=clf, level=level, majority=maj,
                                scope="cell", **{"from": a}, to=b, n=len(vals), mean=agg.mean, std=agg.std))
            for scope, pick in (("inter_avg", lambda ab: ab[0] != ab[1]),
                                ("intra_avg", lambda ab: ab[0] == ab[1]),
                                ("global_avg", lambda ab: True)):
                vals = [m for ab, m in means.items() if pick(ab)]
                agg = aggregate(vals) if vals else None
                out.append(dict(mode=mode, technique=tech, classifier=clf, level=level, majority=maj,
                                scope=scope, **{"from": ""}, to="", n=len(vals),
                                mean=None if agg is None else agg.mean, std=None if agg is None else agg.std))
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def raw_csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in table.rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def summary_csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in table.summary():
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def emit_report(table: ResultTable, output_dir: str | os.PathLike, config: ExperimentConfig | None = None,
                command: str = "experiment") -> dict[str, Path]:
    """Write results_raw.csv, results_summary.csv, fold_plans.json, histories.csv and run_manifest.json."""
    if not table.rows:
        raise ValueError("refusing to write an empty result table")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw": out / "results_raw.csv",
        "summary": out / "results_summary.csv",
        "fold_plans": out / "fold_plans.json",
        "histories": out / "histories.csv",
        "manifest": out / "run_manifest.json",
    }
    paths["raw"].write_text(raw_csv_text(table), encoding="utf-8")
    paths["summary"].write_text(summary_csv_text(table), encoding="utf-8")
    plans = {k: json.loads(p.to_json()) for k, p in sorted(table.fold_plans.items())}
    paths["fold_plans"].write_text(json.dumps(plans, indent=1), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "epoch", "mean_loss"])
    for key in sorted(table.histories):
        for e, v in enumerate(table.histories[key]):
            w.writerow([key, e, f"{v:.6f}"])
    paths["histories"].write_text(buf.getvalue(), encoding="utf-8")
    manifest = {
        "run_manifest_version": RUN_MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "seed": config.seed if config else None,
        "config": config.to_dict() if config else None,
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return paths


# --------------------------------------------------------------------------
# running


class _Loader:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._cache: dict[str, Dataset] = {}

    def __call__(self, name: str) -> Dataset:
        if name not in self._cache:
            self._cache[name] = load_manifest(
                self.config.datasets[name], self.config.image_size, self.config.channels, name=name
            )
        return self._cache[name]


def _initial_params(config: ExperimentConfig, tech: Technique, load, seed: int, cache: dict) -> Parameters:
    if tech.init == "scratch":
        return init_parameters(config.backbone, "scratch_random", seed)
    if tech.init == "imported":
        return init_parameters(config.backbone, "imported", path=tech.init_arg)
    # pretrain once per (technique, source); reused by every fold
    key = (tech.name, tech.init_arg)
    if key not in cache:
        source = load(tech.init_arg).split("train")
        n = min(config.pretrain_count, len(source))
        rng = make_rng(config.seed, "pretrain-draw", tech.init_arg)
        subset = source.subset(sorted(rng.choice(len(source), size=n, replace=False).tolist()))
        tc = replace(config.train, seed=derive_seed(config.seed, "pretrain", tech.init_arg),
                     epochs=config.pretrain_epochs if config.pretrain_epochs is not None else config.train.epochs)
        start = init_parameters(config.backbone, "scratch_random", derive_seed(config.seed, "pretrain-init"))
        cache[key] = pretrain_classifier(subset, start, tc)
    return cache[key]


def _plan_key(src: str, spec: ImbalanceSpec) -> str:
    return f"{src}|{spec.level.value}|{spec.majority_count}"


def _classes_of(*datasets: Dataset) -> list[int]:
    out = set()
    for d in datasets:
        out |= set(d.classes)
    return sorted(out)


def run_experiment(config: ExperimentConfig, majority_counts: tuple[int, ...] | None = None) -> ResultTable:
    """Run every (technique, from, majority, level, fold) cell and evaluate on each grid target."""
    counts = tuple(majority_counts) if majority_counts is not None else config.majority_counts
    load = _Loader(config)
    table = ResultTable()
    pretrain_cache: dict = {}
    targets: dict[str, list[str]] = {}
    for a, b in config.grid:
        targets.setdefault(a, []).append(b)

    for t_index, tech in enumerate(config.techniques):
        for src, dsts in targets.items():
            for maj in counts:
                for level in config.imbalance_levels:
                    spec = ImbalanceSpec.from_level(level, maj)
                    cell = dict(mode=config.mode, from_=src, level=level.value, majority=maj,
                                minority=spec.minority_count, technique=tech.name)
                    try:
                        pool = load(src).split("train")
                        key = _plan_key(src, spec)
                        if key not in table.fold_plans:
                            plan_seed = derive_seed(config.seed, "folds", src, level.value, maj)
                            table.fold_plans[key] = make_folds(pool, spec, config.folds, plan_seed)
                        plan = table.fold_plans[key]
                    except Exception as exc:
                        log.error("cell %s/%s/%d failed while sampling: %s", src, level.value, maj, exc)
                        _fail_all(table, cell, dsts, tech, config, range(config.folds), exc)
                        continue
                    for fold in range(config.folds):
                        _run_fold(config, tech, t_index, load, plan, pool, fold, cell, dsts, table, pretrain_cache)
    return table


def _clf_names(tech: Technique, config: ExperimentConfig) -> list[str]:
    if config.mode == "single_cnn":
        return ["softmax"]
    return [c.spec.kind for c in tech.classifiers]


def _fail_all(table, cell, dsts, tech, config, folds, exc):
    for fold in folds:
        for dst in dsts:
            for clf in _clf_names(tech, config):
                table.rows.append(ResultRow(to=dst, classifier=clf, fold=fold, macro_f1=None, status="failed",
                                            error=f"{type(exc).__name__}: {exc}", **cell))


def _run_fold(config, tech, t_index, load, plan, pool, fold, cell, dsts, table, pretrain_cache):
    src, level, maj = cell["from_"], cell["level"], cell["majority"]
    run_key = f"{config.mode}|{tech.name}|{src}|{level}|{maj}|{fold}"
    try:
        draw = plan.fold(pool, fold)
        init_seed = derive_seed(config.seed, "init", t_index, src, level, maj, fold)
        train_seed = derive_seed(config.seed, "train", t_index, src, level, maj, fold)
        init = _initial_params(config, tech, load, init_seed, pretrain_cache)
        tc = replace(config.train, loss=tech.loss, seed=train_seed)
        if config.mode == "single_cnn":
            params, head, history = train_classifier(draw, init, tc)
        else:
            head = None
            params, history = train_siamese(draw, tech.pairing, tech.augment, tc, init)
        table.histories[run_key] = history
    except Exception as exc:
        log.error("training %s failed: %s", run_key, exc)
        _fail_all(table, cell, dsts, tech, config, [fold], exc)
        return

    fp = params.fingerprint()
    train_nc = None if head is not None else embed_dataset(params, draw)
    for dst in dsts:
        try:
            test = load(dst).split("test")
            classes = _classes_of(pool, test)
            if head is not None:
                pred = predict_with_head(params, head, test.images(params.dtype))
                score = macro_f1(confusion(pred, test.labels, classes))
                table.rows.append(ResultRow(to=dst, classifier="softmax", fold=fold, macro_f1=score,
                                            weights=fp, **cell))
                continue
            test_nc = embed_dataset(params, test)
        except Exception as exc:
            _fail_all(table, cell, [dst], tech, config, [fold], exc)
            continue
        for c_index, entry in enumerate(tech.classifiers):
            try:
                spec = replace(entry.spec, seed=derive_seed(config.seed, "clf", t_index, c_index, src, level, maj, fold))
                if entry.search:
                    spec = grid_search(train_nc, spec, config.search_space,
                                       seed=derive_seed(config.seed, "search", t_index, c_index, src, level, maj, fold))
                fitted = fit_classifier(train_nc, spec)
                score = macro_f1(confusion(fitted.predict(test_nc.embeddings), test.labels, classes))
                table.rows.append(ResultRow(to=dst, classifier=spec.kind, fold=fold, macro_f1=score,
                                            hyperparams=fitted.spec.hyperparameters(), weights=fp, **cell))
            except Exception as exc:
                table.rows.append(ResultRow(to=dst, classifier=entry.spec.kind, fold=fold, macro_f1=None,
                                            status="failed", weights=fp, error=f"{type(exc).__name__}: {exc}", **cell))


SCALING_COUNTS = (100, 200, 300)


def run_scaling_study(config: ExperimentConfig, majority_counts: tuple[int, ...] | None = None) -> ResultTable:
    """The grid repeated per majority size; minority sizes scale with it (H at 300 draws 3)."""
    if majority_counts is None:
        majority_counts = config.majority_counts if len(config.majority_counts) > 1 else SCALING_COUNTS
    for m in majority_counts:
        for lv in config.imbalance_levels:
            if lv.minority_per_100 * m // 100 < 1:
                raise ConfigError(f"majority count {m} with level {lv.value} leaves no minority samples")
    return run_experiment(config, tuple(majority_counts))


def run_single_cnn(config: ExperimentConfig) -> ResultTable:
    """Backbone + softmax head trained by cross-entropy on the same draws; predicts classes directly."""
    return run_experiment(replace(config, mode="single_cnn"))
