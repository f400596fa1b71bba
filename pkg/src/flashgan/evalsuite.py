"""Downstream node classification and the multi-seed evaluation report."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import neural as nn
from .augment import reweight_weights
from .dataio import graph_stats
from .errors import ConfigError, FlashGANError, SchemaError, UndefinedMetricError
from .hetgraph import TEST, TRAIN, UNLABELED, VAL, HeteroGraph, Schema
from .metrics import all_metrics, auc_prc, auc_roc, threshold_metrics

log = logging.getLogger(__name__)

METRICS = ("auc_prc", "auc_roc", "f_score", "accuracy", "precision", "recall")
MEGABYTE = 1_000_000

# Published reference scores for the full-size review graphs; kept for context
# in reports, not reproduced here.
REFERENCE_AUC_PRC = {
    "amazon": {"original": 0.4139, "flashgan": 0.4578},
    "yelp": {"original": 0.3657, "flashgan": 0.4002},
}


@dataclass(frozen=True)
class ClassifierConfig:
    widths: tuple[int, ...] = (64, 32)
    epochs: int = 200
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    class_weights: tuple[tuple[int, float], ...] | None = None
    seed: int = 0
    selection: str = "auc_prc"
    tau: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.class_weights is not None and not isinstance(self.class_weights, tuple):
            cw = self.class_weights.items() if isinstance(self.class_weights, Mapping) else self.class_weights
            object.__setattr__(self, "class_weights", tuple(sorted((int(c), float(w)) for c, w in cw)))
        if self.epochs < 0 or not self.widths or min(self.widths) < 1:
            raise ConfigError("classifier needs epochs >= 0 and positive layer widths")
        if self.selection not in METRICS + ("last",):
            raise ConfigError(f"unknown selection metric {self.selection!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["class_weights"] = None if self.class_weights is None else {str(c): w for c, w in self.class_weights}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassifierConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown classifier config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("class_weights"), Mapping):
            d["class_weights"] = {int(c): w for c, w in d["class_weights"].items()}
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class Classifier:
    schema: Schema
    spec: nn.RelGNNSpec
    params: nn.ParamStore
    classes: tuple[int, ...]
    minority_class: int
    best_epoch: int = -1
    trace: list[float] = field(default_factory=list)


def _build(schema: Schema, widths: Sequence[int], classes: tuple[int, ...], seed: int) -> Classifier:
    spec = nn.RelGNNSpec(tuple((nt.name, nt.dim) for nt in schema.node_types), schema.relations, tuple(widths))
    store = nn.ParamStore()
    nn.register_relgnn(store, "gnn", spec)
    nn.register_mlp(store, "head", (widths[-1], len(classes)))
    store.initialize(seed)
    return Classifier(schema, spec, store, classes, classes[0])


def _logits(tape: nn.Tape, model: Classifier, g: HeteroGraph) -> nn.Var:
    x = {nt.name: tape.const(g.nodes[nt.name].features) for nt in model.schema.node_types}
    h = nn.relgnn_forward(tape, model.params, "gnn", model.spec, x, g.edges)
    h = nn.leaky_relu(h[model.schema.target])
    return nn.mlp_forward(tape, model.params, "head", h, (model.spec.widths[-1], len(model.classes)))


def _check_schema(model: Classifier, g: HeteroGraph):
    if g.schema.to_dict() != model.schema.to_dict():
        raise SchemaError("graph schema differs from the one the classifier was trained on")


def _minority_prob(logits: np.ndarray, col: int) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p[:, col] / p.sum(axis=1)


def train_classifier(g: HeteroGraph, cfg: ClassifierConfig | None = None) -> Classifier:
    """Full-graph GNN with a linear head, weighted cross-entropy on training nodes.

    The returned parameters are the snapshot with the best validation score.
    """
    cfg = cfg or ClassifierConfig()
    table = g.nodes[g.target]
    classes = g.classes
    train = np.flatnonzero((table.split == TRAIN) & (table.labels != UNLABELED))
    val = np.flatnonzero((table.split == VAL) & (table.labels != UNLABELED))
    if train.size == 0:
        raise SchemaError("no labeled training nodes")
    if cfg.selection != "last" and val.size == 0:
        raise SchemaError("no labeled validation nodes for model selection")
    model = _build(g.schema, cfg.widths, classes, cfg.seed)
    model.minority_class = g.minority_class
    col = {c: i for i, c in enumerate(classes)}
    mcol = col[g.minority_class]

    weights = dict(cfg.class_weights) if cfg.class_weights is not None else {c: 1.0 for c in classes}
    missing = sorted(set(classes) - set(weights))
    if missing:
        raise ConfigError(f"class_weights has no entry for classes {missing}")
    y = table.labels[train]
    w = np.array([weights[int(c)] for c in y])
    target = np.zeros((train.size, len(classes)))
    target[np.arange(train.size), [col[int(c)] for c in y]] = w[:]
    scale = -1.0 / w.sum()

    opt = nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    y_val = table.labels[val] == g.minority_class
    best, best_params = -math.inf, model.params.copy()
    for epoch in range(cfg.epochs + 1):
        tape = nn.Tape()
        logits = _logits(tape, model, g)
        if cfg.selection != "last":
            score = _val_score(_minority_prob(logits.value[val], mcol), y_val, cfg)
            model.trace.append(score)
            if score > best:
                best, best_params, model.best_epoch = score, model.params.copy(), epoch
        if epoch == cfg.epochs:
            break
        logp = nn.log_softmax(nn.gather_rows(logits, train))
        loss = nn.total(logp * tape.const(target)) * scale
        grads = tape.gradients(loss, model.params)
        nn.adam_step(opt, model.params, grads)
    if cfg.selection == "last":
        model.best_epoch = cfg.epochs
    else:
        model.params = best_params
    return model


def _val_score(scores: np.ndarray, positive: np.ndarray, cfg: ClassifierConfig) -> float:
    labels = positive.astype(np.int64)
    try:
        if cfg.selection == "auc_prc":
            return auc_prc(scores, labels)
        if cfg.selection == "auc_roc":
            return auc_roc(scores, labels)
        return threshold_metrics(scores, labels, cfg.tau)[cfg.selection]
    except UndefinedMetricError:
        return -math.inf


def predict_scores(model: Classifier, g: HeteroGraph, nodes: Iterable[int] | None = None) -> np.ndarray:
    """Minority-class probability for each requested target node."""
    _check_schema(model, g)
    tape = nn.Tape()
    logits = _logits(tape, model, g).value
    idx = np.arange(logits.shape[0]) if nodes is None else np.asarray(list(nodes), dtype=np.int64)
    return _minority_prob(logits[idx], model.classes.index(model.minority_class))


def evaluate_classifier(model: Classifier, g: HeteroGraph, split: int = TEST, tau: float = 0.5) -> dict[str, float]:
    table = g.nodes[g.target]
    nodes = np.flatnonzero((table.split == split) & (table.labels != UNLABELED))
    scores = predict_scores(model, g, nodes)
    return all_metrics(scores, (table.labels[nodes] == g.minority_class).astype(np.int64), tau)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class Variant:
    name: str
    graph: HeteroGraph
    class_weights: Mapping[int, float] | None = None
    source: str | None = None


def reweight_variant(g: HeteroGraph, name: str = "reweight") -> Variant:
    t = g.nodes[g.target]
    return Variant(name, g, reweight_weights(t.labels, t.split, g.classes))


def _run_cell(args) -> dict:
    variant, seed, cfg = args
    cell_cfg = ClassifierConfig.from_dict({**cfg.to_dict(), "seed": seed, "class_weights": variant.class_weights})
    try:
        model = train_classifier(variant.graph, cell_cfg)
        out = evaluate_classifier(model, variant.graph, TEST, cfg.tau)
        out["best_epoch"] = model.best_epoch
        out["error"] = ""
    except FlashGANError as exc:
        out = {m: float("nan") for m in METRICS}
        out.update(best_epoch=-1, error=f"{type(exc).__name__}: {exc}")
    return {"variant": variant.name, "seed": seed, **out}


@dataclass
class EvalReport:
    variants: list[str]
    seeds: list[int]
    cells: list[dict]
    summary: dict[str, dict]
    config: dict
    baseline: str | None
    partial: bool = False
    notes: dict = field(default_factory=dict)
    reference: dict = field(default_factory=lambda: REFERENCE_AUC_PRC)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})

    def mean(self, variant: str, metric: str = "auc_prc") -> float:
        return self.summary[variant]["mean"][metric]


def _summarize(cells: list[dict], stats: dict, baseline: str | None) -> dict[str, dict]:
    summary = {}
    for name, st in stats.items():
        rows = [c for c in cells if c["variant"] == name and not c["error"]]
        mean = {m: (math.fsum(r[m] for r in rows) / len(rows) if rows else float("nan")) for m in METRICS}
        std = {m: (statistics.pstdev([r[m] for r in rows]) if rows else float("nan")) for m in METRICS}
        summary[name] = {"mean": mean, "std": std, "n": len(rows), "graph": st}
    if baseline is not None and baseline in summary:
        base = summary[baseline]
        for name, s in summary.items():
            inc = s["graph"]["size_bytes"] - base["graph"]["size_bytes"]
            gain = s["mean"]["auc_prc"] - base["mean"]["auc_prc"]
            s["size_increment_bytes"] = inc
            s["auc_prc_improvement"] = gain
            s["improvement_per_mb_pct"] = 100.0 * gain / (inc / MEGABYTE) if inc else None
    return summary


def run_experiment(
    variants: Sequence[Variant] | Mapping[str, HeteroGraph],
    seeds: Iterable[int] = range(10),
    cfg: ClassifierConfig | None = None,
    baseline: str | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Train and test one classifier per (variant, seed) and aggregate.

    ``baseline`` names the variant that size increments and AUC-PRC gains are
    measured against; it defaults to the first variant.
    """
    cfg = cfg or ClassifierConfig()
    if isinstance(variants, Mapping):
        variants = [Variant(n, g) for n, g in variants.items()]
    variants = list(variants)
    seeds = [int(s) for s in seeds]
    if not variants or not seeds:
        raise ConfigError("need at least one variant and one seed")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate variant names {names}")
    baseline = baseline if baseline is not None else names[0]
    if baseline not in names:
        raise ConfigError(f"baseline {baseline!r} is not a variant")
    work = [(v, s, cfg) for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cells = list(ex.map(_run_cell, work))
    else:
        cells = [_run_cell(w) for w in work]
    stats = {}
    for v in variants:
        st = graph_stats(v.graph)
        stats[v.name] = {"edges": st["edges"], "nodes": st["nodes"], "size_bytes": st["size_bytes"], "source": v.source}
    return EvalReport(
        variants=names,
        seeds=seeds,
        cells=cells,
        summary=_summarize(cells, stats, baseline),
        config=cfg.to_dict(),
        baseline=baseline,
        partial=any(c["error"] for c in cells),
        notes={
            "auc_prc": "step integration of precision over recall, one step per distinct score",
            "threshold_metrics": f"decision score > {cfg.tau}, minority positive",
            "selection": f"snapshot with best validation {cfg.selection}",
            "size_unit": "bytes of the serialized container; improvement_per_mb_pct = 100 * AUC-PRC gain / MB added",
        },
    )


def csv_header(report: EvalReport) -> list[str]:
    edge_types = sorted(next(iter(report.summary.values()))["graph"]["edges"])
    cols = ["variant", "n_seeds"] + list(METRICS) + [f"{m}_std" for m in METRICS]
    cols += [f"edges_{t}" for t in edge_types]
    cols += ["size_bytes", "size_increment_bytes", "auc_prc_improvement", "improvement_per_mb_pct"]
    return cols


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_report(report: EvalReport, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jpath = directory / "report.json"
    with open(jpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    cpath = directory / "report.csv"
    header = csv_header(report)
    with open(cpath, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name in report.variants:
            s = report.summary[name]
            row = {"variant": name, "n_seeds": s["n"], "size_bytes": s["graph"]["size_bytes"]}
            row.update(s["mean"])
            row.update({f"{m}_std": v for m, v in s["std"].items()})
            row.update({f"edges_{t}": n for t, n in s["graph"]["edges"].items()})
            for k in ("size_increment_bytes", "auc_prc_improvement", "improvement_per_mb_pct"):
                row[k] = s.get(k)
            w.writerow([_cell(row.get(c)) for c in header])
    return jpath, cpath


def read_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))
