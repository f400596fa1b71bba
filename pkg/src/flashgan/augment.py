"""Grow the training minority class to a target ratio.

Four strategies share one merge path: FlashGAN (trained generator embedded in
sampled subgraphs), random oversampling, SMOTE interpolation, and class
reweighting (which changes the loss instead of the graph).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataio import graph_stats, save_graph, serialized_size
from .errors import AugmentationStallError, ConfigError, DegenerateSmoteError, NothingToAddError, UndefinedRatioError
from .gan import FlashGAN, run_generator
from .hetgraph import TRAIN, UNLABELED, HeteroGraph, build_graph, sample_one_hop
from .threshold import ThresholdState

log = logging.getLogger(__name__)

METHODS = ("flashgan", "oversample", "smote")
PROVENANCE_COLUMNS = ["new_id", "method", "sources", "subgraph_id"]


@dataclass(frozen=True)
class Provenance:
    new_id: int
    method: str
    sources: tuple[int, ...]
    subgraph_id: int = -1


@dataclass
class AugmentResult:
    graph: HeteroGraph
    provenance: list[Provenance]
    alpha: float
    method: str

    @property
    def added(self) -> int:
        return len(self.provenance)


def plan_synthetic_count(majority: int, minority: int, alpha: float) -> int:
    """Nodes to add so that minority / majority reaches ``alpha``."""
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    target = alpha * majority
    if target < minority:
        raise NothingToAddError(
            f"alpha={alpha} asks for {target:g} minority nodes but {minority} already exist"
        )
    return int(round(target)) - minority


def training_budget(g: HeteroGraph, alpha: float) -> int:
    counts = g.class_counts(TRAIN)
    return plan_synthetic_count(counts[g.majority_class], counts[g.minority_class], alpha)


def minority_train_nodes(g: HeteroGraph) -> np.ndarray:
    table = g.nodes[g.target]
    return np.flatnonzero((table.labels == g.minority_class) & (table.split == TRAIN))


def merge_target_nodes(
    g: HeteroGraph,
    features: np.ndarray,
    new_edges: Mapping[str, list[np.ndarray]],
    meta: Mapping | None = None,
) -> HeteroGraph:
    """Append minority training rows to the target type plus their edges.

    ``new_edges[etype]`` holds ``(E, 2)`` global-id arrays in the stored
    orientation of ``etype``; new target ids continue after the existing ones.
    """
    schema = g.schema
    t = g.target
    k = features.shape[0]
    nodes = {}
    for nt in schema.node_types:
        tab = g.nodes[nt.name]
        if nt.name == t:
            nodes[nt.name] = {
                "features": np.vstack([tab.features, features.reshape(k, nt.dim)]),
                "labels": np.concatenate([tab.labels, np.full(k, g.minority_class)]),
                "split": np.concatenate([tab.split, np.full(k, TRAIN, dtype=np.int8)]),
            }
        else:
            nodes[nt.name] = {"features": tab.features, "labels": tab.labels, "split": tab.split}
    edges = {}
    for et in schema.edge_types:
        parts = [g.canonical_edges(et.name).T] + [np.asarray(a, dtype=np.int64).reshape(-1, 2) for a in new_edges.get(et.name, [])]
        edges[et.name] = np.concatenate(parts)
    new_meta = dict(g.meta)
    if meta:
        new_meta.update(meta)
    return build_graph(schema, nodes, edges, g.minority_class, g.majority_class, new_meta)


def _copied_edges(g: HeteroGraph, sources: np.ndarray, first_new: int) -> dict[str, list[np.ndarray]]:
    """Edges of each new node ``first_new + i`` copied from ``sources[i]``."""
    t = g.target
    out: dict[str, list[np.ndarray]] = {}
    for et in g.schema.edge_types:
        if t not in (et.src, et.dst):
            continue
        parts = []
        for i, s in enumerate(sources.tolist()):
            new = first_new + i
            e = g.edges[et.name]
            if et.src == t:
                nbr = e[1, e[0] == s]
                if et.dst == t:
                    nbr = np.where(nbr == s, new, nbr)
                parts.append(np.stack([np.full(nbr.size, new), nbr], axis=1))
            else:
                nbr = e[0, e[1] == s]
                parts.append(np.stack([nbr, np.full(nbr.size, new)], axis=1))
        out[et.name] = [np.unique(np.concatenate(parts), axis=0)] if parts else []
    return out


def oversample(g: HeteroGraph, alpha: float, rng: np.random.Generator) -> AugmentResult:
    """Duplicate random minority training nodes together with their edges."""
    budget = training_budget(g, alpha)
    if budget == 0:
        return AugmentResult(g, [], alpha, "oversample")
    pool = minority_train_nodes(g)
    if pool.size == 0:
        raise UndefinedRatioError("no minority training nodes to duplicate")
    sources = pool[rng.integers(pool.size, size=budget)]
    first = g.num_nodes(g.target)
    feats = g.nodes[g.target].features[sources]
    out = merge_target_nodes(g, feats, _copied_edges(g, sources, first))
    prov = [Provenance(first + i, "oversample", (int(s),)) for i, s in enumerate(sources)]
    return AugmentResult(out, prov, alpha, "oversample")


def smote(g: HeteroGraph, alpha: float, rng: np.random.Generator, k_nn: int = 5) -> AugmentResult:
    """Interpolate minority features toward a near minority neighbor.

    New rows take their source's connections.
    """
    if k_nn < 1:
        raise ConfigError("k_nn must be >= 1")
    budget = training_budget(g, alpha)
    if budget == 0:
        return AugmentResult(g, [], alpha, "smote")
    pool = minority_train_nodes(g)
    if pool.size < 2:
        raise DegenerateSmoteError(f"SMOTE needs at least 2 minority training nodes, found {pool.size}")
    x = g.nodes[g.target].features[pool]
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    kk = min(k_nn, pool.size - 1)
    near = np.argsort(d2, axis=1, kind="stable")[:, :kk]

    src_idx = rng.integers(pool.size, size=budget)
    nbr_idx = near[src_idx, rng.integers(kk, size=budget)]
    u = rng.random(budget)[:, None]
    feats = x[src_idx] + u * (x[nbr_idx] - x[src_idx])
    sources = pool[src_idx]
    first = g.num_nodes(g.target)
    out = merge_target_nodes(g, feats, _copied_edges(g, sources, first))
    prov = [
        Provenance(first + i, "smote", (int(s), int(pool[n])))
        for i, (s, n) in enumerate(zip(sources.tolist(), nbr_idx.tolist()))
    ]
    return AugmentResult(out, prov, alpha, "smote")


def reweight_weights(labels: np.ndarray, split: np.ndarray | None = None, classes: tuple[int, ...] | None = None) -> dict[int, float]:
    """Inverse-frequency class weights ``N / (C * n_c)`` over the training split."""
    labels = np.asarray(labels)
    mask = labels != UNLABELED
    if split is not None:
        mask &= np.asarray(split) == TRAIN
    y = labels[mask]
    classes = classes or tuple(sorted(set(y.tolist())))
    if len(classes) < 2:
        raise UndefinedRatioError(f"need at least two classes in training split, found {classes}")
    counts = {c: int(np.sum(y == c)) for c in classes}
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise UndefinedRatioError(f"classes {empty} have no training nodes")
    n = sum(counts.values())
    return {c: n / (len(classes) * counts[c]) for c in classes}


def flashgan_augment(
    g: HeteroGraph,
    model: FlashGAN,
    alpha: float,
    thresholds: ThresholdState | Mapping[str, float],
    seed: int = 0,
    max_idle: int = 1000,
) -> AugmentResult:
    """Embed generated nodes through sampled subgraphs until the budget is met.

    Each attempt samples a subgraph from the original graph, runs the frozen
    generator, and keeps the synthetic nodes that still have an edge after
    dropping, with exactly those edges. The last batch is cut at the budget by
    dropping its highest local indices.
    """
    budget = training_budget(g, alpha)
    if budget == 0:
        return AugmentResult(g, [], alpha, "flashgan")
    eta = thresholds.as_floats() if isinstance(thresholds, ThresholdState) else dict(thresholds)
    t = g.target
    first = g.num_nodes(t)
    feats: list[np.ndarray] = []
    edges: dict[str, list[np.ndarray]] = {}
    prov: list[Provenance] = []
    attempt = idle = 0
    while len(prov) < budget:
        if idle >= max_idle:
            raise AugmentationStallError(
                f"no synthetic node survived in {idle} consecutive subgraphs ({len(prov)}/{budget} placed)"
            )
        rng = np.random.default_rng([seed, attempt])
        sub = sample_one_hop(g, rng, t)
        gp = run_generator(model, sub, rng, eta, with_discriminator_inputs=False)
        aug = gp.aug
        keep = np.flatnonzero(aug.survivors)[: budget - len(prov)]
        subgraph_id = attempt
        attempt += 1
        if keep.size == 0:
            idle += 1
            continue
        idle = 0
        new_id = {int(s): first + len(prov) + j for j, s in enumerate(keep)}
        feats.append(aug.x_syn[keep])
        for et in g.schema.scored_edge_types:
            cand = aug.candidates[et.name][:, aug.retained[et.name]]
            syn = aug.syn_endpoint(et.name)[aug.retained[et.name]]
            chosen = np.isin(syn, keep)
            cand, syn = cand[:, chosen], syn[chosen]
            gid = np.array([new_id[int(s)] for s in syn], dtype=np.int64)
            if et.src == t and et.dst == t:
                pairs = np.stack([sub.to_global(t, cand[0]), gid], axis=1)
            elif et.src == t:
                pairs = np.stack([gid, sub.to_global(et.dst, cand[1])], axis=1)
            else:
                pairs = np.stack([sub.to_global(et.src, cand[0]), gid], axis=1)
            edges.setdefault(et.name, []).append(pairs)
        center = int(sub.center[1]) if sub.center else -1
        for s in keep:
            prov.append(Provenance(new_id[int(s)], "flashgan", (center,), subgraph_id))
    out = merge_target_nodes(g, np.vstack(feats), edges)
    return AugmentResult(out, prov, alpha, "flashgan")


def augment(
    g: HeteroGraph,
    method: str,
    alpha: float,
    seed: int = 0,
    model: FlashGAN | None = None,
    thresholds: ThresholdState | Mapping[str, float] | None = None,
    k_nn: int = 5,
) -> AugmentResult:
    if method == "flashgan":
        if model is None or thresholds is None:
            raise ConfigError("flashgan augmentation needs a trained generator and thresholds")
        return flashgan_augment(g, model, alpha, thresholds, seed)
    rng = np.random.default_rng(seed)
    if method == "oversample":
        return oversample(g, alpha, rng)
    if method == "smote":
        return smote(g, alpha, rng, k_nn)
    raise ConfigError(f"unknown augmentation method {method!r}; choose from {METHODS}")


def augmentation_stats(original: HeteroGraph, result: AugmentResult) -> dict:
    before, after = graph_stats(original), graph_stats(result.graph)
    return {
        "method": result.method,
        "alpha": result.alpha,
        "added_nodes": result.added,
        "added_edges": {k: after["edges"][k] - before["edges"][k] for k in after["edges"]},
        "original_size_bytes": before["size_bytes"],
        "size_increment_bytes": after["size_bytes"] - before["size_bytes"],
    }


def size_increment(original: HeteroGraph, augmented: HeteroGraph) -> int:
    return serialized_size(augmented) - serialized_size(original)


def write_provenance(prov: list[Provenance], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROVENANCE_COLUMNS)
        for p in prov:
            w.writerow([p.new_id, p.method, ";".join(map(str, p.sources)), p.subgraph_id])
    return path


def read_provenance(path: str | Path) -> list[Provenance]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            Provenance(
                int(r["new_id"]),
                r["method"],
                tuple(int(s) for s in r["sources"].split(";") if s),
                int(r["subgraph_id"]),
            )
            for r in csv.DictReader(fh)
        ]


def save_augmented(original: HeteroGraph, result: AugmentResult, directory: str | Path) -> dict:
    directory = Path(directory)
    stats = save_graph(result.graph, directory, augmentation_stats(original, result))
    write_provenance(result.provenance, directory / "provenance.csv")
    return stats
