"""Typed heterogeneous attributed graphs and induced subgraphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimensionError,
    EmptySubgraphError,
    IsolatedCenterError,
    SchemaError,
    UndefinedRatioError,
)

TRAIN, VAL, TEST = 0, 1, 2
NO_SPLIT = -1
UNLABELED = -1
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}

ISOLATED_RETRY_LIMIT = 32


@dataclass(frozen=True)
class NodeType:
    name: str
    dim: int


@dataclass(frozen=True)
class EdgeType:
    """A stored relation.

    ``undirected`` types keep both orientations. A directed type may name a
    ``reverse`` relation that is derived at build time for message passing.
    """

    name: str
    src: str
    dst: str
    undirected: bool = False
    reverse: str | None = None


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str
    derived_from: str | None = None


@dataclass(frozen=True)
class Schema:
    node_types: tuple[NodeType, ...]
    edge_types: tuple[EdgeType, ...]
    target: str = "user"

    def __post_init__(self):
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        names = [nt.name for nt in self.node_types]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate node type names: {names}")
        for nt in self.node_types:
            if nt.dim < 1:
                raise SchemaError(f"node type {nt.name!r} needs a positive feature dim")
        rel_names = [et.name for et in self.edge_types] + [et.reverse for et in self.edge_types if et.reverse]
        if len(set(rel_names)) != len(rel_names):
            raise SchemaError(f"duplicate edge type names: {rel_names}")
        for et in self.edge_types:
            for end in (et.src, et.dst):
                if end not in names:
                    raise SchemaError(f"edge type {et.name!r} references unknown node type {end!r}")
            if et.undirected and et.src != et.dst:
                raise SchemaError(f"undirected edge type {et.name!r} must join a type to itself")
            if et.undirected and et.reverse:
                raise SchemaError(f"undirected edge type {et.name!r} cannot have a derived reverse")
        if self.target not in names:
            raise SchemaError(f"target type {self.target!r} is not a node type")

    def node_type(self, name: str) -> NodeType:
        for nt in self.node_types:
            if nt.name == name:
                return nt
        raise SchemaError(f"unknown node type {name!r}")

    def edge_type(self, name: str) -> EdgeType:
        for et in self.edge_types:
            if et.name == name:
                return et
        raise SchemaError(f"unknown edge type {name!r}")

    @property
    def relations(self) -> tuple[Relation, ...]:
        rels = []
        for et in self.edge_types:
            rels.append(Relation(et.name, et.src, et.dst))
            if et.reverse:
                rels.append(Relation(et.reverse, et.dst, et.src, derived_from=et.name))
        return tuple(rels)

    def relation(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise SchemaError(f"unknown edge type {name!r}")

    @property
    def scored_edge_types(self) -> tuple[EdgeType, ...]:
        """Stored (non-derived) edge types that touch the target type."""
        return tuple(et for et in self.edge_types if self.target in (et.src, et.dst))

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "node_types": [{"name": n.name, "dim": n.dim} for n in self.node_types],
            "edge_types": [
                {"name": e.name, "src": e.src, "dst": e.dst, "undirected": e.undirected, "reverse": e.reverse}
                for e in self.edge_types
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        try:
            return cls(
                node_types=tuple(NodeType(n["name"], int(n["dim"])) for n in d["node_types"]),
                edge_types=tuple(
                    EdgeType(e["name"], e["src"], e["dst"], bool(e.get("undirected", False)), e.get("reverse"))
                    for e in d["edge_types"]
                ),
                target=d.get("target", "user"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc


def default_schema(user_dim: int = 16, product_dim: int = 8) -> Schema:
    """Users and products with u-u, u-p (plus derived p-u) and p-p relations."""
    return Schema(
        node_types=(NodeType("user", user_dim), NodeType("product", product_dim)),
        edge_types=(
            EdgeType("uu", "user", "user", undirected=True),
            EdgeType("up", "user", "product", reverse="pu"),
            EdgeType("pp", "product", "product", undirected=True),
        ),
        target="user",
    )


@dataclass
class NodeTable:
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]


def _sort_pairs(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    order = np.lexsort((dst, src))
    return np.stack([src[order], dst[order]]).astype(np.int64)


class HeteroGraph:
    """Immutable heterogeneous graph.

    ``edges[rel]`` is a ``(2, E)`` int64 array sorted by (src, dst). Undirected
    relations hold both orientations; derived reverse relations are
    materialized. Labels use ``-1`` for unlabeled rows.
    """

    def __init__(
        self,
        schema: Schema,
        nodes: dict[str, NodeTable],
        edges: dict[str, np.ndarray],
        minority_class: int,
        majority_class: int,
        meta: dict | None = None,
    ):
        self.schema = schema
        self.nodes = nodes
        self.edges = edges
        self.minority_class = int(minority_class)
        self.majority_class = int(majority_class)
        self.meta = dict(meta or {})
        self._csr: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for table in nodes.values():
            for arr in (table.features, table.labels, table.split):
                arr.setflags(write=False)
        for arr in edges.values():
            arr.setflags(write=False)

    @property
    def target(self) -> str:
        return self.schema.target

    def num_nodes(self, ntype: str) -> int:
        return self.nodes[ntype].n

    def num_edges(self, rel: str) -> int:
        return self.edges[rel].shape[1]

    def canonical_edges(self, etype: str) -> np.ndarray:
        """Stored pairs with undirected duplicates folded to src <= dst."""
        e = self.edges[etype]
        if self.schema.edge_type(etype).undirected:
            return e[:, e[0] <= e[1]]
        return e

    def csr(self, rel: str) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, neighbors) of a relation keyed by source id."""
        if rel not in self._csr:
            r = self.schema.relation(rel)
            e = self.edges[rel]
            indptr = np.searchsorted(e[0], np.arange(self.num_nodes(r.src) + 1)).astype(np.int64)
            self._csr[rel] = (indptr, e[1])
        return self._csr[rel]

    def neighbors(self, ntype: str, node: int) -> dict[str, np.ndarray]:
        """Direct neighbors of ``node`` per neighbor type, over every incident relation."""
        found: dict[str, list[np.ndarray]] = {nt.name: [] for nt in self.schema.node_types}
        for r in self.schema.relations:
            if r.src == ntype:
                indptr, nbr = self.csr(r.name)
                found[r.dst].append(nbr[indptr[node] : indptr[node + 1]])
            if r.dst == ntype and not self._has_mirror(r):
                e = self.edges[r.name]
                found[r.src].append(e[0, e[1] == node])
        return {t: np.unique(np.concatenate(v)) if v else np.zeros(0, np.int64) for t, v in found.items()}

    def _has_mirror(self, r: Relation) -> bool:
        if r.derived_from is not None:
            return True
        et = self.schema.edge_type(r.name)
        return et.undirected or et.reverse is not None

    def class_counts(self, split: int | str | None = None) -> dict[int, int]:
        table = self.nodes[self.target]
        mask = table.labels != UNLABELED
        if split is not None and split != "all":
            code = SPLIT_CODES[split] if isinstance(split, str) else split
            mask &= table.split == code
        return {c: int(np.sum(table.labels[mask] == c)) for c in self.classes}

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted({self.minority_class, self.majority_class}))

    def __repr__(self) -> str:
        n = ", ".join(f"{t}={tab.n}" for t, tab in self.nodes.items())
        e = ", ".join(f"{r}={a.shape[1]}" for r, a in self.edges.items())
        return f"HeteroGraph(nodes: {n}; edges: {e})"


def build_graph(
    schema: Schema,
    node_tables: Mapping[str, Mapping],
    edge_tables: Mapping[str, np.ndarray | Iterable],
    minority_class: int | None = None,
    majority_class: int | None = None,
    meta: dict | None = None,
) -> HeteroGraph:
    """Validate raw tables and assemble a :class:`HeteroGraph`.

    ``node_tables[type]`` needs ``features``; ``labels`` and ``split`` are
    optional. ``edge_tables[etype]`` is an ``(E, 2)`` array of id pairs for each
    stored edge type; undirected types may list either or both orientations.
    """
    nodes: dict[str, NodeTable] = {}
    for nt in schema.node_types:
        if nt.name not in node_tables:
            raise SchemaError(f"missing node table for {nt.name!r}")
        raw = node_tables[nt.name]
        x = np.asarray(raw["features"], dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != nt.dim:
            raise DimensionError(f"{nt.name}: features have shape {x.shape}, expected (n, {nt.dim})")
        n = x.shape[0]
        labels = np.asarray(raw.get("labels", np.full(n, UNLABELED)), dtype=np.int64)
        split = np.asarray(raw.get("split", np.full(n, NO_SPLIT)), dtype=np.int8)
        if labels.shape != (n,) or split.shape != (n,):
            raise DimensionError(f"{nt.name}: label/split length must equal node count {n}")
        nodes[nt.name] = NodeTable(x.copy(), labels.copy(), split.copy())
    extra = set(node_tables) - {nt.name for nt in schema.node_types}
    if extra:
        raise SchemaError(f"node tables for undeclared types: {sorted(extra)}")

    edges: dict[str, np.ndarray] = {}
    for et in schema.edge_types:
        pairs = np.asarray(edge_tables.get(et.name, np.zeros((0, 2))), dtype=np.int64).reshape(-1, 2)
        n_src, n_dst = nodes[et.src].n, nodes[et.dst].n
        bad = (pairs[:, 0] < 0) | (pairs[:, 0] >= n_src) | (pairs[:, 1] < 0) | (pairs[:, 1] >= n_dst)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SchemaError(
                f"edge type {et.name!r}: endpoint out of range in pair {tuple(pairs[i])} "
                f"({et.src}: {n_src} nodes, {et.dst}: {n_dst} nodes)"
            )
        if pairs.shape[0] and np.unique(pairs, axis=0).shape[0] != pairs.shape[0]:
            raise SchemaError(f"edge type {et.name!r} contains duplicate pairs")
        src, dst = pairs[:, 0], pairs[:, 1]
        if et.undirected:
            both = np.unique(np.concatenate([pairs, pairs[:, ::-1]]), axis=0)
            src, dst = both[:, 0], both[:, 1]
        edges[et.name] = _sort_pairs(src, dst)
        if et.reverse:
            edges[et.reverse] = _sort_pairs(dst, src)
    extra = set(edge_tables) - {et.name for et in schema.edge_types}
    if extra:
        raise SchemaError(f"edge tables for undeclared types: {sorted(extra)}")

    labels = nodes[schema.target].labels
    present = sorted(set(labels[labels != UNLABELED].tolist()))
    if minority_class is None or majority_class is None:
        if not present:
            raise SchemaError("target node type carries no labels")
        counts = {c: int(np.sum(labels == c)) for c in present}
        if minority_class is None:
            minority_class = min(present, key=lambda c: (counts[c], c))
        if majority_class is None:
            rest = [c for c in present if c != minority_class] or present
            majority_class = max(rest, key=lambda c: (counts[c], -c))
    if any(c not in (minority_class, majority_class) for c in present):
        raise SchemaError(f"labels {present} outside the declared classes ({minority_class}, {majority_class})")
    return HeteroGraph(schema, nodes, edges, minority_class, majority_class, meta)


@dataclass
class Subgraph:
    """Induced subgraph with local ids.

    ``node_ids[t]`` lists selected global ids in ascending order; local id ``i``
    maps to ``node_ids[t][i]``. ``edges[rel]`` holds local ``(2, E)`` pairs.
    """

    parent: HeteroGraph
    node_ids: dict[str, np.ndarray]
    edges: dict[str, np.ndarray]
    center: tuple[str, int] | None = None
    _local: dict[str, dict[int, int]] = field(default_factory=dict, repr=False)

    def num_nodes(self, ntype: str) -> int:
        return self.node_ids[ntype].size

    @property
    def total_nodes(self) -> int:
        return sum(v.size for v in self.node_ids.values())

    def to_global(self, ntype: str, local: int | np.ndarray):
        return self.node_ids[ntype][local]

    def to_local(self, ntype: str, global_id: int) -> int:
        if ntype not in self._local:
            self._local[ntype] = {int(g): i for i, g in enumerate(self.node_ids[ntype])}
        return self._local[ntype][int(global_id)]

    def features(self, ntype: str) -> np.ndarray:
        return self.parent.nodes[ntype].features[self.node_ids[ntype]]

    def labels(self, ntype: str, visible_splits: tuple[int, ...] | None = None) -> np.ndarray:
        """Labels of selected nodes; rows outside ``visible_splits`` read as unlabeled."""
        table = self.parent.nodes[ntype]
        lab = table.labels[self.node_ids[ntype]].copy()
        if visible_splits is not None:
            hidden = ~np.isin(table.split[self.node_ids[ntype]], visible_splits)
            lab[hidden] = UNLABELED
        return lab

    @property
    def center_local(self) -> int | None:
        if self.center is None:
            return None
        return self.to_local(*self.center)


def induced_subgraph(
    g: HeteroGraph, selection: Mapping[str, Iterable[int]], center: tuple[str, int] | None = None
) -> Subgraph:
    """Subgraph on ``selection`` holding every parent edge with both endpoints selected."""
    node_ids: dict[str, np.ndarray] = {}
    members: dict[str, np.ndarray] = {}
    local_of: dict[str, np.ndarray] = {}
    for nt in g.schema.node_types:
        ids = np.unique(np.asarray(list(selection.get(nt.name, ())), dtype=np.int64))
        n = g.num_nodes(nt.name)
        if ids.size and (ids[0] < 0 or ids[-1] >= n):
            raise SchemaError(f"selection for {nt.name!r} has ids outside [0, {n})")
        node_ids[nt.name] = ids
        mask = np.zeros(n, dtype=bool)
        mask[ids] = True
        members[nt.name] = mask
        loc = np.full(n, -1, dtype=np.int64)
        loc[ids] = np.arange(ids.size)
        local_of[nt.name] = loc
    if sum(v.size for v in node_ids.values()) == 0:
        raise EmptySubgraphError("selection is empty")
    unknown = set(selection) - set(node_ids)
    if unknown:
        raise SchemaError(f"selection names unknown node types {sorted(unknown)}")

    edges = {}
    for r in g.schema.relations:
        e = g.edges[r.name]
        keep = members[r.src][e[0]] & members[r.dst][e[1]]
        edges[r.name] = np.stack([local_of[r.src][e[0, keep]], local_of[r.dst][e[1, keep]]])
    return Subgraph(g, node_ids, edges, center)


def sample_one_hop(
    g: HeteroGraph,
    rng: np.random.Generator,
    center_type: str | None = None,
    candidates: np.ndarray | None = None,
    max_retries: int = ISOLATED_RETRY_LIMIT,
) -> Subgraph:
    """Induced subgraph on a random center plus all its direct neighbors.

    Centers are drawn uniformly from ``candidates`` (default: training-split
    nodes of the center type, or all its nodes when that type is unlabeled).
    An isolated draw is retried up to ``max_retries`` times.
    """
    center_type = center_type or g.target
    if candidates is None:
        table = g.nodes[center_type]
        candidates = np.flatnonzero(table.split == TRAIN)
        if candidates.size == 0:
            candidates = np.arange(table.n)
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise EmptySubgraphError(f"no candidate centers of type {center_type!r}")
    for _ in range(max_retries):
        c = int(candidates[rng.integers(candidates.size)])
        nbrs = g.neighbors(center_type, c)
        if any(v.size for v in nbrs.values()):
            selection = {t: v for t, v in nbrs.items()}
            selection[center_type] = np.union1d(selection[center_type], [c])
            return induced_subgraph(g, selection, center=(center_type, c))
    raise IsolatedCenterError(f"no non-isolated {center_type!r} center found after {max_retries} draws")


def imbalance_ratio(g: HeteroGraph, split: int | str | None = "all") -> float:
    """|C_min| / |C_maj| over labeled target nodes in ``split``."""
    counts = g.class_counts(split)
    if not counts or min(counts.values()) == 0:
        raise UndefinedRatioError(f"class with no members in split {split!r}: {counts}")
    return min(counts.values()) / max(counts.values())


def class_ratio(g: HeteroGraph, split: int | str | None = "train") -> float:
    """Minority-label count over majority-label count, classes fixed at build time.

    Unlike :func:`imbalance_ratio` this can exceed 1 after oversampling.
    """
    counts = g.class_counts(split)
    if counts[g.majority_class] == 0:
        raise UndefinedRatioError(f"majority class has no members in split {split!r}")
    return counts[g.minority_class] / counts[g.majority_class]
