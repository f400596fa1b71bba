"""Planted synthetic graphs and the on-disk graph container.

Container layout (one directory)::

    manifest.json        schema, counts, feature dims, split fractions, seed
    nodes_<type>.csv     id,f0..f{d-1},label,split
    edges_<type>.csv     src,dst   (undirected types: src <= dst only)
    stats.json           node/edge counts and serialized byte size

Derived reverse relations are not written; they are rebuilt on load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, ParseError
from .hetgraph import (
    NO_SPLIT,
    SPLIT_CODES,
    SPLIT_NAMES,
    UNLABELED,
    HeteroGraph,
    Schema,
    build_graph,
    default_schema,
)

CONTAINER_FORMAT = "flashgan-graph"
CONTAINER_VERSION = 1
MINORITY, MAJORITY = 1, 0


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 1000
    n_products: int = 200
    fraud_fraction: float = 0.1
    user_dim: int = 16
    product_dim: int = 8
    mu: float = 1.0
    # u-u wiring probabilities by endpoint classes
    p_uu_minority: float = 0.05
    p_uu_majority: float = 0.01
    p_uu_cross: float = 0.005
    # mean ratings per user and the share of minority ratings on "hot" products
    up_rate_minority: float = 3.0
    up_rate_majority: float = 3.0
    hot_fraction: float = 0.2
    hot_preference: float = 0.8
    pp_density: float = 0.02
    splits: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        probs = {
            "p_uu_minority": self.p_uu_minority,
            "p_uu_majority": self.p_uu_majority,
            "p_uu_cross": self.p_uu_cross,
            "hot_fraction": self.hot_fraction,
            "hot_preference": self.hot_preference,
            "pp_density": self.pp_density,
        }
        for k, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{k} must lie in [0, 1], got {v}")
        if not 0.0 < self.fraud_fraction <= 0.5:
            raise ConfigError(f"fraud_fraction must lie in (0, 0.5], got {self.fraud_fraction}")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise ConfigError(f"splits must be three non-negative fractions summing to 1, got {self.splits}")
        if self.n_users < 2 or self.n_products < 1 or self.user_dim < 1 or self.product_dim < 1:
            raise ConfigError("need at least 2 users, 1 product and positive feature dims")
        if self.up_rate_minority < 0 or self.up_rate_majority < 0:
            raise ConfigError("rating rates must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "splits" in d:
            d["splits"] = tuple(d["splits"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _bernoulli_pairs(rng: np.random.Generator, n: int, prob: np.ndarray | float, block: np.ndarray | None = None):
    """Upper-triangle pairs (i < j) kept independently with the given probability."""
    iu, ju = np.triu_indices(n, k=1)
    p = prob if block is None else prob[block[iu], block[ju]]
    keep = rng.random(iu.size) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def _stratified_split(rng: np.random.Generator, labels: np.ndarray, fractions) -> np.ndarray:
    split = np.full(labels.size, NO_SPLIT, dtype=np.int8)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        split[idx[:n_train]] = 0
        split[idx[n_train : n_train + n_val]] = 1
        split[idx[n_train + n_val :]] = 2
    return split


def generate(config: SynthConfig | None = None) -> HeteroGraph:
    """Planted user/product graph with a feature shift and homophilous wiring."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    n_min = int(round(cfg.n_users * cfg.fraud_fraction))
    if n_min < 1 or n_min >= cfg.n_users:
        raise ConfigError(f"config yields an empty class ({n_min} minority of {cfg.n_users} users)")

    labels = np.full(cfg.n_users, MAJORITY, dtype=np.int64)
    labels[rng.choice(cfg.n_users, size=n_min, replace=False)] = MINORITY
    direction = rng.standard_normal(cfg.user_dim)
    direction /= np.linalg.norm(direction)
    xu = rng.standard_normal((cfg.n_users, cfg.user_dim))
    xu[labels == MINORITY] += cfg.mu * direction
    xp = rng.standard_normal((cfg.n_products, cfg.product_dim))

    block_p = np.array(
        [[cfg.p_uu_majority, cfg.p_uu_cross], [cfg.p_uu_cross, cfg.p_uu_minority]], dtype=np.float64
    )
    uu = _bernoulli_pairs(rng, cfg.n_users, block_p, labels)

    n_hot = max(1, int(round(cfg.hot_fraction * cfg.n_products)))
    hot = np.zeros(cfg.n_products, dtype=bool)
    hot[rng.choice(cfg.n_products, size=n_hot, replace=False)] = True
    w_min = np.where(hot, cfg.hot_preference / n_hot, (1.0 - cfg.hot_preference) / max(1, cfg.n_products - n_hot))
    if n_hot == cfg.n_products:
        w_min = np.full(cfg.n_products, 1.0 / cfg.n_products)
    w_min = w_min / w_min.sum()
    w_maj = np.full(cfg.n_products, 1.0 / cfg.n_products)
    up_rows = []
    for u in range(cfg.n_users):
        is_min = labels[u] == MINORITY
        c = min(int(rng.poisson(cfg.up_rate_minority if is_min else cfg.up_rate_majority)), cfg.n_products)
        if c == 0:
            continue
        prods = rng.choice(cfg.n_products, size=c, replace=False, p=w_min if is_min else w_maj)
        up_rows.extend((u, int(p)) for p in prods)
    up = np.array(up_rows, dtype=np.int64).reshape(-1, 2)
    pp = _bernoulli_pairs(rng, cfg.n_products, cfg.pp_density)

    split = _stratified_split(rng, labels, cfg.splits)
    schema = default_schema(cfg.user_dim, cfg.product_dim)
    return build_graph(
        schema,
        {"user": {"features": xu, "labels": labels, "split": split}, "product": {"features": xp}},
        {"uu": uu, "up": up, "pp": pp},
        minority_class=MINORITY,
        majority_class=MAJORITY,
        meta={"seed": cfg.seed, "split_fractions": list(cfg.splits), "generator": asdict(cfg)},
    )


# ---------------------------------------------------------------------------
# container format
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _node_csv(g: HeteroGraph, ntype: str) -> str:
    table = g.nodes[ntype]
    d = table.features.shape[1]
    buf = io.StringIO()
    buf.write(",".join(["id"] + [f"f{j}" for j in range(d)] + ["label", "split"]) + "\n")
    for i in range(table.n):
        lab = int(table.labels[i])
        sp = int(table.split[i])
        row = [str(i)] + [_fmt(v) for v in table.features[i].tolist()]
        row.append("" if lab == UNLABELED else str(lab))
        row.append(SPLIT_NAMES.get(sp, ""))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _edge_csv(g: HeteroGraph, etype: str) -> str:
    e = g.canonical_edges(etype)
    buf = io.StringIO()
    buf.write("src,dst\n")
    for s, t in zip(e[0].tolist(), e[1].tolist()):
        buf.write(f"{s},{t}\n")
    return buf.getvalue()


def _manifest(g: HeteroGraph) -> dict:
    return {
        "format": CONTAINER_FORMAT,
        "version": CONTAINER_VERSION,
        "schema": g.schema.to_dict(),
        "counts": {
            "nodes": {nt.name: g.num_nodes(nt.name) for nt in g.schema.node_types},
            "edges": {et.name: int(g.canonical_edges(et.name).shape[1]) for et in g.schema.edge_types},
        },
        "feature_dims": {nt.name: nt.dim for nt in g.schema.node_types},
        "minority_class": g.minority_class,
        "majority_class": g.majority_class,
        "split_fractions": g.meta.get("split_fractions"),
        "seed": g.meta.get("seed"),
        "meta": {k: v for k, v in g.meta.items() if k not in ("split_fractions", "seed")},
    }


def _serialize(g: HeteroGraph) -> dict[str, str]:
    files = {"manifest.json": json.dumps(_manifest(g), indent=2, sort_keys=True) + "\n"}
    for nt in g.schema.node_types:
        files[f"nodes_{nt.name}.csv"] = _node_csv(g, nt.name)
    for et in g.schema.edge_types:
        files[f"edges_{et.name}.csv"] = _edge_csv(g, et.name)
    return files


def serialized_size(g: HeteroGraph) -> int:
    """Bytes the container files (without ``stats.json``) occupy on disk."""
    return sum(len(s.encode("utf-8")) for s in _serialize(g).values())


def graph_stats(g: HeteroGraph) -> dict:
    counts = g.class_counts("all")
    return {
        "nodes": {nt.name: g.num_nodes(nt.name) for nt in g.schema.node_types},
        "edges": {et.name: int(g.canonical_edges(et.name).shape[1]) for et in g.schema.edge_types},
        "directed_edges": {r.name: g.num_edges(r.name) for r in g.schema.relations},
        "class_counts": {str(k): v for k, v in counts.items()},
        "train_class_counts": {str(k): v for k, v in g.class_counts("train").items()},
        "size_bytes": serialized_size(g),
    }


def save_graph(g: HeteroGraph, directory: str | Path, extra_stats: Mapping | None = None) -> dict:
    """Write ``g`` as a container directory; returns the stats written to ``stats.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = _serialize(g)
    for name, text in files.items():
        with open(directory / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    stats = graph_stats(g)
    stats["size_bytes"] = sum((directory / n).stat().st_size for n in files)
    if extra_stats:
        stats.update(extra_stats)
    with open(directory / "stats.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats


def directory_size(directory: str | Path) -> int:
    """Container byte size, excluding sidecars (stats, provenance, run manifests)."""
    directory = Path(directory)
    names = ["manifest.json"] + [p.name for p in directory.glob("nodes_*.csv")] + [p.name for p in directory.glob("edges_*.csv")]
    return sum((directory / n).stat().st_size for n in names)


def _read_csv(path: Path, expected_header: list[str]) -> list[list[str]]:
    if not path.exists():
        raise ParseError(f"{path}: missing file")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}:1: missing header")
    if rows[0] != expected_header:
        raise ParseError(f"{path}:1: header {rows[0][:6]}... does not match expected {expected_header[:6]}...")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected_header):
            raise ParseError(f"{path}:{lineno}: expected {len(expected_header)} fields, got {len(row)}")
    return rows[1:]


def load_graph(directory: str | Path) -> HeteroGraph:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise ParseError(f"{mpath}: missing manifest")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{mpath}:{exc.lineno}: {exc.msg}") from exc
    if manifest.get("format") != CONTAINER_FORMAT:
        raise ParseError(f"{mpath}: not a graph container (format={manifest.get('format')!r})")
    schema = Schema.from_dict(manifest["schema"])

    node_tables = {}
    for nt in schema.node_types:
        path = directory / f"nodes_{nt.name}.csv"
        header = ["id"] + [f"f{j}" for j in range(nt.dim)] + ["label", "split"]
        rows = _read_csv(path, header)
        n = len(rows)
        x = np.empty((n, nt.dim))
        labels = np.full(n, UNLABELED, dtype=np.int64)
        split = np.full(n, NO_SPLIT, dtype=np.int8)
        seen = np.zeros(n, dtype=bool)
        for lineno, row in enumerate(rows, start=2):
            try:
                i = int(row[0])
                if not 0 <= i < n or seen[i]:
                    raise ValueError(f"id {i} is out of range or repeated")
                seen[i] = True
                x[i] = [float(v) for v in row[1 : 1 + nt.dim]]
                if row[-2] != "":
                    labels[i] = int(row[-2])
                if row[-1] != "":
                    split[i] = SPLIT_CODES[row[-1]]
            except (ValueError, KeyError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
        node_tables[nt.name] = {"features": x, "labels": labels, "split": split}

    edge_tables = {}
    for et in schema.edge_types:
        path = directory / f"edges_{et.name}.csv"
        rows = _read_csv(path, ["src", "dst"])
        pairs = np.empty((len(rows), 2), dtype=np.int64)
        for lineno, row in enumerate(rows, start=2):
            try:
                pairs[lineno - 2] = (int(row[0]), int(row[1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
        edge_tables[et.name] = pairs

    meta = dict(manifest.get("meta") or {})
    if manifest.get("seed") is not None:
        meta["seed"] = manifest["seed"]
    if manifest.get("split_fractions") is not None:
        meta["split_fractions"] = manifest["split_fractions"]
    return build_graph(
        schema,
        node_tables,
        edge_tables,
        minority_class=manifest.get("minority_class"),
        majority_class=manifest.get("majority_class"),
        meta=meta,
    )


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    if a.schema != b.schema or a.minority_class != b.minority_class or a.majority_class != b.majority_class:
        return False
    for nt in a.schema.node_types:
        ta, tb = a.nodes[nt.name], b.nodes[nt.name]
        if not (
            np.array_equal(ta.features, tb.features)
            and np.array_equal(ta.labels, tb.labels)
            and np.array_equal(ta.split, tb.split)
        ):
            return False
    return all(np.array_equal(a.edges[r.name], b.edges[r.name]) for r in a.schema.relations)
