"""Generator (noise MLP, subgraph mixer, edge droppers) and edge discriminators.

Synthetic nodes are always of the schema's target type. Local ids of the
synthetic nodes follow the real target-type nodes of the subgraph, so real
local ids are stable across the augmented and modified subgraphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import neural as nn
from .errors import DimensionError
from .hetgraph import TRAIN, UNLABELED, EdgeType, Schema, Subgraph

KEEP = 1  # dropper output column holding the keep logit
REAL = 1  # discriminator output column holding the "real edge" logit


@dataclass(frozen=True)
class GANConfig:
    noise_dim: int = 32
    gen_hidden: int = 1024
    gen_layers: int = 8
    mixer_widths: tuple[int, ...] = (64, 32)
    dropper_hidden: int = 512
    disc_hidden: int = 512
    k: int = 5
    surrogate: bool = True
    symmetric_init: bool = True
    output_scale: float | None = None

    @property
    def edge_dim(self) -> int:
        return 2 * self.mixer_widths[-1]


class FlashGAN:
    """Parameter layout and forward passes for every learnable part.

    Parameter groups: ``gen`` (noise MLP), ``mix`` (mixer GNN),
    ``drop.<etype>`` (droppers) and ``disc.<etype>`` (discriminators). The
    two-logit output layers of droppers and discriminators start at zero when
    ``symmetric_init`` is set, so every keep probability and every D output is
    exactly 0.5 before training.
    """

    def __init__(self, schema: Schema, cfg: GANConfig | None = None, seed: int = 0, params: nn.ParamStore | None = None):
        self.schema = schema
        self.cfg = cfg or GANConfig()
        self.scored = schema.scored_edge_types
        self.mixer = nn.RelGNNSpec(
            in_dims=tuple((nt.name, nt.dim) for nt in schema.node_types),
            relations=schema.relations,
            widths=tuple(self.cfg.mixer_widths),
        )
        store = nn.ParamStore()
        nn.register_mlp(store, "gen", self.gen_widths)
        nn.register_relgnn(store, "mix", self.mixer)
        for et in self.scored:
            nn.register_mlp(store, f"drop.{et.name}", (self.cfg.edge_dim, self.cfg.dropper_hidden, 2), zero_last=self.cfg.symmetric_init)
        for et in self.scored:
            nn.register_mlp(store, f"disc.{et.name}", (self.cfg.edge_dim, self.cfg.disc_hidden, 2), zero_last=self.cfg.symmetric_init)
        store.initialize(seed)
        if params is not None:
            for n in store.names:
                if n in params:
                    store[n] = params[n]
        self.params = store

    @property
    def gen_widths(self) -> tuple[int, ...]:
        d_out = self.schema.node_type(self.schema.target).dim
        return (self.cfg.noise_dim,) + (self.cfg.gen_hidden,) * (self.cfg.gen_layers - 1) + (d_out,)

    @property
    def generator_names(self) -> list[str]:
        return self.params.group("gen", "mix", *[f"drop.{et.name}" for et in self.scored])

    @property
    def discriminator_names(self) -> list[str]:
        return self.params.group(*[f"disc.{et.name}" for et in self.scored])


# ---------------------------------------------------------------------------
# augmented subgraphs
# ---------------------------------------------------------------------------


def _other_end(et: EdgeType, target: str) -> str:
    return et.dst if et.src == target else et.src


@dataclass
class AugmentedSubgraph:
    """A subgraph plus ``k`` synthetic target-type nodes and candidate edges.

    ``candidates[etype]`` holds local ``(2, C)`` pairs in the canonical
    orientation: (real, synthetic) for target-to-target types, (synthetic,
    other) when the target type is the source, (other, synthetic) otherwise.
    Each candidate also implies its reverse orientation. ``retained`` is
    ``None`` until the droppers have run.
    """

    base: Subgraph
    k: int
    x_syn: np.ndarray
    candidates: dict[str, np.ndarray]
    preserve: dict[str, np.ndarray] | None = None
    retained: dict[str, np.ndarray] | None = None
    thresholds: dict[str, float] | None = None

    @property
    def schema(self) -> Schema:
        return self.base.parent.schema

    @property
    def target(self) -> str:
        return self.schema.target

    @property
    def n_real_target(self) -> int:
        return self.base.num_nodes(self.target)

    def num_nodes(self, ntype: str) -> int:
        return self.base.num_nodes(ntype) + (self.k if ntype == self.target else 0)

    def num_candidates(self, directed: bool = True) -> int:
        c = sum(v.shape[1] for v in self.candidates.values())
        return 2 * c if directed else c

    def _edges(self, masks: Mapping[str, np.ndarray] | None) -> dict[str, np.ndarray]:
        edges = {r: e.copy() for r, e in self.base.edges.items()}
        for et in self.schema.scored_edge_types:
            cand = self.candidates[et.name]
            if masks is not None:
                cand = cand[:, masks[et.name]]
            fwd = cand
            rev = cand[::-1]
            if et.undirected:
                edges[et.name] = np.concatenate([edges[et.name], fwd, rev], axis=1)
            else:
                edges[et.name] = np.concatenate([edges[et.name], fwd], axis=1)
                if et.reverse:
                    edges[et.reverse] = np.concatenate([edges[et.reverse], rev], axis=1)
        return edges

    def full_edges(self) -> dict[str, np.ndarray]:
        """Real edges plus every candidate in both orientations."""
        return self._edges(None)

    def retained_edges(self) -> dict[str, np.ndarray]:
        """Real edges plus retained candidates in both orientations."""
        if self.retained is None:
            raise ValueError("edges have not been dropped yet")
        return self._edges(self.retained)

    def syn_endpoint(self, etype: str) -> np.ndarray:
        """Synthetic index (0..k-1) of each candidate of ``etype``."""
        et = self.schema.edge_type(etype)
        cand = self.candidates[etype]
        row = 0 if (et.src == self.target and et.dst != self.target) else 1
        return cand[row] - self.n_real_target

    @property
    def num_retained(self) -> int:
        if self.retained is None:
            return 0
        return int(sum(m.sum() for m in self.retained.values()))

    @property
    def survivors(self) -> np.ndarray:
        """Boolean mask over synthetic nodes with at least one retained edge."""
        alive = np.zeros(self.k, dtype=bool)
        if self.retained is None:
            return alive
        for et, mask in self.retained.items():
            alive[self.syn_endpoint(et)[mask]] = True
        return alive

    @property
    def success(self) -> bool:
        return self.num_retained > 0


def attach_full(sub: Subgraph, x_syn: np.ndarray) -> AugmentedSubgraph:
    """Connect every synthetic node to every compatible real node."""
    x_syn = np.asarray(x_syn, dtype=np.float64)
    k = x_syn.shape[0]
    if k < 1:
        raise ValueError("need at least one synthetic node")
    schema = sub.parent.schema
    target = schema.target
    n_t = sub.num_nodes(target)
    syn = np.arange(n_t, n_t + k)
    cands = {}
    for et in schema.scored_edge_types:
        other = _other_end(et, target)
        real = np.arange(sub.num_nodes(other))
        s_grid, r_grid = np.meshgrid(syn, real, indexing="ij")
        s_flat, r_flat = s_grid.reshape(-1), r_grid.reshape(-1)
        if et.src == target and et.dst == target:
            pair = np.stack([r_flat, s_flat])
        elif et.src == target:
            pair = np.stack([s_flat, r_flat])
        else:
            pair = np.stack([r_flat, s_flat])
        cands[et.name] = pair.astype(np.int64)
    return AugmentedSubgraph(sub, k, x_syn, cands)


def drop_edges(
    aug: AugmentedSubgraph, preserve: Mapping[str, np.ndarray], thresholds: Mapping[str, float]
) -> AugmentedSubgraph:
    """Keep candidate ``e`` of type ``r`` iff ``preserve[r][e] > thresholds[r]``."""
    retained = {}
    for et in aug.schema.scored_edge_types:
        p = np.asarray(preserve[et.name], dtype=np.float64)
        if p.shape != (aug.candidates[et.name].shape[1],):
            raise DimensionError(f"{et.name}: {p.shape[0]} scores for {aug.candidates[et.name].shape[1]} candidates")
        retained[et.name] = p > float(thresholds[et.name])
    return replace(
        aug,
        preserve={k: np.asarray(v, dtype=np.float64) for k, v in preserve.items()},
        retained=retained,
        thresholds={k: float(v) for k, v in thresholds.items()},
    )


def real_minority_edges(sub: Subgraph, labels: np.ndarray | None = None, minority: int | None = None) -> dict[str, np.ndarray]:
    """Canonical real edges of each scored type with a minority-labeled endpoint.

    Target-to-target edges are listed once, with the minority endpoint in the
    destination slot (the slot synthetic nodes occupy in candidates).
    ``labels`` defaults to training-split labels; hidden labels never count.
    """
    g = sub.parent
    target = g.target
    if labels is None:
        labels = sub.labels(target, visible_splits=(TRAIN,))
    minority = g.minority_class if minority is None else minority
    is_min = (labels == minority) & (labels != UNLABELED)
    out = {}
    for et in g.schema.scored_edge_types:
        e = sub.edges[et.name]
        if et.src == target and et.dst == target:
            a, b = e
            upper = a < b
            a, b = a[upper], b[upper]
            ma, mb = is_min[a], is_min[b]
            keep = ma | mb
            swap = ma & ~mb
            src = np.where(swap, b, a)[keep]
            dst = np.where(swap, a, b)[keep]
            out[et.name] = np.stack([src, dst]).astype(np.int64)
        elif et.src == target:
            out[et.name] = e[:, is_min[e[0]]]
        else:
            out[et.name] = e[:, is_min[e[1]]]
    return out


# ---------------------------------------------------------------------------
# taped pieces
# ---------------------------------------------------------------------------


def generate_synthetic_nodes(
    tape: nn.Tape, model: FlashGAN, rng: np.random.Generator, k: int | None = None
) -> tuple[np.ndarray, nn.Var]:
    """Draw ``Z ~ N(0, 1)^{k x noise_dim}`` and map it through the noise MLP.

    With ``cfg.output_scale`` set, each row is projected to that Euclidean
    norm, so the generator cannot win by inflating feature magnitudes.
    """
    k = model.cfg.k if k is None else k
    if k < 1:
        raise ValueError("k must be >= 1")
    z = rng.standard_normal((k, model.cfg.noise_dim))
    x = nn.mlp_forward(tape, model.params, "gen", tape.const(z), model.gen_widths)
    if model.cfg.output_scale is not None:
        x = nn.normalize_rows(x) * float(model.cfg.output_scale)
    return z, x


def edge_embedding(h: Mapping[str, nn.Var], et: EdgeType, pairs: np.ndarray) -> nn.Var:
    """``h_src ⊕ h_dst`` for each pair."""
    return nn.concat([nn.gather_rows(h[et.src], pairs[0]), nn.gather_rows(h[et.dst], pairs[1])], axis=1)


def _check_edge_dim(model: FlashGAN, h_e: nn.Var):
    if h_e.shape[1] != model.cfg.edge_dim:
        raise DimensionError(f"edge embedding has {h_e.shape[1]} columns, expected {model.cfg.edge_dim}")


def edge_preservation(tape: nn.Tape, model: FlashGAN, etype: str, h_e: nn.Var) -> nn.Var:
    """Keep probability: the softmax ``keep`` component of the dropper output."""
    _check_edge_dim(model, h_e)
    logits = nn.mlp_forward(tape, model.params, f"drop.{etype}", h_e, (model.cfg.edge_dim, model.cfg.dropper_hidden, 2))
    return nn.take_col(nn.softmax(logits), KEEP)


def discriminator_logprobs(tape: nn.Tape, model: FlashGAN, etype: str, h_e: nn.Var) -> nn.Var:
    """Row-wise log-softmax of the discriminator: column ``REAL`` is log D."""
    _check_edge_dim(model, h_e)
    logits = nn.mlp_forward(tape, model.params, f"disc.{etype}", h_e, (model.cfg.edge_dim, model.cfg.disc_hidden, 2))
    return nn.log_softmax(logits)


def discriminate(tape: nn.Tape, model: FlashGAN, etype: str, h_e: nn.Var) -> nn.Var:
    """Probability that each edge is real."""
    return nn.exp(nn.take_col(discriminator_logprobs(tape, model, etype, h_e), REAL))


def generator_term(log_fake: nn.Var, weights: nn.Var | None = None) -> nn.Var:
    """``(1/n) sum_e w_e log(1 - D(h_e))`` given ``log(1 - D)`` per retained edge."""
    if weights is None:
        return nn.mean(log_fake)
    return nn.mean(weights * log_fake)


def discriminator_term(log_real: nn.Var, log_fake: nn.Var) -> nn.Var:
    """``mean log D(real) + mean log(1 - D(fake))``."""
    return nn.mean(log_real) + nn.mean(log_fake)


# ---------------------------------------------------------------------------
# full generator pass
# ---------------------------------------------------------------------------


@dataclass
class GeneratorPass:
    """Everything one subgraph contributes to both losses.

    ``fake_emb`` / ``real_emb`` are edge embeddings from the mixer run on the
    modified subgraph; ``keep_prob`` comes from the mixer run on the fully
    connected augmented subgraph.
    """

    tape: nn.Tape
    aug: AugmentedSubgraph
    z: np.ndarray
    x_syn: nn.Var
    keep_prob: dict[str, nn.Var]
    fake_emb: dict[str, nn.Var] = field(default_factory=dict)
    real_emb: dict[str, nn.Var] = field(default_factory=dict)
    gamma: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.aug.success


def _features(tape: nn.Tape, sub: Subgraph, x_syn: nn.Var) -> dict[str, nn.Var]:
    target = sub.parent.target
    out = {}
    for nt in sub.parent.schema.node_types:
        real = tape.const(sub.features(nt.name))
        out[nt.name] = nn.concat([real, x_syn], axis=0) if nt.name == target else real
    return out


def run_generator(
    model: FlashGAN,
    sub: Subgraph,
    rng: np.random.Generator,
    thresholds: Mapping[str, float],
    tape: nn.Tape | None = None,
    with_discriminator_inputs: bool = True,
    fixed_retained: Mapping[str, np.ndarray] | None = None,
) -> GeneratorPass:
    """Generate, attach, mix, drop; then re-mix the modified subgraph.

    ``fixed_retained`` overrides the threshold decision (used to freeze the
    discrete retained set while finite-differencing).
    """
    tape = tape or nn.Tape()
    z, x_syn = generate_synthetic_nodes(tape, model, rng)
    aug = attach_full(sub, x_syn.value)
    feats = _features(tape, sub, x_syn)
    h = nn.relgnn_forward(tape, model.params, "mix", model.mixer, feats, aug.full_edges())
    keep = {}
    for et in model.scored:
        cand = aug.candidates[et.name]
        if cand.shape[1] == 0:
            keep[et.name] = tape.const(np.zeros(0))
            continue
        keep[et.name] = edge_preservation(tape, model, et.name, edge_embedding(h, et, cand))
    aug = drop_edges(aug, {t: v.value for t, v in keep.items()}, thresholds)
    if fixed_retained is not None:
        aug.retained = {t: np.asarray(m, dtype=bool).copy() for t, m in fixed_retained.items()}
    gp = GeneratorPass(tape, aug, z, x_syn, keep)
    if not with_discriminator_inputs or not aug.success:
        return gp
    h2 = nn.relgnn_forward(tape, model.params, "mix", model.mixer, feats, aug.retained_edges())
    gp.gamma = real_minority_edges(sub)
    for et in model.scored:
        mask = aug.retained[et.name]
        if mask.any():
            gp.fake_emb[et.name] = edge_embedding(h2, et, aug.candidates[et.name][:, mask])
        if gp.gamma[et.name].shape[1]:
            gp.real_emb[et.name] = edge_embedding(h2, et, gp.gamma[et.name])
    return gp


def _average(terms: list[nn.Var]) -> nn.Var:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms)) if len(terms) > 1 else acc


def generator_loss(model: FlashGAN, gp: GeneratorPass, surrogate: bool | None = None) -> nn.Var | None:
    """Mean ``w_e log(1 - D(h_e))`` over retained candidates, averaged over edge types.

    ``w_e`` is the keep probability in surrogate mode and 1 otherwise. Returns
    ``None`` when nothing was retained.
    """
    surrogate = model.cfg.surrogate if surrogate is None else surrogate
    tape = gp.tape
    terms = []
    for et in model.scored:
        if et.name not in gp.fake_emb:
            continue
        log_fake = nn.take_col(discriminator_logprobs(tape, model, et.name, gp.fake_emb[et.name]), 1 - REAL)
        w = None
        if surrogate:
            w = nn.gather_rows(gp.keep_prob[et.name], np.flatnonzero(gp.aug.retained[et.name]))
        terms.append(generator_term(log_fake, w))
    return _average(terms) if terms else None


def discriminator_loss(model: FlashGAN, gp: GeneratorPass, tape: nn.Tape | None = None) -> nn.Var | None:
    """Mean log D over minority edges plus mean log(1 - D) over retained fakes.

    Edge embeddings enter as constants. Per-type terms are averaged over the
    types where both sets are non-empty; ``None`` means skip the update.
    """
    tape = tape or nn.Tape()
    terms = []
    for et in model.scored:
        if et.name not in gp.fake_emb or et.name not in gp.real_emb:
            continue
        real = tape.const(gp.real_emb[et.name].value)
        fake = tape.const(gp.fake_emb[et.name].value)
        log_real = nn.take_col(discriminator_logprobs(tape, model, et.name, real), REAL)
        log_fake = nn.take_col(discriminator_logprobs(tape, model, et.name, fake), 1 - REAL)
        terms.append(discriminator_term(log_real, log_fake))
    return _average(terms) if terms else None
