"""Adversarial training loop.

Each epoch opens a threshold round, collects ``m`` successfully augmented
subgraphs, then applies a generator step and (on its period) a discriminator
step on that same batch. Random streams are keyed by (seed, epoch, iteration,
attempt) so a run is reproducible regardless of how it is scheduled.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import neural as nn
from .errors import CollectionStallError, ConfigError
from .gan import FlashGAN, GANConfig, GeneratorPass, discriminator_loss, generator_loss, run_generator
from .hetgraph import TRAIN, UNLABELED, HeteroGraph, Schema, sample_one_hop
from .threshold import ThresholdConfig, ThresholdState

log = logging.getLogger(__name__)

HISTORY_COLUMNS = [
    "epoch",
    "eta_uu",
    "eta_up",
    "failures",
    "attempts",
    "loss_g",
    "loss_d",
    "g_updated",
    "d_updated",
    "retained_edges",
    "survivors",
    "checkpoint",
]


@dataclass(frozen=True)
class TrainConfig:
    m: int = 20
    k: int = 5
    epochs: int = 60
    gen_period: int = 1
    disc_period: int = 12
    gen_iterations: int = 1
    gen_lr: float = 1e-4
    gen_beta1: float = 0.5
    gen_beta2: float = 0.999
    disc_lr: float = 1e-4
    disc_beta1: float = 0.5
    disc_beta2: float = 0.999
    eta_initial: float = 0.49
    eta_increment: float = 0.04
    eta_decrement: float = 0.005
    eta_lower: float = 0.49
    eta_upper: float = 0.95
    p_fail: int = 10
    stall_cap: int | None = None
    surrogate: bool = True
    symmetric_init: bool = True
    output_norm: bool = True
    output_scale: float | None = None
    noise_dim: int = 32
    gen_hidden: int = 1024
    gen_layers: int = 8
    mixer_widths: tuple[int, ...] = (64, 32)
    dropper_hidden: int = 512
    disc_hidden: int = 512
    checkpoint_every: int = 30
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mixer_widths", tuple(self.mixer_widths))
        for name in ("m", "k", "gen_period", "disc_period", "gen_iterations", "p_fail", "gen_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    @property
    def gan(self) -> GANConfig:
        return GANConfig(
            noise_dim=self.noise_dim,
            gen_hidden=self.gen_hidden,
            gen_layers=self.gen_layers,
            mixer_widths=self.mixer_widths,
            dropper_hidden=self.dropper_hidden,
            disc_hidden=self.disc_hidden,
            k=self.k,
            surrogate=self.surrogate,
            symmetric_init=self.symmetric_init,
            output_scale=self.output_scale if self.output_norm else None,
        )

    @property
    def thresholds(self) -> ThresholdConfig:
        return ThresholdConfig(
            initial=self.eta_initial,
            increment=self.eta_increment,
            decrement=self.eta_decrement,
            lower=self.eta_lower,
            upper=self.eta_upper,
            p_fail=self.p_fail,
        )

    @property
    def attempt_cap(self) -> int:
        return self.stall_cap if self.stall_cap is not None else 10 * self.m * self.p_fail

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mixer_widths"] = list(self.mixer_widths)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrainerState:
    graph: HeteroGraph
    config: TrainConfig
    model: FlashGAN
    thresholds: ThresholdState
    opt_g: nn.AdamState
    opt_d: nn.AdamState
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    last_batch: list[GeneratorPass] = field(default_factory=list, repr=False)


def mean_row_norm(g: HeteroGraph) -> float:
    """Average feature-row length of labeled training nodes of the target type."""
    table = g.nodes[g.target]
    rows = table.features[(table.split == TRAIN) & (table.labels != UNLABELED)]
    if rows.shape[0] == 0:
        rows = table.features
    return float(np.linalg.norm(rows, axis=1).mean())


def resolve_config(g: HeteroGraph, config: TrainConfig) -> TrainConfig:
    """Fill graph-derived settings so a checkpoint fully describes its model."""
    if config.output_norm and config.output_scale is None:
        return replace(config, output_scale=mean_row_norm(g))
    return config


def init_state(g: HeteroGraph, config: TrainConfig) -> TrainerState:
    config = resolve_config(g, config)
    model = FlashGAN(g.schema, config.gan, seed=config.seed)
    return TrainerState(
        graph=g,
        config=config,
        model=model,
        thresholds=ThresholdState.from_config(config.thresholds),
        opt_g=nn.AdamState(lr=config.gen_lr, beta1=config.gen_beta1, beta2=config.gen_beta2),
        opt_d=nn.AdamState(lr=config.disc_lr, beta1=config.disc_beta1, beta2=config.disc_beta2),
    )


def substream(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def collect_subgraphs(
    g: HeteroGraph,
    model: FlashGAN,
    thresholds: ThresholdState,
    m: int,
    seed: int = 0,
    epoch: int = 0,
    iteration: int = 0,
    attempt_cap: int | None = None,
) -> tuple[list[GeneratorPass], ThresholdState, dict]:
    """Open a threshold round and gather ``m`` subgraphs that keep a synthetic edge."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    cap = attempt_cap if attempt_cap is not None else 10 * m * thresholds.p_fail
    s = thresholds.round_begin()
    batch: list[GeneratorPass] = []
    failures = attempts = 0
    while len(batch) < m:
        if attempts >= cap:
            raise CollectionStallError(
                f"epoch {epoch}: only {len(batch)}/{m} subgraphs after {attempts} attempts "
                f"(thresholds {s.as_floats()})"
            )
        rng = substream(seed, epoch, iteration, attempts)
        attempts += 1
        sub = sample_one_hop(g, rng, g.target)
        gp = run_generator(model, sub, rng, s.as_floats())
        if gp.success:
            batch.append(gp)
            s = s.record_success()
        else:
            failures += 1
            s = s.record_failure()
    return batch, s, {"failures": failures, "attempts": attempts}


def _sum_grads(parts: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    total = {n: a.copy() for n, a in parts[0].items()}
    for p in parts[1:]:
        for n, a in p.items():
            total[n] += a
    return total


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def train_epoch(state: TrainerState, checkpoint_dir: str | Path | None = None) -> TrainerState:
    cfg = state.config
    model = state.model
    epoch = state.epoch + 1
    g_due = epoch % cfg.gen_period == 0
    d_due = epoch % cfg.disc_period == 0

    failures = attempts = 0
    g_losses: list[float] = []
    g_updated = False
    batch: list[GeneratorPass] = []
    for it in range(cfg.gen_iterations):
        batch, state.thresholds, stats = collect_subgraphs(
            state.graph, model, state.thresholds, cfg.m, cfg.seed, epoch, it, cfg.attempt_cap
        )
        failures += stats["failures"]
        attempts += stats["attempts"]
        losses = [generator_loss(model, gp, cfg.surrogate) for gp in batch]
        g_losses = [float(L.value) for L in losses]
        if g_due:
            grads = [gp.tape.gradients(L, model.params, model.generator_names) for gp, L in zip(batch, losses)]
            nn.adam_step(state.opt_g, model.params, _sum_grads(grads))
            g_updated = True
        if not g_due:
            break

    d_losses: list[float] = []
    d_updated = False
    if d_due:
        grads = []
        for gp in batch:
            tape = nn.Tape()
            L = discriminator_loss(model, gp, tape)
            if L is None:
                continue
            d_losses.append(float(L.value))
            grads.append(tape.gradients(-L, model.params, model.discriminator_names))
        if grads:
            nn.adam_step(state.opt_d, model.params, _sum_grads(grads))
            d_updated = True
        else:
            log.info("epoch %d: no subgraph with minority edges, discriminator step skipped", epoch)

    state.epoch = epoch
    state.last_batch = batch
    ckpt = ""
    if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
        ckpt = f"epoch{epoch:04d}"
        save_generator(Path(checkpoint_dir) / f"generator_{ckpt}.npz", state)
        save_discriminator(Path(checkpoint_dir) / f"discriminator_{ckpt}.npz", state)
    eta = state.thresholds.as_floats()
    state.history.append(
        {
            "epoch": epoch,
            "eta_uu": eta.get("uu", float("nan")),
            "eta_up": eta.get("up", float("nan")),
            "failures": failures,
            "attempts": attempts,
            "loss_g": float(np.mean(g_losses)) if g_losses else float("nan"),
            "loss_d": float(np.mean(d_losses)) if d_losses else float("nan"),
            "g_updated": int(g_updated),
            "d_updated": int(d_updated),
            "retained_edges": int(sum(gp.aug.num_retained for gp in batch)),
            "survivors": int(sum(gp.aug.survivors.sum() for gp in batch)),
            "checkpoint": ckpt,
        }
    )
    log.debug("epoch %d: %s", epoch, state.history[-1])
    return state


@dataclass
class TrainResult:
    state: TrainerState
    generator_path: Path | None = None
    discriminator_path: Path | None = None
    checkpoints: list[str] = field(default_factory=list)

    @property
    def history(self) -> list[dict]:
        return self.state.history

    @property
    def model(self) -> FlashGAN:
        return self.state.model

    @property
    def thresholds(self) -> ThresholdState:
        return self.state.thresholds


def train(g: HeteroGraph, config: TrainConfig | None = None, out_dir: str | Path | None = None) -> TrainResult:
    """Run the configured number of epochs; write checkpoints and history under ``out_dir``."""
    config = config or TrainConfig()
    state = init_state(g, config)
    for _ in range(config.epochs):
        train_epoch(state, out_dir)
    result = TrainResult(state, checkpoints=[r["checkpoint"] for r in state.history if r["checkpoint"]])
    if out_dir is not None:
        out = Path(out_dir)
        result.generator_path = save_generator(out / "generator.npz", state)
        result.discriminator_path = save_discriminator(out / "discriminator.npz", state)
        write_history(state.history, out / "history.csv")
    return result


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_history(history: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])
    return path


def read_history(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _meta(state: TrainerState, role: str) -> dict:
    return {
        "role": role,
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "schema": state.graph.schema.to_dict(),
        "thresholds": state.thresholds.to_dict(),
        "rng": {"seed": state.config.seed, "next_epoch": state.epoch + 1},
    }


def save_generator(path: str | Path, state: TrainerState) -> Path:
    model = state.model
    return nn.save_checkpoint(
        path, model.params.subset(model.generator_names), {"generator": state.opt_g}, _meta(state, "generator")
    )


def save_discriminator(path: str | Path, state: TrainerState) -> Path:
    model = state.model
    return nn.save_checkpoint(
        path, model.params.subset(model.discriminator_names), {"discriminator": state.opt_d}, _meta(state, "discriminator")
    )


@dataclass
class LoadedGenerator:
    model: FlashGAN
    thresholds: ThresholdState
    config: TrainConfig
    epoch: int


def load_generator(path: str | Path) -> LoadedGenerator:
    store, _, meta = nn.load_checkpoint(path)
    if meta.get("role") != "generator":
        raise ConfigError(f"{path}: expected a generator checkpoint, found role {meta.get('role')!r}")
    cfg = TrainConfig.from_dict(meta["config"])
    schema = Schema.from_dict(meta["schema"])
    model = FlashGAN(schema, cfg.gan, seed=cfg.seed, params=store)
    return LoadedGenerator(model, ThresholdState.from_dict(meta["thresholds"]), cfg, int(meta["epoch"]))
