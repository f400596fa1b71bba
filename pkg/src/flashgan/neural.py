"""A small reverse-mode differentiation kernel over float64 numpy arrays.

Operations are recorded on a :class:`Tape` in execution order, which is a
topological order, so the backward pass simply walks the op list in reverse.
Each primitive is a (forward, backward) pair of plain functions; replaying a
tape re-runs the forwards from the leaf values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, NonFiniteGradientError, ParseError, SchemaError
from .hetgraph import Relation

LEAKY_SLOPE = 0.2

# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class Op:
    name: str
    inputs: tuple[int, ...]
    output: int
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]


class Var:
    """Handle to a value slot on a tape."""

    __slots__ = ("tape", "slot")

    def __init__(self, tape: "Tape", slot: int):
        self.tape = tape
        self.slot = slot

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.slot]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.lift(other)))

    def __rsub__(self, other):
        return add(self.tape.lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(slot={self.slot}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.values: list[np.ndarray] = []
        self.requires: list[bool] = []
        self.ops: list[Op] = []
        self.params: dict[str, int] = {}

    def _new(self, value: np.ndarray, requires: bool) -> Var:
        self.values.append(value)
        self.requires.append(requires)
        return Var(self, len(self.values) - 1)

    def param(self, name: str, array: np.ndarray) -> Var:
        """Leaf bound to a named parameter; one slot per name per tape."""
        if name in self.params:
            return Var(self, self.params[name])
        v = self._new(array, True)
        self.params[name] = v.slot
        return v

    def const(self, value) -> Var:
        return self._new(np.asarray(value, dtype=np.float64), False)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ContractError("cannot mix values from different tapes")
            return x
        return self.const(x)

    def record(self, name: str, forward, backward, *inputs: Var) -> Var:
        vals = [v.value for v in inputs]
        out = forward(*vals)
        req = any(self.requires[v.slot] for v in inputs)
        var = self._new(out, req)
        self.ops.append(Op(name, tuple(v.slot for v in inputs), var.slot, forward, backward))
        return var

    def replay(self) -> list[np.ndarray]:
        """Recompute every op output from the leaf values."""
        vals = list(self.values)
        for op in self.ops:
            vals[op.output] = op.forward(*(vals[i] for i in op.inputs))
        return vals

    def backward(self, loss: Var) -> list[np.ndarray | None]:
        if loss.tape is not self:
            raise ContractError("loss belongs to another tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.values)
        grads[loss.slot] = np.ones_like(loss.value)
        for op in reversed(self.ops):
            g = grads[op.output]
            if g is None or not self.requires[op.output]:
                continue
            ins = [self.values[i] for i in op.inputs]
            in_grads = op.backward(g, self.values[op.output], *ins)
            for slot, gi in zip(op.inputs, in_grads):
                if gi is None or not self.requires[slot]:
                    continue
                grads[slot] = gi if grads[slot] is None else grads[slot] + gi
        return grads

    def gradients(
        self, loss: Var, params: "ParamStore | None" = None, names: Iterable[str] | None = None
    ) -> dict[str, np.ndarray]:
        """Gradients keyed by parameter name; unreachable parameters get zeros.

        With ``params`` given, every name in the store (or in ``names``) gets
        an entry; otherwise only parameters bound on this tape do.
        """
        grads = self.backward(loss)
        if params is None:
            names = list(self.params) if names is None else list(names)
            shapes = {n: self.values[self.params[n]].shape for n in names if n in self.params}
        else:
            names = params.names if names is None else list(names)
            shapes = {n: params.shapes[n] for n in names}
        out = {}
        for n in names:
            if n not in shapes:
                continue
            slot = self.params.get(n)
            g = grads[slot] if slot is not None else None
            out[n] = np.zeros(shapes[n]) if g is None else np.asarray(g, dtype=np.float64).reshape(shapes[n])
        return out


def backward(tape: Tape, loss: Var, params: "ParamStore | None" = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss aligned with ``params`` (zeros where unreachable)."""
    return tape.gradients(loss, params)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Var, b) -> Var:
    b = a.tape.lift(b)
    return a.tape.record(
        "add",
        np.add,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        a,
        b,
    )


def neg(a: Var) -> Var:
    return a.tape.record("neg", np.negative, lambda g, out, x: (-g,), a)


def mul(a: Var, b) -> Var:
    b = a.tape.lift(b)
    return a.tape.record(
        "mul",
        np.multiply,
        lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        a,
        b,
    )


def matmul(a: Var, b) -> Var:
    b = a.tape.lift(b)
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a.tape.record("matmul", np.matmul, lambda g, out, x, y: (g @ y.T, x.T @ g), a, b)


def leaky_relu(a: Var, slope: float = LEAKY_SLOPE) -> Var:
    return a.tape.record(
        "leaky_relu",
        lambda x: np.where(x > 0, x, slope * x),
        lambda g, out, x: (np.where(x > 0, g, slope * g),),
        a,
    )


def sigmoid(a: Var) -> Var:
    def fwd(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    return a.tape.record("sigmoid", fwd, lambda g, out, x: (g * out * (1.0 - out),), a)


def exp(a: Var) -> Var:
    return a.tape.record("exp", np.exp, lambda g, out, x: (g * out,), a)


def log(a: Var) -> Var:
    return a.tape.record("log", np.log, lambda g, out, x: (g / x,), a)


def _log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax(a: Var) -> Var:
    """Row-wise log-softmax."""
    return a.tape.record(
        "log_softmax",
        _log_softmax,
        lambda g, out, x: (g - np.exp(out) * g.sum(axis=-1, keepdims=True),),
        a,
    )


def softmax(a: Var) -> Var:
    return a.tape.record(
        "softmax",
        lambda x: np.exp(_log_softmax(x)),
        lambda g, out, x: (out * (g - (g * out).sum(axis=-1, keepdims=True)),),
        a,
    )


def concat(parts: Sequence[Var], axis: int = 1) -> Var:
    tape = parts[0].tape
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g, out, *xs):
        return tuple(np.split(g, cuts, axis=axis))

    return tape.record("concat", lambda *xs: np.concatenate(xs, axis=axis), bwd, *parts)


def gather_rows(a: Var, index: np.ndarray) -> Var:
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def bwd(g, out, x):
        return (_kernels.scatter_add_rows(g.reshape(len(index), -1), index, n).reshape(x.shape),)

    return a.tape.record("gather", lambda x: x[index], bwd, a)


def scatter_mean(a: Var, index: np.ndarray, n_out: int) -> Var:
    """Mean of the rows of ``a`` grouped by ``index``; empty groups are zero."""
    index = np.asarray(index, dtype=np.int64)
    counts = np.bincount(index, minlength=n_out).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)[:, None]

    def fwd(x):
        return _kernels.scatter_add_rows(x, index, n_out) * inv

    def bwd(g, out, x):
        return ((g * inv)[index],)

    return a.tape.record("scatter_mean", fwd, bwd, a)


def take_col(a: Var, j: int) -> Var:
    def bwd(g, out, x):
        full = np.zeros_like(x)
        full[:, j] = g
        return (full,)

    return a.tape.record("take_col", lambda x: x[:, j].copy(), bwd, a)


def total(a: Var) -> Var:
    return a.tape.record("sum", lambda x: np.asarray(x.sum()), lambda g, out, x: (np.broadcast_to(g, x.shape).copy(),), a)


def mean(a: Var) -> Var:
    def bwd(g, out, x):
        return (np.full(x.shape, float(g) / x.size),)

    return a.tape.record("mean", lambda x: np.asarray(x.mean()), bwd, a)


def normalize_rows(a: Var, eps: float = 1e-12) -> Var:
    """Scale every row of a 2-d value to unit Euclidean length."""
    sq = (a * a) @ a.tape.const(np.ones((a.shape[1], 1)))
    return a * exp(log(sq + eps) * -0.5)


def detach(a: Var) -> Var:
    return a.tape.const(a.value.copy())


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class _Init:
    kind: str
    fan_in: int


class ParamStore:
    """Named float64 arrays with a shape registry.

    ``initialize(seed)`` fills every registered tensor in registration order,
    so the initial values depend only on the seed and the registry.
    """

    def __init__(self):
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.arrays: dict[str, np.ndarray] = {}
        self._init: dict[str, _Init] = {}

    def register(self, name: str, shape: tuple[int, ...], init: str = "kaiming", fan_in: int | None = None):
        if name in self.shapes:
            raise SchemaError(f"parameter {name!r} registered twice")
        self.shapes[name] = tuple(int(s) for s in shape)
        self._init[name] = _Init(init, fan_in if fan_in is not None else shape[0])

    def initialize(self, seed: int) -> "ParamStore":
        rng = np.random.default_rng(seed)
        for name, shape in self.shapes.items():
            spec = self._init[name]
            if spec.kind == "zeros":
                self.arrays[name] = np.zeros(shape)
            elif spec.kind == "kaiming":
                # uniform fan-in scaling with the leaky-relu gain
                bound = math.sqrt(6.0 / ((1.0 + LEAKY_SLOPE**2) * spec.fan_in))
                self.arrays[name] = rng.uniform(-bound, bound, size=shape)
            else:
                raise SchemaError(f"unknown initializer {spec.kind!r}")
        return self

    @property
    def names(self) -> list[str]:
        return list(self.shapes)

    def group(self, *prefixes: str) -> list[str]:
        return [n for n in self.shapes if any(n == p or n.startswith(p + ".") for p in prefixes)]

    def num_params(self, names: Iterable[str] | None = None) -> int:
        names = self.names if names is None else names
        return int(sum(np.prod(self.shapes[n], dtype=np.int64) for n in names))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.shapes[name]:
            raise DimensionError(f"{name}: shape {value.shape} != registered {self.shapes[name]}")
        self.arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.shapes

    def copy(self) -> "ParamStore":
        other = ParamStore()
        other.shapes = dict(self.shapes)
        other._init = dict(self._init)
        other.arrays = {k: v.copy() for k, v in self.arrays.items()}
        return other

    def subset(self, names: Iterable[str]) -> "ParamStore":
        other = ParamStore()
        for n in names:
            other.shapes[n] = self.shapes[n]
            other._init[n] = self._init[n]
            if n in self.arrays:
                other.arrays[n] = self.arrays[n].copy()
        return other

    def merge(self, other: "ParamStore") -> "ParamStore":
        for n in other.names:
            if n not in self.shapes:
                self.shapes[n] = other.shapes[n]
                self._init[n] = other._init[n]
            self.arrays[n] = other.arrays[n].copy()
        return self


def bind(tape: Tape, store: ParamStore, name: str) -> Var:
    return tape.param(name, store[name])


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def register_mlp(store: ParamStore, prefix: str, widths: Sequence[int], zero_last: bool = False):
    """Register weights/biases for an MLP; ``zero_last`` starts the output layer at zero."""
    last = len(widths) - 2
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store.register(f"{prefix}.W{i}", (a, b), "zeros" if (zero_last and i == last) else "kaiming", a)
        store.register(f"{prefix}.b{i}", (b,), "zeros")


def mlp_forward(tape: Tape, store: ParamStore, prefix: str, x: Var, widths: Sequence[int]) -> Var:
    """LeakyReLU hidden layers, linear output layer."""
    if x.shape[-1] != widths[0]:
        raise DimensionError(f"{prefix}: input has {x.shape[-1]} columns, expected {widths[0]}")
    h = x
    n_layers = len(widths) - 1
    for i in range(n_layers):
        h = h @ bind(tape, store, f"{prefix}.W{i}") + bind(tape, store, f"{prefix}.b{i}")
        if i < n_layers - 1:
            h = leaky_relu(h)
    return h


@dataclass(frozen=True)
class RelGNNSpec:
    """Relation-typed mean-aggregation GNN.

    ``in_dims`` maps node type to input width; ``widths`` lists the output
    width of every layer.
    """

    in_dims: tuple[tuple[str, int], ...]
    relations: tuple[Relation, ...]
    widths: tuple[int, ...] = (64, 32)

    @property
    def node_types(self) -> list[str]:
        return [t for t, _ in self.in_dims]

    def dims(self, layer: int) -> dict[str, int]:
        if layer == 0:
            return dict(self.in_dims)
        return {t: self.widths[layer - 1] for t, _ in self.in_dims}


def register_relgnn(store: ParamStore, prefix: str, spec: RelGNNSpec):
    for layer, width in enumerate(spec.widths):
        dims = spec.dims(layer)
        for t in spec.node_types:
            store.register(f"{prefix}.self.{t}.{layer}", (dims[t], width), "kaiming", dims[t])
            store.register(f"{prefix}.bias.{t}.{layer}", (width,), "zeros")
        for r in spec.relations:
            store.register(f"{prefix}.rel.{r.name}.{layer}", (dims[r.src], width), "kaiming", dims[r.src])


def relgnn_forward(
    tape: Tape,
    store: ParamStore,
    prefix: str,
    spec: RelGNNSpec,
    x: Mapping[str, Var],
    edges: Mapping[str, np.ndarray],
) -> dict[str, Var]:
    """Per-type hidden states after ``len(spec.widths)`` message-passing layers.

    Each layer computes ``act(H_t W_self + b + sum_r mean_{u in N_r(v)} H_u W_r)``
    over relations ``r`` ending at type ``t``; the last layer is linear.
    """
    known = {r.name for r in spec.relations}
    unknown = set(edges) - known
    if unknown:
        raise SchemaError(f"edge types {sorted(unknown)} are not part of the mixer schema")
    counts = {t: x[t].shape[0] for t in spec.node_types}
    h = dict(x)
    for t, d in spec.in_dims:
        if h[t].shape[1] != d:
            raise DimensionError(f"{prefix}: type {t!r} has {h[t].shape[1]} features, expected {d}")
    n_layers = len(spec.widths)
    for layer in range(n_layers):
        out = {}
        for t in spec.node_types:
            acc = h[t] @ bind(tape, store, f"{prefix}.self.{t}.{layer}") + bind(tape, store, f"{prefix}.bias.{t}.{layer}")
            for r in spec.relations:
                if r.dst != t:
                    continue
                e = edges.get(r.name)
                if e is None or e.shape[1] == 0:
                    continue
                # transform per node, then gather: fewer rows than edges
                msg = gather_rows(h[r.src] @ bind(tape, store, f"{prefix}.rel.{r.name}.{layer}"), e[0])
                acc = acc + scatter_mean(msg, e[1], counts[t])
            out[t] = leaky_relu(acc) if layer < n_layers - 1 else acc
        h = out
    return h


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(state: AdamState, params: ParamStore, grads: Mapping[str, np.ndarray]) -> AdamState:
    """One bias-corrected Adam update of the parameters named in ``grads`` (in place)."""
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {bad[:5]} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for n, g in grads.items():
        if g.shape != params.shapes[n]:
            raise DimensionError(f"gradient for {n} has shape {g.shape}, parameter is {params.shapes[n]}")
        if n not in state.m:
            state.m[n] = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
        state.m[n] = state.beta1 * state.m[n] + (1.0 - state.beta1) * g
        state.v[n] = state.beta2 * state.v[n] + (1.0 - state.beta2) * (g * g)
        params.arrays[n] = params.arrays[n] - state.lr * (state.m[n] / bc1) / (np.sqrt(state.v[n] / bc2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    builder: Callable[[Tape], Var],
    params: ParamStore,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
    max_coords: int | None = 24,
    rng: np.random.Generator | None = None,
) -> float:
    """Max of |analytic - central difference| / max(1, |analytic|) over sampled coordinates.

    ``builder`` must read parameters from ``params`` (via :func:`bind`) and be
    deterministic for fixed parameter values.
    """
    rng = rng or np.random.default_rng(0)
    tape = Tape()
    loss = builder(tape)
    names = list(tape.params) if names is None else list(names)
    grads = tape.gradients(loss, params, names)
    worst = 0.0
    for n in names:
        if n not in grads:
            continue
        arr = params.arrays[n]
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        g = grads[n].reshape(-1)
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            up = float(builder(Tape()).value)
            flat[c] = old - eps
            down = float(builder(Tape()).value)
            flat[c] = old
            fd = (up - down) / (2.0 * eps)
            worst = max(worst, abs(g[c] - fd) / max(1.0, abs(g[c])))
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "flashgan-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: ParamStore,
    optimizers: Mapping[str, AdamState] | None = None,
    meta: Mapping | None = None,
) -> Path:
    """Write parameters, optimizer moments and JSON metadata to one ``.npz``."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shapes": {n: list(s) for n, s in params.shapes.items()},
        "init": {n: [params._init[n].kind, params._init[n].fan_in] for n in params.shapes},
        "optimizers": {},
        "meta": dict(meta or {}),
    }
    for n, a in params.arrays.items():
        arrays[f"param/{n}"] = a
    for key, st in (optimizers or {}).items():
        header["optimizers"][key] = {**st.hyper(), "names": list(st.m)}
        for n in st.m:
            arrays[f"adam/{key}/m/{n}"] = st.m[n]
            arrays[f"adam/{key}/v/{n}"] = st.v[n]
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict[str, AdamState], dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ParseError(f"{path}: not a checkpoint file")
            if header.get("version") != CHECKPOINT_VERSION:
                raise ParseError(f"{path}: unsupported checkpoint version {header.get('version')}")
            store = ParamStore()
            for n, shape in header["shapes"].items():
                kind, fan_in = header["init"][n]
                store.register(n, tuple(shape), kind, fan_in)
                store.arrays[n] = data[f"param/{n}"].copy()
            opts = {}
            for key, h in header["optimizers"].items():
                st = AdamState(lr=h["lr"], beta1=h["beta1"], beta2=h["beta2"], eps=h["eps"], t=h["t"])
                for n in h["names"]:
                    st.m[n] = data[f"adam/{key}/m/{n}"].copy()
                    st.v[n] = data[f"adam/{key}/v/{n}"].copy()
                opts[key] = st
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: unreadable checkpoint ({exc})") from exc
    return store, opts, header["meta"]
