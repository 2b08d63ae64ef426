"""Feedforward network with sigmoid hidden layers and a linear output layer,
trained by backpropagation gradient descent with early stopping."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from ._pykernels import sigmoid
from .radiomap import AffineNormalizer

SIGMOID = "sigmoid"
LINEAR = "linear"
FORMAT_TAG = "fwips-network v1"


class TrainingError(RuntimeError):
    """Training diverged or could not produce a usable network."""


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray  # fan_in x fan_out
    biases: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in (SIGMOID, LINEAR):
            raise ValueError(f"unknown activation {self.activation!r}")
        W = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise ValueError(f"inconsistent layer shapes {W.shape} / {b.shape}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)


@dataclass(frozen=True, eq=False)
class Network:
    """``input_normalizer`` maps raw inputs onto [0, 1]; ``output_normalizer``
    maps targets onto the space the output layer is trained in, and its
    inverse turns raw network outputs back into physical units."""

    input_normalizer: AffineNormalizer
    layers: tuple[Layer, ...]
    output_normalizer: AffineNormalizer

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 2:
            raise ValueError("need at least one hidden layer and the output layer")
        if any(l.activation != SIGMOID for l in layers[:-1]) or layers[-1].activation != LINEAR:
            raise ValueError("hidden layers must be sigmoid and the output layer linear")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ValueError("layer widths do not chain")
        if self.input_normalizer.dim != layers[0].weights.shape[0]:
            raise ValueError("input normalizer width does not match the first layer")
        if self.output_normalizer.dim != layers[-1].weights.shape[1]:
            raise ValueError("output normalizer width does not match the output layer")
        object.__setattr__(self, "layers", layers)

    @property
    def widths(self) -> tuple[int, ...]:
        """(in_dim, hidden widths..., out_dim)."""
        return (self.layers[0].weights.shape[0], *(l.weights.shape[1] for l in self.layers))

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weights.ravel(), l.biases]) for l in self.layers])

    def with_parameters(self, params: np.ndarray) -> "Network":
        params = np.asarray(params, dtype=np.float64)
        layers = []
        pos = 0
        for layer in self.layers:
            n_in, n_out = layer.weights.shape
            W = params[pos:pos + n_in * n_out].reshape(n_in, n_out).copy()
            pos += n_in * n_out
            b = params[pos:pos + n_out].copy()
            pos += n_out
            layers.append(Layer(W, b, layer.activation))
        if pos != params.size:
            raise ValueError("parameter vector length does not match the network")
        return replace(self, layers=tuple(layers))

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.widths == other.widths
            and self.input_normalizer == other.input_normalizer
            and self.output_normalizer == other.output_normalizer
            and np.array_equal(self.flat_parameters(), other.flat_parameters())
        )


def init_network(hidden_widths: Sequence[int], in_dim: int, out_dim: int, seed: int = 0,
                 input_normalizer: AffineNormalizer | None = None,
                 output_normalizer: AffineNormalizer | None = None) -> Network:
    """Weights and biases drawn i.i.d. from U[-0.5, 0.5] with a seeded generator."""
    hidden_widths = tuple(int(w) for w in hidden_widths)
    if not hidden_widths:
        raise ValueError("need at least one hidden layer")
    if min((*hidden_widths, in_dim, out_dim)) < 1:
        raise ValueError("all layer widths must be >= 1")
    rng = np.random.default_rng(seed)
    widths = (in_dim, *hidden_widths, out_dim)
    layers = []
    for m, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        W = rng.uniform(-0.5, 0.5, size=(n_in, n_out))
        b = rng.uniform(-0.5, 0.5, size=n_out)
        layers.append(Layer(W, b, LINEAR if m == len(widths) - 2 else SIGMOID))
    return Network(
        input_normalizer or AffineNormalizer.identity(in_dim),
        tuple(layers),
        output_normalizer or AffineNormalizer.identity(out_dim),
    )


def _as_batch(x, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    if batch.ndim != 2 or batch.shape[1] != width:
        raise ValueError(f"{what} has width {batch.shape[-1]}, network expects {width}")
    return batch


def _affine(a: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # accumulate over fan-in in a fixed order so each row's result does not
    # depend on the batch it is evaluated in (BLAS blocking would)
    z = np.broadcast_to(b, (a.shape[0], b.size)).copy()
    for i in range(W.shape[0]):
        z += a[:, i, None] * W[i]
    return z


def _forward_normalized(net: Network, xn: np.ndarray) -> np.ndarray:
    a = xn
    for layer in net.layers:
        z = _affine(a, layer.weights, layer.biases)
        a = sigmoid(z) if layer.activation == SIGMOID else z
    return a


def forward(net: Network, x) -> np.ndarray:
    """Normalize, propagate through the layers, denormalize. Accepts one input or a batch."""
    batch = _as_batch(x, net.in_dim, "input")
    out = net.output_normalizer.inverse(_forward_normalized(net, net.input_normalizer.forward(batch)))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("network produced non-finite output")
    return out[0] if np.ndim(x) == 1 else out


@dataclass
class GradientState:
    """Cached forward quantities, sensitivities and parameter gradients of one sample.

    Index m = 0 of ``activations`` is the normalized input; index m >= 1 of
    every list refers to trainable layer m.
    """

    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    sensitivities: list[np.ndarray]
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]


def backward(net: Network, x, y_target) -> GradientState:
    """Gradients of the squared error dy.T @ dy for a single sample.

    The error is measured in the network's normalized output space, i.e.
    ``dy = output_normalizer.forward(y_target) - raw network output``.
    """
    xn = net.input_normalizer.forward(np.asarray(x, dtype=np.float64))
    tn = net.output_normalizer.forward(np.asarray(y_target, dtype=np.float64))
    if xn.shape != (net.in_dim,) or tn.shape != (net.out_dim,):
        raise ValueError("sample shapes do not match the network")
    y_in = [None]
    y_out = [xn]
    for layer in net.layers:
        z = _affine(y_out[-1][None, :], layer.weights, layer.biases)[0]
        y_in.append(z)
        y_out.append(sigmoid(z) if layer.activation == SIGMOID else z)
    if not np.all(np.isfinite(y_out[-1])):
        raise FloatingPointError("non-finite forward pass")
    L = len(net.layers)
    s = [None] * (L + 1)
    s[L] = -2.0 * (tn - y_out[L])  # derivative of the linear output is 1
    for m in range(L - 1, 0, -1):
        deriv = y_out[m] * (1.0 - y_out[m])
        s[m] = deriv * (net.layers[m].weights @ s[m + 1])
    gW = [None] + [np.outer(y_out[m - 1], s[m]) for m in range(1, L + 1)]
    gb = [None] + [s[m].copy() for m in range(1, L + 1)]
    return GradientState(y_in, y_out, s, gW, gb)


def squared_error(net: Network, x, y_target) -> float:
    """dy.T @ dy in normalized output space; the quantity ``backward`` differentiates."""
    xn = net.input_normalizer.forward(np.asarray(x, dtype=np.float64))
    tn = net.output_normalizer.forward(np.asarray(y_target, dtype=np.float64))
    dy = tn - _forward_normalized(net, xn[None, :])[0]
    return float(dy @ dy)


def sgd_step(net: Network, X, Y, learning_rate: float) -> Network:
    """One gradient-descent update with the batch-mean gradient."""
    X = _as_batch(X, net.in_dim, "input")
    Y = _as_batch(Y, net.out_dim, "target")
    if X.shape[0] == 0 or X.shape[0] != Y.shape[0]:
        raise ValueError("batch must be non-empty with matching inputs and targets")
    gW = [np.zeros_like(l.weights) for l in net.layers]
    gb = [np.zeros_like(l.biases) for l in net.layers]
    for x, y in zip(X, Y):
        st = backward(net, x, y)
        for m in range(len(net.layers)):
            gW[m] += st.weight_grads[m + 1]
            gb[m] += st.bias_grads[m + 1]
    B = X.shape[0]
    layers = tuple(
        Layer(l.weights - learning_rate * (w / B), l.biases - learning_rate * (b / B), l.activation)
        for l, w, b in zip(net.layers, gW, gb)
    )
    return replace(net, layers=layers)


def mse(net: Network, X, Y) -> float:
    """Mean over samples of the per-component mean squared error, in target units."""
    X = _as_batch(X, net.in_dim, "input")
    Y = _as_batch(Y, net.out_dim, "target")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    pred = net.output_normalizer.inverse(_forward_normalized(net, net.input_normalizer.forward(X)))
    return float(np.mean((pred - Y) ** 2))


# --- data partitioning ---------------------------------------------------

def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment of n samples; ties favour later subsets.

    Every subset receives at least one sample.
    """
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be positive and sum to 1, got {ratios}")
    if n < len(ratios):
        raise ValueError(f"need at least {len(ratios)} samples to partition, got {n}")
    shares = [r * n for r in ratios]
    sizes = [math.floor(s) for s in shares]
    leftover = n - sum(sizes)
    by_remainder = sorted(range(len(ratios)), key=lambda i: (-(shares[i] - sizes[i]), -i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            sizes[i] = 1
            sizes[max(range(len(sizes)), key=lambda j: sizes[j])] -= 1
    return tuple(sizes)


def partition(n: int, ratios: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0):
    """Shuffle ``range(n)`` and cut it into (train, valid, test) index arrays."""
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.sort(part) for part in np.split(perm, cuts))


# --- training ------------------------------------------------------------

class StopReason(str, enum.Enum):
    MAX_ERROR = "MaxErrorReached"
    MAX_EPOCHS = "MaxEpochsReached"
    VALIDATION_FAILURES = "ValidationFailures"
    DIVERGED = "Diverged"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    max_epochs: int = 1000
    max_error: float = 0.25
    max_failed_validations: int = 6
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    max_repartitions: int = 5
    batch_size: int = 1
    consistency_factor: float = 1.5

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.max_epochs < 1 or self.max_failed_validations < 1 or self.batch_size < 1:
            raise ValueError("epoch, failure and batch limits must be >= 1")
        if self.max_repartitions < 0 or self.consistency_factor <= 0:
            raise ValueError("invalid repartition settings")
        split_sizes(len(self.split_ratios), self.split_ratios)

    @classmethod
    def for_localization(cls, **overrides) -> "TrainingConfig":
        """Stopping constants for position outputs: 0.25 m^2 error target."""
        return cls(**{"max_error": 0.25, **overrides})

    @classmethod
    def for_radio_map(cls, **overrides) -> "TrainingConfig":
        """Stopping constants for RSS outputs: 1 dB^2 error target."""
        return cls(**{"max_error": 1.0, **overrides})


class EarlyStopper:
    """Tracks consecutive strict increases of the validation error.

    Holds a snapshot of the parameters at the last epoch that was not an
    increase, i.e. where the current run of increases started.
    """

    def __init__(self, max_failures: int, initial_error: float, initial_params: np.ndarray):
        self.max_failures = max_failures
        self.previous = initial_error
        self.failures = 0
        self.anchor_epoch = 0
        self.anchor_params = np.array(initial_params, copy=True)

    def update(self, epoch: int, error: float, params: np.ndarray) -> bool:
        """Record one epoch; True once the failure limit is reached."""
        if error > self.previous:
            self.failures += 1
        else:
            self.failures = 0
            self.anchor_epoch = epoch
            self.anchor_params = np.array(params, copy=True)
        self.previous = error
        return self.failures >= self.max_failures


@dataclass
class TrainingOutcome:
    network: Network
    stop_reason: StopReason
    epochs_run: int
    selected_epoch: int
    mse_history: list[tuple[float, float]]
    valid_mse: float
    test_mse: float
    consistent: bool
    attempts: int = 1
    diagnostic: str = ""


def fit_partitioned(net: Network, train_set, valid_set, test_set, config: TrainingConfig,
                    shuffle_seed=None) -> TrainingOutcome:
    """Train on explicit (X, Y) splits; a single attempt without repartitioning."""
    Xtr, Ytr = (_as_batch(a, w, n) for a, w, n in zip(train_set, (net.in_dim, net.out_dim), ("input", "target")))
    Xn = np.ascontiguousarray(net.input_normalizer.forward(Xtr))
    Yn = np.ascontiguousarray(net.output_normalizer.forward(Ytr))
    widths = list(net.widths)
    params = net.flat_parameters()
    rng = np.random.default_rng(config.seed if shuffle_seed is None else shuffle_seed)

    def valid_error(p):
        return mse(net.with_parameters(p), *valid_set)

    stopper = EarlyStopper(config.max_failed_validations, valid_error(params), params)
    history: list[tuple[float, float]] = []
    reason = StopReason.MAX_EPOCHS
    diagnostic = ""
    selected_epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(Xn.shape[0]).astype(np.int64)
        _kernels.train_epoch(params, widths, Xn, Yn, order, config.batch_size, config.learning_rate)
        with np.errstate(over="ignore", invalid="ignore"):
            current = net.with_parameters(params)
            tr = mse(current, Xtr, Ytr)
            va = mse(current, *valid_set)
        if not (np.all(np.isfinite(params)) and math.isfinite(tr) and math.isfinite(va)):
            reason = StopReason.DIVERGED
            diagnostic = f"non-finite loss at epoch {epoch}; lower the learning rate"
            history.append((tr, va))
            selected_epoch = stopper.anchor_epoch
            params = stopper.anchor_params
            break
        history.append((tr, va))
        selected_epoch = epoch
        if va <= config.max_error:
            reason = StopReason.MAX_ERROR
            break
        if stopper.update(epoch, va, params):
            reason = StopReason.VALIDATION_FAILURES
            selected_epoch = stopper.anchor_epoch
            params = stopper.anchor_params
            break
    result = net.with_parameters(params)
    va_sel = mse(result, *valid_set)
    te = mse(result, *test_set)
    consistent = reason != StopReason.DIVERGED and te <= config.consistency_factor * va_sel
    return TrainingOutcome(result, reason, len(history), selected_epoch, history, va_sel, te,
                           consistent, diagnostic=diagnostic)


def train(net: Network, X, Y, config: TrainingConfig) -> TrainingOutcome:
    """Partition, train with the three stopping rules, and check test/validation consistency.

    An inconsistent result triggers a fresh partition (same initial
    network) up to ``config.max_repartitions`` times; if none is consistent
    the attempt with the lowest test error is returned, flagged.
    """
    X = _as_batch(X, net.in_dim, "input")
    Y = _as_batch(Y, net.out_dim, "target")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("inputs and targets differ in count")
    best = None
    for attempt in range(config.max_repartitions + 1):
        seq = np.random.SeedSequence([config.seed, attempt])
        part_seed, shuffle_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
        tr, va, te = partition(X.shape[0], config.split_ratios, part_seed)
        outcome = fit_partitioned(net, (X[tr], Y[tr]), (X[va], Y[va]), (X[te], Y[te]), config,
                                  shuffle_seed=shuffle_seed)
        outcome.attempts = attempt + 1
        if outcome.stop_reason == StopReason.DIVERGED:
            return outcome
        if outcome.consistent:
            return outcome
        if best is None or outcome.test_mse < best.test_mse:
            best = outcome
    best.attempts = config.max_repartitions + 1
    return best


# --- persistence ---------------------------------------------------------

def _row(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_network(net: Network, path, meta: dict[str, str] | None = None) -> None:
    """Versioned text format; every float is written with full round-trip precision."""
    lines = [FORMAT_TAG]
    for key, value in (meta or {}).items():
        if not key or any(c.isspace() for c in key) or "\n" in str(value):
            raise ValueError(f"bad metadata entry {key!r}")
        lines.append(f"meta {key} {value}")
    lines.append(f"hidden_layers {len(net.layers) - 1}")
    lines.append("widths " + " ".join(str(w) for w in net.widths))
    lines.append("activations " + " ".join(l.activation for l in net.layers))
    lines.append("input_min " + _row(net.input_normalizer.minimum))
    lines.append("input_span " + _row(net.input_normalizer.span))
    lines.append("output_min " + _row(net.output_normalizer.minimum))
    lines.append("output_span " + _row(net.output_normalizer.span))
    for m, layer in enumerate(net.layers, start=1):
        lines.append(f"weights {m} " + _row(layer.weights))
        lines.append(f"biases {m} " + _row(layer.biases))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_network(path) -> tuple[Network, dict[str, str]]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG!r} file")
    meta: dict[str, str] = {}
    fields: dict[str, list[str]] = {}
    params: dict[tuple[str, int], list[float]] = {}
    try:
        for line in lines[1:]:
            head, _, rest = line.partition(" ")
            if head == "meta":
                key, _, value = rest.partition(" ")
                meta[key] = value
            elif head in ("weights", "biases"):
                idx, _, values = rest.partition(" ")
                params[(head, int(idx))] = [float(v) for v in values.split()]
            else:
                fields[head] = rest.split()
        widths = [int(w) for w in fields["widths"]]
        acts = fields["activations"]
        if int(fields["hidden_layers"][0]) != len(widths) - 2 or len(acts) != len(widths) - 1:
            raise ValueError("layer count mismatch")
        norm = {k: np.array([float(v) for v in fields[k]]) for k in
                ("input_min", "input_span", "output_min", "output_span")}
        layers = []
        for m, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            W = np.array(params[("weights", m)]).reshape(n_in, n_out)
            b = np.array(params[("biases", m)])
            layers.append(Layer(W, b, acts[m - 1]))
        net = Network(AffineNormalizer(norm["input_min"], norm["input_span"]), tuple(layers),
                      AffineNormalizer(norm["output_min"], norm["output_span"]))
    except (KeyError, ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed network file ({exc})") from exc
    return net, meta
