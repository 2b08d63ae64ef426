"""Network-based localization (fingerprint -> position) and radio-map
reconstruction (position -> fingerprint), plus replicate studies over
random initializations."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ann
from .fla import Locator, evaluate
from .radiomap import AffineNormalizer, EvalSet, Extent, RadioMap, make_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalizationModel:
    network: ann.Network
    extent: Extent
    outcome: ann.TrainingOutcome | None = None

    def locate(self, rss) -> np.ndarray:
        """Position estimate(s) in metres for one fingerprint or a T x N block."""
        return ann.forward(self.network, rss)

    __call__ = locate

    @property
    def rss_normalizer(self) -> AffineNormalizer:
        return self.network.input_normalizer


@dataclass(frozen=True)
class RadioMapModel:
    network: ann.Network
    extent: Extent
    outcome: ann.TrainingOutcome | None = None

    def predict(self, points) -> np.ndarray:
        """Expected fingerprint(s) in dBm at one point or an M x D block."""
        return ann.forward(self.network, points)

    @property
    def coord_normalizer(self) -> AffineNormalizer:
        return self.network.input_normalizer


def _fit(inputs, targets, hidden_widths, config: ann.TrainingConfig) -> ann.TrainingOutcome:
    net = ann.init_network(hidden_widths, inputs.shape[1], targets.shape[1], seed=config.seed,
                           input_normalizer=AffineNormalizer.fit(inputs),
                           output_normalizer=AffineNormalizer.fit(targets))
    outcome = ann.train(net, inputs, targets, config)
    if outcome.stop_reason == ann.StopReason.DIVERGED:
        raise ann.TrainingError(outcome.diagnostic)
    if not outcome.consistent:
        log.warning("validation/test MSE inconsistent after %d partitions (valid %.4g, test %.4g)",
                    outcome.attempts, outcome.valid_mse, outcome.test_mse)
    return outcome


def _config(config, factory):
    return config if config is not None else factory()


def train_la(trm: RadioMap, hidden_widths: Sequence[int],
             config: ann.TrainingConfig | None = None) -> LocalizationModel:
    """Train a network mapping normalized RSS vectors to reference-point coordinates."""
    config = _config(config, ann.TrainingConfig.for_localization)
    outcome = _fit(trm.fingerprints, trm.points, hidden_widths, config)
    return LocalizationModel(outcome.network, trm.extent, outcome)


def train_rm(trm: RadioMap, hidden_widths: Sequence[int],
             config: ann.TrainingConfig | None = None) -> RadioMapModel:
    """Train a network mapping normalized coordinates to the expected fingerprint."""
    config = _config(config, ann.TrainingConfig.for_radio_map)
    outcome = _fit(trm.points, trm.fingerprints, hidden_widths, config)
    return RadioMapModel(outcome.network, trm.extent, outcome)


def reconstruct(model: RadioMapModel, grid_size: float, extent: Extent | None = None) -> RadioMap:
    """Predict fingerprints on a fresh lattice, giving a reconstructed radio map.

    The lattice is restricted to the extent the model was trained on.
    """
    extent = extent or model.extent
    if not (model.extent.contains([extent.lower, extent.upper])):
        raise ValueError("reconstruction extent reaches outside the training extent")
    points = make_grid(extent, grid_size)
    return RadioMap(points, model.predict(points), grid_size, extent, "RRM")


@dataclass(frozen=True)
class ReplicateStats:
    seeds: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    sigma_mean: float
    sigma_std: float
    failed: tuple[tuple[int, str], ...] = ()

    @property
    def mean_of_means(self) -> float:
        return float(self.means.mean())


def replicate_spread(values) -> float:
    """Sample standard deviation with divisor n - 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return math.nan
    return float(math.sqrt(((v - v.sum() / v.size) ** 2).sum() / (v.size - 1)))


def replicate_experiment(builder: Callable[[int], Locator], eval_set: EvalSet, n: int = 100,
                         base_seed: int = 0, workers: int = 1) -> ReplicateStats:
    """Build ``n`` locators with seeds ``base_seed + i`` and summarize their error statistics.

    Replicates that raise are dropped with a warning; fewer than two
    survivors is an error.
    """
    if n < 2:
        raise ValueError("need n >= 2 replicates")
    seeds = [base_seed + i for i in range(n)]

    def run(seed):
        try:
            report = evaluate(builder(seed), eval_set)
            return seed, report.mean_m, report.std_m, None
        except (ann.TrainingError, FloatingPointError, ValueError) as exc:
            return seed, math.nan, math.nan, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    failed = tuple((s, msg) for s, _, _, msg in results if msg is not None)
    for seed, msg in failed:
        warnings.warn(f"replicate with seed {seed} failed and is excluded: {msg}", RuntimeWarning,
                      stacklevel=2)
    ok = [(s, m, d) for s, m, d, msg in results if msg is None]
    if len(ok) < 2:
        raise RuntimeError(f"only {len(ok)} of {n} replicates succeeded")
    seeds_ok, means, stds = (np.array(c) for c in zip(*ok))
    return ReplicateStats(seeds_ok, means, stds, replicate_spread(means), replicate_spread(stds), failed)


def save_model(model: LocalizationModel | RadioMapModel, path) -> None:
    """Network file with the task and training extent recorded as metadata."""
    task = "la" if isinstance(model, LocalizationModel) else "rm"
    meta = {
        "task": task,
        "extent_lower": " ".join(repr(v) for v in model.extent.lower),
        "extent_upper": " ".join(repr(v) for v in model.extent.upper),
    }
    ann.save_network(model.network, path, meta)


def load_model(path) -> LocalizationModel | RadioMapModel:
    net, meta = ann.load_network(path)
    try:
        extent = Extent(tuple(float(v) for v in meta["extent_lower"].split()),
                        tuple(float(v) for v in meta["extent_upper"].split()))
        cls = {"la": LocalizationModel, "rm": RadioMapModel}[meta["task"]]
    except KeyError as exc:
        raise ValueError(f"{path}: model file lacks task/extent metadata") from exc
    return cls(net, extent)
