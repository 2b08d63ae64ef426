"""Fingerprinting localization: kNN, WkNN and positioning-error statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .radiomap import EvalSet, RadioMap

Locator = Callable[[np.ndarray], np.ndarray]
"""Maps a T x N block of fingerprints to T x D position estimates."""


def k_upper_bound(M: int) -> int:
    """Largest sensible neighbour count for a map of M reference points: floor(sqrt(M))."""
    if M < 1:
        raise ValueError("a radio map needs at least one reference point")
    return math.isqrt(M)


def _check(rm: RadioMap, queries, k: int) -> np.ndarray:
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    if Q.shape[1] != rm.N:
        raise ValueError(f"query has {Q.shape[1]} RSS values, radio map has N={rm.N}")
    if not 1 <= k <= rm.M:
        raise ValueError(f"k={k} outside 1..M={rm.M}")
    return Q


def nearest(rm: RadioMap, queries, k: int):
    """(indices, squared signal distances) of the k nearest fingerprints per query.

    Ties on distance go to the lower reference-point index.
    """
    Q = _check(rm, queries, k)
    return _kernels.knn_select(np.ascontiguousarray(rm.fingerprints), Q, int(k))


def knn_locate_batch(rm: RadioMap, queries, k: int) -> np.ndarray:
    idx, _ = nearest(rm, queries, k)
    P = rm.points[idx]
    out = np.zeros((idx.shape[0], rm.D))
    # sequential accumulation in neighbour order
    for i in range(k):
        out += P[:, i]
    return out / k


def wknn_locate_batch(rm: RadioMap, queries, k: int) -> np.ndarray:
    idx, d2 = nearest(rm, queries, k)
    P = rm.points[idx]
    dist = np.sqrt(d2)
    zero = dist == 0.0
    w = 1.0 / np.where(zero, 1.0, dist)
    w[zero] = 0.0
    WP = w[:, :, None] * P
    T = idx.shape[0]
    num = np.zeros((T, rm.D))
    den = np.zeros(T)
    for i in range(k):
        num += WP[:, i]
        den += w[:, i]
    hit = zero.any(axis=1)
    if not hit.any():
        return num / den[:, None]
    exact_num = np.zeros((T, rm.D))
    ZP = np.where(zero[:, :, None], P, 0.0)
    for i in range(k):
        exact_num += ZP[:, i]
    exact_cnt = zero.sum(axis=1)
    out = num.copy()
    out[~hit] /= den[~hit, None]
    out[hit] = exact_num[hit] / exact_cnt[hit, None]
    return out


def knn_locate(rm: RadioMap, query, k: int) -> np.ndarray:
    """Mean position of the k reference points closest to ``query`` in signal space."""
    return knn_locate_batch(rm, query, k)[0]


def wknn_locate(rm: RadioMap, query, k: int) -> np.ndarray:
    """Inverse-signal-distance weighted mean of the k nearest reference points.

    A neighbour at distance zero is returned directly (several such
    neighbours are averaged), which is the limit of the weighting as the
    distance vanishes.
    """
    return wknn_locate_batch(rm, query, k)[0]


def knn_locator(rm: RadioMap, k: int) -> Locator:
    return lambda queries: knn_locate_batch(rm, queries, k)


def wknn_locator(rm: RadioMap, k: int) -> Locator:
    return lambda queries: wknn_locate_batch(rm, queries, k)


def error_radius(estimate, truth) -> float:
    e = np.asarray(estimate, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"dimension mismatch: {e.shape} vs {t.shape}")
    return float(np.linalg.norm(e - t))


@dataclass(frozen=True)
class EvalReport:
    errors: np.ndarray
    mean_m: float
    std_m: float

    @classmethod
    def from_errors(cls, errors) -> "EvalReport":
        errors = np.asarray(errors, dtype=np.float64)
        if errors.ndim != 1 or errors.size < 2:
            raise ValueError("need at least two error radii for a standard deviation")
        if np.any(errors < 0) or not np.all(np.isfinite(errors)):
            raise ValueError("error radii must be finite and non-negative")
        mean = float(errors.sum() / errors.size)
        std = float(math.sqrt(((errors - mean) ** 2).sum() / (errors.size - 1)))
        return cls(errors, mean, std)

    def to_csv(self, path) -> None:
        lines = ["error_m", *(repr(float(e)) for e in self.errors)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def evaluate(locator: Locator, eval_set: EvalSet) -> EvalReport:
    """Error radius of every validation query, plus their mean and sample std."""
    if eval_set.T < 2:
        raise ValueError("evaluation needs T >= 2 queries")
    est = np.asarray(locator(eval_set.queries), dtype=np.float64)
    if est.shape != eval_set.truths.shape:
        raise ValueError(f"locator returned shape {est.shape}, expected {eval_set.truths.shape}")
    errors = np.sqrt(((est - eval_set.truths) ** 2).sum(axis=1))
    return EvalReport.from_errors(errors)


@dataclass(frozen=True)
class Cdf:
    """Empirical distribution of error radii as (value, P[error <= value]) steps."""

    sorted_errors: np.ndarray
    probabilities: np.ndarray

    def quantile(self, q: float) -> float:
        if not 0 < q <= 1:
            raise ValueError("quantile level must lie in (0, 1]")
        i = int(np.searchsorted(self.probabilities, q - 1e-12, side="left"))
        return float(self.sorted_errors[min(i, self.sorted_errors.size - 1)])

    def to_csv(self, path) -> None:
        lines = ["error_m,probability"]
        lines += [f"{e!r},{p!r}" for e, p in zip(self.sorted_errors.tolist(), self.probabilities.tolist())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def cdf(report: EvalReport | np.ndarray) -> Cdf:
    errors = report.errors if isinstance(report, EvalReport) else np.asarray(report, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty error set")
    s = np.sort(errors)
    T = s.size
    # duplicates collapse onto one step at the highest rank
    last = np.append(s[1:] != s[:-1], True)
    ranks = np.arange(1, T + 1)[last]
    return Cdf(s[last], ranks / T)
