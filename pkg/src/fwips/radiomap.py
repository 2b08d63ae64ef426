"""Radio maps: reference-point lattices, down-sampling, normalization and CSV I/O."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_RSS_DBM = -100.0
KINDS = ("ORM", "TRM", "RRM")
_LATTICE_TOL = 1e-9


class RadioMapError(ValueError):
    """Raised for invalid radio-map construction or malformed files."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(1, -1)
    if arr.ndim != ndim:
        raise RadioMapError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RadioMapError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Extent:
    """Axis-aligned bounding box, ``lower[i] <= upper[i]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise RadioMapError("extent bounds must be non-empty and of equal length")
        if any(not (math.isfinite(a) and math.isfinite(b)) or a > b for a, b in zip(lo, hi)):
            raise RadioMapError(f"invalid extent {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def of(cls, points) -> "Extent":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def contains(self, points, tol: float = 1e-9) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return bool(
            np.all(pts >= np.asarray(self.lower) - tol) and np.all(pts <= np.asarray(self.upper) + tol)
        )


@dataclass(frozen=True, eq=False)
class RadioMap:
    """Reference-point coordinates (M x D) paired with fingerprints (M x N).

    ``kind`` records provenance: ORM (originally sampled), TRM (training map,
    usually down-sampled) or RRM (reconstructed by a radio-map network).
    """

    points: np.ndarray
    fingerprints: np.ndarray
    grid_size: float
    extent: Extent | None = None
    kind: str = "ORM"

    def __post_init__(self):
        pts = _frozen(self.points, 2, "points")
        fps = _frozen(self.fingerprints, 2, "fingerprints")
        if pts.shape[0] != fps.shape[0] or pts.shape[0] < 1:
            raise RadioMapError(
                f"points ({pts.shape[0]}) and fingerprints ({fps.shape[0]}) must pair up, M >= 1"
            )
        if not (self.grid_size > 0 and math.isfinite(self.grid_size)):
            raise RadioMapError(f"grid size must be positive, got {self.grid_size}")
        if self.kind not in KINDS:
            raise RadioMapError(f"kind must be one of {KINDS}, got {self.kind!r}")
        extent = self.extent if self.extent is not None else Extent.of(pts)
        if extent.dim != pts.shape[1]:
            raise RadioMapError("extent dimension does not match point dimension")
        if not extent.contains(pts):
            raise RadioMapError("reference points lie outside the extent")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "fingerprints", fps)
        object.__setattr__(self, "grid_size", float(self.grid_size))
        object.__setattr__(self, "extent", extent)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def D(self) -> int:
        return self.points.shape[1]

    @property
    def N(self) -> int:
        return self.fingerprints.shape[1]

    def with_kind(self, kind: str) -> "RadioMap":
        return RadioMap(self.points, self.fingerprints, self.grid_size, self.extent, kind)

    def __eq__(self, other):
        if not isinstance(other, RadioMap):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.grid_size == other.grid_size
            and self.extent == other.extent
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.fingerprints, other.fingerprints)
        )


@dataclass(frozen=True, eq=False)
class EvalSet:
    """Validation dataset: ground-truth positions and the fingerprints measured there."""

    truths: np.ndarray
    queries: np.ndarray

    def __post_init__(self):
        truths = _frozen(self.truths, 2, "truths")
        queries = _frozen(self.queries, 2, "queries")
        if truths.shape[0] != queries.shape[0] or truths.shape[0] < 1:
            raise RadioMapError("truths and queries must have equal count T >= 1")
        object.__setattr__(self, "truths", truths)
        object.__setattr__(self, "queries", queries)

    @property
    def T(self) -> int:
        return self.truths.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EvalSet):
            return NotImplemented
        return np.array_equal(self.truths, other.truths) and np.array_equal(self.queries, other.queries)


def _axis_counts(extent: Extent, spacing: float) -> list[int]:
    return [int(math.floor(length / spacing + _LATTICE_TOL)) + 1 for length in extent.lengths]


def make_grid(extent: Extent, grid_size: float) -> np.ndarray:
    """Square lattice of spacing ``sqrt(grid_size)`` anchored at the extent's lower corner.

    Boundary points are included when they fall on the lattice. Ordering is
    row-major with the first coordinate varying fastest, e.g. for a 2-D
    extent ``(0,0), (1,0), (2,0), (0,1), ...``.
    """
    if not (grid_size > 0 and math.isfinite(grid_size)):
        raise RadioMapError(f"grid size must be positive, got {grid_size}")
    if np.any(extent.lengths <= 0):
        raise RadioMapError("extent is degenerate in at least one dimension")
    spacing = math.sqrt(grid_size)
    counts = _axis_counts(extent, spacing)
    if any(c == 1 for c in counts):
        warnings.warn(
            f"grid spacing {spacing:g} m exceeds the extent along some axis; "
            "only the lower-corner lattice points are produced",
            RuntimeWarning,
            stacklevel=2,
        )
    axes = [lo + spacing * np.arange(c) for lo, c in zip(extent.lower, counts)]
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    return np.stack([m.ravel() for m in mesh[::-1]], axis=1)


def grid_point_count(extent: Extent, grid_size: float) -> int:
    return math.prod(_axis_counts(extent, math.sqrt(grid_size)))


def downsample(orm: RadioMap, target_grid_size: float) -> RadioMap:
    """Keep the reference points lying on a coarser lattice.

    The target spacing must be an integer multiple of the source spacing;
    the coarse lattice shares the anchor (lower extent corner) of the source.
    """
    if not (target_grid_size > 0):
        raise RadioMapError(f"target grid size must be positive, got {target_grid_size}")
    src = math.sqrt(orm.grid_size)
    dst = math.sqrt(target_grid_size)
    ratio = dst / src
    step = round(ratio)
    if step < 1 or abs(ratio - step) > 1e-9 * max(1.0, ratio):
        raise RadioMapError(
            f"target spacing {dst:g} m is not an integer multiple of source spacing {src:g} m "
            f"(ratio {ratio:g}); arbitrary resampling needs a radio-map network instead"
        )
    idx = (orm.points - np.asarray(orm.extent.lower)) / src
    rounded = np.rint(idx)
    on_source = np.all(np.abs(idx - rounded) <= 1e-6, axis=1)
    keep = on_source & np.all(np.mod(rounded, step) == 0, axis=1)
    if not keep.any():
        raise RadioMapError("no reference point lies on the target lattice")
    return RadioMap(
        orm.points[keep], orm.fingerprints[keep], float(target_grid_size), orm.extent, "TRM"
    )


@dataclass(frozen=True, eq=False)
class AffineNormalizer:
    """Per-dimension affine map of the fitting range onto [0, 1].

    ``forward(x) = (x - minimum) / span``. A constant dimension (span 0) is
    mapped to 0.5 and inverts back to its constant.
    """

    minimum: np.ndarray
    span: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.minimum, 1, "minimum")
        span = _frozen(self.span, 1, "span")
        if lo.shape != span.shape or np.any(span < 0):
            raise RadioMapError("normalizer minimum/span must match and span must be >= 0")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "span", span)

    @classmethod
    def fit(cls, data) -> "AffineNormalizer":
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.size == 0 or arr.ndim != 2:
            raise RadioMapError("cannot fit a normalizer on empty data")
        lo = arr.min(axis=0)
        return cls(lo, arr.max(axis=0) - lo)

    @classmethod
    def identity(cls, dim: int) -> "AffineNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.minimum.shape[0]

    @property
    def scale(self) -> np.ndarray:
        """Diagonal of the scaling matrix."""
        with np.errstate(divide="ignore"):
            return np.where(self.span > 0, 1.0 / np.where(self.span > 0, self.span, 1.0), 0.0)

    @property
    def offset(self) -> np.ndarray:
        return np.where(self.span > 0, -self.minimum * self.scale, 0.5)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        degenerate = self.span == 0
        safe = np.where(degenerate, 1.0, self.span)
        return np.where(degenerate, 0.5, (x - self.minimum) / safe)

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return np.where(self.span == 0, self.minimum, self.minimum + y * self.span)

    def __eq__(self, other):
        if not isinstance(other, AffineNormalizer):
            return NotImplemented
        return np.array_equal(self.minimum, other.minimum) and np.array_equal(self.span, other.span)


def fit_normalizer(data: Iterable[Sequence[float]]) -> AffineNormalizer:
    return AffineNormalizer.fit(np.asarray(list(data), dtype=np.float64))


# --- CSV persistence -----------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _header_line(D: int, N: int, grid: float, kind: str, extent: Extent | None) -> str:
    parts = [f"D={D}", f"N={N}", f"G={_fmt(grid)}", f"KIND={kind}"]
    if extent is not None:
        parts.append("LO=" + " ".join(_fmt(v) for v in extent.lower))
        parts.append("HI=" + " ".join(_fmt(v) for v in extent.upper))
    return ",".join(parts)


def _write_table(path, header: str, D: int, N: int, points, fps) -> None:
    cols = [f"x{i + 1}" for i in range(D)] + [f"ap{j + 1}" for j in range(N)]
    lines = [header, ",".join(cols)]
    for p, s in zip(points, fps):
        lines.append(",".join(_fmt(v) for v in (*p, *s)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def save_radiomap(rm: RadioMap, path) -> None:
    """Write ``rm`` as CSV; see :func:`load_radiomap` for the layout."""
    _write_table(path, _header_line(rm.D, rm.N, rm.grid_size, rm.kind, rm.extent), rm.D, rm.N,
                 rm.points, rm.fingerprints)


def save_evalset(es: EvalSet, path) -> None:
    D, N = es.truths.shape[1], es.queries.shape[1]
    _write_table(path, _header_line(D, N, 0.0, "VDS", None), D, N, es.truths, es.queries)


def _parse(path):
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if len(lines) < 3:
        raise RadioMapError(f"{path}: expected header, column line and at least one row")
    meta = {}
    for item in lines[0].split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise RadioMapError(f"{path}: malformed header item {item!r}")
        meta[key.strip()] = value.strip()
    try:
        D, N = int(meta["D"]), int(meta["N"])
        grid = float(meta["G"])
        kind = meta["KIND"]
    except (KeyError, ValueError) as exc:
        raise RadioMapError(f"{path}: malformed header {lines[0]!r}") from exc
    if D < 1 or N < 1:
        raise RadioMapError(f"{path}: D and N must be positive")
    expected = [f"x{i + 1}" for i in range(D)] + [f"ap{j + 1}" for j in range(N)]
    if lines[1].split(",") != expected:
        raise RadioMapError(f"{path}: column line does not match D={D}, N={N}")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(cells) != D + N:
            raise RadioMapError(f"{path}:{lineno}: expected {D + N} values, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise RadioMapError(f"{path}:{lineno}: non-numeric cell") from exc
    data = np.array(rows, dtype=np.float64)
    extent = None
    if "LO" in meta and "HI" in meta:
        try:
            extent = Extent(tuple(float(v) for v in meta["LO"].split()),
                            tuple(float(v) for v in meta["HI"].split()))
        except ValueError as exc:
            raise RadioMapError(f"{path}: malformed extent") from exc
    return kind, grid, extent, data[:, :D], data[:, D:]


def load_radiomap(path) -> RadioMap:
    """Read a radio-map CSV.

    Layout: a header ``D=<d>,N=<n>,G=<grid m^2>,KIND=<ORM|TRM|RRM>`` with
    optional ``LO=``/``HI=`` extent bounds (space separated), a column line
    ``x1..xD,ap1..apN`` and one row per reference point. Unreceived APs are
    recorded as -100 dBm.
    """
    kind, grid, extent, pts, fps = _parse(path)
    if kind not in KINDS:
        raise RadioMapError(f"{path}: KIND must be one of {KINDS}, got {kind!r}")
    return RadioMap(pts, fps, grid, extent, kind)


def load_evalset(path) -> EvalSet:
    kind, _, _, truths, queries = _parse(path)
    if kind != "VDS":
        raise RadioMapError(f"{path}: expected KIND=VDS, got {kind!r}")
    return EvalSet(truths, queries)
