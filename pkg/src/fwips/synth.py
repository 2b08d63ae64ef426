"""Synthetic RSS fields from a log-distance path-loss model with Gaussian dB noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .radiomap import MISSING_RSS_DBM, EvalSet, Extent, RadioMap, make_grid

REFERENCE_DISTANCE_M = 1.0
_ORM_STREAM = 0
_VDS_STREAM = 1


def _default_aps() -> np.ndarray:
    # corners and edge midpoints of the default 20 m x 15 m room
    return np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [20.0, 7.5],
                     [20.0, 15.0], [10.0, 15.0], [0.0, 15.0], [0.0, 7.5]])


@dataclass(frozen=True, eq=False)
class SynthScene:
    ap_positions: np.ndarray = field(default_factory=_default_aps)
    tx_power_dbm: float = -30.0
    path_loss_exponent: float = 3.0
    noise_std_db: float = 2.0
    min_rss_dbm: float = MISSING_RSS_DBM
    seed: int = 0
    extent: Extent = Extent((0.0, 0.0), (20.0, 15.0))
    grid_size: float = 0.25
    samples_per_rp: int = 4
    vds_count: int = 200

    def __post_init__(self):
        aps = np.array(self.ap_positions, dtype=np.float64)
        if aps.ndim != 2 or aps.shape[0] < 1:
            raise ValueError("need at least one access point")
        if aps.shape[1] != self.extent.dim:
            raise ValueError("access-point dimension does not match the extent")
        if not self.path_loss_exponent > 0:
            raise ValueError("path-loss exponent must be positive")
        if not self.noise_std_db >= 0:
            raise ValueError("noise std must be non-negative")
        if self.samples_per_rp < 1 or self.vds_count < 1:
            raise ValueError("sample counts must be >= 1")
        aps.setflags(write=False)
        object.__setattr__(self, "ap_positions", aps)

    @property
    def N(self) -> int:
        return self.ap_positions.shape[0]

    def with_seed(self, seed: int) -> "SynthScene":
        return SynthScene(self.ap_positions, self.tx_power_dbm, self.path_loss_exponent,
                          self.noise_std_db, self.min_rss_dbm, seed, self.extent, self.grid_size,
                          self.samples_per_rp, self.vds_count)


def noiseless_field(scene: SynthScene, points) -> np.ndarray:
    """Mean RSS (M x N, dBm) before noise and clamping."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = np.sqrt(((pts[:, None, :] - scene.ap_positions[None, :, :]) ** 2).sum(axis=2))
    d = np.maximum(d, REFERENCE_DISTANCE_M)
    return scene.tx_power_dbm - 10.0 * scene.path_loss_exponent * np.log10(d)


def _draw(scene: SynthScene, points, rng, samples: int) -> np.ndarray:
    mean = noiseless_field(scene, points)
    if scene.noise_std_db == 0:
        return np.maximum(mean, scene.min_rss_dbm)
    noise = rng.normal(0.0, scene.noise_std_db, size=(samples, *mean.shape))
    readings = np.maximum(mean[None] + noise, scene.min_rss_dbm)
    return readings.mean(axis=0)


def rss_at(scene: SynthScene, point, ap_index: int, rng: np.random.Generator | None = None) -> float:
    """One RSS reading of access point ``ap_index`` at ``point``.

    ``tx_power - 10 n log10(max(d, 1 m)) + noise``, floored at ``min_rss_dbm``.
    """
    if not 0 <= ap_index < scene.N:
        raise IndexError(f"access point {ap_index} out of range 0..{scene.N - 1}")
    d = math.dist(np.asarray(point, dtype=np.float64), scene.ap_positions[ap_index])
    value = scene.tx_power_dbm - 10.0 * scene.path_loss_exponent * math.log10(max(d, REFERENCE_DISTANCE_M))
    if scene.noise_std_db > 0:
        rng = rng if rng is not None else np.random.default_rng(scene.seed)
        value += float(rng.normal(0.0, scene.noise_std_db))
    return max(value, scene.min_rss_dbm)


def generate_orm(scene: SynthScene, extent: Extent | None = None, grid_size: float | None = None,
                 samples_per_rp: int | None = None, seed: int | None = None) -> RadioMap:
    """Survey every lattice point, averaging ``samples_per_rp`` readings per access point."""
    extent = extent or scene.extent
    grid_size = scene.grid_size if grid_size is None else grid_size
    samples = scene.samples_per_rp if samples_per_rp is None else samples_per_rp
    if samples < 1:
        raise ValueError("samples_per_rp must be >= 1")
    seed = scene.seed if seed is None else seed
    points = make_grid(extent, grid_size)
    rng = np.random.default_rng([seed, _ORM_STREAM])
    return RadioMap(points, _draw(scene, points, rng, samples), grid_size, extent, "ORM")


def generate_vds(scene: SynthScene, extent: Extent | None = None, count: int | None = None,
                 seed: int | None = None, samples_per_point: int | None = None) -> EvalSet:
    """Uniformly scattered test positions with one noisy fingerprint each.

    Each fingerprint is filtered like a survey reading, i.e. averaged over
    ``samples_per_point`` draws (default: the scene's ``samples_per_rp``).
    """
    extent = extent or scene.extent
    count = scene.vds_count if count is None else count
    if count < 1:
        raise ValueError("count must be >= 1")
    seed = scene.seed if seed is None else seed
    samples = scene.samples_per_rp if samples_per_point is None else samples_per_point
    if samples < 1:
        raise ValueError("samples_per_point must be >= 1")
    rng = np.random.default_rng([seed, _VDS_STREAM])
    truths = rng.uniform(extent.lower, extent.upper, size=(count, extent.dim))
    return EvalSet(truths, _draw(scene, truths, rng, samples))


# --- scene config files ----------------------------------------------------

def _vec(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_scene(scene: SynthScene, path) -> None:
    lines = [
        "ap_positions = " + "; ".join(_vec(p) for p in scene.ap_positions),
        f"tx_power_dbm = {scene.tx_power_dbm!r}",
        f"path_loss_exponent = {scene.path_loss_exponent!r}",
        f"noise_std_db = {scene.noise_std_db!r}",
        f"min_rss_dbm = {scene.min_rss_dbm!r}",
        f"seed = {scene.seed}",
        "extent_lower = " + _vec(scene.extent.lower),
        "extent_upper = " + _vec(scene.extent.upper),
        f"grid_size = {scene.grid_size!r}",
        f"samples_per_rp = {scene.samples_per_rp}",
        f"vds_count = {scene.vds_count}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_scene(path) -> SynthScene:
    """Parse a ``key = value`` scene file; omitted keys take the defaults.

    ``ap_positions`` lists points separated by ``;`` with space-separated
    coordinates. Lines starting with ``#`` are comments.
    """
    text = Path(path).read_text(encoding="utf-8")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        raw[key.strip()] = value.strip()
    default = SynthScene()
    known = {"ap_positions", "tx_power_dbm", "path_loss_exponent", "noise_std_db", "min_rss_dbm",
             "seed", "extent_lower", "extent_upper", "grid_size", "samples_per_rp", "vds_count"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")

    def floats(s):
        return tuple(float(v) for v in s.split())

    try:
        aps = (np.array([floats(p) for p in raw["ap_positions"].split(";") if p.strip()])
               if "ap_positions" in raw else default.ap_positions)
        extent = Extent(floats(raw.get("extent_lower", _vec(default.extent.lower))),
                        floats(raw.get("extent_upper", _vec(default.extent.upper))))
        return SynthScene(
            ap_positions=aps,
            tx_power_dbm=float(raw.get("tx_power_dbm", default.tx_power_dbm)),
            path_loss_exponent=float(raw.get("path_loss_exponent", default.path_loss_exponent)),
            noise_std_db=float(raw.get("noise_std_db", default.noise_std_db)),
            min_rss_dbm=float(raw.get("min_rss_dbm", default.min_rss_dbm)),
            seed=int(raw.get("seed", default.seed)),
            extent=extent,
            grid_size=float(raw.get("grid_size", default.grid_size)),
            samples_per_rp=int(raw.get("samples_per_rp", default.samples_per_rp)),
            vds_count=int(raw.get("vds_count", default.vds_count)),
        )
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
