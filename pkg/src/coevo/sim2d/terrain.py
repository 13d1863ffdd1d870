"""Parameterized terrain: Gaussian-mixture bump fields and periodic gap ledges.

A terrain is sampled once onto a uniform grid (a `Heightfield`) and then
treated as ground truth by the simulator. Identical (params, seed) pairs
always produce identical fields.
"""

from dataclasses import dataclass

import numpy as np

from ..config import GAP_CROSSER, ROUGH_TERRAIN, TerrainConfig


class TerrainError(ValueError):
    """Environment parameters outside their admissible bounds."""


@dataclass(frozen=True)
class EnvParams:
    """The environment parameter tuple steering terrain generation.

    rough_terrain uses (max_height, height_variance); gap_crosser uses
    gap_width only.
    """

    env_kind: str
    max_height: float = 0.0
    height_variance: float = 0.0
    gap_width: float = 0.0

    def vector(self):
        """Parameters as a flat array (the environment policy's action space)."""
        if self.env_kind == ROUGH_TERRAIN:
            return np.array([self.max_height, self.height_variance])
        return np.array([self.gap_width])

    @classmethod
    def from_vector(cls, env_kind, vec):
        if env_kind == ROUGH_TERRAIN:
            return cls(env_kind, max_height=float(vec[0]), height_variance=float(vec[1]))
        return cls(env_kind, gap_width=float(vec[0]))

    def as_tuple(self):
        return (self.env_kind,) + tuple(float(v) for v in self.vector())

    def validate(self, tcfg: TerrainConfig):
        problems = []
        if self.env_kind == ROUGH_TERRAIN:
            if not (0.0 <= self.max_height <= tcfg.max_height_cap):
                problems.append(
                    f"max_height must be in [0, {tcfg.max_height_cap}], got {self.max_height}")
            if not (tcfg.variance_lo <= self.height_variance <= tcfg.variance_hi):
                problems.append(
                    f"height_variance must be in [{tcfg.variance_lo}, {tcfg.variance_hi}], "
                    f"got {self.height_variance}")
        elif self.env_kind == GAP_CROSSER:
            if not (tcfg.gap_lo <= self.gap_width <= tcfg.gap_hi):
                problems.append(
                    f"gap_width must be in [{tcfg.gap_lo}, {tcfg.gap_hi}], got {self.gap_width}")
        else:
            problems.append(f"unknown env_kind {self.env_kind!r}")
        return problems


def param_bounds(env_kind, tcfg: TerrainConfig):
    """(lo, hi) arrays matching EnvParams.vector() for the given kind."""
    if env_kind == ROUGH_TERRAIN:
        return (np.array([0.0, tcfg.variance_lo]),
                np.array([tcfg.max_height_cap, tcfg.variance_hi]))
    return np.array([tcfg.gap_lo]), np.array([tcfg.gap_hi])


def easy_corner(env_kind, tcfg: TerrainConfig):
    """The first training environment: gentle and learnable."""
    if env_kind == ROUGH_TERRAIN:
        return EnvParams(env_kind, max_height=0.5 * tcfg.max_height_cap,
                         height_variance=tcfg.variance_lo)
    return EnvParams(env_kind, gap_width=tcfg.gap_lo)


@dataclass(frozen=True)
class Heightfield:
    """Ground heights on a uniform x grid; gap cells carry no ground at all."""

    x0: float
    x_spacing: float
    samples: np.ndarray          # float, finite everywhere
    gap_mask: np.ndarray         # bool, True = bottomless cell
    base_height: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "gap_mask", np.asarray(self.gap_mask, dtype=bool))

    def height_at(self, x):
        return terrain_height(self.x0, self.x_spacing, self.samples, x)


def terrain_height(x0, dx, samples, x):
    """Linear interpolation with flat extension beyond the sampled span."""
    pos = (np.asarray(x) - x0) / dx
    i = np.clip(np.floor(pos).astype(int), 0, len(samples) - 2)
    frac = np.clip(pos - i, 0.0, 1.0)
    return samples[i] * (1.0 - frac) + samples[i + 1] * frac


def generate_terrain(params: EnvParams, seed, tcfg: TerrainConfig = None) -> Heightfield:
    """Sample a heightfield for `params`, deterministically in (params, seed)."""
    tcfg = tcfg or TerrainConfig()
    problems = params.validate(tcfg)
    if problems:
        raise TerrainError("; ".join(problems))

    n = int(round((tcfg.span_hi - tcfg.span_lo) / tcfg.x_spacing)) + 1
    xs = tcfg.span_lo + tcfg.x_spacing * np.arange(n)

    if params.env_kind == ROUGH_TERRAIN:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x7E11]))
        span = tcfg.span_hi - tcfg.span_lo
        k = max(1, int(round(tcfg.components_per_50 * span / 50.0)))
        mu = rng.uniform(tcfg.span_lo, tcfg.span_hi, size=k)
        sigma = rng.uniform(tcfg.sigma_base,
                            tcfg.sigma_base + tcfg.sigma_per_variance * params.height_variance,
                            size=k)
        amp = rng.uniform(0.0, params.max_height, size=k)
        h = np.zeros(n)
        for j in range(k):
            h += amp[j] * np.exp(-0.5 * ((xs - mu[j]) / sigma[j]) ** 2)
        peak = np.max(np.abs(h)) if n else 0.0
        if peak > params.max_height > 0.0:
            h *= params.max_height / peak   # keep the amplitude bound after overlap
        elif params.max_height == 0.0:
            h[:] = 0.0
        return Heightfield(tcfg.span_lo, tcfg.x_spacing, h, np.zeros(n, dtype=bool), 0.0)

    # gap crosser: flat ledge at base height, bottomless gaps of exact width
    h = np.full(n, tcfg.gap_base_height)
    mask = np.zeros(n, dtype=bool)
    rel = xs - tcfg.gap_start
    in_gap = (rel >= 0.0) & ((rel % tcfg.gap_period) < params.gap_width)
    mask[in_gap] = True
    h[in_gap] = 0.0
    return Heightfield(tcfg.span_lo, tcfg.x_spacing, h, mask, tcfg.gap_base_height)


def roughness(field: Heightfield, tcfg: TerrainConfig = None):
    """Reported terrain roughness: std of samples over the reporting window.

    This is a declared desk-scale metric; only its trend is meaningful.
    """
    tcfg = tcfg or TerrainConfig()
    lo = int(np.clip(round((tcfg.roughness_lo - field.x0) / field.x_spacing), 0, len(field.samples) - 1))
    hi = int(np.clip(round((tcfg.roughness_hi - field.x0) / field.x_spacing), lo + 1, len(field.samples)))
    return float(np.std(field.samples[lo:hi]))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def heightfield_to_dict(field: Heightfield):
    return {
        "x0": field.x0,
        "x_spacing": field.x_spacing,
        "samples": [float(v) for v in field.samples],
        "gap_mask": [bool(v) for v in field.gap_mask],
        "base_height": field.base_height,
    }


def heightfield_from_dict(doc):
    for key in ("x0", "x_spacing", "samples", "gap_mask", "base_height"):
        if key not in doc:
            raise TerrainError(f"heightfield document missing {key!r}")
    samples = np.asarray(doc["samples"], dtype=np.float64)
    mask = np.asarray(doc["gap_mask"], dtype=bool)
    if samples.shape != mask.shape:
        raise TerrainError("samples and gap_mask must have equal length")
    if not np.all(np.isfinite(samples)):
        raise TerrainError("samples must be finite")
    return Heightfield(float(doc["x0"]), float(doc["x_spacing"]), samples, mask,
                       float(doc["base_height"]))
