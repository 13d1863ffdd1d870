"""Terrain generation: bounds, determinism, gaps, serialization."""

import numpy as np
import pytest

from coevo.config import GAP_CROSSER, ROUGH_TERRAIN, TerrainConfig
from coevo.sim2d import generate_terrain, heightfield_from_dict, heightfield_to_dict, roughness
from coevo.sim2d.terrain import EnvParams, TerrainError, easy_corner, param_bounds


TCFG = TerrainConfig()


def test_zero_amplitude_gives_flat_field():
    field = generate_terrain(EnvParams(ROUGH_TERRAIN, 0.0, 5.0), seed=3, tcfg=TCFG)
    assert np.all(field.samples == 0.0)
    assert not field.gap_mask.any()


def test_determinism():
    p = EnvParams(ROUGH_TERRAIN, 1.7, 4.0)
    a = generate_terrain(p, 11, TCFG)
    b = generate_terrain(p, 11, TCFG)
    assert np.array_equal(a.samples, b.samples)
    c = generate_terrain(p, 12, TCFG)
    assert not np.array_equal(a.samples, c.samples)


def test_height_bound_exhaustive_scan():
    p = EnvParams(ROUGH_TERRAIN, 2.4, 7.2)
    worst = 0.0
    for seed in range(500):
        field = generate_terrain(p, seed, TCFG)
        worst = max(worst, float(np.abs(field.samples).max()))
    assert worst <= 2.4 + 1e-12


def test_out_of_bounds_params_rejected():
    with pytest.raises(TerrainError):
        generate_terrain(EnvParams(ROUGH_TERRAIN, 3.0, 4.0), 0, TCFG)
    with pytest.raises(TerrainError):
        generate_terrain(EnvParams(ROUGH_TERRAIN, 1.0, 1.0), 0, TCFG)
    with pytest.raises(TerrainError):
        generate_terrain(EnvParams(GAP_CROSSER, gap_width=9.0), 0, TCFG)


def test_gap_geometry_exact():
    width = 1.3
    field = generate_terrain(EnvParams(GAP_CROSSER, gap_width=width), 0, TCFG)
    xs = field.x0 + field.x_spacing * np.arange(len(field.samples))
    rel = xs - TCFG.gap_start
    expect_gap = (rel >= 0.0) & ((rel % TCFG.gap_period) < width)
    assert np.array_equal(field.gap_mask, expect_gap)
    assert np.all(field.samples[~expect_gap] == TCFG.gap_base_height)
    assert np.all(field.samples[expect_gap] == 0.0)
    assert field.base_height == TCFG.gap_base_height
    # measured gap runs have the expected cell width
    runs = np.flatnonzero(np.diff(expect_gap.astype(int)) == 1)
    ends = np.flatnonzero(np.diff(expect_gap.astype(int)) == -1)
    for s, e in zip(runs, ends):
        assert abs((e - s) * field.x_spacing - width) <= field.x_spacing


def test_roughness_tracks_variance_parameter():
    # the declared metric must grow with the spread parameter, which the
    # curriculum trend check leans on
    mids = []
    for variance in (2.4, 4.8, 7.2):
        vals = [roughness(generate_terrain(EnvParams(ROUGH_TERRAIN, 2.0, variance), s, TCFG), TCFG)
                for s in range(40)]
        mids.append(np.mean(vals))
    assert mids[0] < mids[1] < mids[2]


def test_roughness_tracks_max_height():
    lows = [roughness(generate_terrain(EnvParams(ROUGH_TERRAIN, 0.6, 4.8), s, TCFG), TCFG)
            for s in range(40)]
    highs = [roughness(generate_terrain(EnvParams(ROUGH_TERRAIN, 2.4, 4.8), s, TCFG), TCFG)
             for s in range(40)]
    assert np.mean(lows) < np.mean(highs)


def test_serialization_roundtrip():
    field = generate_terrain(EnvParams(GAP_CROSSER, gap_width=2.0), 5, TCFG)
    back = heightfield_from_dict(heightfield_to_dict(field))
    assert np.array_equal(back.samples, field.samples)
    assert np.array_equal(back.gap_mask, field.gap_mask)
    assert back.x_spacing == field.x_spacing and back.x0 == field.x0


def test_serialization_rejects_bad_docs():
    field = generate_terrain(EnvParams(ROUGH_TERRAIN, 1.0, 3.0), 5, TCFG)
    doc = heightfield_to_dict(field)
    del doc["samples"]
    with pytest.raises(TerrainError):
        heightfield_from_dict(doc)
    doc2 = heightfield_to_dict(field)
    doc2["samples"] = [float("nan")] * len(doc2["gap_mask"])
    with pytest.raises(TerrainError):
        heightfield_from_dict(doc2)


def test_easy_corner_and_bounds():
    lo, hi = param_bounds(ROUGH_TERRAIN, TCFG)
    p = easy_corner(ROUGH_TERRAIN, TCFG)
    assert p.validate(TCFG) == []
    assert p.height_variance == lo[1]
    assert np.all(lo < hi)
    g = easy_corner(GAP_CROSSER, TCFG)
    assert g.validate(TCFG) == []
