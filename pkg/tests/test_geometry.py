import math

import numpy as np
import pytest

from fdls import scenarios
from fdls.geometry import (ConfigError, Disc, MediumConfig, classify_points, default_grid,
                           index_at, load_config, region_masks, sample_index, validate_config)

LAM = scenarios.LAM


def raw_disc(c, r, n):
    return {"center": list(c), "radius": r, "n": n}


def test_empty_inclusions_valid(wp):
    cfg = validate_config({}, wp)
    assert cfg.background == () and cfg.defect == ()


def test_negative_real_index_rejected(wp):
    with pytest.raises(ConfigError, match="index real part must be positive"):
        validate_config({"background": {"disc": [raw_disc((0, 0), 0.3 * LAM, -1.0)]}}, wp)


def test_reference_geometry_valid(wp):
    assert wp.L == pytest.approx(math.pi * LAM)
    assert wp.h == pytest.approx(1.5 * LAM)
    raw = {"background": {"disc": [raw_disc(scenarios.C_R1, 0.3 * LAM, 2.0),
                          raw_disc(scenarios.C_R2, 0.4 * LAM, 2.0)]}}
    cfg = validate_config(raw, wp)
    assert len(cfg.background) == 2


def test_disc_outside_strip_rejected(wp):
    raw = {"background": {"disc": [raw_disc((0, 1.3 * LAM), 0.3 * LAM, 2.0)]}}
    with pytest.raises(ConfigError):
        validate_config(raw, wp)


def test_negative_imag_index_rejected(wp):
    raw = {"background": {"disc": [raw_disc((0, 0), 0.3 * LAM, [2.0, -0.1])]}}
    with pytest.raises(ConfigError):
        validate_config(raw, wp)


def test_incidence_indices_counts():
    wp = scenarios.wave_params()
    j = wp.incidence_indices()
    assert j.size == wp.M * (wp.n_min + wp.n_max + 1) == 33
    assert np.all(np.diff(j) == 1)


def _masks(cfg, wp):
    return region_masks(cfg, wp, default_grid(cfg, wp, 32, 64))


def test_omega_disjoint_from_background(wp):
    cfg = scenarios.example("3")
    m = _masks(cfg, wp)
    assert not m.O.any()
    assert np.array_equal(m.Lam, m.omega)
    assert np.array_equal(m.Oc, m.D_p & m.cell0)


def test_omega_inside_r2_disc(wp):
    cfg = scenarios.example("1")
    grid = default_grid(cfg, wp, 32, 64)
    m = region_masks(cfg, wp, grid)
    X, Y = grid.mesh()
    r2 = (X - scenarios.C_R2[0]) ** 2 + (Y - scenarios.C_R2[1]) ** 2 < scenarios.R2**2
    assert np.array_equal(m.O, r2)
    assert np.array_equal(m.Lam, r2)


def test_partial_overlap_matches_pixel_sets(wp):
    cfg = scenarios.example("2a")
    grid = default_grid(cfg, wp, 32, 64)
    m = region_masks(cfg, wp, grid)
    X, Y = grid.mesh()
    r2 = (X - scenarios.C_R2[0]) ** 2 + (Y - scenarios.C_R2[1]) ** 2 < scenarios.R2**2
    r1 = (X - scenarios.C_R1[0]) ** 2 + (Y - scenarios.C_R1[1]) ** 2 < scenarios.R1**2
    d = cfg.defect[0]
    om = (X - d.center[0]) ** 2 + (Y - d.center[1]) ** 2 < d.radius**2
    assert np.array_equal(m.omega, om)
    assert np.array_equal(m.Lam, r2 | om)
    assert np.array_equal(m.Oc, r1)


def test_sample_index_values(wp):
    cfg = scenarios.example("1")
    pts_x = np.array([0.0, scenarios.C_R2[0] + 0.33 * LAM, scenarios.C_R2[0]])
    pts_y = np.array([0.0, scenarios.C_R2[1], scenarios.C_R2[1]])
    f = index_at(cfg, wp, pts_x, pts_y)
    np.testing.assert_array_equal(f.n, [1, 2, 4])
    np.testing.assert_array_equal(f.n_p, [1, 2, 2])


def test_index_periodic_copies(wp):
    cfg = scenarios.example("1")
    x, y = scenarios.C_R2
    f = index_at(cfg, wp, np.array([x + wp.L, x + 2 * wp.L]), np.array([y, y]))
    np.testing.assert_array_equal(f.n_p, [2, 2])
    # omega is only in the reference cell
    np.testing.assert_array_equal(f.n, [2, 2])


def test_sample_index_on_grid(wp):
    cfg = scenarios.example("1")
    grid = default_grid(cfg, wp, 16, 32)
    f = sample_index(cfg, wp, grid)
    X, Y = grid.mesh()
    g = index_at(cfg, wp, X, Y)
    np.testing.assert_array_equal(f.n, g.n)


def test_classify_points_consistent_with_masks(wp):
    cfg = scenarios.example("2a")
    grid = default_grid(cfg, wp, 32, 64)
    m = region_masks(cfg, wp, grid)
    X, Y = grid.mesh()
    c = classify_points(cfg, wp, X, Y)
    for key in ("omega", "D_p", "O", "Oc", "Lam", "O_p", "Oc_p"):
        assert np.array_equal(c[key], getattr(m, key)), key


def test_load_config_roundtrip(tmp_path):
    rc = scenarios.run_config("3", 16, 32)
    p = tmp_path / "c.toml"
    p.write_text(scenarios.to_toml(rc))
    back = load_config(p)
    assert back.wave == rc.wave
    assert back.medium == rc.medium


def test_defect_touching_cell_boundary_rejected(wp):
    x = wp.x_min + wp.L - 0.05 * LAM
    raw = {"defect": {"disc": [raw_disc((x, 0.0), 0.2 * LAM, 3.0)]}}
    with pytest.raises(ConfigError):
        validate_config(raw, wp)
