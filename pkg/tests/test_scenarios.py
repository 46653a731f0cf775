"""Scenario construction tests: profiles, masses, presets, rejection paths."""

import numpy as np
import pytest

from octomini import grid as G
from octomini import hydro as H
from octomini import comm as C
from octomini import gravity as GR
from octomini import scenarios as S
from octomini.errors import ConfigError


def sample_point(ic, x, y, z):
    xs = np.array([[[x]]])
    ys = np.array([[[y]]])
    zs = np.array([[[z]]])
    return ic(xs, ys, zs)[:, 0, 0, 0]


def tree_totals(tree):
    mass = 0.0
    mom = np.zeros(3)
    for leaf in tree.leaves():
        vol = leaf.grid.cell_width ** 3
        mass += leaf.grid.cells[0].sum() * vol
        mom += leaf.grid.cells[1:4].sum(axis=(1, 2, 3)) * vol
    return mass, mom


def barycenter(tree):
    m = 0.0
    mx = np.zeros(3)
    for leaf in tree.leaves():
        vol = leaf.grid.cell_width ** 3
        rho = leaf.grid.cells[0]
        cx, cy, cz = leaf.grid.centers()
        m += rho.sum() * vol
        mx[0] += (rho * cx).sum() * vol
        mx[1] += (rho * cy).sum() * vol
        mx[2] += (rho * cz).sum() * vol
    return mx / m


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        S.ScenarioConfig(kind="nosuch")
    with pytest.raises(ConfigError):
        S.ScenarioConfig(steps=0)
    with pytest.raises(ConfigError):
        S.ScenarioConfig(kind="binary", mass_ratio=0.0)
    with pytest.raises(ConfigError):
        S.ScenarioConfig(kind="binary", mass_ratio=1.5)
    with pytest.raises(ConfigError):
        S.ScenarioConfig(n_edge=5)
    with pytest.raises(ConfigError):
        S.ScenarioConfig(star_radius=-0.1)


def test_config_derived_fields():
    star = S.ScenarioConfig(kind="rotating_star")
    assert star.n_tracers == 1
    assert star.boundary == ("periodic", "periodic", "periodic")
    assert star.resolved_gamma == pytest.approx(5.0 / 3.0)
    assert star.resolved_omega > 0.0

    sod = S.ScenarioConfig(kind="sod")
    assert sod.n_tracers == 0
    assert sod.boundary[0] == "wall"
    assert sod.resolved_gamma == pytest.approx(1.4)
    assert sod.resolved_omega == 0.0

    binary = S.ScenarioConfig(kind="binary")
    assert binary.n_tracers == 2
    # circular-orbit frequency for the combined mass at the set separation
    m1, m2 = S.binary_masses(binary)
    a = binary.separation
    assert binary.resolved_omega == pytest.approx(
        np.sqrt(S.G_NEWTON * (m1 + m2) / a ** 3))


# ---------------------------------------------------------------- star


def test_star_center_and_edge():
    cfg = S.ScenarioConfig(kind="rotating_star", omega=0.0)
    ic = cfg.ic
    center = sample_point(ic, 0.5, 0.5, 0.5)
    assert center[0] == pytest.approx(cfg.rho_central, rel=1e-12)
    assert np.all(center[1:4] == 0.0)

    # far corner sits at the ambient floor
    corner = sample_point(ic, 0.02, 0.02, 0.02)
    assert corner[0] == pytest.approx(cfg.ambient * cfg.rho_central, rel=1e-12)
    # tracer marks star material only
    assert center[5] > 0.0
    assert corner[5] == 0.0


def test_star_profile_monotone_to_surface():
    cfg = S.ScenarioConfig(kind="rotating_star", omega=0.0)
    r = np.linspace(0.0, cfg.star_radius * 0.999, 64)
    rho = [sample_point(cfg.ic, 0.5 + ri, 0.5, 0.5)[0] for ri in r]
    assert all(a >= b for a, b in zip(rho, rho[1:]))
    # density falls to the floor exactly at the surface
    surf = sample_point(cfg.ic, 0.5 + cfg.star_radius * 1.001, 0.5, 0.5)[0]
    assert surf == pytest.approx(cfg.ambient * cfg.rho_central, rel=1e-12)


def test_star_mass_quadrature_matches_closed_form():
    cfg = S.ScenarioConfig(kind="rotating_star")
    quad = S.star_mass_quadrature(cfg)
    closed = S.star_mass_analytic(cfg)
    assert quad == pytest.approx(closed, rel=1e-10)


def test_star_tree_mass_matches_quadrature():
    cfg = S.ScenarioConfig(kind="rotating_star", max_level=4, n_edge=4,
                           omega=0.0)
    tree = S.build_scenario_tree(cfg)
    mass, _ = tree_totals(tree)
    star = S.star_mass_quadrature(cfg)
    ball = 4.0 / 3.0 * np.pi * cfg.star_radius ** 3
    ambient = cfg.ambient * cfg.rho_central * (1.0 - ball)
    assert mass == pytest.approx(star + ambient, rel=1e-2)


def test_pressure_constant_independent_of_central_density():
    k1 = S.polytrope_pressure_const(0.25)
    assert k1 == pytest.approx(2.0 * S.G_NEWTON * 0.25 ** 2 / np.pi, rel=1e-14)


# ---------------------------------------------------------------- binary


def test_binary_mass_ratio_exact():
    cfg = S.ScenarioConfig(kind="binary", mass_ratio=0.7)
    m1, m2 = S.binary_masses(cfg)
    assert m2 / m1 == pytest.approx(0.7, abs=1e-12)


def test_binary_equal_masses_mirror_symmetric():
    cfg = S.ScenarioConfig(kind="binary", mass_ratio=1.0, star_radius=0.23,
                           separation=0.5, omega=0.0)
    n = 32
    ax = (np.arange(n) + 0.5) / n
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    state = cfg.ic(x, y, z)
    rho = state[0]
    assert np.allclose(rho, rho[::-1, :, :], rtol=0, atol=1e-13)
    # equal blobs about the midpoint put the barycenter at the domain center
    tot = rho.sum()
    xbar = (rho * x).sum() / tot
    assert xbar == pytest.approx(0.5, abs=1e-12)
    # tracers swap roles under the mirror
    assert np.allclose(state[5], state[6][::-1, :, :], rtol=0, atol=1e-13)


def test_binary_rejects_overlap_and_overflow():
    with pytest.raises(ConfigError):
        S.ScenarioConfig(kind="binary", star_radius=0.2, separation=0.3).ic
    with pytest.raises(ConfigError):
        S.ScenarioConfig(kind="binary", star_radius=0.3, separation=0.65).ic


def test_binary_corotating_velocities_vanish():
    cfg = S.ScenarioConfig(kind="binary")
    n = 16
    ax = (np.arange(n) + 0.5) / n
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    state = cfg.ic(x, y, z)
    assert np.all(state[1:4] == 0.0)


# ---------------------------------------------------------------- sod


def test_sod_states_and_boundary():
    cfg = S.ScenarioConfig(kind="sod")
    left = sample_point(cfg.ic, 0.25, 0.5, 0.5)
    right = sample_point(cfg.ic, 0.75, 0.5, 0.5)
    g = cfg.resolved_gamma
    assert left[0] == pytest.approx(1.0)
    assert left[4] == pytest.approx(1.0 / (g - 1.0))
    assert right[0] == pytest.approx(0.125)
    assert right[4] == pytest.approx(0.1 / (g - 1.0))
    assert cfg.boundary == ("wall", "periodic", "periodic")


def test_uniform_scenario_structure():
    cfg = S.ScenarioConfig(kind="uniform", max_level=1, n_edge=4, seed=3)
    tree = S.build_scenario_tree(cfg)
    mass, _ = tree_totals(tree)
    assert mass > 0.0
    for leaf in tree.leaves():
        assert np.all(leaf.grid.cells[0] > 0.0)


# ---------------------------------------------------------------- presets


def test_preset_level5_cell_count():
    cfg = S.preset_config("star_level5")
    tree = S.build_scenario_tree(cfg)
    leaves = tree.leaves()
    cells = len(leaves) * cfg.n_edge ** 3
    preset = S.PRESETS["star_level5"]
    # the scale anchor: a level-5 star tree lands near 2.5 million cells
    assert abs(cells - preset.nominal_cells) <= 0.10 * preset.nominal_cells
    assert max(leaf.level for leaf in leaves) == 5


def test_preset_names_and_unknown():
    for name in ("star_level5", "star_level6", "star_level7", "v1309",
                 "dwd_level12"):
        assert name in S.PRESETS
    with pytest.raises(ConfigError):
        S.preset_config("nosuch_preset")


def test_preset_overrides_apply():
    cfg = S.preset_config("star_level5", max_level=2, n_edge=4)
    assert cfg.max_level == 2
    assert cfg.n_edge == 4


# ------------------------------------------------------- coupled dynamics


def test_binary_barycenter_pinned_over_ten_steps():
    # equal-mass pair, inertial frame: momentum conservation plus mirror
    # symmetry keeps the mass centroid at the domain center
    cfg = S.ScenarioConfig(kind="binary", mass_ratio=1.0, star_radius=0.23,
                           separation=0.5, omega=0.0, max_level=2, n_edge=4)
    tree = S.build_scenario_tree(cfg)
    assert len(tree.leaves()) > 1
    params = S.make_step_params(cfg)
    ccfg = C.CommConfig(1, local_opt=True)
    fn = C.make_exchange_fn(C.partition(tree, 1), ccfg, C.CommFabric(ccfg))
    b0 = barycenter(tree)
    for _ in range(10):
        dt = H.compute_dt(tree, params.cfl, params.gamma)
        GR.solve_gravity(tree)
        H.rk3_step(tree, dt, params, fn)
    drift = np.linalg.norm(barycenter(tree) - b0)
    assert drift <= 1e-6 * cfg.separation
