import numpy as np
import pytest
from hypothesis import given, strategies as st

from chern_calabi import geometry as geo
from chern_calabi.functionals import flow_velocity, ricci_potential, volume
from chern_calabi.geometry import MetricError
from chern_calabi.lattice import Grid, random_bandlimited, spectrum_support
from chern_calabi.metricgen import (MetricRecipe, conformal_metric, constant_det_fixture, flat_metric,
                                    kahler_perturbation, kahler_potential, metric_from_recipe,
                                    project_pluriclosed, random_pluriclosed)
from chern_calabi import verify

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
GRID2 = Grid(2, 12)


def test_flat_metric():
    g = flat_metric(Grid(1, 16))
    assert np.all(g.det == 1)
    assert geo.curvature(g)[1].sup() == 0
    assert geo.torsion(flat_metric(GRID2))[0].sup() == 0


def test_conformal_metric():
    gr = Grid(1, 64)
    assert np.all(conformal_metric(gr, np.zeros(gr.shape)).det == 1)
    x = gr.coordinates()[0]
    u = 0.1 * np.sin(2 * np.pi * x)
    R = geo.chern_scalar(conformal_metric(gr, u))
    assert np.abs(R - np.exp(-u) * np.pi ** 2 * u).max() < 1e-9  # -e^{-u} (1/4) Laplacian u
    with pytest.raises(MetricError):
        conformal_metric(GRID2, np.zeros(GRID2.shape))
    with pytest.raises(MetricError):
        conformal_metric(gr, 1j * u)


def test_kahler_perturbation():
    g0 = random_pluriclosed(GRID2, 0, 0.1, 3)
    same = kahler_perturbation(g0, np.full(GRID2.shape, 2.0))
    assert np.abs(same.g - g0.g).max() < 1e-14
    k = kahler_perturbation(flat_metric(GRID2), kahler_potential(GRID2, 1, 0.2, 3))
    assert geo.torsion(k)[0].sup() < 1e-10
    assert abs(volume(k) - volume(flat_metric(GRID2))) / volume(k) < 1e-10
    with pytest.raises(MetricError, match="admissible scaling"):
        kahler_perturbation(flat_metric(GRID2), kahler_potential(GRID2, 1, 3.0, 3))


def test_random_pluriclosed():
    assert np.array_equal(random_pluriclosed(GRID2, 4, 0.0, 3).g, flat_metric(GRID2).g)
    g = random_pluriclosed(GRID2, 4, 0.1, 3)
    assert geo.pluriclosed_residual(g) < 1e-9
    assert geo.torsion(g)[0].sup() > 1e-3
    assert np.array_equal(g.g, random_pluriclosed(GRID2, 4, 0.1, 3).g)
    assert not np.array_equal(g.g, random_pluriclosed(GRID2, 5, 0.1, 3).g)
    assert spectrum_support(g.g[0, 1], GRID2) <= 3
    assert np.abs(g.g - np.eye(2).reshape(2, 2, 1, 1, 1, 1)).max() == pytest.approx(0.1)
    with pytest.raises(MetricError):
        random_pluriclosed(Grid(1, 16), 0, 0.1, 3)


@given(seeds)
def test_random_pluriclosed_is_gauduchon(seed):
    g = random_pluriclosed(GRID2, seed, 0.1, 3)
    assert verify._res_trace_identity(g) < 1e-8


@given(seeds)
def test_projection_is_idempotent(seed):
    g = random_pluriclosed(GRID2, seed, 0.1, 3)
    H = g.g - np.eye(2).reshape(2, 2, 1, 1, 1, 1)
    assert np.abs(project_pluriclosed(H, GRID2) - H).max() < 1e-12


def test_constant_det_fixture():
    assert np.array_equal(constant_det_fixture(GRID2, 0.0).g, flat_metric(GRID2).g)
    g = constant_det_fixture(GRID2, 0.3, 1)
    assert geo.pluriclosed_residual(g) < 1e-10
    assert geo.chern_ricci(g).sup() < 1e-10
    assert geo.torsion(g)[0].sup() > 1e-2
    assert np.abs(g.det - 0.91).max() < 1e-15
    v = flow_velocity(ricci_potential(g), np.zeros(GRID2.shape))
    assert np.abs(v).max() < 1e-7
    with pytest.raises(MetricError):
        constant_det_fixture(GRID2, 1.0)


def test_recipes():
    for kind in ("flat", "kahler", "random_pluriclosed", "constant_det_fixture"):
        amp = 0.3 if kind == "constant_det_fixture" else 0.1
        g = metric_from_recipe(MetricRecipe(kind, seed=1, amplitude=amp, max_mode=2), GRID2)
        assert g.min_eigen > 0
    gr = Grid(1, 32)
    x = gr.coordinates()[0]
    g = metric_from_recipe(MetricRecipe("conformal", amplitude=0.1, mode=1), gr)
    assert np.abs(g.det - np.exp(0.1 * np.sin(2 * np.pi * x))).max() < 1e-15
    with pytest.raises(ValueError):
        MetricRecipe("spherical")
    with pytest.raises(ValueError):
        MetricRecipe("flat", amplitude=-1.0)
    assert MetricRecipe("kahler", 3, 0.1, 2).fingerprint() == "kind=kahler,seed=3,amplitude=0.1,max_mode=2,mode=0"


def test_kahler_potential_scaling():
    psi = kahler_potential(GRID2, 3, 0.2, 3)
    assert np.abs(geo._spectral_ddbar(psi, GRID2)).max() == pytest.approx(0.2)
    assert np.all(kahler_potential(GRID2, 3, 0.0, 3) == 0)
