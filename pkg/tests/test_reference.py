import math

import numpy as np
import pytest
from scipy import stats

from detection_time.errors import ConfigError, OracleInvalid
from detection_time.model import DetectorModel
from detection_time.reference import (
    Line1DProblem,
    evolve_1d,
    free_bohmian_arrivals,
    free_problem,
    rho_free,
    sponge_profile,
)

TANH_CAP = DetectorModel("cap", profile="tanh", z0=10.0, a=0.165, W_max=40.0)
SHARP_CAP = DetectorModel("cap", profile="sharp", z0=10.0, W_max=40.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(Nz=3, hz=0.1, dt=0.1),
        dict(Nz=10, hz=0.0, dt=0.1),
        dict(Nz=10, hz=0.5, dt=0.1, top="neumann"),
        dict(Nz=10, hz=0.5, dt=0.1, top="robin"),
        dict(Nz=10, hz=0.1, dt=0.1),  # slab wider than the line
        dict(Nz=10, hz=0.5, dt=0.1, W=np.zeros(3)),
    ],
)
def test_line_problem_validation(kwargs):
    with pytest.raises(ConfigError):
        Line1DProblem(**kwargs)


def test_abc_roof_sits_at_counting_plane():
    prob = Line1DProblem.for_detector(DetectorModel("abc_spinless", kappa=math.pi), 10.0, 501, 1e-3)
    assert prob.roof == pytest.approx(10.0)
    assert prob.top == "robin"


def test_cap_line_has_zeroed_ends():
    prob = Line1DProblem.for_detector(TANH_CAP, 11.0, 400, 1e-3)
    assert prob.W[0] == 0.0 and prob.W[-1] == 0.0
    assert prob.W[-2] == pytest.approx(40.0, rel=1e-3)
    with pytest.raises(ConfigError):
        Line1DProblem.for_detector(DetectorModel("none"), 10.0, 400, 1e-3)


def test_initial_state_normalised():
    prob = Line1DProblem(200, 0.02, 1e-3)
    assert prob.norm_sq(prob.initial()) == pytest.approx(1.0)


def test_detector_free_norm_is_conserved():
    prob = Line1DProblem(300, 0.02, 1e-3)
    res = evolve_1d(prob, 2.0)
    assert np.max(np.abs(res.series.norm_sq - 1.0)) <= 1e-12
    assert res.series.rho_T_model is None


@pytest.mark.parametrize("det,fraction", [(TANH_CAP, 0.9068), (SHARP_CAP, 0.8088)])
def test_cap_detection_fractions(det, fraction):
    res = evolve_1d(Line1DProblem.for_detector(det, 11.0, 1000, 1e-3), 20.0)
    s = res.series
    assert s.detection_fraction == pytest.approx(fraction, abs=2e-3)
    assert s.dual_route_error() <= 1e-9
    assert np.all(np.diff(s.norm_sq) <= 1e-14)


def test_abc_dual_routes_agree():
    det = DetectorModel("abc_spinless", kappa=math.pi)
    s = evolve_1d(Line1DProblem.for_detector(det, 10.0, 1000, 1e-3), 20.0).series
    assert s.detection_fraction == pytest.approx(0.9646, abs=2e-3)
    assert s.dual_route_error() <= 1e-9
    assert s.mu_star == pytest.approx(4.857, abs=0.02)


def test_evolve_requires_positive_cutoff():
    with pytest.raises(ValueError):
        evolve_1d(Line1DProblem(50, 0.05, 1e-3), 0.0)


def test_sponge_profile_shape():
    z = np.linspace(0, 4, 9)
    W = sponge_profile(z, 2.0, 4.0, 8.0)
    assert np.all(W[:5] == 0.0)
    assert W[-1] == pytest.approx(8.0)
    assert np.all(np.diff(W) >= 0)


def test_free_problem_geometry():
    prob = free_problem(3.0, 1e-3, 0.02)
    assert prob.Nz * prob.hz == pytest.approx(12.0)
    assert prob.W[prob.z < 6.0].max() == 0.0


@pytest.fixture(scope="module")
def free_curve():
    return rho_free(10.0, 20.0, hz=0.01, dt=1e-3)


def test_free_flux_is_a_density(free_curve):
    assert free_curve.flux.min() >= -1e-6
    assert free_curve.route_error <= 1e-2
    assert 0.9 < free_curve.integral <= 1.0 + 1e-6
    assert free_curve.far_wall_max <= 1e-8


def test_free_integral_grows_with_cutoff(free_curve):
    short = rho_free(10.0, 10.0, hz=0.01, dt=1e-3)
    assert short.integral < free_curve.integral
    k = len(short.times)
    assert np.allclose(short.flux[:-1], free_curve.flux[: k - 1], atol=1e-12)


def test_free_oracle_rejects_reflections():
    with pytest.raises(OracleInvalid):
        rho_free(2.0, 10.0, hz=0.02, dt=1e-3, box_factor=2.0, sponge=0.0)


def test_free_probe_must_be_on_node():
    with pytest.raises(ConfigError):
        rho_free(3.005, 1.0, hz=0.01)


def test_spin_up_free_arrivals_follow_flux(free_curve):
    arr = free_bohmian_arrivals(10.0, 0.0, 25.0, 2000, 20.0, seed=2, hz=0.02, dt=5e-4)
    assert arr.fraction == pytest.approx(free_curve.integral, abs=0.02)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (free_curve.flux[1:] + free_curve.flux[:-1]) * 1e-3)])
    cdf = lambda t: np.interp(t, free_curve.times, cum) / cum[-1]  # noqa: E731
    assert stats.kstest(arr.tau, cdf).pvalue > 0.01


def test_free_arrivals_deterministic():
    a = free_bohmian_arrivals(3.0, math.pi / 2, 25.0, 50, 3.0, seed=4, hz=0.02, dt=2e-3)
    b = free_bohmian_arrivals(3.0, math.pi / 2, 25.0, 50, 3.0, seed=4, hz=0.02, dt=2e-3)
    assert np.array_equal(a.tau, b.tau)
