import math

import numpy as np
import pytest

from frcnet.oscillator import (ForcingSpec, NyquistError, SystemParams, Trajectory,
                               analytic_response, analytic_trajectory, base_motion,
                               from_relative, nondimensionalize, reference_integrate, rhs,
                               steady_amplitude, to_relative, transmissibility)

LS1 = SystemParams(0.2, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(0.0)
    with pytest.raises(ValueError):
        SystemParams(0.2, -1.0)
    assert LS1.peak_frequency == pytest.approx(math.sqrt(1 - 2 * 0.04))
    assert LS1.damped_frequency == pytest.approx(math.sqrt(0.96))


def test_nondimensionalize_roundtrip():
    xi, wn, length = nondimensionalize(2.0, 0.8, 8.0, 3.0)
    assert wn == pytest.approx(2.0)
    assert xi == pytest.approx(0.8 / (2 * math.sqrt(2.0 * 8.0)))
    assert length == pytest.approx(0.75)


@pytest.mark.parametrize("xi", [0.05, 0.2, 1.0, 2.5])
def test_analytic_satisfies_ode(xi):
    p = SystemParams(xi, 1.3)
    f = ForcingSpec("harmonic_force", 0.7, 2.1)
    t = np.linspace(0, 10, 20001)
    q, v = analytic_response(p, f, (0.3, -0.4), t)
    assert q[0] == pytest.approx(0.3, abs=1e-13)
    assert v[0] == pytest.approx(-0.4, abs=1e-13)
    # qddot from the ODE against a second-order difference of qdot
    acc = np.gradient(v, t, edge_order=2)
    ode = f.accel(t) - 2 * xi * 1.3 * v - 1.3**2 * q
    assert np.max(np.abs(acc[5:-5] - ode[5:-5])) < 1e-4


def test_reference_matches_analytic():
    f = ForcingSpec("harmonic_force", 1.0, 3.77)
    ref = reference_integrate(LS1, f, (0.2, 0.0), 0.01, 10000)
    exact = analytic_trajectory(LS1, f, (0.2, 0.0), 0.01, 10000)
    assert np.max(np.abs(ref.states - exact.states)) <= 1e-6


def test_reference_rejects_aliasing():
    with pytest.raises(NyquistError):
        reference_integrate(LS1, ForcingSpec("harmonic_force", 1.0, 400.0), (0, 0), 0.01, 10)


def test_steady_amplitude_closed_form():
    r = np.array([0.5, 1.0, 2.0])
    a = steady_amplitude(LS1, 1.0, r)
    expect = 1 / np.sqrt((1 - r**2) ** 2 + (0.4 * r) ** 2)
    np.testing.assert_allclose(a, expect, rtol=1e-14)


def test_transmissibility_crossover():
    for xi in (0.1, 0.2, 0.5, 1.0):
        assert transmissibility(xi, math.sqrt(2)) == pytest.approx(1.0, abs=1e-12)


def test_rhs():
    g = rhs((1.0, 2.0), 0.0, ForcingSpec("harmonic_force", 3.0, 1.0), LS1)
    assert g == (2.0, -1.0 - 0.8 + 3.0)


def test_relative_coordinates_roundtrip():
    base = base_motion(0.5, 1.4, 0.01, 200)
    x = Trajectory(0.0, 0.01, np.random.default_rng(0).normal(size=(200, 2)), np.zeros(200))
    back = from_relative(to_relative(x, base), base)
    np.testing.assert_allclose(back.states, x.states, atol=1e-15)


def test_base_forcing_amplitude():
    f = ForcingSpec("harmonic_base", 0.5, 2.0)
    assert f.accel_amplitude == pytest.approx(2.0)
    assert f.accel(0.0) == pytest.approx(2.0)


def test_trajectory_csv_roundtrip(tmp_path):
    tr = analytic_trajectory(LS1, ForcingSpec("harmonic_force", 1.0, 0.9), (0.1, 0.0), 0.01, 50)
    path = tmp_path / "traj.csv"
    text = tr.to_csv(path)
    assert text.splitlines()[0] == "t,q,qdot,u"
    back = Trajectory.from_csv(path)
    assert np.array_equal(back.data, tr.data)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(0.0, 0.01, np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        Trajectory(0.0, 0.0, np.zeros((3, 2)), np.zeros(3))


def test_sampled_forcing_interpolates():
    f = ForcingSpec("sampled", samples=np.array([0.0, 1.0, 0.0]), sample_dt=0.5)
    assert f.accel(0.25) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        f.check_step(0.1)
