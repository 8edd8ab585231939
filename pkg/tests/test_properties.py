import json

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from frcnet.config import RunConfig
from frcnet.forecast import trapezoid_newton_step
from frcnet.frc import FrcCurve
from frcnet.network import OperatorNetwork, dumps, forward_batch, init_network, loads
from frcnet.oscillator import ForcingSpec, SystemParams, Trajectory, analytic_response
from frcnet.stability import eig2x2

finite = st.floats(-1e3, 1e3, allow_nan=False)
pos = st.floats(1e-3, 1e3, allow_nan=False)


@given(st.lists(finite, min_size=4, max_size=4))
def test_eig2x2_trace_and_determinant(vals):
    m = np.array(vals).reshape(2, 2)
    a, b = eig2x2(m)
    scale = max(1.0, np.abs(m).max()) ** 2
    assert abs((a + b).real - np.trace(m)) <= 1e-9 * max(1.0, np.abs(m).max())
    assert abs((a * b).real - np.linalg.det(m)) <= 1e-9 * scale
    assert a.real >= b.real - 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.1, 20.0), st.floats(0.0, 5.0),
       st.floats(-2, 2), st.floats(-2, 2))
def test_stub_step_is_linear_trapezoid(xi, wn, amp, q0, v0):
    p = SystemParams(xi, wn)
    h = min(0.01, 0.5 / wn)
    f = ForcingSpec("harmonic_force", amp, 0.7 * wn)
    step = trapezoid_newton_step(OperatorNetwork.linear(p.system_matrix), (q0, v0), 0.3, h, f)
    A = p.system_matrix
    I = np.eye(2)
    rhs = (I + 0.5 * h * A) @ [q0, v0] + 0.5 * h * np.array([0, f.accel(0.3) + f.accel(0.3 + h)])
    exact = np.linalg.solve(I - 0.5 * h * A, rhs)
    # an accepted RK4 guess (zero iterations) is only as good as its residual
    bound = 1e-12 * max(1.0, np.abs(exact).max()) + (2 * step.residual if step.iters == 0 else 0)
    assert step.converged
    assert np.max(np.abs(step.state - exact)) <= bound


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 2.5), pos, st.floats(0.05, 5.0), finite, finite)
def test_analytic_initial_condition(xi, wn, r, q0, v0):
    p = SystemParams(xi, wn)
    q, v = analytic_response(p, ForcingSpec("harmonic_force", 1.0, r * wn), (q0, v0), 0.0)
    assert abs(q - q0) <= 1e-9 * max(1.0, abs(q0), abs(v0) / wn)
    assert abs(v - v0) <= 1e-9 * max(1.0, abs(v0), abs(q0) * wn)


@given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=20), pos)
def test_trajectory_csv_bitwise(rows, dt):
    arr = np.array(rows)
    tr = Trajectory(0.0, dt, arr[:, :2], arr[:, 2])
    lines = tr.to_csv().splitlines()
    back = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back, tr.data)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=2, max_size=30))
def test_frc_csv_footer(amps):
    c = FrcCurve(np.linspace(0.1, 10, len(amps)), amps)
    lines = c.to_csv().splitlines()
    peak = dict(kv.split("=") for kv in lines[-1][2:].split(","))
    assert float(peak["peak_amp"]) == max(amps)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["V1", "V2", "V3"]), st.integers(1, 6), st.integers(1, 6),
       st.integers(0, 2**31 - 1))
def test_model_roundtrip_bitwise(variant, p, w, seed):
    net = init_network(variant, p, (w,), seed)
    back = loads(dumps(net))
    x = np.random.default_rng(seed).normal(size=(3, 2))
    kw = {"u": np.zeros(3), "t": np.zeros(3)} if variant == "V1" else {}
    assert np.array_equal(forward_batch(back, x, **kw), forward_batch(net, x, **kw))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 500), st.floats(0.05, 0.95))
def test_config_hash_changes_iff_content_changes(seed, epochs, xi):
    a = RunConfig.from_dict({"seed": seed, "training": {"epochs": epochs}, "system": {"xi": xi}})
    same = RunConfig.from_dict(json.loads(a.dumps()))
    assert same.hash() == a.hash()
    other = RunConfig.from_dict({"seed": seed, "training": {"epochs": epochs + 1},
                                 "system": {"xi": xi}})
    assert other.hash() != a.hash()
