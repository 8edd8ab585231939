import math

import numpy as np
import pytest

from frcnet.frc import FrcConfig
from frcnet.network import OperatorNetwork, init_network
from frcnet.oscillator import NyquistError, SystemParams
from frcnet.stability import (EigenRecord, SweepSpec, classify, divergence_check, eig2x2,
                              equilibrium_eigenvalues, nyquist_limits, reference_eigenvalue,
                              root_locus, run_sweep, smooth3, spearman)
from frcnet.trainer import EpochRecord, ModelSpec, TrainingConfig

LS1 = SystemParams(0.2, 1.0)


@pytest.mark.parametrize("m", [[[0, 1], [-1, -0.4]], [[1, 2], [3, 4]], [[2, 0], [0, 2]],
                               [[1e8, 1], [-1, 1e8]]])
def test_eig2x2_matches_numpy(m):
    ours = sorted(eig2x2(m), key=lambda z: (z.real, z.imag))
    ref = sorted(np.linalg.eigvals(np.array(m, float)), key=lambda z: (z.real, z.imag))
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


def test_eig2x2_ordering():
    up, lo = eig2x2([[0, 1], [-1, -0.4]])
    assert up.imag > 0 and lo == up.conjugate()
    a, b = eig2x2([[1, 0], [0, 3]])
    assert a.real == 3 and b.real == 1


def test_classify():
    assert classify([complex(-0.1, 1)]) == "stable"
    assert classify([complex(0.1, 0)]) == "unstable"
    assert classify([complex(0.0, 1)]) == "marginal"
    assert classify([complex(1e-9, 0)], tol=1e-6) == "marginal"


def test_equilibrium_of_stub_is_reference():
    eq = equilibrium_eigenvalues(OperatorNetwork.linear(LS1.system_matrix))
    assert eq.upper == pytest.approx(reference_eigenvalue(0.2))
    assert eq.classification == "stable" and eq.caveat is None
    assert reference_eigenvalue(0.2) == pytest.approx(complex(-0.2, 0.9797959))
    assert reference_eigenvalue(2.0).imag == 0


def test_equilibrium_v1_caveat():
    eq = equilibrium_eigenvalues(init_network("V1", 3, (4,)))
    assert "t=0" in eq.caveat


def test_nyquist_algebra():
    rep = nyquist_limits(1.0, 10.0, 0.01)
    assert rep.nyquist_rate == pytest.approx(3.1831, abs=1e-4)
    assert rep.dt_max == pytest.approx(0.31416, abs=1e-5)
    rep = nyquist_limits(1.0, 1.0, 2 * math.pi / 62.83)
    assert rep.sampling_ratio == pytest.approx(62.83)
    assert rep.critical_ratio == pytest.approx(31.415)
    assert rep.omega_critical == pytest.approx(31.415)
    with pytest.raises(NyquistError):
        nyquist_limits(1.0, 10.0, 0.5)
    with pytest.raises(ValueError):
        nyquist_limits(0.0, 10.0, 0.01)


def test_divergence_check():
    rep = divergence_check(OperatorNetwork.linear(LS1.system_matrix))
    assert rep.passed and rep.max_trace == pytest.approx(-0.4)
    assert rep.traces.shape == (20, 20)
    bad = divergence_check(OperatorNetwork.linear([[0.1, 1], [-1, 0.0]]), n=5)
    assert not bad.passed and bad.max_trace == pytest.approx(0.1)


def test_root_locus(tmp_path):
    recs = [EpochRecord(k, 1.0 / k, 1e-3, -0.2 + 0.01 / k, 0.98) for k in range(1, 6)]
    rl = root_locus(recs, xi=0.2)
    errs = rl.errors()
    assert errs.shape == (5, 2) and errs[-1, 0] == pytest.approx(1.0)
    text = rl.to_csv(tmp_path / "rl.csv")
    assert text.splitlines()[0].startswith("epoch,re,im")
    assert len(text.splitlines()) == 6
    assert "<svg" in rl.to_svg(tmp_path / "rl.svg")
    plain = root_locus([EigenRecord(1, -0.1, 0.5)])
    assert plain.errors() is None and plain.to_csv().splitlines()[0] == "epoch,re,im"


def test_sweep_spec():
    spec = SweepSpec.default("band_center")
    assert len(spec.points()) == 10
    assert spec.point_seed(3) == spec.point_seed(3) != spec.point_seed(4)
    with pytest.raises(ValueError):
        SweepSpec.default("nope")
    with pytest.raises(ValueError):
        SweepSpec("band_center", (), (0.1,))


def _tiny(kind, **kw):
    return SweepSpec.default(kind, model=ModelSpec(latent_dim=4, hidden_widths=(8,)),
                             training=TrainingConfig(epochs=2),
                             frc=FrcConfig(n_points=4, band=(0.5, 2.0), horizon=30.0), **kw)


def test_tiny_sweep_outputs(tmp_path):
    spec = _tiny("bandwidth", grid=(0.2, 0.4), groups=(1.0,))
    res = run_sweep(spec)
    assert [p.point_id for p in res.points] == [0, 1]
    assert not res.failures
    lines = res.to_csv(tmp_path / "s.csv").splitlines()
    assert lines[0] == "point_id,swept_value,shape_err,peak_err,res_err"
    assert len(lines) == 3
    assert '"band_center": 1.0' in res.points_json()
    assert "<svg" in res.to_svg()
    again = run_sweep(spec)
    assert again.to_csv() == res.to_csv()


def test_frequency_ratio_sweep_csv():
    spec = _tiny("frequency_ratio", grid=(10.0,), groups=(20.0,), r_max=2.0, fr_horizon=20.0)
    res = run_sweep(spec)
    p = res.points[0]
    assert p.ok and len(p.ratios) == 4 and np.all(np.isfinite(p.e_pct))
    assert res.to_csv().splitlines()[0] == "point_id,swept_value,r,E_pct"


def test_sweep_point_failure_is_recorded():
    # the band top exceeds the Nyquist limit of the training step
    spec = _tiny("band_center", grid=(1.0, 400.0), groups=(0.1,))
    res = run_sweep(spec)
    assert res.points[0].ok
    assert "NyquistError" in res.points[1].error
    assert res.failures == [res.points[1]]


def test_trend_helpers():
    assert spearman([1, 2, 3, 4], [1, 3, 2, 5]) == pytest.approx(0.8)
    assert spearman([1, 2, np.nan, 3], [1, 2, 0, 3]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        spearman([1], [1])
    np.testing.assert_allclose(smooth3([0, 3, 0, 3]), [1.5, 1, 2, 1.5])
