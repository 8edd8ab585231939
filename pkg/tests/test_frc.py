import math
import warnings

import numpy as np
import pytest

from frcnet.forecast import ForecastConfig, forecast
from frcnet.frc import (FrcConfig, FrcCurve, TransientWarning, accuracy_pct, analytic_signal,
                        closed_form_frc, compute_frc, frc_metrics, hilbert_envelope,
                        steady_amplitude_of, tail_window, time_metrics)
from frcnet.network import OperatorNetwork
from frcnet.oscillator import ForcingSpec, NyquistError, SystemParams, analytic_trajectory

LS1 = SystemParams(0.2, 1.0)


def test_envelope_of_pure_tone():
    t = np.arange(4000) * 0.01
    env = hilbert_envelope(1.7 * np.cos(2.3 * t + 0.4))
    win = tail_window(len(env), 0.5)
    assert np.median(env[win]) == pytest.approx(1.7, rel=1e-3)
    assert np.iscomplexobj(analytic_signal(np.ones(8)))


def test_tail_window():
    w = tail_window(1000, 0.3, 0.05)
    assert w.start == 700 and w.stop == 950
    with pytest.raises(ValueError):
        tail_window(1000, 0.0)


def test_steady_amplitude_warns_on_transient():
    tr = analytic_trajectory(LS1, ForcingSpec("harmonic_force", 1.0, 2.0), (1.0, 0.0), 0.01, 1000)
    with pytest.warns(TransientWarning):
        est = steady_amplitude_of(tr.q, 0.01, xi=0.2)
    assert est.warning
    tr = analytic_trajectory(LS1, ForcingSpec("harmonic_force", 1.0, 2.0), (1.0, 0.0), 0.01, 10000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        est = steady_amplitude_of(tr.q, 0.01, xi=0.2)
    assert est.amplitude == pytest.approx(1 / math.sqrt(9 + 0.64), rel=1e-3)


def test_closed_form_peak_location():
    cf = closed_form_frc(LS1, FrcConfig())
    assert cf.peak_freq == pytest.approx(0.95311, abs=1e-5)
    assert cf.peak_amplitude == pytest.approx(1 / (2 * 0.2 * math.sqrt(1 - 0.04)), rel=1e-3)


def test_oracle_frc_matches_closed_form():
    cfg = FrcConfig(n_points=40)
    num = compute_frc(LS1, cfg)
    rep = frc_metrics(num, closed_form_frc(LS1, cfg))
    assert rep.shape_error_pct < 0.05 and rep.peak_error_pct < 0.2
    assert accuracy_pct(rep) > 99.95


def test_network_frc_of_stub():
    cfg = FrcConfig(n_points=12, band=(0.5, 2.0))
    net = compute_frc(OperatorNetwork.linear(LS1.system_matrix), cfg)
    rep = frc_metrics(net, closed_form_frc(LS1, cfg))
    assert rep.shape_error_pct < 0.1 and not net.failures


def test_base_frc_closed_form_transmissibility():
    cfg = FrcConfig(kind="harmonic_base", drive_amplitude=0.5)
    cf = closed_form_frc(LS1, cfg, absolute=True)
    k = cf.nearest_index(math.sqrt(2))
    # the grid point sits just below sqrt(2), where |X/Y| is slightly above one
    assert cf.freqs[k] == pytest.approx(1.40942, abs=1e-5)
    assert 1.0 < cf.absolute[k] < 1.011
    r = cf.freqs
    np.testing.assert_allclose(cf.amplitudes, r**2 / np.sqrt((1 - r**2) ** 2 + (0.4 * r) ** 2))


def test_base_frc_oracle_absolute():
    cfg = FrcConfig(kind="harmonic_base", n_points=5, band=(1.0, 2.0))
    num = compute_frc(LS1, cfg, absolute=True)
    cf = closed_form_frc(LS1, cfg, absolute=True)
    np.testing.assert_allclose(num.absolute, cf.absolute, rtol=5e-3)
    with pytest.raises(ValueError):
        compute_frc(LS1, FrcConfig(n_points=3), absolute=True)


def test_frc_config_validation_and_horizon():
    with pytest.raises(ValueError):
        FrcConfig(band=(1.0, 0.5))
    with pytest.raises(ValueError):
        FrcConfig(kind="sampled")
    cfg = FrcConfig()
    assert cfg.n_steps(5.0, 0.01) == 10000
    assert cfg.n_steps(0.1, 0.01) == math.ceil(12 * 2 * math.pi / 0.1 / 0.01 - 1e-9)
    with pytest.raises(NyquistError):
        compute_frc(LS1, FrcConfig(band=(1.0, 400.0), n_points=2))


def test_frc_csv_roundtrip(tmp_path):
    cf = closed_form_frc(LS1, FrcConfig(n_points=20))
    text = cf.to_csv(tmp_path / "f.csv")
    assert text.splitlines()[0] == "freq,amplitude"
    assert text.splitlines()[-1].startswith("# peak_freq=")
    back = FrcCurve.from_csv(tmp_path / "f.csv")
    assert np.array_equal(back.amplitudes, cf.amplitudes)
    svg = cf.to_svg(tmp_path / "f.svg", overlay=cf)
    assert svg.startswith("<svg") or svg.startswith("<?xml")


def test_curve_validation():
    with pytest.raises(ValueError):
        FrcCurve([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        FrcCurve([1.0, 2.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        FrcCurve([1.0], [np.nan]).peak_index


def test_time_metrics_of_exact_forecast():
    f = ForcingSpec("harmonic_force", 1.0, 3.77)
    truth = analytic_trajectory(LS1, f, (0.2, 0.0), 0.01, 10000)
    pred = forecast(OperatorNetwork.linear(LS1.system_matrix), (0.2, 0.0),
                    ForecastConfig(0.01, 10000, f)).trajectory
    rep = time_metrics(pred, truth)
    # the trapezoid rule warps frequency slightly, so the amplitude is off by ~0.03%
    assert rep.mse < 1e-9 and abs(rep.amp_error_pct) < 0.05 and rep.freq_error_pct < 1e-3
    with pytest.raises(ValueError):
        time_metrics(pred.head(10), truth)


def test_frc_metrics_definitions():
    f = np.linspace(0.5, 1.5, 3)
    truth = FrcCurve(f, [1.0, 2.0, 1.0])
    pred = FrcCurve(f, [1.0, 2.2, 1.2])
    rep = frc_metrics(pred, truth)
    assert rep.shape_error_pct == pytest.approx(100 * (0.4 / 3) / 2.0)
    assert rep.peak_error_pct == pytest.approx(10.0)
    assert rep.resonance_error_pct == 0.0
    with pytest.raises(ValueError):
        frc_metrics(FrcCurve(f + 1, [1, 1, 1]), truth)
