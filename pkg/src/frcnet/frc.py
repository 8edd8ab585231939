"""Frequency response curves and error metrics.

Steady-state amplitudes come from the Hilbert envelope of each forecast: the
analytic signal is built by FFT (zero-padded to the next power of two), and
the amplitude is the median envelope over the tail window.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import hilbert

from .forecast import ForecastConfig, forecast_batch
from .network import OperatorNetwork
from .oscillator import (ForcingSpec, SystemParams, Trajectory, analytic_response,
                         base_motion, from_relative, transmissibility)
from .oscillator import steady_amplitude as closed_form_amplitude
from .svg import line_plot


class TransientWarning(UserWarning):
    """Steady-state window may still contain transient response."""


# ------------------------------------------------------------------ envelope

def analytic_signal(signal, return_nfft: bool = False):
    """FFT analytic signal, zero-padded to the next power of two, truncated back."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or len(x) < 8:
        raise ValueError(f"need a 1-d signal of at least 8 samples, got shape {x.shape}")
    n = len(x)
    nfft = 1 << (n - 1).bit_length()
    z = hilbert(x, N=nfft)[:n]
    return (z, nfft) if return_nfft else z


def hilbert_envelope(signal, return_nfft: bool = False):
    """Magnitude of the analytic signal."""
    z, nfft = analytic_signal(signal, return_nfft=True)
    return (np.abs(z), nfft) if return_nfft else np.abs(z)


def tail_window(n: int, tail_fraction: float = 0.3, edge_fraction: float = 0.05) -> slice:
    """Index window: final ``tail_fraction`` minus the outer ``edge_fraction`` at both ends."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must be in (0, 1]")
    edge = int(round(n * edge_fraction))
    lo = max(n - int(round(n * tail_fraction)), edge)
    hi = n - edge
    if hi - lo < 2:
        raise ValueError("tail window is empty")
    return slice(lo, hi)


class SteadyEstimate(NamedTuple):
    amplitude: float
    warning: str | None = None

    def __float__(self):
        return self.amplitude


def steady_amplitude_of(q, dt: float, tail_fraction: float = 0.3, xi: float | None = None,
                        omega_n: float = 1.0, edge_fraction: float = 0.05) -> SteadyEstimate:
    """Median Hilbert envelope over the tail window of displacement ``q``.

    When ``xi`` is given the transient must have decayed below 1% by the
    window start; otherwise the two halves of the window are compared and a
    drift above 1% is flagged.
    """
    q = np.asarray(q, dtype=np.float64)
    env = hilbert_envelope(q)
    win = tail_window(len(env), tail_fraction, edge_fraction)
    amp = float(np.median(env[win]))
    msg = None
    if xi is not None:
        t_start = win.start * dt
        if math.exp(-xi * omega_n * t_start) > 0.01:
            msg = (f"transient e^(-xi wn t) = {math.exp(-xi * omega_n * t_start):.3g} "
                   f"at window start t={t_start:g} exceeds 1%")
    else:
        seg = env[win]
        half = len(seg) // 2
        a, b = np.median(seg[:half]), np.median(seg[half:])
        if max(a, b) > 0 and abs(a - b) > 0.01 * max(a, b):
            msg = f"envelope drifts {100 * abs(a - b) / max(a, b):.2f}% across the steady window"
    if msg:
        warnings.warn(msg, TransientWarning, stacklevel=2)
    return SteadyEstimate(amp, msg)


def steady_amplitude(traj: Trajectory, tail_fraction: float = 0.3, xi: float | None = None,
                     omega_n: float = 1.0) -> SteadyEstimate:
    return steady_amplitude_of(traj.q, traj.dt, tail_fraction, xi, omega_n)


# ---------------------------------------------------------------------- FRC

@dataclass(frozen=True)
class FrcConfig:
    """Frequency grid and steady-state extraction settings.

    Grid values are frequency ratios; the driving frequency is ``r * omega_n``.
    Each trajectory runs for ``horizon`` or ``min_periods`` driving periods,
    whichever is longer, so low frequencies still fill the tail window.
    ``kind="harmonic_base"`` treats ``drive_amplitude`` as base displacement Y
    and reports relative amplitudes Z/Y.
    """

    band: tuple[float, float] = (0.1, 10.0)
    n_points: int = 500
    drive_amplitude: float = 1.0
    ic: tuple[float, float] = (0.2, 0.0)
    horizon: float = 100.0
    tail_fraction: float = 0.3
    kind: str = "harmonic_force"
    omega_n: float = 1.0
    min_periods: float = 12.0

    def __post_init__(self):
        lo, hi = self.band
        if not (lo > 0 and hi > lo):
            raise ValueError(f"band must satisfy 0 < f_lo < f_hi, got {self.band}")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.kind not in ("harmonic_force", "harmonic_base"):
            raise ValueError(f"FRC needs harmonic forcing, got {self.kind!r}")
        if not (self.horizon > 0 and 0 < self.tail_fraction <= 1 and self.omega_n > 0):
            raise ValueError("horizon, tail_fraction and omega_n must be positive")

    def grid(self) -> np.ndarray:
        return np.linspace(self.band[0], self.band[1], self.n_points)

    def forcing(self, r: float) -> ForcingSpec:
        return ForcingSpec(self.kind, self.drive_amplitude, r * self.omega_n)

    def n_steps(self, r: float, dt: float) -> int:
        omega = r * self.omega_n
        horizon = max(self.horizon, self.min_periods * 2.0 * math.pi / omega)
        return int(math.ceil(horizon / dt - 1e-9))


@dataclass
class FrcCurve:
    freqs: np.ndarray
    amplitudes: np.ndarray
    absolute: np.ndarray | None = None
    warnings: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if self.freqs.shape != self.amplitudes.shape:
            raise ValueError("freqs and amplitudes differ in length")
        if np.any(self.amplitudes[np.isfinite(self.amplitudes)] < 0):
            raise ValueError("amplitudes must be non-negative")

    @property
    def peak_index(self) -> int:
        if not np.any(np.isfinite(self.amplitudes)):
            raise ValueError("curve has no valid amplitudes")
        return int(np.nanargmax(self.amplitudes))

    @property
    def peak_amplitude(self) -> float:
        return float(self.amplitudes[self.peak_index])

    @property
    def peak_freq(self) -> float:
        return float(self.freqs[self.peak_index])

    def nearest_index(self, f: float) -> int:
        return int(np.argmin(np.abs(self.freqs - f)))

    def to_csv(self, path=None) -> str:
        lines = ["freq,amplitude"]
        lines += [f"{format(f, '.17g')},{format(a, '.17g')}"
                  for f, a in zip(self.freqs, self.amplitudes)]
        lines.append(f"# peak_freq={format(self.peak_freq, '.17g')},"
                     f"peak_amp={format(self.peak_amplitude, '.17g')}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "FrcCurve":
        rows = [ln.strip() for ln in open(path) if ln.strip() and not ln.startswith("#")]
        if rows[0] != "freq,amplitude":
            raise ValueError(f"{path}: expected header freq,amplitude")
        arr = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        return cls(arr[:, 0], arr[:, 1])

    def to_svg(self, path=None, overlay: "FrcCurve | None" = None, title="") -> str:
        series = [(self.label or "forecast", self.freqs, self.amplitudes)]
        if overlay is not None:
            series.append((overlay.label or "oracle", overlay.freqs, overlay.amplitudes))
        return line_plot(series, path, title=title, xlabel="frequency ratio r",
                         ylabel="steady amplitude", dashed=("oracle",),
                         markers=[(self.peak_freq, self.peak_amplitude,
                                   f"peak {self.peak_freq:.4g}")])


def _dt_check(frc: FrcConfig, dt: float):
    # the top of the band sets the step limit
    frc.forcing(frc.band[1]).check_step(dt)


def compute_frc(model, frc: FrcConfig, forecast_config: ForecastConfig | None = None, *,
                absolute: bool = False, workers: int = 1, backend: str | None = None,
                dt: float | None = None, allow_aliasing: bool = False) -> FrcCurve:
    """Steady amplitude at every grid frequency.

    ``model`` is an ``OperatorNetwork`` (forecast recursively) or a
    ``SystemParams`` (closed-form trajectories: the oracle stub). Step size
    and Newton settings come from ``forecast_config``; its forcing and length
    are replaced per frequency. Failed forecasts leave NaN amplitudes.
    ``allow_aliasing`` skips the Nyquist guard so the scheme can be probed
    past its critical frequency.
    """
    if forecast_config is not None:
        dt = forecast_config.dt
        tol, max_it = forecast_config.newton_tol, forecast_config.max_newton_iters
    else:
        dt = 0.01 if dt is None else dt
        tol, max_it = 1e-10, 8
    if not allow_aliasing:
        _dt_check(frc, dt)
    grid = frc.grid()
    xi = model.xi if isinstance(model, SystemParams) else None

    if isinstance(model, SystemParams):
        trajs = []
        for r in grid:
            f = frc.forcing(r)
            n = frc.n_steps(r, dt)
            t = dt * np.arange(n + 1)
            q, v = analytic_response(model, f, frc.ic, t)
            trajs.append(Trajectory(0.0, dt, np.column_stack([q, v]), f.accel(t)))
        results = [None] * len(grid)
    elif isinstance(model, OperatorNetwork):
        conds = [(frc.ic, ForecastConfig(dt, frc.n_steps(r, dt), frc.forcing(r), tol, max_it,
                                          allow_aliasing=allow_aliasing))
                 for r in grid]
        results = forecast_batch(model, conds, workers=workers, backend=backend)
        trajs = [res.trajectory for res in results]
    else:
        raise TypeError(f"model must be OperatorNetwork or SystemParams, got {type(model).__name__}")

    amps = np.full(len(grid), np.nan)
    absamps = np.full(len(grid), np.nan) if absolute else None
    notes, failures = [], []
    scale = frc.drive_amplitude if frc.kind == "harmonic_base" else 1.0
    for i, (r, traj) in enumerate(zip(grid, trajs)):
        if results[i] is not None and not results[i].ok:
            failures.append((float(r), results[i].failure_index))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TransientWarning)
            est = steady_amplitude_of(traj.q, dt, frc.tail_fraction, xi, frc.omega_n)
        if est.warning:
            notes.append((float(r), est.warning))
        amps[i] = est.amplitude / scale
        if absolute:
            if frc.kind != "harmonic_base":
                raise ValueError("absolute reconstruction needs kind='harmonic_base'")
            base = base_motion(frc.drive_amplitude, r * frc.omega_n, dt, len(traj))
            x = from_relative(traj, base)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TransientWarning)
                absamps[i] = steady_amplitude_of(x.q, dt, frc.tail_fraction).amplitude / scale
    if notes:
        warnings.warn(f"{len(notes)} grid points flagged a transient-contaminated window",
                      TransientWarning, stacklevel=2)
    return FrcCurve(grid, amps, absamps, notes, failures)


def closed_form_frc(params: SystemParams, frc: FrcConfig, absolute: bool = False) -> FrcCurve:
    """Exact steady amplitudes on the FRC grid (no time integration)."""
    grid = frc.grid()
    w = grid * frc.omega_n
    if frc.kind == "harmonic_base":
        rel = closed_form_amplitude(params, 1.0, w) * w**2
        abs_ = transmissibility(params.xi, w / params.omega_n) if absolute else None
        return FrcCurve(grid, rel, abs_, label="closed form")
    return FrcCurve(grid, closed_form_amplitude(params, frc.drive_amplitude, w), label="closed form")


# ------------------------------------------------------------------ metrics

class TimeErrorReport(NamedTuple):
    mse: float
    mean_error_pct: float
    amp_error_pct: float
    phase_error_pct: float
    freq_error_pct: float

    def as_text(self) -> str:
        return "\n".join(f"{k}={format(v, '.17g')}" for k, v in self._asdict().items()) + "\n"


class FrcErrorReport(NamedTuple):
    shape_error_pct: float
    peak_error_pct: float
    resonance_error_pct: float
    peak_freq_estimate: float

    def as_text(self) -> str:
        return "\n".join(f"{k}={format(v, '.17g')}" for k, v in self._asdict().items()) + "\n"

    def csv_row(self) -> str:
        return ",".join(format(v, ".17g") for v in self)


def time_metrics(pred: Trajectory, truth: Trajectory, tail_fraction: float = 0.3) -> TimeErrorReport:
    """Position-error metrics of a forecast against a reference trajectory."""
    if len(pred) != len(truth) or not math.isclose(pred.dt, truth.dt, rel_tol=1e-12):
        raise ValueError(f"trajectories not aligned: {pred!r} vs {truth!r}")
    qp, qt = pred.q, truth.q
    mse = float(np.mean((qp - qt) ** 2))
    zp, zt = analytic_signal(qp), analytic_signal(qt)
    win = tail_window(len(qp), tail_fraction)
    a_true = float(np.median(np.abs(zt[win])))
    a_pred = float(np.median(np.abs(zp[win])))
    if a_true == 0:
        raise ValueError("reference has zero steady amplitude")
    mean_err = 100.0 * abs(float(np.mean(qp)) - float(np.mean(qt))) / a_true
    amp_err = 100.0 * (a_pred - a_true) / a_true
    rot = zp[win] * np.conj(zt[win])
    dphi = float(np.angle(np.mean(rot / np.maximum(np.abs(rot), 1e-300))))
    phase_err = 100.0 * abs(dphi) / (2.0 * math.pi)
    fp = np.mean(np.diff(np.unwrap(np.angle(zp[win])))) / pred.dt
    ft = np.mean(np.diff(np.unwrap(np.angle(zt[win])))) / truth.dt
    freq_err = 100.0 * abs(fp - ft) / abs(ft)
    return TimeErrorReport(mse, mean_err, amp_err, phase_err, float(freq_err))


def frc_metrics(pred: FrcCurve, truth: FrcCurve) -> FrcErrorReport:
    """Shape, peak and resonance errors relative to the reference curve's peak."""
    if pred.freqs.shape != truth.freqs.shape or not np.allclose(pred.freqs, truth.freqs,
                                                                rtol=1e-12, atol=0):
        raise ValueError("FRC grids differ")
    ok = np.isfinite(pred.amplitudes) & np.isfinite(truth.amplitudes)
    if not ok.any():
        raise ValueError("no overlapping valid amplitudes")
    peak = truth.peak_amplitude
    shape = 100.0 * float(np.mean(np.abs(pred.amplitudes[ok] - truth.amplitudes[ok]))) / peak
    peak_err = 100.0 * abs(pred.peak_amplitude - peak) / peak
    res_err = 100.0 * abs(pred.peak_freq - truth.peak_freq) / truth.peak_freq
    return FrcErrorReport(shape, peak_err, res_err, pred.peak_freq)


def accuracy_pct(report: FrcErrorReport) -> float:
    """Headline accuracy: 100 minus the shape error."""
    return 100.0 - report.shape_error_pct
