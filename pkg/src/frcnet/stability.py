"""Stability diagnostics for learned gradient fields and the sensitivity sweeps.

Covers the linearisation at the equilibrium, the per-epoch eigenvalue path
(root locus of training), sampling limits of the forecast scheme, phase-space
divergence checks and the train-then-FRC sweep harness.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import spearmanr

from .frc import FrcConfig, closed_form_frc, compute_frc, frc_metrics
from .network import OperatorNetwork, forward_jacobian_batch
from .oscillator import NyquistError, SystemParams
from .svg import line_plot
from .trainer import (BruCurriculum, ModelSpec, TrainingConfig, build_samples, fresh_network,
                      generate_curriculum, train)

DIVERGENCE_TOL = 1e-3


# ------------------------------------------------------------- linearisation

class EigenRecord(NamedTuple):
    epoch: int
    re: float
    im: float


def eig2x2(m) -> tuple[complex, complex]:
    """Eigenvalues of a 2x2 matrix from trace and determinant.

    Complex pairs come back as ``(upper, lower)``; real pairs in descending order.
    """
    (a, b), (c, d) = np.asarray(m, dtype=np.float64)
    half_tr = 0.5 * (a + d)
    # (a-d)^2/4 + bc avoids cancellation in tr^2/4 - det
    disc = 0.25 * (a - d) * (a - d) + b * c
    if disc < 0:
        s = math.sqrt(-disc)
        return complex(half_tr, s), complex(half_tr, -s)
    s = math.sqrt(disc)
    return complex(half_tr + s, 0.0), complex(half_tr - s, 0.0)


def classify(eigs, tol: float = 0.0) -> str:
    top = max(e.real for e in eigs)
    if top < -tol:
        return "stable"
    if top > tol:
        return "unstable"
    return "marginal"


@dataclass(frozen=True)
class Equilibrium:
    eigenvalues: tuple[complex, complex]
    classification: str
    jacobian: np.ndarray = field(compare=False)
    caveat: str | None = None

    @property
    def upper(self) -> complex:
        return self.eigenvalues[0]


def _origin_jacobian(net: OperatorNetwork, state=(0.0, 0.0)) -> np.ndarray:
    kw = {} if net.is_autonomous else {"u": 0.0, "t": 0.0}
    _, J = forward_jacobian_batch(net, np.asarray(state, float).reshape(1, 2), **kw)
    return J[0]


def equilibrium_eigenvalues(net: OperatorNetwork) -> Equilibrium:
    """Linearise the learned field at the origin and classify it.

    Time-dependent (V1) networks are frozen at ``t = 0, u = 0``; the result
    then describes that slice only and carries a caveat.
    """
    J = _origin_jacobian(net)
    eigs = eig2x2(J)
    caveat = None
    if not net.is_autonomous:
        caveat = "non-autonomous network linearised at t=0, u=0"
    return Equilibrium(eigs, classify(eigs), J, caveat)


def reference_eigenvalue(xi: float, omega_n: float = 1.0) -> complex:
    """Upper eigenvalue of the linear oscillator."""
    return complex(-xi * omega_n, omega_n * math.sqrt(max(0.0, 1.0 - xi * xi))) if xi < 1 \
        else complex(omega_n * (-xi + math.sqrt(xi * xi - 1.0)), 0.0)


# ----------------------------------------------------------------- root locus

@dataclass
class RootLocus:
    records: list[EigenRecord]
    reference: complex | None = None
    xi: float | None = None
    omega_n: float | None = None

    def errors(self) -> np.ndarray | None:
        """Per-epoch percent error of (re, |im|) against the reference, or None."""
        if self.reference is None:
            return None
        ref = self.reference
        out = np.empty((len(self.records), 2))
        for k, r in enumerate(self.records):
            out[k, 0] = 100.0 * abs(r.re - ref.real) / abs(ref.real) if ref.real else math.nan
            out[k, 1] = 100.0 * abs(abs(r.im) - abs(ref.imag)) / abs(ref.imag) if ref.imag else math.nan
        return out

    def to_csv(self, path=None) -> str:
        err = self.errors()
        head = "epoch,re,im" + (",re_err_pct,im_err_pct" if err is not None else "")
        lines = [head]
        for k, r in enumerate(self.records):
            row = [str(r.epoch), format(r.re, ".17g"), format(r.im, ".17g")]
            if err is not None:
                row += [format(err[k, 0], ".17g"), format(err[k, 1], ".17g")]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_svg(self, path=None, title="Eigenvalue path during training") -> str:
        re = np.array([r.re for r in self.records])
        im = np.array([r.im for r in self.records])
        series = [("upper", re, np.abs(im)), ("lower", re, -np.abs(im))]
        markers = [(re[0], abs(im[0]), f"epoch {self.records[0].epoch}"),
                   (re[-1], abs(im[-1]), f"epoch {self.records[-1].epoch}")]
        if self.xi is not None and self.xi < 1:
            wn = self.omega_n or 1.0
            w = np.linspace(0.0, 1.2 * wn, 25)
            s = math.sqrt(1.0 - self.xi**2)
            series.append((f"xi = {self.xi:g}", -self.xi * w, s * w))
            series.append(("", -self.xi * w, -s * w))
            th = np.linspace(0.5 * math.pi, 1.5 * math.pi, 61)
            series.append((f"|lambda| = {wn:g}", wn * np.cos(th), wn * np.sin(th)))
        if self.reference is not None:
            markers.append((self.reference.real, abs(self.reference.imag), "target"))
        return line_plot(series, path, title=title, xlabel="Re", ylabel="Im", markers=markers,
                         dashed=tuple(lbl for lbl, _, _ in series[2:]))


def root_locus(records: Sequence, xi: float | None = None, omega_n: float = 1.0) -> RootLocus:
    """Collect an eigenvalue path from epoch or eigen records.

    Anything exposing ``epoch`` and either ``re``/``im`` or ``eig_re``/``eig_im``
    is accepted. Passing ``xi`` adds target errors and the constant-damping line.
    """
    if len(records) == 0:
        raise ValueError("root locus needs at least one record")
    recs = []
    for r in records:
        re = getattr(r, "re", None)
        im = getattr(r, "im", None)
        if re is None:
            re, im = r.eig_re, r.eig_im
        recs.append(EigenRecord(int(r.epoch), float(re), float(im)))
    ref = reference_eigenvalue(xi, omega_n) if xi is not None else None
    return RootLocus(recs, ref, xi, omega_n if xi is not None else None)


# ------------------------------------------------------------ sampling limits

class NyquistReport(NamedTuple):
    nyquist_rate: float
    dt_max: float
    sampling_ratio: float
    omega_critical: float

    @property
    def critical_ratio(self) -> float:
        """Critical driving frequency over the natural frequency."""
        return 0.5 * self.sampling_ratio


def nyquist_limits(omega_n: float, target_band_hi: float, dt: float) -> NyquistReport:
    """Sampling limits for a band top (rad/time) and a step size.

    ``f_R`` is twice the highest target frequency in Hz, ``dt_max = 1/f_R``.
    The sampling ratio is ``R_s = 2 pi f_s / omega_n`` with ``f_s = 1/dt`` and the
    forecast destabilises where the local ratio ``R_s omega_n / omega`` reaches
    2, at ``omega_critical = omega_n R_s / 2``.
    """
    if not (omega_n > 0 and target_band_hi > 0 and dt > 0):
        raise ValueError("omega_n, target_band_hi and dt must be positive")
    f_r = 2.0 * target_band_hi / (2.0 * math.pi)
    dt_max = 1.0 / f_r
    r_s = 2.0 * math.pi / (dt * omega_n)
    rep = NyquistReport(f_r, dt_max, r_s, omega_n * r_s / 2.0)
    if dt > dt_max:
        raise NyquistError(f"dt={dt:g} exceeds dt_max={dt_max:.4g} for band top "
                           f"{target_band_hi:g} (f_R={f_r:.4g})")
    return rep


# ----------------------------------------------------------------- divergence

class DivergenceReport(NamedTuple):
    passed: bool
    max_trace: float
    worst_point: tuple[float, float]
    traces: np.ndarray
    tol: float


def divergence_check(net: OperatorNetwork, box=((-1.0, 1.0), (-1.0, 1.0)), n: int = 20,
                     tol: float = DIVERGENCE_TOL) -> DivergenceReport:
    """Trace of the field Jacobian on an ``n x n`` grid over ``box``.

    Passes when every trace is at most ``tol``. This is a local statement about
    the sampled box, not a global stability certificate.
    """
    (q0, q1), (v0, v1) = box
    qs = np.linspace(q0, q1, n)
    vs = np.linspace(v0, v1, n)
    Q, V = np.meshgrid(qs, vs, indexing="ij")
    pts = np.column_stack([Q.ravel(), V.ravel()])
    kw = {} if net.is_autonomous else {"u": np.zeros(len(pts)), "t": np.zeros(len(pts))}
    _, J = forward_jacobian_batch(net, pts, **kw)
    tr = (J[:, 0, 0] + J[:, 1, 1]).reshape(n, n)
    k = int(np.argmax(tr))
    worst = (float(pts[k, 0]), float(pts[k, 1]))
    mx = float(tr.ravel()[k])
    return DivergenceReport(mx <= tol, mx, worst, tr, tol)


# --------------------------------------------------------------------- sweeps

SWEEP_KINDS = ("bandwidth", "band_center", "drive_amplitude", "trajectory_count",
               "frequency_ratio")

_DEFAULT_GRIDS = {
    "bandwidth": (tuple(np.linspace(0.1, 2.0, 10)), (1.0, 2.0, 5.0)),
    "band_center": (tuple(np.linspace(1.1, 10.0, 10)), (0.1,)),
    "drive_amplitude": (tuple(np.linspace(1.1, 10.0, 10)), (1.0, 5.0, 10.0)),
    "trajectory_count": (tuple(float(c) for c in range(1, 16)), (3.0, 10.0, 100.0)),
    "frequency_ratio": (tuple(np.linspace(10.0, 50.0, 10)), (10.0,)),
}
_GROUP_NAMES = {"bandwidth": "band_center", "band_center": "bandwidth",
                "drive_amplitude": "drive_amplitude", "trajectory_count": "horizon",
                "frequency_ratio": "sampling_ratio"}
_MIN_BAND_LO = 0.01


@dataclass(frozen=True)
class SweepSpec:
    """A grid of train-then-FRC runs.

    ``grid`` holds the swept values and ``groups`` the second parameter held
    fixed per curve (band centre for bandwidth sweeps, bandwidth for
    band-centre sweeps, drive amplitude, training horizon, or sampling ratio
    for frequency-ratio sweeps). Every (group, value) pair is one point.
    Drive-amplitude sweeps train on bands of width ``band_width`` around each
    centre in ``grid``. Frequency-ratio sweeps train dimensional systems for
    ``fr_horizon / omega_n`` and evaluate the FRC up to ``r_max``.
    """

    kind: str
    grid: tuple[float, ...]
    groups: tuple[float, ...]
    seed: int = 0
    xi: float = 0.2
    curriculum: BruCurriculum = BruCurriculum()
    model: ModelSpec = ModelSpec()
    training: TrainingConfig = TrainingConfig()
    frc: FrcConfig = FrcConfig(n_points=100)
    r_max: float = 7.0
    fr_horizon: float = 100.0
    band_width: float = 0.1

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}; expected one of {SWEEP_KINDS}")
        if len(self.grid) == 0 or len(self.groups) == 0:
            raise ValueError("sweep grid and groups must be non-empty")
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        object.__setattr__(self, "groups", tuple(float(v) for v in self.groups))

    @classmethod
    def default(cls, kind: str, **overrides) -> "SweepSpec":
        if kind not in _DEFAULT_GRIDS:
            raise ValueError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
        grid, groups = _DEFAULT_GRIDS[kind]
        overrides.setdefault("grid", grid)
        overrides.setdefault("groups", groups)
        return cls(kind, **overrides)

    def points(self) -> list[tuple[int, float, float]]:
        """``(point_id, group_value, swept_value)`` in a fixed order."""
        return [(k, g, v) for k, (g, v) in
                enumerate((g, v) for g in self.groups for v in self.grid)]

    def point_seed(self, point_id: int) -> int:
        ss = np.random.SeedSequence(self.seed, spawn_key=(point_id,))
        return int(ss.generate_state(1)[0])


@dataclass
class SweepPoint:
    point_id: int
    group: float
    swept_value: float
    seed: int
    shape_err: float = math.nan
    peak_err: float = math.nan
    res_err: float = math.nan
    error: str | None = None
    # frequency-ratio sweeps: E_pct per ratio
    ratios: np.ndarray | None = None
    e_pct: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[SweepPoint]

    def group(self, value: float) -> list[SweepPoint]:
        return [p for p in self.points if p.group == value]

    @property
    def failures(self) -> list[SweepPoint]:
        return [p for p in self.points if not p.ok]

    def to_csv(self, path=None) -> str:
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        if self.spec.kind == "frequency_ratio":
            lines = ["point_id,swept_value,r,E_pct"]
            for p in self.points:
                if p.ratios is None:
                    lines.append(f"{p.point_id},{f(p.swept_value)},nan,nan")
                    continue
                for r, e in zip(p.ratios, p.e_pct):
                    lines.append(f"{p.point_id},{f(p.swept_value)},{f(r)},{f(e)}")
        else:
            lines = ["point_id,swept_value,shape_err,peak_err,res_err"]
            for p in self.points:
                lines.append(f"{p.point_id},{f(p.swept_value)},{f(p.shape_err)},"
                             f"{f(p.peak_err)},{f(p.res_err)}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def points_json(self, path=None) -> str:
        """Per-point parameters (group value, seed, failure message)."""
        name = _GROUP_NAMES[self.spec.kind]
        rows = [{"point_id": p.point_id, name: p.group, "swept_value": p.swept_value,
                 "seed": p.seed, "error": p.error} for p in self.points]
        text = json.dumps({"kind": self.spec.kind, "points": rows}, indent=1, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_svg(self, path=None) -> str:
        kind = self.spec.kind
        series = []
        if kind == "frequency_ratio":
            for p in self.points:
                if p.ratios is not None:
                    series.append((f"omega_n = {p.swept_value:.3g}", p.ratios, p.e_pct))
            return line_plot(series, path, title="Normalised FRC error", xlabel="r",
                             ylabel="E (% of X_R)")
        name = _GROUP_NAMES[kind]
        for g in self.spec.groups:
            pts = self.group(g)
            series.append((f"{name} = {g:g}", [p.swept_value for p in pts],
                           [p.peak_err for p in pts]))
        return line_plot(series, path, title=f"{kind} sweep", xlabel=kind,
                         ylabel="peak error (%)")


def _point_setup(spec: SweepSpec, group: float, value: float, seed: int):
    """System, curriculum and FRC settings for one sweep point."""
    cur = replace(spec.curriculum, seed=seed)
    frc = spec.frc
    params = SystemParams(spec.xi)
    kind = spec.kind
    if kind in ("bandwidth", "band_center", "drive_amplitude"):
        if kind == "bandwidth":
            center, width = group, value
        elif kind == "band_center":
            center, width = value, group
        else:
            center, width = value, spec.band_width
            cur = replace(cur, drive_amplitude=group)
        lo = max(_MIN_BAND_LO, center - 0.5 * width)
        cur = replace(cur, band_lo=lo, band_hi=center + 0.5 * width)
    elif kind == "trajectory_count":
        cur = replace(cur, n_trajectories=int(round(value)), horizon=group)
    else:  # frequency_ratio: dimensional oscillator, step fixed by the sampling ratio
        wn, r_s = value, group
        params = SystemParams(spec.xi, wn)
        dt = 2.0 * math.pi / (r_s * wn)
        x_ref = cur.drive_amplitude / wn**2
        cur = replace(cur, band_lo=cur.band_lo * wn, band_hi=cur.band_hi * wn, dt=dt,
                      horizon=spec.fr_horizon / wn, ic_scale=x_ref)
        frc = replace(frc, band=(frc.band[0], spec.r_max), omega_n=wn,
                      ic=(frc.ic[0] * x_ref, frc.ic[1] * x_ref * wn),
                      horizon=frc.horizon / wn, drive_amplitude=cur.drive_amplitude)
    return params, cur, frc


def run_point(spec: SweepSpec, point_id: int, group: float, value: float) -> SweepPoint:
    """Train, build the FRC and score one sweep point; failures are recorded."""
    seed = spec.point_seed(point_id)
    pt = SweepPoint(point_id, group, value, seed)
    try:
        params, cur, frc = _point_setup(spec, group, value, seed)
        model = replace(spec.model, seed=seed % (2**31))
        t0 = time.perf_counter()
        samples = build_samples(generate_curriculum(cur, params), model.variant, params,
                                cur.sample_fraction, cur.seed)
        t1 = time.perf_counter()
        net, _ = train(fresh_network(model, samples), samples, replace(spec.training, seed=seed))
        t2 = time.perf_counter()
        fr = spec.kind == "frequency_ratio"
        curve = compute_frc(net, frc, dt=cur.dt, allow_aliasing=fr)
        pt.timings = {"dataset": t1 - t0, "training": t2 - t1, "frc": time.perf_counter() - t2}
        if fr:
            w = curve.freqs * params.omega_n
            truth = frc.drive_amplitude / np.sqrt((params.omega_n**2 - w**2) ** 2
                                                  + (2 * params.xi * params.omega_n * w) ** 2)
            x_r = frc.drive_amplitude / (params.omega_n**2 * 2 * params.xi
                                         * math.sqrt(1 - params.xi**2))
            pt.ratios = curve.freqs
            pt.e_pct = 100.0 * np.abs(curve.amplitudes - truth) / x_r
            if curve.failures:
                pt.error = f"{len(curve.failures)} forecasts failed"
        else:
            rep = frc_metrics(curve, closed_form_frc(params, frc))
            pt.shape_err, pt.peak_err, pt.res_err = (rep.shape_error_pct, rep.peak_error_pct,
                                                     rep.resonance_error_pct)
            if curve.failures:
                pt.error = f"{len(curve.failures)} forecasts failed"
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        pt.error = f"{type(exc).__name__}: {exc}"
    return pt


def _run_point_args(args):
    return run_point(*args)


def run_sweep(spec: SweepSpec, workers: int = 1, progress=None) -> SweepResult:
    """Run every point of ``spec``.

    Points are independent; with ``workers > 1`` they run in separate
    processes and are collected by point id, so results do not depend on
    completion order. ``progress`` is called with each finished point.
    """
    jobs = [(spec, pid, g, v) for pid, g, v in spec.points()]
    done: dict[int, SweepPoint] = {}
    if workers <= 1:
        for job in jobs:
            pt = run_point(*job)
            done[pt.point_id] = pt
            if progress is not None:
                progress(pt)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for pt in ex.map(_run_point_args, jobs):
                done[pt.point_id] = pt
                if progress is not None:
                    progress(pt)
    return SweepResult(spec, [done[k] for k in sorted(done)])


def spec_dict(spec: SweepSpec) -> dict:
    return asdict(spec)


# -------------------------------------------------------------- trend helpers

def spearman(x, y) -> float:
    """Rank correlation of two sequences (NaN pairs dropped)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        raise ValueError("need at least two finite pairs")
    return float(spearmanr(x[ok], y[ok]).statistic)


def smooth3(values) -> np.ndarray:
    """Centred 3-point moving average with shrinking ends."""
    v = np.asarray(values, float)
    out = np.empty_like(v)
    for i in range(len(v)):
        out[i] = v[max(0, i - 1):i + 2].mean()
    return out
