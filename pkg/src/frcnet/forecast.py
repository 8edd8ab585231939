"""Recursive inference of learned dynamics.

Each step takes a staged RK4 prediction and refines it with the implicit
trapezoidal rule, solving the 2x2 residual system by full Newton iteration::

    R(x1) = x1 - x0 - h/2 [F(x0, t0) + F(x1, t1)]
    x1   <- x1 - (I - h/2 dF/dx)^-1 R

where ``F`` is the network output plus the forcing in the second component
(or, for V1, the network evaluated with the forcing as an input).

Two interchangeable backends run the recursion: the compiled kernel in
``frcnet._kernels`` and a numpy implementation vectorised over trajectories.
Set ``FRCNET_BACKEND=python`` to force the numpy one.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .network import OperatorNetwork, forward_jacobian_batch
from .oscillator import ForcingSpec, Trajectory

try:
    from . import _kernels
except ImportError:  # pragma: no cover - depends on build
    _kernels = None

SINGULAR_DET = 1e-14


def available_backends() -> list[str]:
    return (["compiled"] if _kernels is not None else []) + ["python"]


def default_backend() -> str:
    forced = os.environ.get("FRCNET_BACKEND", "").strip().lower()
    if forced in ("python", "numpy"):
        return "python"
    if forced == "compiled" and _kernels is None:
        raise ImportError("FRCNET_BACKEND=compiled but frcnet._kernels is not built")
    return "compiled" if _kernels is not None else "python"


@dataclass(frozen=True)
class ForecastConfig:
    dt: float
    n_steps: int
    forcing: ForcingSpec = field(default_factory=ForcingSpec.free)
    newton_tol: float = 1e-10
    max_newton_iters: int = 8
    t0: float = 0.0
    allow_aliasing: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.n_steps < 1 or self.max_newton_iters < 0:
            raise ValueError("n_steps must be >= 1 and max_newton_iters non-negative")
        if self.forcing.kind == "sampled" or (self.forcing.amplitude != 0.0
                                              and not self.allow_aliasing):
            self.forcing.check_step(self.dt)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass
class ForecastResult:
    trajectory: Trajectory
    newton_iters: np.ndarray
    residuals: np.ndarray
    converged: bool
    failure_index: int | None = None

    @property
    def ok(self) -> bool:
        return self.failure_index is None

    def sidecar_csv(self, path=None) -> str:
        lines = ["step,newton_iters,residual"]
        for k, (it, r) in enumerate(zip(self.newton_iters, self.residuals)):
            lines.append(f"{k + 1},{int(it)},{format(float(r), '.17g')}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class StepResult(NamedTuple):
    state: np.ndarray
    iters: int
    residual: float
    converged: bool


class StepFailure(RuntimeError):
    pass


# ------------------------------------------------------------ single-state API

def _field(net, states, t, u):
    """Augmented gradient and Jacobian for rows of ``states`` at time ``t``."""
    if net.variant == "V1":
        return forward_jacobian_batch(net, states, u=u, t=t)
    g, J = forward_jacobian_batch(net, states)
    g[:, 1] += u
    return g, J


def augmented_rhs(net: OperatorNetwork, state, t: float, forcing: ForcingSpec) -> np.ndarray:
    """Network gradient with the external forcing injected."""
    return _field(net, np.asarray(state, dtype=np.float64).reshape(1, 2), t,
                  forcing.accel(t))[0][0]


def rk4_predict(net: OperatorNetwork, state, t: float, dt: float,
                forcing: ForcingSpec) -> np.ndarray:
    """Staged fourth-order Runge-Kutta step used as the Newton initial guess."""
    x = np.asarray(state, dtype=np.float64)
    h2 = 0.5 * dt
    g0 = augmented_rhs(net, x, t, forcing)
    g1 = augmented_rhs(net, x + h2 * g0, t + h2, forcing)
    g2 = augmented_rhs(net, x + h2 * g1, t + h2, forcing)
    g3 = augmented_rhs(net, x + dt * g2, t + dt, forcing)
    out = x + dt / 6.0 * (g0 + 2.0 * g1 + 2.0 * g2 + g3)
    if not np.all(np.isfinite(out)):
        raise StepFailure(f"non-finite RK4 stage at t={t}")
    return out


def trapezoid_newton_step(net: OperatorNetwork, state, t: float, dt: float,
                          forcing: ForcingSpec, tol: float = 1e-10,
                          max_iters: int = 8, guess=None) -> StepResult:
    """One implicit trapezoidal step solved by Newton from the RK4 guess."""
    x0 = np.asarray(state, dtype=np.float64)
    g0 = augmented_rhs(net, x0, t, forcing)
    x = rk4_predict(net, x0, t, dt, forcing) if guess is None else np.array(guess, dtype=float)
    t1 = t + dt
    u1 = forcing.accel(t1)
    hh = 0.5 * dt
    it = 0
    while True:
        g, J = _field(net, x.reshape(1, 2), t1, u1)
        r = x - x0 - hh * (g0 + g[0])
        res = float(np.max(np.abs(r)))
        if not math.isfinite(res):
            raise StepFailure(f"non-finite residual at t={t1}")
        if res <= tol:
            return StepResult(x, it, res, True)
        if it == max_iters:
            return StepResult(x, it, res, False)
        M = np.eye(2) - hh * J[0]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if abs(det) < SINGULAR_DET:
            raise StepFailure(f"singular residual Jacobian (det={det:.3e}) at t={t1}")
        dx0 = (M[1, 1] * r[0] - M[0, 1] * r[1]) / det
        dx1 = (M[0, 0] * r[1] - M[1, 0] * r[0]) / det
        x = np.array([x[0] - dx0, x[1] - dx1])
        it += 1


# ------------------------------------------------------------------- backends

def _forcing_grid(config: ForecastConfig):
    tk = config.times()
    f = config.forcing
    u_grid = np.asarray(f.accel(tk), dtype=np.float64).reshape(-1)
    u_mid = np.asarray(f.accel(tk[:-1] + 0.5 * config.dt), dtype=np.float64).reshape(-1)
    return tk, np.ascontiguousarray(u_grid), np.ascontiguousarray(u_mid)


def _finish(config, states, iters, resid, converged, fail, u_grid):
    # a failure at step k leaves rows 0..k valid; keep at least two rows (NaN-padded)
    rows = config.n_steps + 1 if fail is None else fail + 1
    rows = max(rows, 2)
    traj = Trajectory(config.t0, config.dt, states[:rows], u_grid[:rows])
    steps = config.n_steps if fail is None else fail
    return ForecastResult(traj, iters[:steps], resid[:steps],
                          bool(converged) and fail is None, fail)


def _forecast_compiled(packed, ic, config: ForecastConfig) -> ForecastResult:
    tk, u_grid, u_mid = _forcing_grid(config)
    n = config.n_steps
    states = np.full((n + 1, 2), np.nan)
    iters = np.zeros(n, dtype=np.intc)
    resid = np.zeros(n)
    _, ok, fail = packed.forecast(float(ic[0]), float(ic[1]), tk, u_grid, u_mid,
                                       config.dt, config.newton_tol,
                                       config.max_newton_iters, states, iters, resid)
    fail = None if fail < 0 else int(fail)
    return _finish(config, states, iters.astype(np.int64), resid, ok, fail, u_grid)


class _RowEvaluator:
    """Row-wise network evaluation whose per-row results do not depend on batch size.

    Uses stacked ``(n, 1, k) @ (k, m)`` products so each row gets its own
    identical BLAS call.
    """

    def __init__(self, net: OperatorNetwork):
        self.net = net
        self.branches = {name: [(l.weight.T.copy(), l.bias, l.activation) for l in layers]
                         for name, layers in net.branches.items()}
        nm = net.norm
        self.inv = 1.0 / nm.state_scale

    def _run(self, layers, z, dz):
        h = z[:, None, :]
        for wt, b, act in layers:
            h = h @ wt + b
            if dz is not None:
                dz = dz @ wt
            if act:
                h = np.tanh(h)
                if dz is not None:
                    dz = dz * (1.0 - h * h)
        return h, dz

    def __call__(self, x, t, u, jac: bool):
        net, nm = self.net, self.net.norm
        n = len(x)
        zs = (x - nm.state_shift) / nm.state_scale
        if net.variant == "V1":
            zu = ((u - nm.u_shift) / nm.u_scale).reshape(n, 1)
            zb = np.concatenate([zs, zu], axis=1)
        else:
            zb = zs
        seed = None
        if jac:
            seed = np.zeros((n, 2, zb.shape[1]))
            seed[:, 0, 0] = self.inv[0]
            seed[:, 1, 1] = self.inv[1]
        p = net.latent_dim
        J = None
        if net.variant == "V2":
            y, dy = self._run(self.branches["body"], zb, seed)
            y = y[:, 0, :]
            if jac:
                J = dy.transpose(0, 2, 1)
        elif net.variant == "V3":
            a, da = self._run(self.branches["amplitude"], zb, seed)  # (n,1,p), (n,2,p)
            ph, dph = self._run(self.branches["phase"], zb, seed)  # (n,1,2p), (n,2,2p)
            ph = ph.reshape(n, p, 2)
            y = (a @ ph)[:, 0, :]
            if jac:
                dph = dph.reshape(n, 2, p, 2)
                cols = []
                for j in range(2):
                    cols.append((da[:, j:j + 1, :] @ ph)[:, 0, :]
                                + (a @ dph[:, j])[:, 0, :])
                J = np.stack(cols, axis=2)
        else:
            b, db = self._run(self.branches["branch"], zb, seed)
            zt = ((np.broadcast_to(t, (n,)) - nm.t_shift) / nm.t_scale).reshape(n, 1)
            tr, _ = self._run(self.branches["trunk"], zt, None)  # (n,1,p)
            b = b.reshape(n, p, 2)
            y = (tr @ b)[:, 0, :] + net.combine_bias
            if jac:
                db = db.reshape(n, 2, p, 2)
                J = np.stack([(tr @ db[:, j])[:, 0, :] for j in range(2)], axis=2)
        g = y * nm.out_scale
        if net.variant != "V1":
            g[:, 1] = g[:, 1] + u
        if jac:
            J = J * nm.out_scale[None, :, None]
        return g, J


def _forecast_python(net, ics, configs: list[ForecastConfig]) -> list[ForecastResult]:
    """Vectorised recursion over trajectories sharing step size and length."""
    cfg = configs[0]
    m = len(configs)
    n, h = cfg.n_steps, cfg.dt
    hh = 0.5 * h
    tol, max_iter = cfg.newton_tol, cfg.max_newton_iters
    grids = [_forcing_grid(c) for c in configs]
    tk = grids[0][0]
    U = np.stack([g[1] for g in grids])  # (m, n+1)
    Um = np.stack([g[2] for g in grids])
    ev = _RowEvaluator(net)

    states = np.full((m, n + 1, 2), np.nan)
    iters = np.zeros((m, n), dtype=np.int64)
    resid = np.zeros((m, n))
    fail = np.full(m, -1)
    ok = np.ones(m, dtype=bool)
    x = np.array(ics, dtype=np.float64).reshape(m, 2)
    states[:, 0] = x
    live = np.ones(m, dtype=bool)
    g0, _ = ev(x, np.full(m, tk[0]), U[:, 0], False)
    for k in range(n):
        idx = np.flatnonzero(live)
        if not len(idx):
            break
        xs, gs = x[idx], g0[idx]
        th = np.full(len(idx), tk[k] + hh)
        t1 = np.full(len(idx), tk[k + 1])
        um, u1 = Um[idx, k], U[idx, k + 1]
        k1, _ = ev(xs + hh * gs, th, um, False)
        k2, _ = ev(xs + hh * k1, th, um, False)
        k3, _ = ev(xs + h * k2, t1, u1, False)
        xn = xs + h / 6.0 * (gs + 2.0 * k1 + 2.0 * k2 + k3)
        bad = ~np.all(np.isfinite(xn), axis=1)
        it = np.zeros(len(idx), dtype=np.int64)
        done = bad.copy()
        res = np.zeros(len(idx))
        gn = np.zeros_like(xn)
        sweep = 0
        while True:
            act = np.flatnonzero(~done)
            if not len(act):
                break
            # Jacobian on the first pass; afterwards only for rows that update
            g, J = ev(xn[act], t1[act], u1[act], sweep == 0)
            gn[act] = g
            r = xn[act] - xs[act] - hh * (gs[act] + g)
            rr = np.maximum(np.abs(r[:, 0]), np.abs(r[:, 1]))
            res[act] = rr
            nonfinite = ~np.isfinite(rr)
            conv = rr <= tol
            capped = (it[act] == max_iter) & ~conv & ~nonfinite
            ok[idx[act[capped]]] = False
            bad[act[nonfinite]] = True
            stop = conv | capped | nonfinite
            done[act[stop]] = True
            upd = np.flatnonzero(~stop)
            if not len(upd):
                break
            a = act[upd]
            ru = r[upd]
            Ju = J[upd] if sweep == 0 else ev(xn[a], t1[a], u1[a], True)[1]
            sweep += 1
            m00 = 1.0 - hh * Ju[:, 0, 0]
            m01 = -hh * Ju[:, 0, 1]
            m10 = -hh * Ju[:, 1, 0]
            m11 = 1.0 - hh * Ju[:, 1, 1]
            det = m00 * m11 - m01 * m10
            sing = np.abs(det) < SINGULAR_DET
            if np.any(sing):
                bad[a[sing]] = True
                done[a[sing]] = True
                keep = ~sing
                a, ru, det = a[keep], ru[keep], det[keep]
                m00, m01, m10, m11 = m00[keep], m01[keep], m10[keep], m11[keep]
            xn[a, 0] = xn[a, 0] - (m11 * ru[:, 0] - m01 * ru[:, 1]) / det
            xn[a, 1] = xn[a, 1] - (m00 * ru[:, 1] - m10 * ru[:, 0]) / det
            it[a] += 1
        good = ~bad
        fail[idx[bad]] = k
        live[idx[bad]] = False
        gi = idx[good]
        x[gi] = xn[good]
        g0[gi] = gn[good]
        states[gi, k + 1] = xn[good]
        iters[gi, k] = it[good]
        resid[gi, k] = res[good]

    out = []
    for i, c in enumerate(configs):
        f = None if fail[i] < 0 else int(fail[i])
        out.append(_finish(c, states[i], iters[i], resid[i], ok[i], f, grids[i][1]))
    return out


# ------------------------------------------------------------------- public API

def _check_net(net):
    if not isinstance(net, OperatorNetwork):
        raise TypeError(f"expected OperatorNetwork, got {type(net).__name__}")


def forecast(net: OperatorNetwork, ic: Sequence[float], config: ForecastConfig,
             backend: str | None = None) -> ForecastResult:
    """Integrate ``config.n_steps`` implicit steps from ``ic``."""
    _check_net(net)
    backend = backend or default_backend()
    if backend == "compiled":
        if _kernels is None:
            raise ImportError("compiled kernel not available")
        return _forecast_compiled(_kernels.PackedNet(net), ic, config)
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")
    return _forecast_python(net, [ic], [config])[0]


def _group_key(cfg: ForecastConfig):
    return (cfg.dt, cfg.n_steps, cfg.t0, cfg.newton_tol, cfg.max_newton_iters)


def forecast_batch(net: OperatorNetwork, conditions, workers: int = 1,
                   backend: str | None = None) -> list[ForecastResult]:
    """Forecast many ``(ic, config)`` pairs; results match one-by-one calls exactly."""
    _check_net(net)
    conditions = list(conditions)
    if not conditions:
        raise ValueError("empty condition list")
    backend = backend or default_backend()
    workers = max(1, int(workers))
    if backend == "compiled":
        if _kernels is None:
            raise ImportError("compiled kernel not available")
        packed = _kernels.PackedNet(net)
        run = lambda c: _forecast_compiled(packed, c[0], c[1])
        if workers == 1:
            return [run(c) for c in conditions]
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, conditions))
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")

    groups: dict = {}
    for i, (ic, cfg) in enumerate(conditions):
        groups.setdefault(_group_key(cfg), []).append(i)
    jobs = []
    for members in groups.values():
        chunk = max(1, math.ceil(len(members) / workers))
        for s in range(0, len(members), chunk):
            jobs.append(members[s:s + chunk])
    results: list = [None] * len(conditions)

    def run_job(members):
        res = _forecast_python(net, [conditions[i][0] for i in members],
                               [conditions[i][1] for i in members])
        return members, res

    if workers == 1:
        done = map(run_job, jobs)
    else:
        pool = ThreadPoolExecutor(workers)
        done = pool.map(run_job, jobs)
    for members, res in done:
        for i, r in zip(members, res):
            results[i] = r
    if workers != 1:
        pool.shutdown()
    return results
