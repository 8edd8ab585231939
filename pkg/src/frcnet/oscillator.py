"""Ground-truth single-degree-of-freedom oscillator.

Governing equation (per unit mass)::

    q'' + 2 xi omega_n q' + omega_n**2 q = u(t)

with ``u`` either a harmonic force ``A cos(w t)``, a base excitation written in
relative coordinates ``Y w**2 cos(w t)``, or an arbitrary sampled record.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

FORCING_KINDS = ("harmonic_force", "harmonic_base", "sampled")


class NyquistError(ValueError):
    """Step size too coarse to resolve the requested frequency band."""


@dataclass(frozen=True)
class SystemParams:
    xi: float
    omega_n: float = 1.0
    length_scale: float | None = None

    def __post_init__(self):
        if not (self.xi > 0 and math.isfinite(self.xi)):
            raise ValueError(f"damping ratio must be positive, got {self.xi}")
        if not (self.omega_n > 0 and math.isfinite(self.omega_n)):
            raise ValueError(f"natural frequency must be positive, got {self.omega_n}")

    @property
    def damped_frequency(self) -> float:
        return self.omega_n * math.sqrt(max(0.0, 1.0 - self.xi**2))

    @property
    def peak_frequency(self) -> float:
        """Driving frequency of maximum steady displacement amplitude."""
        return self.omega_n * math.sqrt(max(0.0, 1.0 - 2.0 * self.xi**2))

    @property
    def system_matrix(self) -> np.ndarray:
        return np.array([[0.0, 1.0],
                         [-self.omega_n**2, -2.0 * self.xi * self.omega_n]])


@dataclass(frozen=True)
class ForcingSpec:
    """Excitation acting on the second state component.

    For ``harmonic_force`` ``amplitude`` is the driving acceleration A; for
    ``harmonic_base`` it is the base displacement Y and the acceleration seen
    in relative coordinates is ``Y omega**2 cos(omega t)``. ``sampled`` uses
    ``samples`` spaced ``sample_dt`` apart starting at ``t0``, linearly
    interpolated in between.
    """

    kind: str = "harmonic_force"
    amplitude: float = 0.0
    omega: float = 1.0
    samples: np.ndarray | None = field(default=None, compare=False)
    sample_dt: float | None = None
    t0: float = 0.0

    def __post_init__(self):
        if self.kind not in FORCING_KINDS:
            raise ValueError(f"unknown forcing kind {self.kind!r}")
        if self.kind == "sampled":
            if self.samples is None or self.sample_dt is None or self.sample_dt <= 0:
                raise ValueError("sampled forcing needs samples and a positive sample_dt")
            s = np.ascontiguousarray(self.samples, dtype=np.float64)
            if s.ndim != 1 or len(s) < 2:
                raise ValueError("sampled forcing needs a 1-d record of length >= 2")
            object.__setattr__(self, "samples", s)
        elif not self.omega > 0:
            raise ValueError(f"driving frequency must be positive, got {self.omega}")

    @classmethod
    def free(cls) -> "ForcingSpec":
        return cls("harmonic_force", 0.0, 1.0)

    @property
    def accel_amplitude(self) -> float:
        """Amplitude of the acceleration term for harmonic kinds."""
        if self.kind == "harmonic_base":
            return self.amplitude * self.omega**2
        if self.kind == "harmonic_force":
            return self.amplitude
        raise ValueError("sampled forcing has no single amplitude")

    def accel(self, t):
        """Forcing acceleration at time(s) ``t``."""
        if self.kind == "sampled":
            grid = self.t0 + self.sample_dt * np.arange(len(self.samples))
            out = np.interp(t, grid, self.samples)
            return float(out) if np.ndim(out) == 0 else out
        if np.ndim(t) == 0:
            return self.accel_amplitude * math.cos(self.omega * t)
        return self.accel_amplitude * np.cos(self.omega * np.asarray(t))

    def check_step(self, dt: float) -> None:
        """Raise if ``dt`` aliases the driving frequency or mismatches the record."""
        if self.kind == "sampled":
            if not math.isclose(dt, self.sample_dt, rel_tol=1e-9):
                raise ValueError(f"sampled forcing step {self.sample_dt} != integrator step {dt}")
            return
        dt_max = math.pi / self.omega
        if dt > dt_max:
            raise NyquistError(
                f"dt={dt:g} exceeds the Nyquist limit dt_max=1/f_R={dt_max:.4g} "
                f"for driving frequency {self.omega:g} rad/time (f_R = 2 f_target)")


class StateVec(NamedTuple):
    q: float
    qdot: float


class Trajectory:
    """Uniformly sampled state history with its forcing record.

    Stored as one Fortran-ordered ``(n, 4)`` block with columns ``t, q, qdot,
    u`` so every column is a contiguous view.
    """

    __slots__ = ("data", "dt")

    def __init__(self, t0: float, dt: float, states, forcing):
        states = np.asarray(states, dtype=np.float64)
        forcing = np.asarray(forcing, dtype=np.float64)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if states.ndim != 2 or states.shape[1] != 2:
            raise ValueError(f"states must have shape (n, 2), got {states.shape}")
        n = len(states)
        if n < 2 or forcing.shape != (n,):
            raise ValueError("states and forcing need equal length >= 2")
        data = np.empty((n, 4), order="F")
        data[:, 0] = t0 + dt * np.arange(n)
        data[:, 1:3] = states
        data[:, 3] = forcing
        self.data = data
        self.dt = float(dt)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Trajectory(n={len(self)}, t0={self.t0:g}, dt={self.dt:g})"

    @property
    def t0(self) -> float:
        return float(self.data[0, 0])

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def q(self) -> np.ndarray:
        return self.data[:, 1]

    @property
    def qdot(self) -> np.ndarray:
        return self.data[:, 2]

    @property
    def u(self) -> np.ndarray:
        return self.data[:, 3]

    @property
    def states(self) -> np.ndarray:
        return self.data[:, 1:3]

    def head(self, n: int) -> "Trajectory":
        return Trajectory(self.t0, self.dt, self.states[:n], self.u[:n])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t,q,qdot,u\n")
        for row in self.data:
            buf.write(",".join(format(v, ".17g") for v in row))
            buf.write("\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["t", "q", "qdot", "u"]:
            raise ValueError(f"{path}: expected header t,q,qdot,u")
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ValueError(f"{path}: need at least two samples")
        dt = float(arr[1, 0] - arr[0, 0])
        traj = cls(arr[0, 0], dt, arr[:, 1:3], arr[:, 3])
        # keep the stored time column verbatim
        traj.data[:, 0] = arr[:, 0]
        return traj


def nondimensionalize(mass: float, damping_coeff: float, stiffness: float,
                      drive_accel: float) -> tuple[float, float, float]:
    """Return ``(xi, omega_n, length_scale)`` for a dimensional oscillator."""
    if not mass > 0 or not stiffness > 0:
        raise ValueError("mass and stiffness must be positive")
    if damping_coeff < 0:
        raise ValueError("damping coefficient must be non-negative")
    xi = damping_coeff / (2.0 * math.sqrt(mass * stiffness))
    omega_n = math.sqrt(stiffness / mass)
    return xi, omega_n, drive_accel / omega_n**2


def rhs(state: Sequence[float], t: float, forcing: ForcingSpec,
        params: SystemParams) -> StateVec:
    """State gradient ``(qdot, qddot)`` of the true system."""
    q, qdot = state
    c = 2.0 * params.xi * params.omega_n
    w2 = params.omega_n**2
    acc = -w2 * q - c * qdot
    return StateVec(qdot, acc + forcing.accel(t))


def steady_coefficients(params: SystemParams, accel_amplitude: float, omega: float):
    """Cosine and sine coefficients ``(B1, B2)`` of the steady response."""
    wn2 = params.omega_n**2
    cw = 2.0 * params.xi * params.omega_n * omega
    den = (wn2 - omega**2) ** 2 + cw**2
    return accel_amplitude * (wn2 - omega**2) / den, accel_amplitude * cw / den


def steady_amplitude(params: SystemParams, accel_amplitude, omega):
    """Closed-form steady displacement amplitude; vectorised over ``omega``."""
    omega = np.asarray(omega, dtype=np.float64)
    wn2 = params.omega_n**2
    out = accel_amplitude / np.sqrt((wn2 - omega**2) ** 2
                                    + (2.0 * params.xi * params.omega_n * omega) ** 2)
    return float(out) if out.ndim == 0 else out


def steady_phase(params: SystemParams, omega):
    """Phase lag of the steady response behind the forcing, in [0, pi]."""
    return np.arctan2(2.0 * params.xi * params.omega_n * np.asarray(omega),
                      params.omega_n**2 - np.asarray(omega) ** 2)


def transmissibility(xi: float, r):
    """Absolute base-excitation transmissibility |X/Y| at frequency ratio r."""
    r = np.asarray(r, dtype=np.float64)
    return np.sqrt((1 + (2 * xi * r) ** 2) / ((1 - r**2) ** 2 + (2 * xi * r) ** 2))


def analytic_response(params: SystemParams, forcing: ForcingSpec | None,
                      ic: Sequence[float], t) -> StateVec:
    """Exact response to harmonic (or no) forcing from initial state ``ic`` at t=0.

    Handles underdamped, critically damped and overdamped homogeneous parts.
    ``t`` may be a scalar or an array; the fields of the result follow it.
    """
    if forcing is None:
        forcing = ForcingSpec.free()
    if forcing.kind == "sampled":
        raise ValueError("no closed form for sampled forcing")
    t = np.asarray(t, dtype=np.float64)
    w = forcing.omega
    b1, b2 = steady_coefficients(params, forcing.accel_amplitude, w)
    xs = b1 * np.cos(w * t) + b2 * np.sin(w * t)
    vs = -b1 * w * np.sin(w * t) + b2 * w * np.cos(w * t)

    q0 = ic[0] - b1
    v0 = ic[1] - b2 * w
    xi, wn = params.xi, params.omega_n
    if xi < 1.0:
        wd = wn * math.sqrt(1.0 - xi**2)
        c1 = q0
        c2 = (v0 + xi * wn * c1) / wd
        decay = np.exp(-xi * wn * t)
        cos_t, sin_t = np.cos(wd * t), np.sin(wd * t)
        xh = decay * (c1 * cos_t + c2 * sin_t)
        vh = decay * ((c2 * wd - xi * wn * c1) * cos_t - (c1 * wd + xi * wn * c2) * sin_t)
    elif xi == 1.0:
        c1 = q0
        c2 = v0 + wn * c1
        decay = np.exp(-wn * t)
        xh = (c1 + c2 * t) * decay
        vh = (c2 - wn * (c1 + c2 * t)) * decay
    else:
        root = math.sqrt(xi**2 - 1.0)
        s1 = -wn * (xi - root)
        s2 = -wn * (xi + root)
        c1 = (v0 - s2 * q0) / (s1 - s2)
        c2 = q0 - c1
        e1, e2 = np.exp(s1 * t), np.exp(s2 * t)
        xh = c1 * e1 + c2 * e2
        vh = c1 * s1 * e1 + c2 * s2 * e2
    q, qdot = xs + xh, vs + vh
    if q.ndim == 0:
        return StateVec(float(q), float(qdot))
    return StateVec(q, qdot)


def analytic_trajectory(params: SystemParams, forcing: ForcingSpec | None,
                        ic: Sequence[float], dt: float, n_steps: int) -> Trajectory:
    """``analytic_response`` sampled on the grid used by the integrators."""
    t = dt * np.arange(n_steps + 1)
    q, qdot = analytic_response(params, forcing, ic, t)
    u = (forcing or ForcingSpec.free()).accel(t)
    return Trajectory(0.0, dt, np.column_stack([q, qdot]), u)


def base_forcing_accel(Y: float, omega: float, t):
    """Relative-coordinate forcing ``Y omega**2 cos(omega t)``; no system parameters."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    if np.ndim(t) == 0:
        return Y * omega**2 * math.cos(omega * t)
    return Y * omega**2 * np.cos(omega * np.asarray(t))


def base_motion(Y: float, omega: float, dt: float, n: int, t0: float = 0.0) -> Trajectory:
    """Support displacement ``Y cos(omega t)`` as a trajectory (u column = base accel)."""
    t = t0 + dt * np.arange(n)
    y = Y * np.cos(omega * t)
    ydot = -Y * omega * np.sin(omega * t)
    return Trajectory(t0, dt, np.column_stack([y, ydot]), -omega**2 * y)


def _check_aligned(a: Trajectory, b: Trajectory) -> None:
    if len(a) != len(b) or not math.isclose(a.dt, b.dt, rel_tol=1e-12):
        raise ValueError(f"trajectories not aligned: {a!r} vs {b!r}")


def to_relative(x_abs: Trajectory, base: Trajectory) -> Trajectory:
    """Relative coordinates ``z = x - y``."""
    _check_aligned(x_abs, base)
    out = Trajectory(x_abs.t0, x_abs.dt, x_abs.states - base.states, x_abs.u)
    out.data[:, 0] = x_abs.t
    return out


def from_relative(z: Trajectory, base: Trajectory) -> Trajectory:
    """Absolute coordinates ``x = z + y``."""
    _check_aligned(z, base)
    out = Trajectory(z.t0, z.dt, z.states + base.states, z.u)
    out.data[:, 0] = z.t
    return out


def reference_integrate(params: SystemParams, forcing: ForcingSpec | None,
                        ic: Sequence[float], dt: float, n_steps: int,
                        t0: float = 0.0) -> Trajectory:
    """Classical RK4 integration of the true system, ``n_steps + 1`` samples."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if forcing is None:
        forcing = ForcingSpec.free()
    if forcing.kind != "sampled" and forcing.accel_amplitude != 0.0:
        forcing.check_step(dt)
    c = 2.0 * params.xi * params.omega_n
    w2 = params.omega_n**2
    u = forcing.accel

    out = np.empty((n_steps + 1, 2))
    q, v = float(ic[0]), float(ic[1])
    out[0] = q, v
    h2 = 0.5 * dt
    for k in range(n_steps):
        t = t0 + k * dt
        th = t + h2
        u0, uh, u1 = u(t), u(th), u(t + dt)
        k1q, k1v = v, (-w2 * q - c * v) + u0
        q2, v2 = q + h2 * k1q, v + h2 * k1v
        k2q, k2v = v2, (-w2 * q2 - c * v2) + uh
        q3, v3 = q + h2 * k2q, v + h2 * k2v
        k3q, k3v = v3, (-w2 * q3 - c * v3) + uh
        q4, v4 = q + dt * k3q, v + dt * k3v
        k4q, k4v = v4, (-w2 * q4 - c * v4) + u1
        q = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        out[k + 1] = q, v
    t = t0 + dt * np.arange(n_steps + 1)
    traj = Trajectory(t0, dt, out, forcing.accel(t))
    return traj
