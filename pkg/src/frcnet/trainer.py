"""Banded-random-uniform data synthesis and L1 training of operator networks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .network import (Normalization, OperatorNetwork, forward_jacobian_batch,
                      init_network, loss_and_grad)
from .oscillator import (ForcingSpec, NyquistError, SystemParams, Trajectory,
                         reference_integrate)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BruCurriculum:
    """Training band, trajectory count and initial-condition banding.

    Initial-condition magnitudes are measured in ``(q, qdot / omega_n)`` so the
    same range works for dimensional systems once scaled by ``ic_scale``.
    """

    band_lo: float = 0.8
    band_hi: float = 1.5
    n_trajectories: int = 10
    ic_range: tuple[float, float] = (0.001, 1.0)
    drive_amplitude: float = 1.0
    horizon: float = 3.0
    sample_fraction: float = 0.5
    seed: int = 0
    dt: float = 0.01
    forcing_kind: str = "harmonic_force"
    ic_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.band_lo < self.band_hi:
            raise ValueError(f"need 0 < band_lo < band_hi, got ({self.band_lo}, {self.band_hi})")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not 0 <= self.ic_range[0] < self.ic_range[1]:
            raise ValueError(f"bad ic_range {self.ic_range}")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_initial: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    lr_min: float = 1e-6
    seed: int = 0
    rms_batch_norm: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class EpochRecord(NamedTuple):
    epoch: int
    loss: float
    lr: float
    eig_re: float
    eig_im: float


@dataclass
class SampleSet:
    """Training inputs and gradient targets, one row per sample."""

    states: np.ndarray
    targets: np.ndarray
    u: np.ndarray | None = None
    t: np.ndarray | None = None
    variant: str = "V3"

    def __len__(self):
        return len(self.states)

    @classmethod
    def concat(cls, parts: list["SampleSet"]) -> "SampleSet":
        if not parts:
            raise ValueError("no sample sets to concatenate")
        opt = lambda name: (None if getattr(parts[0], name) is None
                            else np.concatenate([getattr(p, name) for p in parts]))
        return cls(np.vstack([p.states for p in parts]), np.vstack([p.targets for p in parts]),
                   opt("u"), opt("t"), parts[0].variant)

    def take(self, idx) -> "SampleSet":
        return SampleSet(self.states[idx], self.targets[idx],
                         None if self.u is None else self.u[idx],
                         None if self.t is None else self.t[idx], self.variant)


class TrainingDivergence(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def curriculum_forcings(curriculum: BruCurriculum) -> tuple[list[float], list[tuple[float, float]]]:
    """Driving frequencies and initial conditions drawn for each trajectory."""
    rng = np.random.default_rng(curriculum.seed)
    n = curriculum.n_trajectories
    edges = np.linspace(curriculum.ic_range[0], curriculum.ic_range[1], n + 1)
    omegas, ics = [], []
    for i in range(n):
        omega = rng.uniform(curriculum.band_lo, curriculum.band_hi)
        mag = rng.uniform(edges[i], edges[i + 1])
        angle = rng.uniform(0.0, 2.0 * math.pi)
        omegas.append(float(omega))
        ics.append((mag * curriculum.ic_scale * math.cos(angle),
                    mag * curriculum.ic_scale * math.sin(angle)))
    return omegas, ics


def generate_curriculum(curriculum: BruCurriculum, params: SystemParams) -> list[Trajectory]:
    """Integrate the true system once per drawn (frequency, initial condition)."""
    dt_max = math.pi / curriculum.band_hi
    if curriculum.dt > dt_max:
        raise NyquistError(
            f"training dt={curriculum.dt:g} exceeds dt_max = 1/f_R = {dt_max:.4g} "
            f"for band top {curriculum.band_hi:g} (Nyquist rate f_R = 2 f_target)")
    omegas, ics = curriculum_forcings(curriculum)
    n_steps = int(round(curriculum.horizon / curriculum.dt))
    out = []
    for omega, (q0, v0) in zip(omegas, ics):
        forcing = ForcingSpec(curriculum.forcing_kind, curriculum.drive_amplitude, omega)
        out.append(reference_integrate(params, forcing, (q0, v0 * params.omega_n),
                                       curriculum.dt, n_steps))
    return out


def _accelerations(traj: Trajectory, params: SystemParams | None) -> np.ndarray:
    if params is not None:
        c = 2.0 * params.xi * params.omega_n
        return (-params.omega_n**2 * traj.q - c * traj.qdot) + traj.u
    # central differences for externally supplied data
    return np.gradient(traj.qdot, traj.dt, edge_order=2)


def make_targets(traj: Trajectory, variant: str, params: SystemParams | None = None,
                 fraction: float = 1.0, rng=None) -> SampleSet:
    """Gradient targets for one trajectory.

    Autonomous variants learn the free response ``(qdot, qddot - u)``; V1 learns
    the full gradient and also sees ``u`` and time. With ``params`` the
    acceleration comes from the true equation at each sample, otherwise from
    central differences of the recorded velocity.
    """
    n = len(traj)
    keep = int(fraction * n)
    if keep >= n:
        idx = np.arange(n)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=keep, replace=False))
    qdd = _accelerations(traj, params)
    if variant == "V1":
        targets = np.column_stack([traj.qdot, qdd])
        return SampleSet(traj.states[idx].copy(), targets[idx], traj.u[idx].copy(),
                         traj.t[idx].copy(), variant)
    targets = np.column_stack([traj.qdot, qdd - traj.u])
    return SampleSet(traj.states[idx].copy(), targets[idx], variant=variant)


def build_samples(trajs: list[Trajectory], variant: str, params: SystemParams | None,
                  fraction: float, seed: int) -> SampleSet:
    rng = np.random.default_rng(seed)
    return SampleSet.concat([make_targets(tr, variant, params, fraction, rng) for tr in trajs])


def l1_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.abs(pred - target)))


def fit_normalization(samples: SampleSet, span: float = 100.0) -> Normalization:
    """Affine constants from training statistics.

    Inputs are centred on their mean and divided by ``span`` times their
    largest deviation, which keeps the tanh layers close to linear over and
    beyond the training range.
    """
    x = samples.states
    with np.errstate(over="ignore", invalid="ignore"):
        shift = x.mean(axis=0)
        scale = span * np.maximum(np.abs(x - shift).max(axis=0), 1e-12)
        out_scale = np.maximum(np.abs(samples.targets).max(axis=0), 1e-12)
    if not (np.all(np.isfinite(shift)) and np.all(np.isfinite(scale))
            and np.all(np.isfinite(out_scale))):
        raise ValueError("training data has non-finite or overflowing values")
    kw = {}
    if samples.u is not None:
        kw["u_shift"] = float(samples.u.mean())
        kw["u_scale"] = float(span * max(np.abs(samples.u - samples.u.mean()).max(), 1e-12))
    if samples.t is not None:
        # min-max over the training horizon
        lo, hi = float(samples.t.min()), float(samples.t.max())
        kw["t_shift"], kw["t_scale"] = lo, max(hi - lo, 1e-12)
    return Normalization(shift, scale, out_scale=out_scale, **kw)


def equilibrium_pair(net: OperatorNetwork) -> tuple[float, float]:
    """(re, im) of the upper eigenvalue of the Jacobian at the origin."""
    kw = {} if net.is_autonomous else {"u": 0.0, "t": 0.0}
    _, J = forward_jacobian_batch(net, np.zeros((1, 2)), **kw)
    a, b, c, d = J[0].ravel()
    half_tr = 0.5 * (a + d)
    disc = half_tr * half_tr - (a * d - b * c)
    if disc < 0:
        return half_tr, math.sqrt(-disc)
    return half_tr + math.sqrt(disc), 0.0


class _Adam:
    def __init__(self, params, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.b1, self.b2, self.eps = b1, b2, eps
        self.step = 0

    def update(self, grads, lr):
        self.step += 1
        c1 = 1.0 - self.b1**self.step
        c2 = 1.0 - self.b2**self.step
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Plateau:
    """Multiply the learning rate by ``factor`` after ``patience`` stale epochs."""

    def __init__(self, lr, factor, patience, threshold, lr_min):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.threshold, self.lr_min = threshold, lr_min
        self.best = math.inf
        self.bad = 0

    def step(self, loss):
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.bad = 0
            return
        self.bad += 1
        if self.bad > self.patience:
            self.lr = max(self.lr * self.factor, self.lr_min)
            self.bad = 0


def train(net: OperatorNetwork, samples: SampleSet, config: TrainingConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Minimise the mean L1 gradient error with Adam and plateau decay.

    Works on a copy; returns ``(trained_net, records)`` with one record per
    epoch holding the mean batch loss, the learning rate used and the
    equilibrium eigenvalue pair after the epoch.
    """
    if len(samples) == 0:
        raise ValueError("no training samples")
    if config.epochs == 0:
        return net, []
    net = net.copy()
    params = list(net.parameters())
    opt = _Adam(params)
    sched = _Plateau(config.lr_initial, config.plateau_factor, config.plateau_patience,
                     config.plateau_threshold, config.lr_min)
    rng = np.random.default_rng(config.seed)
    v1 = net.variant == "V1"
    records: list[EpochRecord] = []
    n = len(samples)
    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            targets = samples.targets[idx]
            if config.rms_batch_norm:
                rms = math.sqrt(float(np.mean(samples.states[idx] ** 2))) or 1.0
                targets = targets / rms
                loss, grads = loss_and_grad(net, samples.states[idx] / rms, targets,
                                            **({"u": samples.u[idx], "t": samples.t[idx]} if v1 else {}))
            else:
                loss, grads = loss_and_grad(net, samples.states[idx], targets,
                                            **({"u": samples.u[idx], "t": samples.t[idx]} if v1 else {}))
            if not math.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}", records)
            opt.update(grads, lr)
            total += loss
            batches += 1
        mean_loss = total / batches
        re, im = equilibrium_pair(net)
        rec = EpochRecord(epoch, mean_loss, lr, re, im)
        if not all(math.isfinite(v) for v in (re, im)) or not math.isfinite(mean_loss):
            raise TrainingDivergence(f"non-finite state at epoch {epoch}", records + [rec])
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        sched.step(mean_loss)
        log.debug("epoch %d loss %.3e lr %.1e eig %.5f%+.5fj", epoch, mean_loss, lr, re, im)
    return net, records


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice for a fresh network."""

    variant: str = "V3"
    latent_dim: int = 32
    hidden_widths: tuple[int, ...] = (64,)
    trunk_widths: tuple[int, ...] = (32, 32)
    activation_period: int | None = None
    seed: int = 1
    norm_span: float = 100.0


def fresh_network(spec: ModelSpec, samples: SampleSet) -> OperatorNetwork:
    norm = fit_normalization(samples, spec.norm_span)
    return init_network(spec.variant, spec.latent_dim, spec.hidden_widths, spec.seed,
                        trunk_widths=spec.trunk_widths,
                        activation_period=spec.activation_period, norm=norm)


def fit_system(params: SystemParams, curriculum: BruCurriculum, model: ModelSpec = ModelSpec(),
               config: TrainingConfig = TrainingConfig(), on_epoch=None):
    """Generate data, build a normalised network and train it.

    Returns ``(trained_net, records, fresh_net)``.
    """
    trajs = generate_curriculum(curriculum, params)
    samples = build_samples(trajs, model.variant, params, curriculum.sample_fraction,
                            curriculum.seed)
    fresh = fresh_network(model, samples)
    net, records = train(fresh, samples, config, on_epoch)
    return net, records, fresh
