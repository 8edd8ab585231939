"""Run configuration: JSON file format, presets and validation.

A run config is one JSON object with the sections ``system``, ``curriculum``,
``model``, ``training``, ``forecast``, ``frc``, ``stability`` and ``sweep``
plus a global ``seed``. Missing keys take defaults; unknown keys are errors.
Presets give the starting point and a file overrides any subset of keys.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .forecast import ForecastConfig
from .frc import FrcConfig
from .oscillator import ForcingSpec, SystemParams
from .stability import SWEEP_KINDS, SweepSpec, nyquist_limits
from .trainer import BruCurriculum, ModelSpec, TrainingConfig

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class SystemSection:
    xi: float = 0.2
    omega_n: float = 1.0


@dataclass(frozen=True)
class CurriculumSection:
    band: tuple[float, float] = (0.8, 1.5)
    n_trajectories: int = 10
    ic_range: tuple[float, float] = (0.001, 1.0)
    drive_amplitude: float = 1.0
    horizon: float = 3.0
    sample_fraction: float = 0.5
    dt: float = 0.01
    forcing_kind: str = "harmonic_force"


@dataclass(frozen=True)
class ModelSection:
    variant: str = "V3"
    latent_dim: int = 32
    hidden_widths: tuple[int, ...] = (64,)
    trunk_widths: tuple[int, ...] = (32, 32)
    activation_period: int | None = None
    norm_span: float = 100.0


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 100
    batch_size: int = 32
    lr_initial: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    lr_min: float = 1e-6
    rms_batch_norm: bool = False


@dataclass(frozen=True)
class ForecastSection:
    """Single time-response test; ``r`` is the driving frequency ratio."""

    r: float = 3.77
    ic: tuple[float, float] = (0.2, 0.0)
    horizon: float = 100.0
    dt: float | None = None
    newton_tol: float = 1e-10
    max_newton_iters: int = 8


@dataclass(frozen=True)
class FrcSection:
    band: tuple[float, float] = (0.1, 10.0)
    n_points: int = 500
    drive_amplitude: float = 1.0
    ic: tuple[float, float] = (0.2, 0.0)
    horizon: float = 100.0
    tail_fraction: float = 0.3
    kind: str = "harmonic_force"
    min_periods: float = 12.0
    base_xis: tuple[float, ...] = (0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class StabilitySection:
    box: tuple[tuple[float, float], tuple[float, float]] = ((-1.0, 1.0), (-1.0, 1.0))
    grid_n: int = 20
    tol: float = 1e-3


@dataclass(frozen=True)
class SweepSection:
    kind: str = "band_center"
    grid: tuple[float, ...] | None = None
    groups: tuple[float, ...] | None = None
    n_points: int = 100
    epochs: int = 100
    r_max: float = 7.0
    fr_horizon: float = 100.0


_SECTIONS = {
    "system": SystemSection,
    "curriculum": CurriculumSection,
    "model": ModelSection,
    "training": TrainingSection,
    "forecast": ForecastSection,
    "frc": FrcSection,
    "stability": StabilitySection,
    "sweep": SweepSection,
}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(names)}")
    try:
        return cls(**{k: _tupleize(v) for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    system: SystemSection = SystemSection()
    curriculum: CurriculumSection = CurriculumSection()
    model: ModelSection = ModelSection()
    training: TrainingSection = TrainingSection()
    forecast: ForecastSection = ForecastSection()
    frc: FrcSection = FrcSection()
    stability: StabilitySection = StabilitySection()
    sweep: SweepSection = SweepSection()
    seed: int = 0
    preset: str | None = field(default=None, compare=False)

    # ------------------------------------------------------------ conversion
    @classmethod
    def from_dict(cls, data: dict, preset: str | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        allowed = set(_SECTIONS) | {"seed", "format_version"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {unknown}; allowed {sorted(allowed)}")
        fv = data.get("format_version", FORMAT_VERSION)
        if fv != FORMAT_VERSION:
            raise ConfigError(f"unsupported config format_version {fv!r}")
        kw = {name: _section(sec, data.get(name, {}), name) for name, sec in _SECTIONS.items()}
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        cfg = cls(**kw, seed=seed, preset=preset)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        d["seed"] = self.seed
        d["format_version"] = FORMAT_VERSION
        return json.loads(json.dumps(d))  # tuples -> lists

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # ------------------------------------------------------------ sub-configs
    def params(self) -> SystemParams:
        return SystemParams(self.system.xi, self.system.omega_n)

    @property
    def x_ref(self) -> float:
        """Static deflection ``A / omega_n**2``: the displacement unit for ICs."""
        return self.curriculum.drive_amplitude / self.system.omega_n**2

    def curriculum_config(self) -> BruCurriculum:
        c = self.curriculum
        return BruCurriculum(band_lo=c.band[0], band_hi=c.band[1],
                             n_trajectories=c.n_trajectories, ic_range=c.ic_range,
                             drive_amplitude=c.drive_amplitude, horizon=c.horizon,
                             sample_fraction=c.sample_fraction, seed=self.seed, dt=c.dt,
                             forcing_kind=c.forcing_kind, ic_scale=self.x_ref)

    def model_spec(self) -> ModelSpec:
        m = self.model
        return ModelSpec(variant=m.variant, latent_dim=m.latent_dim,
                         hidden_widths=tuple(m.hidden_widths), trunk_widths=tuple(m.trunk_widths),
                         activation_period=m.activation_period, seed=self.seed + 1,
                         norm_span=m.norm_span)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(**asdict(self.training), seed=self.seed)

    @property
    def dt(self) -> float:
        return self.forecast.dt if self.forecast.dt is not None else self.curriculum.dt

    def forecast_config(self) -> tuple[tuple[float, float], ForecastConfig]:
        f = self.forecast
        wn = self.system.omega_n
        forcing = ForcingSpec(self.frc.kind, self.frc.drive_amplitude, f.r * wn)
        n = int(math.ceil(f.horizon / self.dt - 1e-9))
        ic = (f.ic[0] * self.x_ref, f.ic[1] * self.x_ref * wn)
        return ic, ForecastConfig(self.dt, n, forcing, f.newton_tol, f.max_newton_iters)

    def frc_config(self) -> FrcConfig:
        f = self.frc
        wn = self.system.omega_n
        return FrcConfig(band=f.band, n_points=f.n_points, drive_amplitude=f.drive_amplitude,
                         ic=(f.ic[0] * self.x_ref, f.ic[1] * self.x_ref * wn),
                         horizon=f.horizon, tail_fraction=f.tail_fraction, kind=f.kind,
                         omega_n=wn, min_periods=f.min_periods)

    def sweep_spec(self, kind: str | None = None) -> SweepSpec:
        s = self.sweep
        kind = kind or s.kind
        if kind not in SWEEP_KINDS:
            raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
        frc = FrcConfig(band=self.frc.band, n_points=s.n_points,
                        drive_amplitude=self.frc.drive_amplitude, ic=self.frc.ic,
                        horizon=self.frc.horizon, tail_fraction=self.frc.tail_fraction,
                        min_periods=self.frc.min_periods)
        over = {}
        if s.grid is not None:
            over["grid"] = s.grid
        if s.groups is not None:
            over["groups"] = s.groups
        for k in ("grid", "groups"):
            if k in over and len(over[k]) == 0:
                raise ConfigError(f"sweep.{k} is empty")
        c = self.curriculum_config()
        return SweepSpec.default(
            kind, seed=self.seed, xi=self.system.xi,
            curriculum=BruCurriculum(band_lo=c.band_lo, band_hi=c.band_hi,
                                     n_trajectories=c.n_trajectories, ic_range=c.ic_range,
                                     drive_amplitude=c.drive_amplitude, horizon=c.horizon,
                                     sample_fraction=c.sample_fraction, dt=c.dt),
            model=self.model_spec(), training=TrainingConfig(
                **{**asdict(self.training), "epochs": s.epochs}),
            frc=frc, r_max=s.r_max, fr_horizon=s.fr_horizon, **over)

    # ------------------------------------------------------------ validation
    def validate(self) -> None:
        """Build every sub-config once so errors surface before any work."""
        try:
            self.params()
            self.curriculum_config()
            self.model_spec()
            self.training_config()
            self.forecast_config()
            frc = self.frc_config()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.training.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if self.model.variant not in ("V1", "V2", "V3"):
            raise ConfigError(f"model.variant must be V1, V2 or V3, got {self.model.variant!r}")
        if self.curriculum.forcing_kind != frc.kind:
            raise ConfigError(f"curriculum.forcing_kind {self.curriculum.forcing_kind!r} "
                              f"differs from frc.kind {frc.kind!r}")
        if self.sweep.kind not in SWEEP_KINDS:
            raise ConfigError(f"unknown sweep kind {self.sweep.kind!r}")

    def check_nyquist(self):
        """Training step against the top of the FRC band (raises NyquistError)."""
        wn = self.system.omega_n
        top = max(self.frc.band[1] * wn, self.curriculum.band[1])
        return nyquist_limits(wn, top, self.curriculum.dt)


# ------------------------------------------------------------------ presets

def _dimensional(omega_n: float, band, dt: float, test_omega: float) -> dict:
    # horizons keep the nondimensional LS-1 lengths; training keeps 3 s so the
    # sample count per trajectory matches the nondimensional runs at f_s/f_n = 62.83
    return {
        "system": {"xi": 0.2, "omega_n": omega_n},
        "curriculum": {"band": list(band), "dt": dt, "horizon": 3.0},
        "forecast": {"r": test_omega / omega_n, "horizon": 100.0 / omega_n},
        "frc": {"horizon": 100.0 / omega_n},
    }


PRESETS: dict[str, dict] = {
    "ls1": {},
    "ls1a": _dimensional(11.30, (10.50, 11.20), 0.0088, 10.53),
    "ls1b": _dimensional(7.99, (7.50, 8.20), 0.0125, 7.45),
    "ls1-base": {
        "curriculum": {"forcing_kind": "harmonic_base"},
        "training": {"epochs": 1000},
        "frc": {"kind": "harmonic_base"},
    },
}

# alternative training bands (rad/time) for each preset, BRU 1..3
BRU_BANDS = {
    "ls1": ((0.1, 0.8), (0.8, 1.5), (1.5, 2.2)),
    "ls1-base": ((0.1, 0.8), (0.8, 1.5), (1.5, 2.2)),
    "ls1a": ((7.00, 7.70), (10.50, 11.20), (12.00, 12.70)),
    "ls1b": ((4.50, 5.20), (7.50, 8.20), (9.00, 9.70)),
}


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    """Preset (default ``ls1``) overlaid with an optional JSON file and seed."""
    name = preset or "ls1"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available {sorted(PRESETS)}")
    data = copy.deepcopy(PRESETS[name])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        data = merge(data, user)
    if seed is not None:
        data["seed"] = seed
    return RunConfig.from_dict(data, preset=name)
