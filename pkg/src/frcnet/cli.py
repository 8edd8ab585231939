"""Command-line interface: ``frcnet <command> [options]``.

Commands write into an output directory (``--out``, else ``$FRCNET_OUT``,
else ``./frcnet-out``) and leave a ``manifest_<command>.json`` with the
config hash, seed, per-phase wall times and the artifact list.

Exit codes: 0 success, 2 invalid input or configuration, 3 divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .config import PRESETS, ConfigError, RunConfig, load_config
from .forecast import forecast
from .frc import (TransientWarning, accuracy_pct, closed_form_frc, compute_frc, frc_metrics,
                  time_metrics)
from .network import ModelFormatError, OperatorNetwork, load, save
from .oscillator import NyquistError, Trajectory, analytic_trajectory
from .stability import (divergence_check, equilibrium_eigenvalues, root_locus, run_sweep)
from .trainer import (EpochRecord, TrainingDivergence, build_samples, curriculum_forcings,
                      fresh_network, generate_curriculum, train)

OUT_ENV = "FRCNET_OUT"
MANIFEST_VERSION = 1
PHASES = ("dataset", "training", "forecasting", "frc", "other")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("frcnet")


class Diverged(RuntimeError):
    pass


class Run:
    """Output directory, phase timer and artifact bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, workers: int, verbose: bool):
        self.command, self.cfg, self.out = command, cfg, out
        self.workers, self.verbose = workers, verbose
        self.times = {k: 0.0 for k in PHASES}
        self.artifacts: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] += time.perf_counter() - t0

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(p)
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def manifest(self, status: str) -> Path:
        total = sum(self.times.values())
        phases = {}
        for k, v in self.times.items():
            pct = 100.0 * v / total if total > 0 else (100.0 if k == "other" else 0.0)
            phases[k] = {"seconds": v, "percent": pct}
        arts = []
        for p in dict.fromkeys(self.artifacts):
            if p.exists():
                arts.append({"path": str(p.relative_to(self.out)),
                             "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        doc = {"format_version": MANIFEST_VERSION, "version": __version__,
               "command": self.command, "status": status, "preset": self.cfg.preset,
               "config_hash": self.cfg.hash(), "seed": self.cfg.seed, "phases": phases,
               "artifacts": arts}
        p = self.out / f"manifest_{self.command}.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


# ------------------------------------------------------------------ commands

def _model_path(args, run: Run) -> Path:
    return Path(args.model) if args.model else run.out / "model.json"


def _load_model(path: Path, cfg: RunConfig) -> OperatorNetwork:
    if not path.exists():
        raise ConfigError(f"model file {path} not found (run `frcnet train` first)")
    net = load(path)
    if net.variant != cfg.model.variant:
        raise ConfigError(f"model {path} is {net.variant} but the config expects "
                          f"{cfg.model.variant}")
    return net


def cmd_generate(args, run: Run) -> int:
    cfg = run.cfg
    cfg.check_nyquist()
    cur, params = cfg.curriculum_config(), cfg.params()
    with run.phase("dataset"):
        trajs = generate_curriculum(cur, params)
        omegas, ics = curriculum_forcings(cur)
        files = []
        for k, tr in enumerate(trajs):
            name = f"data/traj_{k:03d}.csv"
            tr.to_csv(run.path(name))
            files.append(name)
        desc = {"format_version": 1, "config_hash": cfg.hash(), "seed": cfg.seed,
                "xi": params.xi, "omega_n": params.omega_n, "dt": cur.dt,
                "horizon": cur.horizon, "forcing_kind": cur.forcing_kind,
                "drive_amplitude": cur.drive_amplitude, "band": [cur.band_lo, cur.band_hi],
                "trajectories": [{"file": f, "omega": w, "ic": list(ic)}
                                 for f, w, ic in zip(files, omegas, ics)]}
        run.write("data/curriculum.json", json.dumps(desc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} trajectories to {run.out / 'data'}")
    return EXIT_OK


def _epoch_csv(records) -> str:
    lines = ["epoch,loss,lr,eig_re,eig_im"]
    for r in records:
        lines.append(f"{r.epoch},{format(r.loss, '.17g')},{format(r.lr, '.17g')},"
                     f"{format(r.eig_re, '.17g')},{format(r.eig_im, '.17g')}")
    return "\n".join(lines) + "\n"


def _read_epochs(path: Path) -> list[EpochRecord]:
    rows = path.read_text().strip().splitlines()
    if not rows or rows[0] != "epoch,loss,lr,eig_re,eig_im":
        raise ConfigError(f"{path}: not an epoch record file")
    out = []
    for line in rows[1:]:
        e, l, lr, re, im = line.split(",")
        out.append(EpochRecord(int(e), float(l), float(lr), float(re), float(im)))
    return out


def cmd_train(args, run: Run) -> int:
    cfg = run.cfg
    data = Path(args.data) if args.data else run.out / "data"
    desc_path = data / "curriculum.json"
    if not desc_path.exists():
        raise ConfigError(f"no dataset at {data} (run `frcnet generate` first)")
    desc = json.loads(desc_path.read_text())
    params, cur = cfg.params(), cfg.curriculum_config()
    spec, tcfg = cfg.model_spec(), cfg.training_config()
    with run.phase("dataset"):
        trajs = [Trajectory.from_csv(data / Path(t["file"]).name) for t in desc["trajectories"]]
        samples = build_samples(trajs, spec.variant, params, cur.sample_fraction, cur.seed)
    with run.phase("training"):
        on_epoch = None
        if run.verbose:
            on_epoch = lambda r: log.info("epoch %d loss %.4e lr %.1e eig %.5f%+.5fj",  # noqa: E731
                                          r.epoch, r.loss, r.lr, r.eig_re, r.eig_im)
        try:
            net, records = train(fresh_network(spec, samples), samples, tcfg, on_epoch)
        except TrainingDivergence as exc:
            run.write("epochs.csv", _epoch_csv(exc.records))
            raise Diverged(str(exc)) from exc
        save(net, run.path("model.json"))
        run.write("epochs.csv", _epoch_csv(records))
    last = records[-1]
    if not math.isfinite(last.loss):
        raise Diverged("final loss is not finite")
    print(f"trained {spec.variant} for {len(records)} epochs: loss {last.loss:.4e}, "
          f"eigenvalues {last.eig_re:.5f} +/- {abs(last.eig_im):.5f}j")
    return EXIT_OK


def cmd_forecast(args, run: Run) -> int:
    cfg = run.cfg
    net = _load_model(_model_path(args, run), cfg)
    ic, fcfg = cfg.forecast_config()
    with run.phase("forecasting"):
        res = forecast(net, ic, fcfg)
    res.trajectory.to_csv(run.path("forecast.csv"))
    if run.verbose:
        res.sidecar_csv(run.path("forecast_newton.csv"))
    if not res.ok:
        raise Diverged(f"Newton iteration failed at step {res.failure_index}")
    with run.phase("other"):
        truth = analytic_trajectory(cfg.params(), fcfg.forcing, ic, fcfg.dt, fcfg.n_steps)
        rep = time_metrics(res.trajectory, truth)
    run.write("forecast_report.txt", rep.as_text())
    print(rep.as_text(), end="")
    return EXIT_OK


def cmd_frc(args, run: Run) -> int:
    cfg = run.cfg
    frc = cfg.frc_config()
    params = cfg.params()
    model = params if args.oracle else _load_model(_model_path(args, run), cfg)
    base = frc.kind == "harmonic_base"
    with run.phase("frc"), warnings.catch_warnings():
        warnings.simplefilter("ignore", TransientWarning)
        curve = compute_frc(model, frc, dt=cfg.dt, absolute=base, workers=run.workers)
    truth = closed_form_frc(params, frc, absolute=base)
    rep = frc_metrics(curve, truth)
    curve.label = "oracle stub" if args.oracle else "network"
    curve.to_csv(run.path("frc.csv"))
    ylabel = "|Z/Y|" if base else "amplitude"
    curve.to_svg(run.path("frc.svg"), overlay=truth, title="Frequency response")
    if base:
        from .frc import FrcCurve
        absc = FrcCurve(curve.freqs, curve.absolute, label=curve.label)
        abst = FrcCurve(truth.freqs, truth.absolute, label="closed form")
        absc.to_csv(run.path("frc_abs.csv"))
        absc.to_svg(run.path("frc_abs.svg"), overlay=abst, title="Absolute transmissibility |X/Y|")
    text = rep.as_text() + f"accuracy_pct={format(accuracy_pct(rep), '.17g')}\n"
    if curve.failures:
        text += f"failed_points={len(curve.failures)}\n"
    run.write("frc_report.txt", text)
    print(f"{ylabel} FRC: accuracy {accuracy_pct(rep):.3f}% (shape {rep.shape_error_pct:.4f}%, "
          f"peak {rep.peak_error_pct:.4f}%, resonance {rep.resonance_error_pct:.4f}%, "
          f"peak at r={rep.peak_freq_estimate:.4f})")
    if len(curve.failures) == len(curve.freqs):
        raise Diverged("every FRC forecast failed")
    return EXIT_OK


def cmd_stability(args, run: Run) -> int:
    cfg = run.cfg
    net = _load_model(_model_path(args, run), cfg)
    st = cfg.stability
    with run.phase("other"):
        eq = equilibrium_eigenvalues(net)
        div = divergence_check(net, st.box, st.grid_n, st.tol)
        nyq = cfg.check_nyquist()
    up = eq.upper
    doc = {
        "eigenvalues": [[e.real, e.imag] for e in eq.eigenvalues],
        "classification": eq.classification,
        "caveat": eq.caveat,
        "divergence": {"passed": bool(div.passed), "max_trace": div.max_trace,
                       "worst_point": list(div.worst_point), "tol": div.tol,
                       "box": [list(b) for b in st.box], "grid_n": st.grid_n},
        "nyquist": nyq._asdict() | {"critical_ratio": nyq.critical_ratio},
    }
    run.write("stability.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    epochs = run.out / "epochs.csv"
    if epochs.exists():
        loc = root_locus(_read_epochs(epochs), cfg.system.xi, cfg.system.omega_n)
        loc.to_csv(run.path("root_locus.csv"))
        loc.to_svg(run.path("root_locus.svg"))
    print(f"equilibrium eigenvalues {up.real:.6f} +/- {abs(up.imag):.6f}j: {eq.classification}")
    if eq.caveat:
        print(f"note: {eq.caveat}")
    print(f"divergence check on {st.grid_n}x{st.grid_n} grid: "
          f"{'pass' if div.passed else 'FAIL'} (max trace {div.max_trace:.3e})")
    print(f"Nyquist: f_R={nyq.nyquist_rate:.4g}, dt_max={nyq.dt_max:.4g}, "
          f"R_s={nyq.sampling_ratio:.4g}, omega_critical={nyq.omega_critical:.4g}")
    return EXIT_OK


def cmd_sweep(args, run: Run) -> int:
    spec = run.cfg.sweep_spec(args.kind)

    def progress(p):
        for k, v in p.timings.items():
            run.times[k] += v
        if run.verbose:
            log.info("point %d (%g, %g): %s", p.point_id, p.group, p.swept_value,
                     p.error or f"peak {p.peak_err:.3f}%")

    t0 = time.perf_counter()
    res = run_sweep(spec, workers=run.workers, progress=progress)
    run.times["other"] += max(0.0, time.perf_counter() - t0 - sum(run.times.values()))
    stem = f"sweep_{spec.kind}"
    res.to_csv(run.path(stem + ".csv"))
    res.points_json(run.path(stem + ".points.json"))
    if any(p.ok for p in res.points):
        res.to_svg(run.path(stem + ".svg"))
    n_fail = len(res.failures)
    print(f"{spec.kind} sweep: {len(res.points)} points, {n_fail} failed")
    for p in res.failures:
        print(f"  point {p.point_id}: {p.error}", file=sys.stderr)
    if n_fail == len(res.points):
        raise Diverged("every sweep point failed")
    return EXIT_OK


def cmd_run(args, run: Run) -> int:
    """generate, train, forecast and frc in one go."""
    for fn in (cmd_generate, cmd_train, cmd_forecast, cmd_frc):
        code = fn(args, run)
        if code:
            return code
    return EXIT_OK


COMMANDS = {
    "generate": (cmd_generate, "synthesise the BRU training trajectories"),
    "train": (cmd_train, "train an operator network on the generated dataset"),
    "forecast": (cmd_forecast, "forecast one driven response and score it"),
    "frc": (cmd_frc, "build the frequency response curve and score it"),
    "stability": (cmd_stability, "eigenvalues, divergence, Nyquist limits, root locus"),
    "sweep": (cmd_sweep, "train-then-FRC sensitivity sweep"),
    "run": (cmd_run, "generate + train + forecast + frc"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config overriding the preset")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="parameter set to start from (default ls1)")
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./frcnet-out)")
    common.add_argument("--workers", type=int, default=1,
                        help="parallel workers; 1 guarantees bitwise reproducibility")
    common.add_argument("--verbose", action="store_true",
                        help="log progress and write the Newton sidecar for forecasts")
    ap = argparse.ArgumentParser(prog="frcnet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"frcnet {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name in ("forecast", "frc", "stability", "run"):
            p.add_argument("--model", help="model file (default <out>/model.json)")
        if name in ("train", "run"):
            p.add_argument("--data", help="dataset directory (default <out>/data)")
        if name in ("frc", "run"):
            p.add_argument("--oracle", action="store_true",
                           help="use the closed-form oracle instead of a network")
        if name == "sweep":
            p.add_argument("--kind", help="sweep kind (overrides sweep.kind)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for attr in ("model", "data", "oracle", "kind"):
        if not hasattr(args, attr):
            setattr(args, attr, None if attr != "oracle" else False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or "frcnet-out")
    run = None
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.preset, args.seed)
        run = Run(args.command, cfg, out, args.workers, args.verbose)
        code = COMMANDS[args.command][0](args, run)
        run.manifest("ok")
        return code
    except (ConfigError, NyquistError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            run.manifest("invalid")
        return EXIT_INVALID
    except (Diverged, TrainingDivergence) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        if run is not None:
            run.manifest("diverged")
        return EXIT_DIVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            run.manifest("invalid")
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
