"""Command-line front door: config ingestion, experiment dispatch,
deterministic seeding, and CSV/JSON result emission.

Every run writes one CSV of result rows and exactly one JSON manifest
recording the command, config hash, seed, timestamps, output paths, and
the fitted-parameter summary, so a run is reproducible from its manifest
alone.  Exit codes: 0 success, 1 unknown subcommand, 2 config error,
3 fit failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, ConfigError, config_hash, load_config
from .core import dm, singlet, state_fidelity, triplet
from .experiments import (
    ExperimentError,
    FitError,
    calibrate_noise,
    odmr_calibration,
    run_gate_repetition,
    run_odmr_scan,
    run_storage_experiment,
)
from .noise import RfNoiseSpec, StaticFieldNoise, T1Process
from .pulses import entanglement_circuit
from .readout import InitPopulations
from .system import system_from_config
from .tomography import (
    counts_csv_rows,
    fidelity_report,
    mle_reconstruct,
    records_from_state,
    result_json,
)

OUTPUT_DIR_ENV = "NVREG_OUTPUT_DIR"
_USAGE = """usage: nvreg <command> [options]

commands:
  odmr             scan a nuclear transition and fit its center
  gate-check       gate-repetition decay of a conditional gate
  entangle         run the entangling circuit and report fidelity
  store            store an entangled state under noise and fit decay
  tomo             sampled tomography + reconstruction self-check
  calibrate-noise  tune the rf amplitude scale to the target decay time

common options: --config PATH  --out DIR  --seed N
"""


@dataclass
class RunManifest:
    """Provenance record emitted exactly once per CLI run."""

    command: str
    config_hash: str
    seed: int
    started_utc: str
    finished_utc: str = ""
    outputs: list[str] = field(default_factory=list)
    fitted: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: tuple[str, ...], rows: list[tuple]) -> str:
    buf = []
    out = csv.writer(_ListIO(buf))
    out.writerow(header)
    for row in rows:
        out.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return "".join(buf)


class _ListIO:
    def __init__(self, buf):
        self.buf = buf

    def write(self, s):
        self.buf.append(s)


def emit_results(
    rows: list[tuple],
    manifest: RunManifest,
    out_dir: Path,
    stem: str,
    header: tuple[str, ...] = ("grid_value", "value", "std_err"),
    extra_files: dict[str, str] | None = None,
) -> list[Path]:
    """Atomically write the CSV rows, optional extra files, and the manifest.

    Rows must be nonempty; nothing is written otherwise.  Floats go to the
    CSV at full repr precision so parsing the file recovers exact values.
    """
    if not rows:
        raise ExperimentError("no result rows to emit")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    csv_path = out_dir / f"{stem}.csv"
    _atomic_write(csv_path, _csv_text(header, rows))
    paths.append(csv_path)
    for name, text in (extra_files or {}).items():
        p = out_dir / name
        _atomic_write(p, text)
        paths.append(p)
    manifest.outputs = [p.name for p in paths] + [f"{stem}_manifest.json"]
    manifest.finished_utc = datetime.now(timezone.utc).isoformat()
    man_path = out_dir / f"{stem}_manifest.json"
    _atomic_write(man_path, manifest.to_json() + "\n")
    paths.append(man_path)
    return paths


# ---------------------------------------------------------------------------
# config plumbing


def _noise_specs(cfg: dict) -> tuple[StaticFieldNoise, RfNoiseSpec, T1Process]:
    static = StaticFieldNoise(
        cfg["noise.sigma_b_gauss"], cfg["system.gamma_c13_khz_per_gauss"]
    )
    rf = RfNoiseSpec(
        correlation_rate=cfg["noise.rf_rate_per_ms"],
        bandwidth=cfg["noise.rf_bandwidth_khz"],
        delta_omega=cfg["noise.rf_spacing_khz"],
        amplitude_scale=cfg["noise.rf_amplitude_scale"],
    )
    t1 = T1Process(cfg["system.t1_electron_ms"])
    return static, rf, t1


def _init_pops(cfg: dict) -> InitPopulations | None:
    if not cfg["readout.init_error_on"]:
        return None
    return InitPopulations(
        cfg["readout.p1"], cfg["readout.p2"], cfg["readout.p3"], cfg["readout.p4"]
    )


def _parse_phi(text: str) -> float:
    t = text.strip().lower()
    if t == "pi":
        return float(np.pi)
    if t in ("pi/2", "pi_2"):
        return float(np.pi / 2)
    try:
        return float(t)
    except ValueError:
        raise ConfigError(f"--phi must be a number, 'pi', or 'pi/2'; got {text!r}")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_odmr(args, cfg, sys_, out_dir, stem, manifest):
    scan = run_odmr_scan(
        sys_, args.spin, args.ms, shots=cfg["tomo.shots"], seed=manifest.seed
    )
    rows = [
        (float(f), float(s), float(np.sqrt(max(s * (1 - s), 0) / cfg["tomo.shots"])))
        for f, s in zip(scan.freqs_khz, scan.signal)
    ]
    manifest.fitted = {
        "center_khz": scan.center_khz,
        "width_khz": scan.fit.params["width"],
        "target_khz": sys_.branch_frequency(args.ms, args.spin),
    }
    if args.full_calibration:
        a_par, a_perp = odmr_calibration(
            sys_, args.spin, shots=cfg["tomo.shots"], seed=manifest.seed
        )
        manifest.fitted.update({"a_par_khz": a_par, "a_perp_khz": a_perp})
    return emit_results(
        rows, manifest, out_dir, stem, ("freq_khz", "probability", "std_err")
    )


def _cmd_gate_check(args, cfg, sys_, out_dir, stem, manifest):
    rep = run_gate_repetition(
        sys_,
        args.spin,
        args.branch,
        n_max=args.n_max,
        jitter_sigma_g=cfg["noise.sigma_b_gauss"] if args.jitter else 0.0,
        t1_ms=cfg["system.t1_electron_ms"] if args.jitter else np.inf,
        n_traj=cfg["storage.trajectories"] if args.jitter else 1,
        seed=manifest.seed,
        resonance_order=cfg["gates.resonance_order"],
    )
    rows = [(int(n), float(y), 0.0) for n, y in zip(rep.ns, rep.ys)]
    manifest.fitted = dict(rep.fit.params) | {
        "b_std": rep.fit.stds["b"], "residual": rep.fit.residual,
    }
    return emit_results(
        rows, manifest, out_dir, stem, ("repetitions", "y_expectation", "std_err")
    )


def _cmd_entangle(args, cfg, sys_, out_dir, stem, manifest):
    phi = _parse_phi(args.phi) if args.phi is not None else cfg["experiment.phi"]
    res = entanglement_circuit(sys_, phi, ideal=args.ideal)
    f_s = state_fidelity(dm(singlet()), res.rho_nuclear)
    f_t = state_fidelity(dm(triplet()), res.rho_nuclear)
    manifest.fitted = {
        "phi": phi,
        "fidelity_singlet": f_s,
        "fidelity_triplet": f_t,
        "duration_us": res.duration_us,
    }
    if abs(phi - np.pi) < 1e-6:
        manifest.fitted["fidelity"] = f_s
    elif abs(phi) < 1e-6:
        manifest.fitted["fidelity"] = f_t
    rows = [(float(phi), float(manifest.fitted.get("fidelity", max(f_s, f_t))), 0.0)]
    return emit_results(
        rows, manifest, out_dir, stem, ("phi", "fidelity", "std_err")
    )


_NOISE_ALIASES = {
    "dephasing": "dephasing-only",
    "dephasing-only": "dephasing-only",
    "general": "general-collective",
    "general-collective": "general-collective",
}


def _cmd_store(args, cfg, sys_, out_dir, stem, manifest):
    mode = _NOISE_ALIASES.get(args.noise)
    if mode is None:
        raise ConfigError(
            f"--noise must be one of {sorted(_NOISE_ALIASES)}; got {args.noise!r}"
        )
    static, rf, t1 = _noise_specs(cfg)
    times = np.geomspace(0.05, cfg["storage.t_max_ms"], cfg["storage.n_times"])
    res = run_storage_experiment(
        sys_,
        args.state,
        mode,
        times,
        n_traj=cfg["storage.trajectories"],
        seed=manifest.seed,
        rf=rf if mode == "general-collective" else None,
        static=static if mode == "dephasing-only" else None,
        t1=t1,
        init_populations=_init_pops(cfg),
        scenario=cfg["readout.scenario"],
        shots=None if cfg["tomo.exact_expectations"] else cfg["tomo.shots"],
        dt_us=cfg["storage.dt_us"],
        gate_on_us=cfg["noise.gate_on_delay_us"],
        gate_off_us=cfg["noise.gate_off_early_us"],
    )
    if res.fit is None:
        raise FitError(res.fit_error or "storage decay fit failed")
    rows = [
        (float(t), float(f), float(e))
        for t, f, e in zip(res.times_ms, res.fidelities, res.std_errs)
    ]
    manifest.fitted = dict(res.fit.params) | {
        "t_est_std": res.fit.stds["t-est"], "residual": res.fit.residual,
    }
    return emit_results(
        rows, manifest, out_dir, stem, ("time_ms", "fidelity", "std_err")
    )


def _cmd_tomo(args, cfg, sys_, out_dir, stem, manifest):
    target = dm(singlet() if args.state == "S" else triplet())
    records = records_from_state(target, cfg["tomo.shots"], manifest.seed)
    result = mle_reconstruct(records)
    fid = fidelity_report(target, result.rho)
    manifest.fitted = {
        "fidelity": fid,
        "log_likelihood": result.log_likelihood,
        "converged": bool(result.converged),
    }
    rows = counts_csv_rows(records)
    return emit_results(
        rows,
        manifest,
        out_dir,
        stem,
        ("setting", "outcome", "count", "shots", "seed"),
        extra_files={f"{stem}_rho.json": result_json(result) + "\n"},
    )


def _cmd_calibrate(args, cfg, sys_, out_dir, stem, manifest):
    _, rf, t1 = _noise_specs(cfg)
    cal = calibrate_noise(
        sys_,
        rf,
        t1=t1,
        n_traj=cfg["storage.trajectories"],
        seed=manifest.seed,
    )
    if not cal.converged:
        raise FitError(
            f"amplitude-scale bisection did not converge "
            f"({cal.evaluations} evaluations, last t_est {cal.t_est_ms:.4f} ms)"
        )
    manifest.fitted = {
        "amplitude_scale": cal.amplitude_scale,
        "t_est_ms": cal.t_est_ms,
        "evaluations": cal.evaluations,
    }
    rows = [(float(cal.amplitude_scale), float(cal.t_est_ms), 0.0)]
    return emit_results(
        rows, manifest, out_dir, stem, ("amplitude_scale", "t_est_ms", "std_err")
    )


_COMMANDS = {
    "odmr": _cmd_odmr,
    "gate-check": _cmd_gate_check,
    "entangle": _cmd_entangle,
    "store": _cmd_store,
    "tomo": _cmd_tomo,
    "calibrate-noise": _cmd_calibrate,
}


def _build_parser(command: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=f"nvreg {command}")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stem", default=None, help="output file stem")
    if command == "odmr":
        p.add_argument("--spin", type=int, choices=(1, 2), required=True)
        p.add_argument("--ms", type=int, choices=(0, -1, 1), default=-1)
        p.add_argument("--full-calibration", action="store_true")
    elif command == "gate-check":
        p.add_argument("--spin", type=int, choices=(1, 2), default=1)
        p.add_argument("--branch", type=int, choices=(0, -1), default=0)
        p.add_argument("--n-max", type=int, default=10)
        p.add_argument("--jitter", action="store_true")
    elif command == "entangle":
        p.add_argument("--phi", default=None, help="number, 'pi', or 'pi/2'")
        p.add_argument("--ideal", action="store_true")
    elif command == "store":
        p.add_argument("--state", choices=("S", "T"), default="S")
        p.add_argument("--noise", default="general")
    elif command == "tomo":
        p.add_argument("--state", choices=("S", "T"), default="S")
    return p


def run_command(argv: list[str]) -> int:
    """Dispatch one subcommand; returns the process exit code."""
    if not argv or argv[0] in ("-h", "--help"):
        print(_USAGE, end="")
        return 0
    command, rest = argv[0], argv[1:]
    if command not in _COMMANDS:
        print(f"nvreg: unknown subcommand {command!r}", file=sys.stderr)
        print(_USAGE, end="", file=sys.stderr)
        return 1
    args = _build_parser(command).parse_args(rest)
    try:
        cfg = load_config(args.config)
        missing = sorted(k for k in DEFAULTS if k not in cfg)
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        sys_ = system_from_config(cfg)
    except (ConfigError, OSError) as exc:
        print(f"nvreg: config error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg["experiment.seed"]
    out_dir = Path(
        args.out or os.environ.get(OUTPUT_DIR_ENV) or Path.cwd()
    )
    stem = args.stem or command.replace("-", "_")
    manifest = RunManifest(
        command=" ".join([command, *rest]),
        config_hash=config_hash(cfg),
        seed=int(seed),
        started_utc=datetime.now(timezone.utc).isoformat(),
    )
    try:
        paths = _COMMANDS[command](args, cfg, sys_, out_dir, stem, manifest)
    except (ConfigError, ExperimentError, OSError) as exc:
        print(f"nvreg: config error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"nvreg: fit failure: {exc}", file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


def main() -> None:
    raise SystemExit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
