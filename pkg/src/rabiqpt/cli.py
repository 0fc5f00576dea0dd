"""Command-line entry point ``rabiqpt``.

Each subcommand reads a JSON run config (``--config FILE`` or
``--config recipe:NAME``), writes CSV/JSON files into the output directory
and prints their paths.  Exit codes: 0 ok, 2 config, 3 numerics, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, analysis, dynamics, model, sideband, spectra
from .config import RunConfig, load_config, parse_config, recipe_names
from .errors import ConfigError, DataFormatError, NumericalError

log = logging.getLogger("rabiqpt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICS, EXIT_IO = 0, 2, 3, 4
QUENCH_COLUMNS = ["t_us", "omega_sb_khz", "g", "p_up", "n_bar", "n_f", "parity", "norm"]


def _fmt(x) -> str:
    return f"{x:.9g}" if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(x) for x in row])
    return path


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def _pmap(fn, items, jobs: int):
    """Map in order, in a process pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# quench

def _quench_run(args):
    cfg, value = args
    sweep = cfg.quench.sweep
    param = sweep.parameter if sweep else None
    ion = cfg.ion.to_ion(value if param == "ratio" else None)
    schedule = cfg.quench.to_schedule(
        omega_max_khz=value if param == "omega_max_khz" else None,
        tau_q_ms=value if param == "tau_q_ms" else None,
    )
    diss = cfg.dissipation.to_dissipator(value if param == "tau_d_ms" else None)
    nl = cfg.nonlinear.to_nonlinear() if cfg.nonlinear.enabled else None
    space = cfg.space.to_space(60 if diss.is_closed else 40)
    samples = dynamics.evolve(
        ion, schedule, cfg.noise.to_noise(), nl, diss, space, fixed_cutoff=cfg.space.fixed
    )
    return ion, schedule, samples


def quench_rows(samples):
    for s in samples:
        yield [s.t * 1e6, model.to_khz(s.omega_sb), s.g, s.p_up, s.n_bar, s.n_f, s.parity_exp, s.norm_or_trace]


def max_phonon_slope(samples) -> float:
    """Largest ``d n_bar / d(Omega_SB / 2 pi)`` along the ramp, per kHz."""
    om = np.array([model.to_khz(s.omega_sb) for s in samples])
    n = np.array([s.n_bar for s in samples])
    if len(om) < 2 or om[-1] == om[0]:
        return 0.0
    return float(np.max(np.diff(n) / np.diff(om)))


def cmd_quench(cfg: RunConfig, out: Path, jobs: int) -> list[Path]:
    sweep = cfg.quench.sweep
    values = sweep.values if sweep else [None]
    results = _pmap(_quench_run, [(cfg, v) for v in values], jobs)
    paths, summary = [], []
    for value, (ion, schedule, samples) in zip(values, results):
        stem = "quench" if value is None else f"quench_{sweep.parameter}_{value:g}"
        paths.append(write_csv(out / f"{stem}.csv", QUENCH_COLUMNS, quench_rows(samples)))
        if cfg.quench.write_distribution:
            dist = samples[-1].phonon_dist
            paths.append(write_csv(out / f"{stem}_distribution.csv", ["n", "p"], zip(range(len(dist)), dist)))
        summary.append({
            "value": value,
            "ratio": ion.ratio,
            "delta_b_khz": model.to_khz(ion.delta_b),
            "delta_r_khz": model.to_khz(ion.delta_r),
            "t_crit_us": 1e6 * dynamics.time_to_critical(ion, schedule) if schedule.omega_sb_max > 0 else None,
            "endpoint_p_up": samples[-1].p_up,
            "endpoint_n_bar": samples[-1].n_bar,
            "max_slope_per_khz": max_phonon_slope(samples),
            "fock_cutoff": len(samples[-1].phonon_dist) - 1,
        })
    payload = {"parameter": sweep.parameter if sweep else None, "runs": summary}
    paths.append(write_json(out / "quench_summary.json", payload))
    return paths


# sideband

def build_distribution(cfg: RunConfig) -> np.ndarray:
    dist = cfg.sideband.distribution
    if dist.kind == "explicit":
        return np.array(dist.p, dtype=float)
    if dist.kind == "quench_endpoint":
        _, _, samples = _quench_run((cfg, None))
        return samples[-1].phonon_dist
    k = np.arange(dist.levels)
    if dist.kind == "thermal":
        return dist.n_bar**k / (dist.n_bar + 1.0) ** (k + 1)
    return stats.nbinom(dist.shape, dist.shape / (dist.shape + dist.n_bar)).pmf(k)


def _fit_gamma0(cfg: RunConfig):
    g = cfg.sideband.fit_gamma0_per_ms
    return None if g is None else 1e3 * g


def cmd_sideband(cfg: RunConfig, out: Path, jobs: int) -> list[Path]:
    sb = cfg.sideband
    probe = model.khz(sb.probe_khz)
    if sb.mode == "synth":
        p = build_distribution(cfg)
        signal = sideband.synthesize_signal(
            p, probe, 1e3 * sb.gamma0_per_ms, sb.times, shots=sb.shots or None,
            seed=cfg.seed, dark_error=sb.dark_error, bright_error=sb.bright_error,
        )
        csv_path = out / "sideband_signal.csv"
        sideband.write_signal_csv(signal, csv_path)
        truth = {"p": [float(x) for x in p], "n_bar": float(np.arange(len(p)) @ p), "total": float(p.sum())}
        return [csv_path, write_json(out / "sideband_truth.json", truth)]
    if sb.input_csv is None:
        raise ConfigError(f"sideband mode {sb.mode!r} needs sideband.input_csv")
    if not Path(sb.input_csv).is_file():
        raise DataFormatError(f"signal file {sb.input_csv} does not exist")
    signal = sideband.read_signal_csv(sb.input_csv, probe)
    if sb.mode == "fit":
        result = sideband.fit_phonon_distribution(signal, sb.k_max, _fit_gamma0(cfg))
        return [write_json(out / "sideband_fit.json", result.to_dict())]
    lo, hi = sb.k_range
    _, result = sideband.select_kmax(signal, range(lo, hi + 1), sb.occupation_threshold, _fit_gamma0(cfg))
    return [write_json(out / "sideband_select.json", result.to_dict())]


# scaling

def _spin_point(args):
    R, g = args
    return analysis.spin_scaling_points(R, [g])[0]


def _critical_n_bar(R):
    return float(analysis.critical_phonon_numbers([R])[0])


def cmd_scaling(cfg: RunConfig, out: Path, jobs: int) -> list[Path]:
    sc = cfg.scaling
    if sc.which == "spin":
        g_values = sc.g_values if sc.g_values is not None else analysis.default_spin_grid(sc.ratio, sc.G_window, sc.n_points)
        if len(g_values) == 0:
            raise ConfigError("scaling.g_values is empty")
        points = _pmap(_spin_point, [(sc.ratio, float(g)) for g in g_values], jobs)
        slope = analysis.spin_scaling_slope(points, sc.G_window)
        rows = ([p.g, p.p_up, p.G, p.S_s] for p in points)
        table = write_csv(out / "scaling_spin.csv", ["g", "p_up", "G", "S_s"], rows)
        payload = {"which": "spin", "ratio": sc.ratio, "G_window": list(sc.G_window), "slope": slope}
        return [table, write_json(out / "scaling_spin.json", payload)]
    if len(sc.ratios) == 0:
        raise ConfigError("scaling.ratios is empty")
    if len(set(sc.ratios)) != len(sc.ratios):
        raise ConfigError("scaling.ratios contains duplicates")
    n_bar = np.array(_pmap(_critical_n_bar, sc.ratios, jobs))
    R = np.array(sc.ratios, dtype=float)
    slope = analysis.loglog_slope(R, n_bar)
    rows = ([r, n, np.log(r), np.log(n)] for r, n in zip(R, n_bar))
    table = write_csv(out / "scaling_phonon.csv", ["R", "n_bar", "log_R", "log_n_bar"], rows)
    return [table, write_json(out / "scaling_phonon.json", {"which": "phonon", "ratios": list(sc.ratios), "slope": slope})]


# error budget

def cmd_error_budget(cfg: RunConfig, out: Path, jobs: int) -> list[Path]:
    eb = cfg.error_budget
    if not eb.ratios:
        raise ConfigError("error_budget.ratios is empty")
    rows = []
    for R in eb.ratios:
        db, dr = model.detunings_from_ratio(R, model.khz(eb.omega_sb_crit_khz))
        ion = model.IonParams(db, dr)
        budget = analysis.ratio_error_budget(ion, model.khz(eb.sigma_common_khz), model.khz(eb.eps_trap_khz), eb.mode)
        rows.append({
            "ratio": R,
            "delta_b_khz": model.to_khz(db),
            "delta_r_khz": model.to_khz(dr),
            "delta_R_common": budget.delta_R_common,
            "delta_R_trap": budget.delta_R_trap,
        })
    return [write_json(out / "error_budget.json", {"mode": eb.mode, "budgets": rows})]


# ground state

def _ground_state_row(args):
    R, g, omega_f = args
    qrm = model.QrmParams.from_ratio(R, g, omega_f)
    res = spectra.qrm_ground_state(qrm)
    space = res.state.space
    effective = None if abs(g - 1.0) < 1e-6 else model.to_khz(model.effective_ground_energy(qrm))
    return {
        "ratio": R,
        "g": g,
        "energy_khz": model.to_khz(res.energy),
        "effective_energy_khz": effective,
        "gap_khz": model.to_khz(res.gap),
        "parity_gap_khz": model.to_khz(spectra.parity_gap(model.build_qrm_hamiltonian(qrm, space), space)),
        "n_bar": res.n_bar,
        "n_f": res.n_f,
        "p_up": res.p_up,
        "parity": res.parity,
        "asymptotic_n_f": spectra.asymptotic_nf(g),
        "asymptotic_n_a": spectra.asymptotic_na(g),
        "fock_cutoff": space.fock_cutoff,
    }


def cmd_ground_state(cfg: RunConfig, out: Path, jobs: int) -> list[Path]:
    gs = cfg.ground_state
    omega_f = model.khz(gs.omega_f_khz)
    rows = _pmap(_ground_state_row, [(gs.ratio, g, omega_f) for g in gs.g_values], jobs)
    return [write_json(out / "ground_state.json", {"omega_f_khz": gs.omega_f_khz, "states": rows})]


COMMANDS = {
    "quench": cmd_quench,
    "sideband": cmd_sideband,
    "scaling": cmd_scaling,
    "error-budget": cmd_error_budget,
    "ground-state": cmd_ground_state,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rabiqpt", description="Quantum Rabi model quench simulations and analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} workflow")
        p.add_argument("--config", help=f"JSON config file, or recipe:NAME ({', '.join(recipe_names())})")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps (default 1)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        if name == "sideband":
            p.add_argument("--mode", choices=["synth", "fit", "select"])
            p.add_argument("--input", help="signal CSV for fit/select")
        if name == "scaling":
            p.add_argument("--which", choices=["spin", "phonon"])
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out is not None:
        update["out_dir"] = args.out
    if getattr(args, "mode", None) or getattr(args, "input", None):
        sb = cfg.sideband.model_dump(mode="json")
        if args.mode:
            sb["mode"] = args.mode
        if args.input:
            sb["input_csv"] = args.input
        update["sideband"] = sb
    if getattr(args, "which", None):
        update["scaling"] = {**cfg.scaling.model_dump(mode="json"), "which": args.which}
    if not update:
        return cfg
    return parse_config({**cfg.model_dump(mode="json"), **update})


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("RABIQPT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _resolve(args)
        if args.dump_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](cfg, out, args.jobs):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
