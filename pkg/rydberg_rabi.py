# Command-line entry point.
#
#   python rydberg_rabi.py trace --config run.cfg --out results
#   python rydberg_rabi.py intensity-scan --set intensity_steps=16 --heatmap
#   python rydberg_rabi.py optimize-pulses --threads 0
#
# Every run appends a row to <out>/run_metrics.csv.

from pathlib import Path
import argparse
import logging
import math
import sys
import time

import numpy as np

from analysis import autler_townes_modes, fit_sqrt_scaling
from doppler import single_class_grid
from errors import SimulationError
from experiments import (config_grid, default_detuning_axis, detuning_scan, intensity_scan,
                         optimize_simultaneous_pulses, resolve_workers, run_trace,
                         single_velocity_scan, trace_metrics)
from liouville import steady_state
from outputs import (OBSERVABLES, append_run_metrics, read_map, render_heatmap, write_map,
                     write_records, write_report_pdf, write_timeseries)
from rydberg_model import TWO_PI, pulse_bounds
from run_config import config_from_values, load_config, parse_override, resolved_config

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
MHZ = TWO_PI * 1e6


class RunContext:
    """What one subcommand needs: config, output settings and bookkeeping."""

    def __init__(self, args):
        self.command = args.command
        self.config_path = args.config
        if args.config:
            self.config = load_config(args.config, args.set)
        else:
            self.config = config_from_values(dict(parse_override(item) for item in args.set))
        output = self.config.output
        self.out_dir = Path(args.out)
        self.fmt = args.format or output.format
        self.heatmap = args.heatmap or output.heatmap
        self.report = args.report or output.report
        self.workers = resolve_workers(args.threads)
        self.resolved = resolved_config(self.config)
        self.files = []
        self.metrics = {}
        self.row = {"velocity_classes": 0, "scan_points": 0, "time_samples": 0}

    def metadata(self, **extra):
        return {"command": self.command, "config": self.resolved, **extra}

    def path(self, name, suffix=None):
        return self.out_dir / f"{name}.{suffix or self.fmt}"

    def wrote(self, path):
        self.files.append(Path(path).name)


def _write_scan(ctx: RunContext, name, scan):
    ctx.wrote(write_map(scan, ctx.path(name), ctx.fmt, ctx.metadata()))
    if ctx.heatmap:
        for observable in OBSERVABLES:
            ctx.wrote(render_heatmap(scan, observable, ctx.out_dir / f"{name}_{observable}.svg"))
    ctx.row.update(scan_points=len(scan.params), time_samples=len(scan.times))
    ctx.metrics["max_rho33"] = float(scan.rho33.max())
    return ctx.metrics["max_rho33"]


def cmd_trace(ctx: RunContext, args):
    grid = config_grid(ctx.config)
    traj = run_trace(ctx.config, ctx.workers, grid)
    ctx.metrics.update(trace_metrics(traj, ctx.config))
    if len(grid) > 1:
        resting = trace_metrics(run_trace(ctx.config, grid=single_class_grid()), ctx.config)
        if "retention" in resting:
            ctx.metrics["retention_zero_velocity"] = resting["retention"]
    ctx.wrote(write_timeseries(traj, ctx.path("trace"), ctx.fmt, ctx.metadata(metrics=ctx.metrics)))
    ctx.row.update(velocity_classes=len(grid), scan_points=1, time_samples=len(traj))
    for key in ("rabi_cycles", "retention", "retention_zero_velocity"):
        if key in ctx.metrics:
            logger.info(f"{key}: {ctx.metrics[key]:.4f}")
    return ctx.metrics.get("retention", ctx.metrics["peak_rho33"])


def cmd_intensity_scan(ctx: RunContext, args):
    scan = intensity_scan(ctx.config, workers=ctx.workers)
    ctx.row["velocity_classes"] = ctx.config.velocity.points
    return _write_scan(ctx, "intensity_scan", scan)


def cmd_detuning_scan(ctx: RunContext, args):
    scan = detuning_scan(ctx.config, workers=ctx.workers)
    ctx.row["velocity_classes"] = ctx.config.velocity.points
    return _write_scan(ctx, "detuning_scan", scan)


def cmd_single_velocity_scan(ctx: RunContext, args):
    scan = single_velocity_scan(ctx.config, workers=ctx.workers)
    ctx.row["velocity_classes"] = 1
    return _write_scan(ctx, "single_velocity_scan", scan)


def cmd_steady_state(ctx: RunContext, args):
    probe = ctx.config.probe
    rho = steady_state(probe.rabi_peak, probe.detuning, ctx.config.decay)
    records = [
        {"element": f"rho{i + 1}{j + 1}", "real": float(rho.data[i, j].real), "imag": float(rho.data[i, j].imag)}
        for i in range(3) for j in range(3)
    ]
    ctx.wrote(write_records(records, ctx.path("steady_state"), ctx.fmt, ctx.metadata()))
    populations = rho.populations
    ctx.metrics.update(rho11=float(populations[0]), rho22=float(populations[1]), rho33=float(populations[2]))
    ctx.row.update(velocity_classes=1, scan_points=1)
    logger.info(f"Steady state populations: {np.round(populations, 6)}")
    return ctx.metrics["rho22"]


def cmd_modes(ctx: RunContext, args):
    omega_480 = args.omega_480 * MHZ if args.omega_480 is not None else ctx.config.coupling_rabi
    if args.detuning_max is not None:
        steps = args.steps or ctx.config.scan.detuning_steps
        detunings = np.linspace(-args.detuning_max * MHZ, args.detuning_max * MHZ, steps)
    else:
        detunings = default_detuning_axis(ctx.config)
    records = []
    for delta in detunings:
        slow, fast = autler_townes_modes(omega_480, float(delta))
        records.append({"detuning_mhz": float(delta / MHZ), "slow_mhz": slow / MHZ, "fast_mhz": fast / MHZ,
                        "slow_rad_s": slow, "fast_rad_s": fast})
    ctx.wrote(write_records(records, ctx.path("modes"), ctx.fmt, ctx.metadata(omega_480_rad_s=omega_480)))
    ctx.row.update(scan_points=len(records))
    ctx.metrics["slow_mode_at_resonance_mhz"] = autler_townes_modes(omega_480, 0.0)[0] / MHZ
    return ctx.metrics["slow_mode_at_resonance_mhz"]


def cmd_fit_scaling(ctx: RunContext, args):
    config = ctx.config
    if args.scan:
        scan, _ = read_map(args.scan)
        logger.info(f"Fitting existing scan {args.scan}")
    else:
        scan = intensity_scan(config, workers=ctx.workers)
        ctx.row["velocity_classes"] = config.velocity.points
    start, end = pulse_bounds(config.pulse, config.analysis.pulse_extent)
    window = (max(start, float(scan.times[0])), min(end, float(scan.times[-1])))
    fit = fit_sqrt_scaling(scan, config.calibration.calibration, config.probe.rabi_peak, window,
                           config.analysis.cycle_prominence)
    records = [
        {"row": int(row), "intensity_w_m2": float(scan.params[row]), "combined_rabi_rad_s": float(x),
         "frequency_rad_s": float(f), "residual_rad_s": float(r)}
        for row, x, f, r in zip(fit.rows, fit.combined_rabi, fit.frequencies, fit.residuals)
    ]
    summary = {"a": fit.a, "r_squared": fit.r_squared, "rows_used": len(fit.rows),
               "frequency_convention": fit.record()["frequency_convention"]}
    ctx.wrote(write_records(records, ctx.path("fit_scaling"), ctx.fmt, ctx.metadata(fit=summary)))
    ctx.row.update(scan_points=len(scan.params), time_samples=len(scan.times))
    ctx.metrics.update(fit_a=fit.a, r_squared=fit.r_squared, rows_used=len(fit.rows))
    return fit.r_squared


def cmd_optimize_pulses(ctx: RunContext, args):
    result = optimize_simultaneous_pulses(ctx.config, workers=ctx.workers)
    document = [{
        "parameters": result.parameters,
        "rho33": result.rho33,
        "coarse_rho33": result.coarse_rho33,
        "grid_best": result.grid_best,
        "grid_rho33": result.grid_rho33,
        "evaluations": result.evaluations,
        "simplex_iterations": result.simplex_iterations,
        "velocity_classes": result.velocity_classes,
    }]
    ctx.wrote(write_records(document, ctx.path("optimize_pulses", "json"), "json", ctx.metadata()))
    ctx.row.update(velocity_classes=result.velocity_classes, scan_points=result.evaluations)
    ctx.metrics.update(best_rho33=result.rho33, evaluations=result.evaluations)
    for name, value in result.parameters.items():
        ctx.metrics[name] = value
    return result.rho33


COMMANDS = {
    "trace": (cmd_trace, "Doppler-averaged time trace at the configured intensity"),
    "intensity-scan": (cmd_intensity_scan, "trace map over coupling intensity"),
    "detuning-scan": (cmd_detuning_scan, "trace map over coupling detuning, Doppler averaged"),
    "single-velocity-scan": (cmd_single_velocity_scan, "trace map over coupling detuning, v = 0 only"),
    "steady-state": (cmd_steady_state, "pre-pulse steady state of the probe-driven system"),
    "modes": (cmd_modes, "dressed-state mode frequencies versus coupling detuning"),
    "fit-scaling": (cmd_fit_scaling, "square-root fit of rho33 frequency versus combined Rabi frequency"),
    "optimize-pulses": (cmd_optimize_pulses, "search simultaneous pulses maximizing final rho33"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format (default: output_format from the config)")
    common.add_argument("--heatmap", action="store_true", help="also render SVG heatmaps of scan maps")
    common.add_argument("--threads", type=int, default=1, help="worker processes, 0 = one per CPU")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set 'coupling_detuning=500 MHz'")
    common.add_argument("--report", action="store_true", help="write report.pdf")
    common.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"), default="INFO")

    parser = argparse.ArgumentParser(
        description="Rabi flopping on a Rydberg ladder in a thermal vapor",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    parsers["modes"].add_argument("--omega-480", type=float, default=None,
                                  help="coupling Rabi frequency Omega/2pi in MHz (default: from config)")
    parsers["modes"].add_argument("--detuning-max", type=float, default=None,
                                  help="largest |Delta_480|/2pi in MHz (default: detuning_max)")
    parsers["modes"].add_argument("--steps", type=int, default=None, help="number of detunings")
    parsers["fit-scaling"].add_argument("--scan", default=None,
                                        help="fit an existing intensity_scan map instead of simulating")
    return parser


def run(args) -> int:
    started = time.time()
    ctx = RunContext(args)
    handler = COMMANDS[args.command][0]
    logger.info(f"Running {args.command} with {ctx.workers} worker(s), output in {ctx.out_dir}")
    primary = handler(ctx, args)
    if ctx.report:
        pdf_path, _ = write_report_pdf(ctx.out_dir / "report.pdf", args.command, ctx.resolved, ctx.metrics)
        ctx.wrote(pdf_path)
    runtime = round(time.time() - started, 4)
    append_run_metrics(ctx.out_dir, {
        "datetime": time.strftime("%Y-%m-%d %H:%M:%S"),
        "command": args.command,
        "config_path": ctx.config_path or "",
        "workers": ctx.workers,
        "runtime_sec": runtime,
        "primary_metric": primary if primary is None or math.isfinite(primary) else "",
        "output_files": ";".join(ctx.files),
        **ctx.row,
    })
    logger.info(f"{args.command} finished in {runtime} s: {', '.join(ctx.files)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler()]
    )
    try:
        return run(args)
    except SimulationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
