import argparse
import logging
import math
import sys
from collections.abc import Callable, Iterator, Sequence
from pathlib import Path
from typing import NoReturn

from mm_std import Err
from pydantic import ValidationError

from dpm_cvqkd.channel import cutoff_distance, rate_vs_distance, tolerable_noise_vs_distance
from dpm_cvqkd.config import RunConfig, load_run_config, resolve_out_dir
from dpm_cvqkd.dpm_optics import run_verification
from dpm_cvqkd.finite_size import check_ordering, cutoff_by_curve, finite_size_sweep
from dpm_cvqkd.gaussian_info import holevo_bound, mutual_information
from dpm_cvqkd.protocol_sim import QUADRATURES, RECORD_FIELDS, SimulationSummary, displace_keys, run_simulation, simulate_batch
from dpm_cvqkd.report import write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_SELF_CHECK = 3


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gain(value: str) -> str:
    if value != "auto":
        try:
            number = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {value!r}") from None
        if not math.isfinite(number):
            raise argparse.ArgumentTypeError(f"expected a finite gain, got {value!r}")
    return value


def build_parser() -> ArgumentParser:
    # SUPPRESS keeps unset flags out of the namespace so --config values are not overridden by defaults
    common = ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="key=value file, keys are flag names with '-' replaced by '_'")
    common.add_argument("--out", type=Path, help="output directory (default: $DPM_CVQKD_OUT_DIR or cwd)")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp metadata line")
    common.add_argument("--workers", type=int, help="parallel workers; output does not depend on it")
    common.add_argument("--verbose", action="store_true")

    channel = ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    channel.add_argument("--v", type=float, help="modulation variance V (SNU), default 20")
    channel.add_argument("--beta", type=float, help="reconciliation efficiency, default 0.95")
    channel.add_argument("--alpha-db-km", type=float, help="fiber attenuation, default 0.2 dB/km")

    noise = ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    noise.add_argument("--eps", type=float, help="excess noise referred to the input (SNU), default 0.001")

    grid = ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    grid.add_argument("--dmin", type=float, help="first Alice-to-Bob distance, km")
    grid.add_argument("--dmax", type=float, help="last Alice-to-Bob distance, km")
    grid.add_argument("--dstep", type=float, help="distance step, km")

    parser = ArgumentParser(prog="dpm-cvqkd", description="Plug-and-play DPM-based MDI-CVQKD key rates and simulation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    sub.add_parser(
        "asymptotic-sweep",
        parents=[common, channel, noise, grid],
        argument_default=argparse.SUPPRESS,
        help="asymptotic key rate vs distance",
    )

    p = sub.add_parser(
        "tolerable-noise",
        parents=[common, channel, grid],
        argument_default=argparse.SUPPRESS,
        help="tolerable excess noise vs distance",
    )
    p.add_argument("--emit-residuals", action="store_true", help="add the |K(eps*)| column")

    p = sub.add_parser(
        "finite-size-sweep",
        parents=[common, channel, noise, grid],
        argument_default=argparse.SUPPRESS,
        help="finite-size key rate, local and conventional estimation",
    )
    p.add_argument("--block-sizes", help="comma-separated N values, default 1e4,1e5,1e6,1e7,1e8")
    p.add_argument("--eps-smooth", type=float)
    p.add_argument("--eps-pe", type=float)
    p.add_argument("--eps-pa", type=float)
    p.add_argument("--self-check", action="store_true", help="assert the local >= conventional orderings")

    p = sub.add_parser(
        "simulate",
        parents=[common, channel, noise],
        argument_default=argparse.SUPPRESS,
        help="pulse-level Monte-Carlo run",
    )
    p.add_argument("--distance", type=float, help="Alice-to-Bob distance, km, default 10")
    p.add_argument("--pulses", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gain", type=_gain, help="'auto' or a fixed amplification coefficient k")
    p.add_argument("--emit-records", action="store_true", help="also write one row per round")

    p = sub.add_parser(
        "dpm-verify",
        parents=[common],
        argument_default=argparse.SUPPRESS,
        help="Jones-calculus checks of the dual-phase modulator",
    )
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="Gaussian modulation samples, default 1e6")
    p.add_argument("--inject-error", action="store_true", help=argparse.SUPPRESS)

    return parser


def configure_logging(verbose: bool) -> None:
    package_logger = logging.getLogger("dpm_cvqkd")
    if not package_logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def _output(cfg: RunConfig, filename: str) -> Path:
    return resolve_out_dir(cfg) / filename


def cmd_asymptotic_sweep(cfg: RunConfig) -> int:
    points = rate_vs_distance(cfg.channel_params(), cfg.distances(), cfg.workers)
    write_csv(
        _output(cfg, "asymptotic_sweep.csv"),
        cfg.command,
        cfg.metadata(),
        [
            "distance_km",
            "transmittance_per_arm",
            "a",
            "b",
            "c",
            "mutual_info_bits",
            "holevo_bits",
            "key_rate_bits_per_pulse",
        ],
        (
            (pt.distance_km, pt.transmittance, pt.cov.a, pt.cov.b, pt.cov.c, pt.mutual_info, pt.holevo, pt.key_rate)
            for pt in points
        ),
        timestamp=not cfg.no_timestamp,
    )
    logger.info("positive-rate cutoff: %s km", cutoff_distance([(pt.distance_km, pt.key_rate) for pt in points]))
    return EXIT_OK


def cmd_tolerable_noise(cfg: RunConfig) -> int:
    results = tolerable_noise_vs_distance(cfg.channel_params(), cfg.distances(), cfg.workers)
    status = EXIT_OK
    rows: list[list[object]] = []
    for distance, res in results:
        if isinstance(res, Err):
            if res.err == "no_positive_rate":
                logger.warning("no tolerable excess noise at %g km: no positive rate even at eps=0", distance)
            else:
                logger.error("tolerable noise search failed at %g km: %s", distance, res.err)
                status = EXIT_NUMERIC
            row: list[object] = [distance, math.nan]
            residual = math.nan
        else:
            row = [distance, res.unwrap()]
            residual = abs(res.data["residual"]) if res.data else math.nan
        if cfg.emit_residuals:
            row.append(residual)
        rows.append(row)

    header = ["distance_km", "tolerable_excess_noise_snu"]
    if cfg.emit_residuals:
        header.append("residual_abs_key_rate")
    write_csv(_output(cfg, "tolerable_noise.csv"), cfg.command, cfg.metadata(), header, rows, timestamp=not cfg.no_timestamp)
    return status


def cmd_finite_size_sweep(cfg: RunConfig) -> int:
    rows = finite_size_sweep(
        cfg.channel_params(),
        block_sizes=cfg.block_sizes,
        distances_km=cfg.distances(),
        eps_smooth=cfg.eps_smooth,
        eps_pe=cfg.eps_pe,
        eps_pa=cfg.eps_pa,
        workers=cfg.workers,
    )
    write_csv(
        _output(cfg, "finite_size_sweep.csv"),
        cfg.command,
        cfg.metadata(),
        ["block_size_N", "mode", "distance_km", "key_rate_bits_per_pulse"],
        ((r.block_size, "local" if r.mode == "local_estimation" else "conventional", r.distance_km, r.key_rate) for r in rows),
        timestamp=not cfg.no_timestamp,
    )
    for (block_size, mode), cutoff in cutoff_by_curve(rows).items():
        logger.info("N=%d %s: positive-rate cutoff %s km", block_size, mode, cutoff)

    if cfg.self_check:
        violations = check_ordering(rows)
        for violation in violations:
            logger.error("self-check: %s", violation)
        if violations:
            return EXIT_SELF_CHECK
        logger.info("self-check passed")
    return EXIT_OK


def _summary_rows(summary: SimulationSummary) -> Iterator[tuple[str, object]]:
    cfg = summary.config
    yield "pulses", summary.empirical.count
    yield "seed", cfg.seed
    yield "transmittance_arm1", cfg.t1
    yield "transmittance_arm2", cfg.t2
    yield "gain_mode", "auto" if cfg.gain_k == "auto" else "fixed"
    yield "gain_k", summary.gain
    yield "gain_objective_bits", summary.gain_objective
    empirical, analytic = summary.empirical.matrix(), summary.analytic.matrix()
    for i, qi in enumerate(QUADRATURES):
        for j in range(i, len(QUADRATURES)):
            qj = QUADRATURES[j]
            yield f"gamma_empirical.{qi}.{qj}", float(empirical[i, j])
            yield f"gamma_analytic.{qi}.{qj}", float(analytic[i, j])
    yield "max_abs_z_score", summary.max_abs_z_score
    est = summary.estimate
    yield "estimated_t1", est.t1
    yield "estimated_t2", est.t2
    yield "estimated_excess_noise", est.eps
    yield "estimated_v_a", est.v_a
    yield "estimated_v_b", est.v_b
    yield "transmittance_relative_se", est.transmittance_rel_se
    yield "estimate_clamped", est.clamped
    cov = summary.covariance
    yield "a", cov.a
    yield "b", cov.b
    yield "c", cov.c
    yield "mutual_info_bits", mutual_information(cov)
    yield "holevo_bits", holevo_bound(cov)
    yield "key_rate_empirical", summary.key_rate_empirical
    yield "key_rate_analytic", summary.key_rate_analytic
    yield "key_rate_relative_error", summary.relative_error
    yield "insufficient_statistics", summary.insufficient_statistics


def _record_rows(cfg: RunConfig, gain: float) -> Iterator[list[float]]:
    for chunk in simulate_batch(cfg.sim_config()):
        displaced = displace_keys(chunk, gain)
        columns = [getattr(displaced, name) for name in RECORD_FIELDS]
        yield from (list(map(float, values)) for values in zip(*columns, strict=True))


def cmd_simulate(cfg: RunConfig) -> int:
    res = run_simulation(cfg.sim_config(), cfg.beta, cfg.workers)
    if isinstance(res, Err):
        logger.error("simulation failed: %s", res.err)
        return EXIT_NUMERIC
    summary = res.unwrap()
    timestamp = not cfg.no_timestamp

    write_csv(
        _output(cfg, "simulate_summary.csv"),
        cfg.command,
        cfg.metadata(),
        ["quantity", "value"],
        _summary_rows(summary),
        timestamp=timestamp,
    )
    logger.info(
        "key rate: empirical %.6g, analytic %.6g, relative error %.3g",
        summary.key_rate_empirical,
        summary.key_rate_analytic,
        summary.relative_error,
    )
    if cfg.emit_records:
        metadata = {**cfg.metadata(), "gain_k": summary.gain}
        write_csv(
            _output(cfg, "simulate_records.csv"),
            "simulate-records",
            metadata,
            RECORD_FIELDS,
            _record_rows(cfg, summary.gain),
            timestamp=timestamp,
        )
    return EXIT_OK


def cmd_dpm_verify(cfg: RunConfig) -> int:
    checks = run_verification(cfg.trials, cfg.seed, samples=cfg.samples, inject_error=cfg.inject_error)
    write_csv(
        _output(cfg, "dpm_verify.csv"),
        cfg.command,
        cfg.metadata(),
        ["check", "max_deviation", "tolerance", "passed"],
        ((c.name, c.max_deviation, c.tolerance, c.passed) for c in checks),
        timestamp=not cfg.no_timestamp,
    )
    failed = [c for c in checks if not c.passed]
    for c in failed:
        logger.error("%s: deviation %.3g exceeds tolerance %.3g", c.name, c.max_deviation, c.tolerance)
    return EXIT_SELF_CHECK if failed else EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "asymptotic-sweep": cmd_asymptotic_sweep,
    "tolerable-noise": cmd_tolerable_noise,
    "finite-size-sweep": cmd_finite_size_sweep,
    "simulate": cmd_simulate,
    "dpm-verify": cmd_dpm_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    flags = vars(args)
    command = flags.pop("command")
    config_path = flags.pop("config", None)
    configure_logging(bool(flags.get("verbose", False)))

    try:
        cfg = load_run_config(command, flags, config_path)
    except FileNotFoundError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except ValidationError as e:
        logger.error("invalid parameters: %s", e)
        return EXIT_USAGE
    configure_logging(cfg.verbose)

    try:
        return COMMANDS[command](cfg)
    except ValidationError as e:
        logger.error("invalid parameters: %s", e)
        return EXIT_USAGE
    except ValueError as e:
        logger.error("numeric failure: %s", e)
        return EXIT_NUMERIC
