"""
Command-line entry point.

    multiplexing analytic  --protocol mepl --distance-km 50
    multiplexing simulate  --protocol mps --p-em 0.1 --seed 7
    multiplexing sweep     --figure 4 --output fig4.csv
    multiplexing crossover --a mepl --b mps:0.1

Units on the command line are km, us and Hz; config files and everything
internal use SI. Exit codes: 0 ok, 2 usage/config, 3 invalid parameters,
4 simulation or I/O failure.
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from Multiplexing.analytic import Protocol, crossover_distance, expected_local_successes, n_max_mbk, n_max_mepl, rate_for
from Multiplexing.errors import ConfigError, DomainError, SimulationError
from Multiplexing.experiments import (
    crossover_table,
    fig4_curves,
    fig4_rate_vs_distance,
    fig5_n_vs_distance,
    fig6_rate_vs_memories,
    simulate_point,
)
from Multiplexing.loader import (
    CONFIG_SCHEMA_VERSION,
    EffectiveConfig,
    dump_config,
    load_config,
    parse_cutoff,
    resolve_config_path,
)
from Multiplexing.netparams import KM, US, LinkGeometry, eta, s_to_us, t_c
from Multiplexing.protocols import ProtocolConfig, derived_tallies
from Multiplexing.report_helpers import (
    OutputError,
    config_hash,
    per_replication_table,
    rate_table,
    summarize_agreement,
    trace_table,
    write_csv,
    write_table,
    write_workbook,
)
from Multiplexing.transformations import fit_scaling_laws, prepare_rate_table

logger = logging.getLogger(__name__)

VERSION = "1.0.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_RUNTIME = 4

FORMATS = ("csv", "json", "xlsx")


## -------------------------------------------------------------------------------------------------------------- ##
## Parser

def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    config = parser.add_argument_group("configuration")
    config.add_argument("--config", help="key = value config file (default: $MULTIPLEXING_CONFIG)")
    config.add_argument("--dump-config", metavar="PATH", help="write the effective config to PATH ('-' for stdout)")

    link = parser.add_argument_group("link parameters")
    link.add_argument("--distance-km", type=float)
    link.add_argument("--p-out", type=float)
    link.add_argument("--p-fc", type=float)
    link.add_argument("--alpha-db-per-km", type=float)
    link.add_argument("--t-eg-us", type=float, help="entanglement generation time (us)")
    link.add_argument("--t-sg-us", type=float, help="swap gate time (us)")
    link.add_argument("--c-fiber", type=float, help="speed of light in fiber (m/s)")

    proto = parser.add_argument_group("protocol")
    proto.add_argument("--protocol", choices=[p.value for p in Protocol] + ["all"])
    proto.add_argument("--n-qubits", type=int, help="qubits per node, communication qubit included")
    proto.add_argument("--p-em", type=float, help="midpoint source emission probability")
    proto.add_argument("--cutoff", help="mEPL stored-state cutoff (attempts) or 'unlimited'")
    proto.add_argument("--distill-delay", action=argparse.BooleanOptionalAction, default=None)
    proto.add_argument("--elide-failures", action=argparse.BooleanOptionalAction, default=None)

    mc = parser.add_argument_group("monte carlo")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--replications", type=int)
    mc.add_argument("--successes", type=int, help="successes per replication")
    mc.add_argument("--duration-s", type=float, help="simulated seconds per replication (replaces --successes)")
    mc.add_argument("--threads", type=int, help="worker processes (default: all cores)")

    out = parser.add_argument_group("output")
    out.add_argument("--output", "-o", help="result file")
    out.add_argument("--format", choices=FORMATS, help="result file format (default: from --output suffix, else csv)")
    out.add_argument("-v", "--verbose", action="count", default=0)
    out.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiplexing",
        description="Entanglement rates of multiplexed two-node quantum network protocols.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION} (config schema {CONFIG_SCHEMA_VERSION})")

    common = argparse.ArgumentParser(add_help=False)
    _add_common_flags(common)

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("analytic", parents=[common], help="closed-form rates at one parameter point")

    simulate = sub.add_parser("simulate", parents=[common], help="Monte Carlo rate at one parameter point")
    simulate.add_argument("--trace", metavar="PATH", help="write the event trace of every replication")
    simulate.add_argument("--per-replication", metavar="PATH", help="write one CSV row per replication")

    sweep = sub.add_parser("sweep", parents=[common], help="figure tables (analytic + Monte Carlo)")
    sweep.add_argument("--figure", type=int, choices=(4, 5, 6), required=True)
    sweep.add_argument("--analytic-only", action="store_true")

    crossover = sub.add_parser("crossover", parents=[common], help="distance where two protocols' rates cross")
    crossover.add_argument("--a", required=True, metavar="SPEC", help="e.g. mepl, mepl:3, mbk:2, mps:0.1")
    crossover.add_argument("--b", required=True, metavar="SPEC")
    crossover.add_argument("--min-km", type=float, default=10.0)
    crossover.add_argument("--max-km", type=float, default=300.0)
    crossover.add_argument("--strict", action="store_true", help="fail when the rates do not cross")

    return parser


def configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


## -------------------------------------------------------------------------------------------------------------- ##
## Invocation -> effective configuration

def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config-file keys for every flag given on the command line."""
    us = lambda value: None if value is None else value * US

    candidates = {
        "p_out": args.p_out,
        "p_fc": args.p_fc,
        "alpha_db_per_km": args.alpha_db_per_km,
        "t_eg": us(args.t_eg_us),
        "t_sg": us(args.t_sg_us),
        "c_fiber": args.c_fiber,
        "distance_km": args.distance_km,
        "n_qubits": args.n_qubits,
        "p_em": args.p_em,
        "distill_delay": args.distill_delay,
        "elide_failures": args.elide_failures,
        "seed": args.seed,
        "replications": args.replications,
        "successes": args.successes,
        "duration": args.duration_s,
        "threads": args.threads,
    }
    overrides = {key: value for key, value in candidates.items() if value is not None}

    if args.protocol == "all":
        # every protocol is derived from this base; mBK accepts any qubit count
        overrides["protocol"] = Protocol.MBK
    elif args.protocol is not None:
        overrides["protocol"] = Protocol.parse(args.protocol)

    if args.cutoff is not None:
        try:
            overrides["cutoff"] = parse_cutoff(args.cutoff)
        except ValueError as e:
            raise ConfigError(f"--cutoff: {e}") from e

    return overrides


def resolve_invocation(args: argparse.Namespace) -> EffectiveConfig:
    return load_config(resolve_config_path(args.config), collect_overrides(args))


def generate_seed() -> int:
    return int(np.random.SeedSequence().entropy % (2 ** 63))


def with_seed(config: EffectiveConfig) -> EffectiveConfig:
    if config.mc.seed is not None:
        return config
    seed = generate_seed()
    logger.info("no seed given, using %d", seed)
    return dataclasses.replace(config, mc=dataclasses.replace(config.mc, seed=seed))


def requested_protocols(args: argparse.Namespace, config: EffectiveConfig) -> List[Protocol]:
    return list(Protocol) if args.protocol == "all" else [config.protocol.protocol]


def protocol_config(config: EffectiveConfig, protocol: Protocol) -> ProtocolConfig:
    return dataclasses.replace(config.protocol, protocol=protocol)


def parse_protocol_spec(spec: str, base: ProtocolConfig) -> ProtocolConfig:
    """'mepl' / 'mepl:3' / 'mbk:2' / 'mps:0.1' on top of `base`."""
    name, _, value = spec.partition(":")
    try:
        protocol = Protocol.parse(name)
        if not value:
            return dataclasses.replace(base, protocol=protocol)
        if protocol is Protocol.MPS:
            return dataclasses.replace(base, protocol=protocol, p_em=float(value))
        return dataclasses.replace(base, protocol=protocol, n_qubits=int(value))
    except ValueError as e:
        if isinstance(e, DomainError):
            raise
        raise ConfigError(f"bad protocol spec {spec!r}: {e}") from e


def output_format(args: argparse.Namespace) -> str:
    if args.format:
        return args.format
    if args.output:
        suffix = Path(args.output).suffix.lower().lstrip(".")
        if suffix in FORMATS:
            return suffix
    return "csv"


def header_lines(config: EffectiveConfig, seeded: bool = True) -> List[str]:
    lines = [f"multiplexing {VERSION} (config schema {CONFIG_SCHEMA_VERSION})"]
    if seeded:
        lines.append(f"seed: {config.mc.seed}")
    lines.append(f"config sha256: {config_hash(dump_config(config))}")
    return lines


def provenance(config: EffectiveConfig, command: str) -> Dict[str, Any]:
    return {
        "version": VERSION,
        "config_schema": CONFIG_SCHEMA_VERSION,
        "command": command,
        "seed": config.mc.seed,
        "replications": config.mc.replications,
        "config": dump_config(config),
        "config_sha256": config_hash(dump_config(config)),
    }


def _echo(lines: Sequence[str]) -> None:
    for line in lines:
        print(f"# {line}")


## -------------------------------------------------------------------------------------------------------------- ##
## Commands

def cmd_analytic(args: argparse.Namespace, config: EffectiveConfig) -> int:
    params = config.params
    geom = LinkGeometry.from_km(config.distance_km)

    print(f"distance_km = {config.distance_km:g}")
    print(f"eta = {eta(params, geom):.6g}")
    print(f"t_c_us = {s_to_us(t_c(params, geom)):.6g}")
    print(f"n_max_mbk = {n_max_mbk(params, geom)}")
    print(f"n_max_mepl = {n_max_mepl(params, geom)}")

    rates, labels, status = [], [], EXIT_OK
    for protocol in requested_protocols(args, config):
        try:
            proto = protocol_config(config, protocol)
            rate = rate_for(params, geom, proto)
        except DomainError as e:
            print(f"{protocol.value}: error: {e}")
            status = EXIT_DOMAIN
            continue

        rates.append(rate)
        labels.append(proto.label)
        print(f"{proto.label}: rate = {rate.rate:.6g} Hz (attempt rate {rate.attempt_rate:.6g} Hz, n_eff {rate.n_effective})")
        if proto.protocol is Protocol.MPS:
            print(f"{proto.label}: local successes per t_c = {expected_local_successes(params, geom, proto.p_em):.6g}")

    if args.output and rates:
        table = rate_table(rates, labels)
        table.insert(0, "d_km", config.distance_km)
        write_table(table, args.output, output_format(args), header_lines(config, seeded=False), provenance(config, "analytic"))

    return status


def cmd_simulate(args: argparse.Namespace, config: EffectiveConfig) -> int:
    params = config.params
    geom = LinkGeometry.from_km(config.distance_km)
    _echo(header_lines(config))

    summaries, traces, replications = [], [], []
    for protocol in requested_protocols(args, config):
        proto = protocol_config(config, protocol)
        estimate = simulate_point(params, geom, proto, config.mc, trace=bool(args.trace))
        analytic = rate_for(params, geom, proto)

        stderr = "n/a" if estimate.stderr is None else f"{estimate.stderr:.4g}"
        print(
            f"{proto.label}: rate = {estimate.rate:.6g} Hz +/- {stderr} Hz "
            f"({estimate.replications} replications, {estimate.successes} successes, {estimate.sim_time:.6g} s simulated)"
        )
        print(f"{proto.label}: analytic = {analytic.rate:.6g} Hz")

        derived = derived_tallies(proto.protocol, estimate.tallies, estimate.successes)
        for name, value in derived.items():
            print(f"{proto.label}: {name} = {value:.6g}")

        summaries.append({
            "label": proto.label,
            "d_km": config.distance_km,
            "rate_hz": estimate.rate,
            "stderr_hz": np.nan if estimate.stderr is None else estimate.stderr,
            "analytic_hz": analytic.rate,
            "replications": estimate.replications,
            "successes": estimate.successes,
            "sim_time_s": estimate.sim_time,
            "seed": estimate.seed,
            **estimate.tallies,
            **derived,
        })

        if args.per_replication:
            per_rep = per_replication_table(estimate)
            per_rep.insert(0, "label", proto.label)
            replications.append(per_rep)
        if args.trace:
            for index, run in enumerate(estimate.runs):
                traces.append(trace_table(run.trace or (), replication=index, label=proto.label))

    if args.output:
        write_table(pd.DataFrame(summaries), args.output, output_format(args), header_lines(config), provenance(config, "simulate"))
    if args.per_replication:
        write_csv(pd.concat(replications, ignore_index=True), args.per_replication, header_lines(config))
    if args.trace:
        write_csv(pd.concat(traces, ignore_index=True), args.trace, header_lines(config), schema=False)

    return EXIT_OK


def _print_crossovers(table: pd.DataFrame) -> None:
    for row in table.itertuples(index=False):
        if pd.isna(row.crossover_km):
            print(f"crossover {row.a} vs {row.b}: none in bracket")
        else:
            print(f"crossover {row.a} vs {row.b}: {row.crossover_km:.4g} km")


def cmd_sweep(args: argparse.Namespace, config: EffectiveConfig) -> int:
    params = config.params
    mc = None if args.analytic_only or args.figure == 5 else config.mc
    _echo(header_lines(config, seeded=mc is not None))

    extra: Dict[str, pd.DataFrame] = {}
    if args.figure == 4:
        table = prepare_rate_table(fig4_rate_vs_distance(params, mc))
        crossovers = crossover_table(params, [curve.config for curve in fig4_curves()])
        print(f"dashed line (t_c = t_sg) at {table.attrs['dashed_line_km']:.4g} km")
        _print_crossovers(crossovers)
        extra["crossovers"] = crossovers
        extra["scaling_analytic"] = fit_scaling_laws(table, params)
        if mc is not None:
            extra["scaling_mc"] = fit_scaling_laws(table, params, column="mc")
    elif args.figure == 5:
        table = fig5_n_vs_distance(params)
        for column, best in table.attrs["max_n"].items():
            print(f"max {column} = {best['n']:.4g} at {best['d_km']:g} km")
    else:
        table = prepare_rate_table(fig6_rate_vs_memories(params, mc, distance_km=config.distance_km))
        for label, n_max in table.attrs["saturation"].items():
            print(f"{label}: saturates at N = {n_max}")

    if mc is not None and args.figure != 5:
        agreement = summarize_agreement(table)
        extra["agreement"] = agreement
        for row in agreement.itertuples(index=False):
            print(f"{row.label}: worst relative error {row.worst_rel_error:.3g}, worst |z| {row.worst_abs_z:.3g}")

    fmt = output_format(args)
    path = args.output or f"fig{args.figure}.{fmt}"
    if fmt == "xlsx":
        write_workbook({f"fig{args.figure}": table, **extra}, path)
    else:
        write_table(table, path, fmt, header_lines(config, seeded=mc is not None), provenance(config, f"sweep --figure {args.figure}"))
    print(f"wrote {path}")

    return EXIT_OK


def cmd_crossover(args: argparse.Namespace, config: EffectiveConfig) -> int:
    config_a = parse_protocol_spec(args.a, config.protocol)
    config_b = parse_protocol_spec(args.b, config.protocol)
    bracket = (args.min_km * KM, args.max_km * KM)

    distance = crossover_distance(config.params, config_a, config_b, bracket=bracket, strict=args.strict)
    if distance is None:
        print(f"crossover {config_a.label} vs {config_b.label}: none in [{args.min_km:g}, {args.max_km:g}] km")
    else:
        print(f"crossover {config_a.label} vs {config_b.label}: {distance / KM:.6g} km")

    if args.output:
        table = pd.DataFrame([{
            "a": config_a.label,
            "b": config_b.label,
            "crossover_km": np.nan if distance is None else distance / KM,
            "min_km": args.min_km,
            "max_km": args.max_km,
        }])
        write_table(table, args.output, output_format(args), header_lines(config, seeded=False), provenance(config, "crossover"))

    return EXIT_OK


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "crossover": cmd_crossover,
}

SEEDED_COMMANDS = {"simulate", "sweep"}


def _dump(config: EffectiveConfig, target: str) -> None:
    text = dump_config(config)
    if target == "-":
        sys.stdout.write(text)
        return
    try:
        Path(target).write_text(text, encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {target}: {e}") from e


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        config = resolve_invocation(args)
        if args.command in SEEDED_COMMANDS:
            config = with_seed(config)
        if args.dump_config:
            _dump(config, args.dump_config)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as e:
        print(f"invalid parameters: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except SimulationError as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OutputError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
