"""``ncga`` command line: gen, optimize, simulate, compare, oracle.

Exit codes: 0 success, 2 invalid input, 3 infeasible result, 4 instance
too large.  Every option can also come from a ``--config`` file of
``key = value`` lines; flags win over the file.  ``NCGA_OUT`` sets the
output directory when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import netgraph
from .coding import brute_force_min_coding, parse_assignment, serialize_assignment
from .config import ConfigError, ExperimentConfig, key_of, load_config, serialize_config, with_overrides
from .errors import InfeasibleParameters, NcgaError, TooLarge
from .ga import run_ga, write_run_log
from .plotting import ChartSpec, render_svg
from .sim import (SimConfig, compare_strategies, select_coding_nodes, simulate, summarize,
                  write_metrics_csv, write_trace)

log = logging.getLogger("ncga")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_TOO_LARGE = 0, 2, 3, 4
OUT_ENV = "NCGA_OUT"


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value file; flags override it")
    for f in fields(ExperimentConfig):
        p.add_argument(f"--{key_of(f.name)}", dest=f.name, default=None, metavar=f.name.upper())
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="ncga", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a random network")
    sub.add_parser("optimize", parents=[common], help="minimize coding resources with the GA")
    sp = sub.add_parser("simulate", parents=[common], help="simulate one strategy")
    sp.add_argument("--strategy", default="GANS", choices=["GANS", "RSN", "CAN", "NONE"])
    sp.add_argument("--assignment", help="coding assignment file for GANS (default: run the GA)")
    cp = sub.add_parser("compare", parents=[common], help="compare strategies")
    cp.add_argument("--assignment", help="coding assignment file for GANS (default: run the GA)")
    sub.add_parser("oracle", parents=[common], help="exhaustive minimum for small instances")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out is None and os.environ.get(OUT_ENV):
        args.out = os.environ[OUT_ENV]
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}
    return with_overrides(cfg, overrides)


def _network(cfg: ExperimentConfig, rate_given: bool) -> netgraph.Network:
    if cfg.network is None:
        return netgraph.generate_random_dag(cfg.nodes, cfg.links, cfg.receivers, cfg.rate, cfg.seed)
    if cfg.network == "butterfly" and not Path(cfg.network).exists():
        net = netgraph.butterfly()
    else:
        net, _ = netgraph.load(cfg.network)
    if rate_given:
        net = net.with_target_rate(cfg.rate)
    return net


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    return out


def _ga_assignment(net, cfg: ExperimentConfig, path: str | None):
    if path:
        return parse_assignment(Path(path).read_text())
    res = run_ga(net, cfg.ga_params(), cfg.coefficients(net.target_rate), cfg.seed)
    log.info("GA: N_n=%d N_l=%d min rate %d", res.best_report.n_coding_nodes,
             res.best_report.n_coding_links, res.best_report.min_rate)
    return res.assignment


def _sim_config(cfg: ExperimentConfig, blocks: int, strategy: str, seed: int) -> SimConfig:
    return SimConfig(content_size_bytes=blocks * cfg.block_size, block_size_bytes=cfg.block_size,
                     blocks_per_segment=cfg.blocks_per_segment, strategy=strategy,
                     rsn_count=cfg.rsn_count, deadline_rounds=cfg.deadline, seed=seed, q=cfg.q,
                     ideal=cfg.ideal, trace=cfg.trace, window=cfg.window)


# -- subcommands ----------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, args) -> int:
    net = netgraph.generate_random_dag(cfg.nodes, cfg.links, cfg.receivers, cfg.rate, cfg.seed)
    out = _out_dir(cfg)
    netgraph.save(out / "network.txt", net)
    print(f"wrote {out / 'network.txt'}: {net.n_nodes} nodes, {len(net.links)} links, "
          f"{len(net.receivers)} receivers, rate {net.target_rate}")
    return EXIT_OK


def cmd_optimize(cfg: ExperimentConfig, args) -> int:
    net = _network(cfg, args.rate is not None)
    out = _out_dir(cfg)
    cut = netgraph.min_max_flow(net)
    if cut < net.target_rate:
        print(f"infeasible: target rate {net.target_rate} exceeds min-cut {cut}")
        return EXIT_INFEASIBLE
    res = run_ga(net, cfg.ga_params(), cfg.coefficients(net.target_rate), cfg.seed)
    write_run_log(out / "run_log.csv", res)
    (out / "assignment.txt").write_text(serialize_assignment(res.assignment))
    r = res.best_report
    print(f"N_n {r.n_coding_nodes} N_l {r.n_coding_links} min_rate {r.min_rate} target {net.target_rate} "
          f"F {r.objective:.4f} generations {res.generations_run} ({res.terminated_by})")
    return EXIT_OK if r.min_rate >= net.target_rate else EXIT_INFEASIBLE


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    net = _network(cfg, args.rate is not None)
    out = _out_dir(cfg)
    ga = _ga_assignment(net, cfg, args.assignment) if args.strategy == "GANS" else None
    rsn = cfg.rsn_count
    rows, timelines = [], {}
    try:
        for blocks in cfg.file_blocks:
            for seed in cfg.seeds:
                plan = select_coding_nodes(net, args.strategy, rsn, ga, seed)
                sc = _sim_config(cfg, blocks, args.strategy, seed)
                res = simulate(net, plan, sc)
                rows.append((args.strategy, seed, res.metrics, blocks))
                if seed == cfg.seeds[0] and blocks == cfg.file_blocks[-1]:
                    timelines[args.strategy] = res.timeline
                    if cfg.trace:
                        write_trace(out / "trace.csv", res)
    finally:
        # whatever finished is kept even if a later cell fails
        write_metrics_csv(out / "metrics.csv", rows, ["file_blocks"])
    _size_charts(out, cfg, rows, [args.strategy])
    _throughput_chart(out, timelines)
    _print_summary(rows, [args.strategy])
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    net = _network(cfg, args.rate is not None)
    out = _out_dir(cfg)
    strategies = list(cfg.strategies)
    ga = _ga_assignment(net, cfg, args.assignment) if "GANS" in strategies else None
    rows, churn_rows = [], []
    try:
        for blocks in cfg.file_blocks:
            base = _sim_config(cfg, blocks, strategies[0], cfg.seed)
            res = compare_strategies(net, base, ga, cfg.seeds, strategies)
            for strat in strategies:
                for seed, m in zip(cfg.seeds, res[strat]):
                    rows.append((strat, seed, m, blocks, 0))
        blocks = cfg.file_blocks[0]
        for d in sorted(set(cfg.dynamic_links)):
            if not d:
                continue
            base = _sim_config(cfg, blocks, strategies[0], cfg.seed)
            res = compare_strategies(net, base, ga, cfg.seeds, strategies, dynamic_links=d)
            for strat in strategies:
                for seed, m in zip(cfg.seeds, res[strat]):
                    churn_rows.append((strat, seed, m, blocks, d))
    finally:
        write_metrics_csv(out / "metrics.csv", rows + churn_rows, ["file_blocks", "dynamic_links"])
    _size_charts(out, cfg, rows, strategies)
    # dynamic_links = 0 reuses the static runs of the same file size
    pool = [r for r in rows if r[3] == cfg.file_blocks[0]] + churn_rows
    xs = tuple(sorted(set(cfg.dynamic_links)))
    series = {s: tuple(float(np.mean([r[2].failure_rate for r in pool if r[0] == s and r[4] == d]))
                       for d in xs) for s in strategies}
    render_svg(ChartSpec("failure_vs_dynamic_links", xs, series), out / "failure_vs_dynamic_links.svg")
    timelines = {}
    for strat in strategies:
        plan = select_coding_nodes(net, strat, _rsn_count(cfg, ga), ga, cfg.seeds[0])
        timelines[strat] = simulate(net, plan, _sim_config(cfg, cfg.file_blocks[-1], strat, cfg.seeds[0])).timeline
    _throughput_chart(out, timelines)
    _print_summary(rows, strategies)
    return EXIT_OK


def _rsn_count(cfg, ga) -> int:
    if cfg.rsn_count or ga is None:
        return cfg.rsn_count
    return len(ga.coding_nodes())


def cmd_oracle(cfg: ExperimentConfig, args) -> int:
    net = _network(cfg, args.rate is not None)
    found = brute_force_min_coding(net, net.target_rate)
    if found is None:
        print(f"infeasible: target rate {net.target_rate} not attainable")
        return EXIT_INFEASIBLE
    n_n, n_l, witness = found
    print(f"{n_n} {n_l}")
    sys.stdout.write(serialize_assignment(witness))
    return EXIT_OK


# -- output helpers ----------------------------------------------------------------

def _size_charts(out: Path, cfg, rows, strategies) -> None:
    xs = tuple(sorted(set(cfg.file_blocks)))

    def mean(strat, blocks, attr):
        vals = [getattr(r[2], attr) for r in rows if r[0] == strat and r[3] == blocks]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    for kind, attr in (("download_time_vs_filesize", "avg_distribution_time"),
                       ("redundancy_vs_filesize", "packet_redundancy")):
        series = {s: tuple(mean(s, b, attr) for b in xs) for s in strategies}
        render_svg(ChartSpec(kind, xs, series), out / f"{kind}.svg")


def _throughput_chart(out: Path, timelines: dict[str, list[int]]) -> None:
    horizon = max((len(t) for t in timelines.values()), default=0)
    if horizon == 0:
        return
    xs = tuple(range(1, horizon + 1))
    series = {}
    for strat, tl in timelines.items():
        full = list(tl) + [tl[-1] if tl else 0] * (horizon - len(tl))
        series[strat] = tuple(b / t for b, t in zip(full, xs))
    render_svg(ChartSpec("throughput_vs_time", xs, series), out / "throughput_vs_time.svg")


def _print_summary(rows, strategies) -> None:
    w = csv.writer(sys.stdout)
    w.writerow(["strategy", "file_blocks", "redundancy", "avg_time", "max_time", "throughput", "failure_rate"])
    for strat in strategies:
        for blocks in sorted({r[3] for r in rows}):
            ms = [r[2] for r in rows if r[0] == strat and r[3] == blocks]
            s = summarize(ms)
            w.writerow([strat, blocks] + [f"{s[k][0]:.4f}" for k in
                                          ("packet_redundancy", "avg_distribution_time", "max_download_time",
                                           "system_throughput", "failure_rate")])


COMMANDS = {"gen": cmd_gen, "optimize": cmd_optimize, "simulate": cmd_simulate,
            "compare": cmd_compare, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args).validate()
        return COMMANDS[args.command](cfg, args)
    except TooLarge as e:
        print(f"too large: {e}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except InfeasibleParameters as e:
        print(f"invalid parameters: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, NcgaError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
