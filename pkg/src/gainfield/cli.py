"""Command-line front end: instance generation, campaign execution,
speed-up overlays, and final-point audits.

Every subcommand prints one [PASS]/[FAIL] line per built-in check and
exits nonzero iff any executed check failed. Output locations resolve
as: the --output-dir flag, else the config file's output_dir, else
$GAINFIELD_OUTPUT_DIR/<subcommand>, else ./gainfield_out/<subcommand>.
"""

import argparse
import dataclasses
import os
import sys

from .campaign import (ExperimentConfig, final_point_audit, parse_algorithm,
                       resolve_seeds, run_campaign, speedup_comparison)
from .channel import serialize, to_json, write_instance

__all__ = ["main", "build_parser", "resolve_output_dir"]

OUTPUT_ROOT_VAR = "GAINFIELD_OUTPUT_DIR"

# Cells and bands checked after a campaign that matches the benchmark
# shape (the table of mean convergence cycles per algorithm/topology).
_TABLE_BANDS = {("sync_sgp", "NW1"): (17.0, 50.0),
                ("sync_sgp", "NW2"): (42.0, 127.0)}


def resolve_output_dir(flag_value, config_value, subcommand) -> str:
    if flag_value:
        return flag_value
    if config_value:
        return config_value
    root = os.environ.get(OUTPUT_ROOT_VAR) or "gainfield_out"
    return os.path.join(root, subcommand)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """Flags mirroring ExperimentConfig; None means 'not given' so the
    flag can overlay a config file without clobbering its values."""
    p.add_argument("--config", metavar="FILE",
                   help="JSON config file; explicit flags override it")
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-antennas", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--coupling",
                   help="coupling profile kind (default chain_geometric)")
    p.add_argument("--cross-scale", type=float)
    p.add_argument("--seeds", help="comma-separated explicit seed list")
    p.add_argument("--n-seeds", type=int,
                   help="number of usable seeds counted up from 0")
    p.add_argument("--algorithms",
                   help="comma-separated selectors, e.g. "
                        "'sync_sgp,async_sgp(T=1),dp(M=1),max_vsinr'")
    p.add_argument("--topologies", help="comma-separated subset of NW1,NW2,NW3")
    p.add_argument("--delay", type=int, help="backhaul link delay in ticks")
    p.add_argument("--gamma", type=float, help="ascent step scale")
    p.add_argument("--mu", type=float, help="direct-gain domain floor")
    p.add_argument("--speedups", choices=("plain", "s1", "s1s2"),
                   help="scaling mode for simulated runs")
    p.add_argument("--n-max", type=int, help="last simulated clock tick")
    p.add_argument("--rank-tol", type=float)
    p.add_argument("--projection-tol", type=float)
    p.add_argument("--oracle-restarts", type=int)
    p.add_argument("--output-dir")


def _parse_list(text, convert):
    return tuple(convert(part) for part in text.split(",") if part.strip())


def load_config(args, subcommand) -> ExperimentConfig:
    """ExperimentConfig from defaults, config file, then flags."""
    if args.config:
        with open(args.config) as fh:
            config = ExperimentConfig.from_json(fh.read())
    else:
        config = ExperimentConfig()
    overrides = {}
    plain = ("n_users", "n_antennas", "sigma2", "coupling", "cross_scale",
             "n_seeds", "delay", "gamma", "mu", "speedups", "n_max",
             "rank_tol", "projection_tol", "oracle_restarts")
    for name in plain:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.seeds is not None:
        overrides["seeds"] = _parse_list(args.seeds, int)
    if args.algorithms is not None:
        overrides["algorithms"] = _parse_list(args.algorithms, str.strip)
    if args.topologies is not None:
        overrides["topologies"] = _parse_list(args.topologies, str.strip)
    overrides["output_dir"] = resolve_output_dir(
        args.output_dir, config.output_dir, subcommand)
    return dataclasses.replace(config, **overrides)


def _report(checks) -> int:
    """Print one line per check; nonzero iff any failed."""
    failed = 0
    for name, ok, detail in checks:
        marker = "[PASS]" if ok else "[FAIL]"
        suffix = f" ({detail})" if detail else ""
        print(f"{marker} {name}{suffix}")
        failed += not ok
    return 1 if failed else 0


def _table_checks(summary):
    """Ordering and band checks for a benchmark-shaped campaign: all
    three topologies with sync and both async periods over at least
    100 seeds at the default instance parameters."""
    cfg = summary.config
    default = ExperimentConfig()
    shape_fields = ("n_users", "n_antennas", "sigma2", "coupling",
                    "cross_scale", "delay", "gamma", "mu", "speedups",
                    "n_max")
    benchmark_shape = all(
        getattr(cfg, f) == getattr(default, f) for f in shape_fields)
    labels = {parse_algorithm(a).label for a in cfg.algorithms}
    needed = {"sync_sgp", "async_sgp(T=1)", "async_sgp(T=3)"}
    if (not benchmark_shape or not needed <= labels
            or set(cfg.topologies) != {"NW1", "NW2", "NW3"}
            or len(summary.seeds) < 100):
        print("[SKIP] convergence-table checks (campaign is not the "
              "benchmark shape: defaults, NW1-NW3, sync + async T=1 and "
              "T=3, at least 100 seeds)")
        return []

    def cycles(alg, topo):
        return summary.cell(alg, topo).cycles_mean

    checks = [
        ("NW1 ordering: sync < async(T=1) < async(T=3) mean cycles",
         cycles("sync_sgp", "NW1") < cycles("async_sgp(T=1)", "NW1")
         < cycles("async_sgp(T=3)", "NW1"),
         f"{cycles('sync_sgp', 'NW1'):.2f} < "
         f"{cycles('async_sgp(T=1)', 'NW1'):.2f} < "
         f"{cycles('async_sgp(T=3)', 'NW1'):.2f}"),
        ("NW2 ordering: async(T=1) < sync mean cycles",
         cycles("async_sgp(T=1)", "NW2") < cycles("sync_sgp", "NW2"),
         f"{cycles('async_sgp(T=1)', 'NW2'):.2f} < "
         f"{cycles('sync_sgp', 'NW2'):.2f}"),
        ("NW3 penalty: async(T=1) mean exceeds its NW2 mean",
         cycles("async_sgp(T=1)", "NW3") > cycles("async_sgp(T=1)", "NW2"),
         f"{cycles('async_sgp(T=1)', 'NW3'):.2f} > "
         f"{cycles('async_sgp(T=1)', 'NW2'):.2f}"),
    ]
    for topo in ("NW1", "NW2", "NW3"):
        checks.append((
            f"{topo}: async(T=1) < async(T=3) mean cycles",
            cycles("async_sgp(T=1)", topo) < cycles("async_sgp(T=3)", topo),
            f"{cycles('async_sgp(T=1)', topo):.2f} < "
            f"{cycles('async_sgp(T=3)', topo):.2f}"))
    for (alg, topo), (lo, hi) in _TABLE_BANDS.items():
        value = cycles(alg, topo)
        checks.append((
            f"{topo} {alg} mean cycles within [{lo:g}, {hi:g}]",
            lo <= value <= hi, f"mean={value:.2f}"))
    if "max_vsinr" in labels:
        base = summary.cell("max_vsinr", cfg.topologies[0]).u_bits_mean
        for label in sorted(labels):
            if parse_algorithm(label).simulated:
                for topo in cfg.topologies:
                    value = summary.cell(label, topo).u_bits_mean
                    checks.append((
                        f"{label} on {topo} beats max_vsinr mean utility",
                        value > base, f"{value:.6f} > {base:.6f}"))
    return checks


def _counts_checks(summary):
    n_seeds = len(summary.seeds)
    ok = all(c.n_runs == n_seeds
             and c.n_converged + c.n_not_converged + c.n_failed == c.n_runs
             for c in summary.cells)
    return [("per-cell counts reconcile with the seed list", ok,
             f"{len(summary.cells)} cells x {n_seeds} seeds")]


def _cmd_gen(args) -> int:
    config = load_config(args, "gen")
    out = os.path.join(config.output_dir, "instances")
    os.makedirs(out, exist_ok=True)
    seeds = resolve_seeds(config)
    fmt = args.format
    deterministic = True
    for seed in seeds:
        inst = config.instance(seed)
        deterministic &= serialize(inst) == serialize(config.instance(seed))
        if fmt in ("bin", "both"):
            write_instance(inst, os.path.join(out, f"seed{seed:04d}.bin"))
        if fmt in ("json", "both"):
            write_instance(inst, os.path.join(out, f"seed{seed:04d}.json"))
    print(f"wrote {len(seeds)} instance(s) under {out}")
    return _report([("instance generation is deterministic",
                     deterministic, f"{len(seeds)} seeds")])


def _cmd_run(args) -> int:
    config = load_config(args, "run")
    progress = None
    if args.verbose:
        progress = lambda line: print(line, file=sys.stderr)  # noqa: E731
    summary = run_campaign(config, progress=progress)
    print(f"campaign finished: {len(summary.records)} runs, artifacts "
          f"under {config.output_dir}")
    checks = _counts_checks(summary) + _table_checks(summary)
    return _report(checks)


def _cmd_speedups(args) -> int:
    config = load_config(args, "speedups")
    # The overlay's reference setup is a mesh with delay 1; --delay
    # overrides it, independent of the campaign delay in config files.
    delay = args.delay if args.delay is not None else 1
    report = speedup_comparison(config, seed=args.seed, delay=delay)
    print(f"speed-up comparison on seed {report.seed}, mesh delay "
          f"{report.delay}, artifacts under {config.output_dir}")
    for mode in ("plain", "s1", "s1s2"):
        print(f"  {mode}: stability_cycle={report.stability_cycles[mode]} "
              f"final={report.final_u_bits[mode]:.9f} "
              f"residual={report.residuals[mode]:.3g}")
    return _report(report.checks)


def _cmd_audit(args) -> int:
    out = resolve_output_dir(args.output_dir, "", "run")
    report = final_point_audit(out)
    print(f"audited {report.n_runs} stored final points under {out}")
    print(f"  mean second eigenvalue: {report.lambda2_mean:.4g}")
    print(f"  mean polish refinement: {report.refinement_mean_bits:.4g} bits")
    print(f"  worst stationarity residual: {report.residual_max:.4g}")
    return _report(report.checks)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gainfield",
        description="Distributed beamforming experiments: generate "
                    "channel instances, run seeded campaigns, compare "
                    "scaling speed-ups, audit limit points.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="write channel instance files")
    _add_config_flags(p_gen)
    p_gen.add_argument("--format", choices=("bin", "json", "both"),
                       default="both")
    p_gen.set_defaults(func=_cmd_gen)

    p_run = sub.add_parser("run", help="execute a full campaign")
    _add_config_flags(p_run)
    p_run.add_argument("--verbose", action="store_true",
                       help="stream per-run progress to stderr")
    p_run.set_defaults(func=_cmd_run)

    p_speed = sub.add_parser("speedups",
                             help="compare scaling modes on one instance")
    _add_config_flags(p_speed)
    p_speed.add_argument("--seed", type=int,
                         help="channel seed (default: first usable)")
    p_speed.set_defaults(func=_cmd_speedups)

    p_audit = sub.add_parser("audit",
                             help="audit stored final points of a campaign")
    p_audit.add_argument("--output-dir",
                         help="campaign directory (default resolution "
                              "applies)")
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
