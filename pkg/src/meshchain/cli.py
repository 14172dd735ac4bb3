"""Command line: ``meshchain run|compare|synth-topology|place``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import ConfigError, compare_placements, load_config, run_experiment
from .hlf import HlfConfig
from .placement import DEFAULT_AVAILABILITY_THRESHOLD, PlacementError, basp, random_placement
from .poa import PoaConfig
from .topology import DEFAULT_PROFILE, TopologyError, qmpsu_fixture, read_topology, synth_topology, write_topology


def _parse_params(tokens: list[str]) -> tuple[int, int | None, dict]:
    """``nodes=85 seed=3 bw_mean=13.6 ...``; other keys are profile fields."""
    nodes, seed, prof = 85, None, {}
    fields = {f.name: f for f in dataclasses.fields(DEFAULT_PROFILE)}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ConfigError(f"synth parameter {tok!r}: expected key=value")
        try:
            if key in ("nodes", "n"):
                nodes = int(value)
            elif key == "seed":
                seed = int(value)
            elif key in fields and not isinstance(getattr(DEFAULT_PROFILE, key), tuple):
                prof[key] = float(value)
            elif key in fields:
                prof[key] = tuple(float(x) for x in value.split(","))
            else:
                raise ConfigError(f"synth parameter {key!r}: unknown")
        except ValueError:
            raise ConfigError(f"synth parameter {key}: cannot parse {value!r}") from None
    return nodes, seed, prof


def _roles(spec: str) -> list[str] | None:
    if spec == "hlf":
        return HlfConfig().roles()
    if spec == "poa":
        return PoaConfig().roles()
    if spec == "sites":
        return None
    return [r.strip() for r in spec.split(",") if r.strip()]


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.repetitions is not None:
        cfg = replace(cfg, repetitions=args.repetitions)
    report = run_experiment(cfg, record_trace=args.trace is not None)
    out = args.out or cfg.output
    if out:
        for p in report.write(out, args.trace):
            print(f"wrote {p}", file=sys.stderr)
    else:
        sys.stdout.write(report.runs_csv())
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    methods = tuple(m.strip() for m in args.methods.split(","))
    if len(methods) != 2:
        raise ConfigError("--methods: give exactly two methods, e.g. basp,random")
    cmp = compare_placements(cfg, methods, args.seeds)
    text = cmp.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"mean gain {cmp.mean_gain:.1f}% ({methods[0]} vs {methods[1]}), "
          f"{methods[0]} better in {cmp.win_rate:.0%} of seeds", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    nodes, seed, prof = _parse_params(args.params)
    if args.seed is not None:
        seed = args.seed
    t = synth_topology(nodes, seed or 0, replace(DEFAULT_PROFILE, **prof))
    write_topology(t, args.output)
    return 0


def cmd_place(args) -> int:
    t = qmpsu_fixture() if args.topology == "qmpsu" else read_topology(args.topology)
    roles = _roles(args.roles)
    k = args.k or (len(roles) if roles else 1)
    seed = args.seed or 0
    if args.method == "basp":
        plan = basp(t, k, args.threshold, seed, roles)
    else:
        plan = random_placement(t, k, seed, roles)
    Path(args.output).write_text(plan.dumps(), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meshchain", description="Permissioned blockchains over mesh networks, simulated.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override experiment.seed")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", help="CSV path (also writes .tx.csv and .cpu.csv next to it)")
    p.add_argument("--trace", help="write the event trace of every run here")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="paired-seed placement comparison")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="first seed (overrides experiment.seed)")
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--methods", default="basp,random")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("synth-topology", help="write a seeded synthetic mesh")
    p.add_argument("params", nargs="*", help="nodes=N seed=S and profile overrides such as bw_mean=13.6")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("place", help="compute a placement plan for a topology file ('qmpsu' for the fixture)")
    p.add_argument("topology")
    p.add_argument("--method", choices=("basp", "random"), default="basp")
    p.add_argument("--k", type=int, help="number of sites (default: one per role)")
    p.add_argument("--roles", default="hlf", help="hlf, poa, sites, or a comma-separated role list")
    p.add_argument("--threshold", type=float, default=DEFAULT_AVAILABILITY_THRESHOLD)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_place)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TopologyError, PlacementError, OSError) as exc:
        print(f"meshchain: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
