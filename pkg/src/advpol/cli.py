"""``advpol`` command line: run, rerun, aggregate and plot experiments."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, apply_overrides, build_config, default_config, materialize, parse_lines

# subcommand flag -> config key
FLAG_KEYS = {
    "attack2p": {"mode": "adversary.mode", "target_pool": "target.pool", "steps": "adversary.steps",
                 "eval_interval": "adversary.eval_interval", "seed": "seed"},
    "lmattack": {"episodes": "attack.episodes", "seed": "seed", "alpha": "attack.alpha",
                 "forbidden_set": "lm.forbidden"},
    "rarl": {"condition": "rarl.condition", "agents": "rarl.agents", "steps": "rarl.steps", "delta": "rarl.delta",
             "grid_lo": "rarl.grid_lo", "grid_hi": "rarl.grid_hi", "seed": "seed"},
}


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required, help="flat key=value config file")
    p.add_argument("--out-dir", help="artifact directory (default: timestamped under $ADVPOL_OUT_ROOT)")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, e.g. ppo.lr=1e-3")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advpol", description="White-box adversarial policy experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack2p", help="two-player soccer attack comparison")
    _common(p)
    p.add_argument("--mode", help="comma list of blackbox, action_value, latent, full (or 'all')")
    p.add_argument("--target-pool", help="directory of saved targets to attack instead of pretraining")
    p.add_argument("--steps", type=int, help="adversary step budget")
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("lmattack", help="latent-space attack on the tiny transformer")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--white-box", dest="box", action="store_const", const="whitebox")
    g.add_argument("--black-box", dest="box", action="store_const", const="blackbox")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--forbidden-set", help="comma list of forbidden token ids")

    p = sub.add_parser("rarl", help="robust adversarial training and domain-shift grid")
    _common(p)
    p.add_argument("--condition", help="comma list of rl_control, rarl, wb_rarl")
    p.add_argument("--agents", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--grid-lo", type=float)
    p.add_argument("--grid-hi", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run whatever experiment a config names")
    _common(p, config_required=True)

    p = sub.add_parser("rerun", help="re-execute a saved run and compare its CSVs byte for byte")
    p.add_argument("manifest", help="manifest.json or its run directory")
    p.add_argument("--out-dir")

    p = sub.add_parser("aggregate", help="mean and SEM across per-run curve CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--column", help="value column (default: second column)")
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("plot", help="emit gnuplot data blocks from a curve CSV")
    p.add_argument("csv")
    p.add_argument("--group-by", default="mode")
    p.add_argument("--x")
    p.add_argument("--y", default="mean")
    p.add_argument("--err", default="sem")
    return ap


def config_from_args(args) -> "object":
    kind = args.command
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        items = parse_lines(text, str(path))
    elif kind == "run":
        raise ConfigError("run needs --config")
    else:
        items = parse_lines(materialize(default_config(kind)), "<defaults>")
    if kind != "run":
        if "experiment" in items and items["experiment"][0] != kind:
            raise ConfigError(f"config is for {items['experiment'][0]!r}, not {kind!r}")
        items.setdefault("experiment", (kind, "<subcommand>"))
        flags = []
        for attr, key in FLAG_KEYS[kind].items():
            v = getattr(args, attr, None)
            if v is not None:
                flags.append(f"{key}={v}")
        if kind == "lmattack" and args.box:
            flags.append(f"attack.mode={args.box}")
        items = apply_overrides(items, flags)
    items = apply_overrides(items, args.overrides)
    if args.out_dir:
        items["out_dir"] = (args.out_dir, "--out-dir")
    return build_config(items)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("attack2p", "lmattack", "rarl", "run"):
            from .experiment import run_experiment

            cfg = config_from_args(args)
            run_dir = run_experiment(cfg)
            print(run_dir)
            return 0
        if args.command == "rerun":
            from .experiment import rerun

            new_dir, bad = rerun(args.manifest, args.out_dir)
            print(new_dir)
            if bad:
                print("CSV outputs differ: " + ", ".join(bad), file=sys.stderr)
                return 1
            print("all CSV outputs identical")
            return 0
        if args.command == "aggregate":
            from .ppo import fmt
            from .stats import aggregate_curves, read_curve_csv

            rows = aggregate_curves([read_curve_csv(p, args.column) for p in args.csvs])
            fh = open(args.out, "w", newline="") if args.out else sys.stdout
            try:
                w = csv.writer(fh)
                w.writerow(["env_steps", "mean", "sem", "n"])
                for r in rows:
                    w.writerow([r["env_steps"], fmt(r["mean"]), fmt(r["sem"]), r["n"]])
            finally:
                if args.out:
                    fh.close()
            return 0
        if args.command == "plot":
            from .plot import gnuplot_blocks

            sys.stdout.write(gnuplot_blocks(args.csv, args.group_by, args.x, args.y, args.err))
            return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
