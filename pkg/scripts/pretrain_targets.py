"""Pretrain MiniSoccer targets into a pool directory for ``advpol attack2p --target-pool``.

    python scripts/pretrain_targets.py pool/ --count 5 --config configs/attack2p.cfg

Each target is saved as ``target{i}.ckpt`` plus a JSON sidecar holding its
provenance and parameter hash.  Targets that fail the competence gate are
saved too but marked incompetent, and the pool loader skips them.
"""

import argparse
import logging
import sys
from pathlib import Path

from advpol.attack2p import pretrain_target
from advpol.config import load_config
from advpol.seeding import derive_seed

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=5, help="competent targets wanted")
    ap.add_argument("--config", default=str(ROOT / "configs" / "attack2p.cfg"))
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    exp = load_config(args.config, args.overrides).exp
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    good = attempt = 0
    while good < args.count and attempt < exp.target.max_attempts:
        # same seed derivation as run_attack2p, so pools match in-run pretraining
        tseed = int(derive_seed(exp.seed, "target-seed", attempt).generate_state(1)[0])
        art = pretrain_target(exp, tseed, out / f"target{attempt}_metrics.csv")
        art.save(out / f"target{attempt}")
        good += art.competent
        print(f"target{attempt}: seed {tseed} vs bot {art.provenance['final_vs_bot']:.3f} "
              f"{'competent' if art.competent else 'failed gate'}")
        attempt += 1
    if good < args.count:
        print(f"only {good} competent targets after {attempt} attempts", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
