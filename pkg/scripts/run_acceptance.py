"""Run the long acceptance experiments into a fixed directory.

    python scripts/run_acceptance.py [attack2p lmattack rarl] [--dir acceptance]

Completed runs (manifest status "complete") are skipped, so the script can be
restarted after an interruption.  tests/test_acceptance.py reads the results
from the same directory (override with ADVPOL_ACCEPTANCE_DIR).
"""

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from advpol.config import load_config
from advpol.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]
KINDS = ("lmattack", "rarl", "attack2p")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("kinds", nargs="*", default=list(KINDS))
    ap.add_argument("--dir", default=os.environ.get("ADVPOL_ACCEPTANCE_DIR", str(ROOT / "acceptance")))
    ap.add_argument("--force", action="store_true", help="rerun even if a completed run exists")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    base = Path(args.dir)
    for kind in args.kinds:
        run_dir = base / kind
        manifest = run_dir / "manifest.json"
        if manifest.exists() and not args.force:
            if json.loads(manifest.read_text()).get("status") == "complete":
                print(f"{kind}: complete run found at {run_dir}, skipping")
                continue
        if run_dir.exists():
            shutil.rmtree(run_dir)
        cfg = load_config(ROOT / "configs" / f"{kind}.cfg")
        run_experiment(cfg, run_dir)
        print(f"{kind}: done -> {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
