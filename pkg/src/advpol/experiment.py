"""Run an experiment into its own artifact directory with a manifest, and
rerun one from a saved manifest."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import time
import traceback
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, materialize, parse_config

log = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
SEED_TREE = "master -> module tag -> worker/agent/target index -> stream name (numpy SeedSequence spawn keys)"
NOTES = {
    "attack2p": "desk scale: one avatar per side, short pretraining phases and adversary budgets",
    "lmattack": "desk scale: 32-wide 4-block TinyLM with random frozen weights, perturbation after block 2",
    "rarl": "desk scale: 1-D ParamRunner; grid multipliers evenly spaced over [grid_lo, grid_hi]",
}


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def source_hash(root: Path = PACKAGE_DIR) -> str:
    """Git-style hash over the package sources: a tree-like digest of the
    sorted ``(relative path, blob hash)`` pairs."""
    entries = []
    for p in sorted(root.rglob("*.py")):
        entries.append(f"{p.relative_to(root).as_posix()} {git_blob_hash(p.read_bytes())}")
    body = "\n".join(entries).encode()
    return hashlib.sha1(b"tree %d\0" % len(body) + body).hexdigest()


def out_root() -> Path:
    return Path(os.environ.get("ADVPOL_OUT_ROOT", "runs"))


def new_run_dir(cfg: ExperimentConfig, root: Path | None = None) -> Path:
    if cfg.out_dir:
        base = Path(cfg.out_dir)
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        base = (root or out_root()) / f"{cfg.kind}-{stamp}-seed{cfg.seed}"
    path, i = base, 1
    while path.exists() and any(path.iterdir()):
        path = base.with_name(f"{base.name}-{i}")
        i += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dispatch(cfg: ExperimentConfig, run_dir: Path) -> dict:
    if cfg.kind == "attack2p":
        from .attack2p import run_attack2p
        return run_attack2p(cfg.exp, run_dir)
    if cfg.kind == "lmattack":
        from .lmattack import run_lmattack
        return run_lmattack(cfg.exp, run_dir)
    if cfg.kind == "rarl":
        from .rarl import rarl_study
        return rarl_study(cfg.exp, run_dir)
    raise ValueError(f"unknown experiment kind {cfg.kind}")


def csv_digests(run_dir: Path) -> dict[str, str]:
    return {p.relative_to(run_dir).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(run_dir.rglob("*.csv"))}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_experiment(cfg: ExperimentConfig, run_dir: str | Path | None = None, root: Path | None = None) -> Path:
    """Run ``cfg`` into a fresh directory.  Returns the directory.  On failure
    the partial artifacts stay, an ``ERROR`` file records the traceback, and
    the exception propagates."""
    run_dir = Path(run_dir) if run_dir else new_run_dir(cfg, root)
    run_dir.mkdir(parents=True, exist_ok=True)
    text = materialize(cfg)
    (run_dir / "config.cfg").write_text(text)
    manifest = {
        "experiment": cfg.kind,
        "master_seed": cfg.seed,
        "config": text,
        "source_hash": source_hash(),
        "seed_tree": SEED_TREE,
        "notes": NOTES.get(cfg.kind, ""),
        "started": _dt.datetime.now().isoformat(timespec="seconds"),
        "status": "running",
    }
    mpath = run_dir / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2))
    t0 = time.perf_counter()
    try:
        summary = _dispatch(cfg, run_dir)
    except BaseException as e:
        (run_dir / "ERROR").write_text(f"{type(e).__name__}: {e}\n\n{traceback.format_exc()}")
        manifest.update(status="failed", error=f"{type(e).__name__}: {e}", wall_clock_s=time.perf_counter() - t0)
        mpath.write_text(json.dumps(manifest, indent=2))
        raise
    manifest.update(
        status="complete",
        finished=_dt.datetime.now().isoformat(timespec="seconds"),
        wall_clock_s=time.perf_counter() - t0,
        outputs=csv_digests(run_dir),
        summary=_jsonable(summary),
    )
    mpath.write_text(json.dumps(manifest, indent=2))
    log.info("%s run complete in %.1fs: %s", cfg.kind, manifest["wall_clock_s"], run_dir)
    return run_dir


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())


def rerun(manifest_path: str | Path, run_dir: str | Path | None = None, root: Path | None = None):
    """Re-execute the run recorded in a manifest.  Returns ``(new_dir,
    mismatches)`` where ``mismatches`` lists CSVs whose bytes differ or that
    exist on only one side."""
    manifest = load_manifest(manifest_path)
    cfg = parse_config(manifest["config"], "<manifest>")
    cfg.out_dir = ""
    if manifest.get("source_hash") != source_hash():
        log.warning("package sources changed since the original run; outputs may differ")
    new_dir = run_experiment(cfg, run_dir, root)
    old = manifest.get("outputs", {})
    new = load_manifest(new_dir)["outputs"]
    mismatches = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    return new_dir, mismatches
