"""``artpose`` command line: synth, estimate, eval.

Exit codes: 0 success, 1 invalid input or configuration, 2 estimation
failure, 3 file I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .assets import clamp_urdf_path
from .config import ConfigError, RunConfig
from .kinematics import URDFError, load_urdf
from .methods import METHODS, estimate
from .metrics import SuiteReport, SuiteRow, evaluate
from .observation import (
    HeatmapFormatError,
    load_ground_truth,
    load_scene,
    make_scene,
    save_scene,
)
from .results import EstimationError, EstimationResult

log = logging.getLogger("artpose")

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION, EXIT_IO = 0, 1, 2, 3


class InputError(Exception):
    """Missing or unreadable input files."""


def scene_seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def find_scenes(root):
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    if not root.is_dir():
        raise InputError(f"scene directory not found: {root}")
    dirs = sorted(p.parent for p in root.glob("*/manifest.json"))
    if not dirs:
        missing = sorted(str(p / "manifest.json") for p in root.iterdir() if p.is_dir()) or [str(root / "manifest.json")]
        raise InputError("no scene manifests found; missing: " + ", ".join(missing))
    return dirs


def _urdf(cfg):
    return cfg.path("urdf") or clamp_urdf_path()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig):
    model = load_urdf(_urdf(cfg))
    out = cfg.path("out")
    n = cfg.doc["synth"]["n_scenes"]
    regime = cfg.doc["synth"]["regime"]
    written = []
    for i, s in enumerate(scene_seeds(cfg.seed, n)):
        scene = make_scene(model, s, regime, cfg.camera(), scene_id=f"scene_{i:04d}", urdf=str(_urdf(cfg)))
        written.append(save_scene(scene, out / scene.scene_id))
    (out / "synth_config.json").write_text(cfg.dumps())
    log.info("wrote %d scenes to %s", len(written), out)
    return written


def _estimate_one(cfg, scene_dir, out):
    scene = load_scene(scene_dir)
    res = estimate(
        cfg.method,
        scene.model,
        scene.observation,
        seed=cfg.seed,
        n_particles=cfg.n_particles,
        n_iterations=cfg.n_iterations,
        potentials=cfg.potentials(),
        icp=cfg.icp(),
        base=cfg.inference_base(),
        augment=cfg.augment(),
    )
    res.header = {"scene_id": scene.scene_id, "scene_dir": str(scene_dir), **res.header}
    stem = f"{scene.scene_id}__{cfg.method}__seed{cfg.seed}"
    res.save(out / f"{stem}.json", out / f"{stem}.diag.csv")
    log.info("%s: %s done in %.1f s", scene.scene_id, cfg.method, res.runtime)
    return out / f"{stem}.json"


def cmd_estimate(cfg: RunConfig):
    dirs = find_scenes(cfg.path("scenes"))
    out = cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            return list(pool.map(lambda d: _estimate_one(cfg, d, out), dirs))
    return [_estimate_one(cfg, d, out) for d in dirs]


def cmd_eval(cfg: RunConfig):
    res_dir = cfg.path("results")
    files = sorted(p for p in res_dir.glob("*.json")) if res_dir.is_dir() else []
    if not files:
        raise InputError(f"no result files in {res_dir}")
    scenes_root = cfg.path("scenes")
    cache = {}
    rows = []
    for f in files:
        res = EstimationResult.load(f)
        sid = res.header.get("scene_id")
        if sid is None:
            raise ConfigError(f"{f}: result has no scene_id")
        if sid not in cache:
            sdir = scenes_root / sid
            if not (sdir / "manifest.json").exists():
                raise InputError(f"scene {sid}: manifest not found under {scenes_root}")
            man = json.loads((sdir / "manifest.json").read_text())
            gt_path = sdir / man["ground_truth"]
            if not gt_path.exists():
                raise InputError(f"scene {sid}: missing ground truth {gt_path}")
            model = load_urdf(man["urdf"])
            cache[sid] = (model, load_ground_truth(gt_path, model), man["regime"])
        model, gt, regime = cache[sid]
        names = [p.name for p in model.parts]
        if res.part_names != names:
            raise ConfigError(f"scene {sid}: result parts {res.part_names} do not match ground truth {names}")
        report = evaluate(model, gt, res.poses)
        rows.append(SuiteRow(sid, model.name, res.method, res.seed, regime, report, res.header.get("runtime_s")))
    rows.sort(key=lambda r: (r.scene_id, r.method, r.seed))
    suite = SuiteReport(rows)
    out = cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(suite.to_csv(per_part=True))
    (out / "summary.txt").write_text(suite.summary())
    for method in suite.methods():
        (out / f"curve_{method}.csv").write_text(suite.curve_csv(method))
    sys.stdout.write(suite.summary())
    return suite


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "eval": cmd_eval}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="artpose", description="Articulated object pose estimation by particle message passing.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--seed", type=int)
    common.add_argument("--particles", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", parents=[common], help="synthesize scenes")
    p.add_argument("--urdf", type=Path)
    p.add_argument("--scenes", dest="n_scenes", type=int, help="number of scenes")
    p.add_argument("--regime", choices=("clean", "uncluttered", "cluttered"))

    p = sub.add_parser("estimate", parents=[common], help="estimate part poses for scenes")
    p.add_argument("--scenes", type=Path, help="scene directory or a directory of scenes")

    p = sub.add_parser("eval", parents=[common], help="score results against ground truth")
    p.add_argument("--scenes", type=Path)
    p.add_argument("--results", type=Path)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.override(**{k: v for k, v in vars(args).items() if k not in ("command", "config")})
        if args.print_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        COMMANDS[args.command](cfg)
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (InputError, HeatmapFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, URDFError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
