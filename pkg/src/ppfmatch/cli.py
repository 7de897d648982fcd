"""Command-line entry point.

Exit codes: 0 success, 1 unreadable input, 2 empty result (or failed
self-test), 3 configuration or weight mismatch.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from ppfmatch.config import PipelineConfig, load_config
from ppfmatch.errors import ConfigError, DegenerateGeometryError, ParseError, WeightsError
from ppfmatch.linalg import ModelWeights

EXIT_OK, EXIT_PARSE, EXIT_EMPTY, EXIT_MISMATCH = 0, 1, 2, 3


def summary(**fields) -> str:
    """One machine-parseable ``key=value`` line."""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v).replace(" ", "_")
    return " ".join(f"{k}={fmt(v)}" for k, v in fields.items())


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        updates["mode"] = args.mode
    return cfg.with_updates(**updates) if updates else cfg


def _weights(args, cfg: PipelineConfig) -> ModelWeights:
    from ppfmatch.weights import init_random_weights, load_weights
    if args.weights:
        return load_weights(args.weights, cfg)
    return init_random_weights(cfg, cfg.seed)


def _load_cloud(path, args, cfg):
    from ppfmatch.io import read_cloud
    from ppfmatch.pipeline import prepare_cloud
    points, normals = read_cloud(path)
    return prepare_cloud(points, normals, args.estimate_normals, cfg)


def cmd_gen(args) -> int:
    from ppfmatch.io import write_ground_truth, write_xyz
    from ppfmatch.synthetic import SyntheticPairSpec, generate_pair
    deformation = args.deformation
    if args.mode == "nonrigid" and deformation == 0:
        deformation = 0.05
    spec = SyntheticPairSpec(n=args.n, shape=args.shape, noise=args.noise, overlap=args.overlap,
                             rotation="identity" if args.identity else "uniform",
                             max_translation=0.0 if args.identity else args.max_translation,
                             deformation=deformation if args.mode == "nonrigid" else 0.0)
    seed = 0 if args.seed is None else args.seed
    p, q, truth = generate_pair(spec, seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_xyz(out / "src.xyz", p.points, None if args.no_normals else p.normals)
    write_xyz(out / "tgt.xyz", q.points, None if args.no_normals else q.normals)
    write_ground_truth(out / "gt.json", truth)
    print(summary(status="ok", output=out, n_src=len(p), n_tgt=len(q),
                  gt_pairs=len(truth.correspondences), mode=truth.meta["mode"], seed=seed))
    return EXIT_OK


def cmd_init_weights(args) -> int:
    from ppfmatch.weights import init_random_weights, save_weights
    cfg = _config(args)
    weights = init_random_weights(cfg, cfg.seed)
    save_weights(weights, args.output)
    print(summary(status="ok", output=args.output, tensors=len(weights), seed=cfg.seed,
                  config_hash=weights.config_hash[:12]))
    return EXIT_OK


def _run_match(args, cfg):
    from ppfmatch.pipeline import match_pair
    weights = _weights(args, cfg)
    cloud_p = _load_cloud(args.source, args, cfg)
    cloud_q = _load_cloud(args.target, args, cfg)
    start = time.perf_counter()
    result = match_pair(cloud_p, cloud_q, weights, cfg)
    return cloud_p, cloud_q, result, time.perf_counter() - start


def cmd_match(args) -> int:
    from ppfmatch.io import write_correspondences
    cfg = _config(args)
    _, _, result, elapsed = _run_match(args, cfg)
    corr = result.correspondences
    out = args.output or "correspondences.txt"
    write_correspondences(out, corr, {"mode": cfg.mode, "config_hash": cfg.config_hash(),
                                      "source": str(args.source), "target": str(args.target)})
    status = "ok" if len(corr) else "empty"
    print(summary(status=status, correspondences=len(corr), superpoints=len(result.globals[0]),
                  output=out, mode=cfg.mode, time_s=elapsed))
    return EXIT_OK if len(corr) else EXIT_EMPTY


def cmd_register(args) -> int:
    from ppfmatch.io import read_cloud, read_correspondences
    from ppfmatch.metrics import ransac_registration, rotation_error
    cfg = _config(args)
    if args.correspondences:
        corr, _ = read_correspondences(args.correspondences)
        src = read_cloud(args.source)[0]
        tgt = read_cloud(args.target)[0]
    else:
        cloud_p, cloud_q, result, _ = _run_match(args, cfg)
        corr, src, tgt = result.correspondences, cloud_p.points, cloud_q.points
    corr.check_bounds(len(src), len(tgt))
    if len(corr) < 3:
        print(summary(status="empty", correspondences=len(corr)))
        return EXIT_EMPTY
    dist = args.inlier_dist if args.inlier_dist is not None else cfg.metrics.tau1_rigid
    try:
        T, mask = ransac_registration(corr, src, tgt, dist, args.ransac_iters, cfg.seed)
    except DegenerateGeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(summary(status="empty", correspondences=len(corr), inliers=0))
        return EXIT_EMPTY
    report = {"transform": T.as_matrix().tolist(), "inliers": int(mask.sum()),
              "correspondences": len(corr), "seed": cfg.seed}
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2))
    angle = float(np.degrees(rotation_error(T.R, np.eye(3))))
    print(summary(status="ok", correspondences=len(corr), inliers=int(mask.sum()),
                  rotation_deg=angle, translation_m=float(np.linalg.norm(T.t)),
                  transform=",".join(f"{v:.9g}" for v in T.as_matrix()[:3].ravel())))
    return EXIT_OK


def cmd_eval(args) -> int:
    from ppfmatch.evaluate import PairJob, run_eval
    cfg = _config(args)
    base_seed = cfg.seed
    if args.data:
        dirs = sorted(p for p in Path(args.data).iterdir() if (p / "gt.json").exists())
        if not dirs:
            raise ParseError(f"{args.data}: no pair folders with gt.json")
        jobs = [PairJob(i, base_seed + i, directory=str(d)) for i, d in enumerate(dirs)]
    else:
        deformation = args.deformation if cfg.mode == "nonrigid" else 0.0
        if cfg.mode == "nonrigid" and deformation == 0:
            deformation = 0.05
        spec = {"n": args.n, "shape": args.shape, "noise": args.noise, "overlap": args.overlap,
                "deformation": deformation}
        jobs = [PairJob(i, base_seed + i, spec=spec) for i in range(args.pairs)]
    if args.weights:
        from ppfmatch.weights import load_weights
        load_weights(args.weights, cfg)     # fail fast before fanning out
    report = run_eval(jobs, cfg, args.weights, cfg.seed, args.jobs, args.estimate_normals)
    text = json.dumps(_json_safe(report), indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text)
        print(summary(status="ok", output=args.output,
                      **{k: v for k, v in report["aggregate"].items()}))
    else:
        print(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from ppfmatch.selftest import format_table, timed_selftest
    cfg = _config(args)
    weights = _weights(args, cfg) if args.weights else None
    results, elapsed = timed_selftest(weights=weights, cfg=cfg, seed=cfg.seed)
    print(format_table(results))
    failed = sum(not r.passed for r in results)
    print(summary(status="pass" if not failed else "fail", checks=len(results), failed=failed,
                  time_s=elapsed))
    return EXIT_OK if not failed else EXIT_EMPTY


def cmd_bench(args) -> int:
    from ppfmatch.bench import format_bench, run_bench
    rows = run_bench(tuple(args.widths), args.n, args.k, args.repeats, 0 if args.seed is None else args.seed)
    print(format_bench(rows))
    if args.output:
        Path(args.output).write_text(json.dumps(rows, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="seed for weights, sampling and RANSAC")
    common.add_argument("--mode", choices=["rigid", "nonrigid"])
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--weights", help="weight file; random weights from --seed when omitted")
    model.add_argument("--estimate-normals", action="store_true",
                       help="estimate normals for clouds that carry none")

    parser = argparse.ArgumentParser(prog="ppfmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic pair with ground truth")
    p.add_argument("--output", required=True, help="output folder")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--shape", choices=["sphere", "box", "composite"], default="composite")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--overlap", type=float, default=1.0)
    p.add_argument("--max-translation", type=float, default=1.0)
    p.add_argument("--deformation", type=float, default=0.0)
    p.add_argument("--identity", action="store_true", help="no rotation or translation")
    p.add_argument("--no-normals", action="store_true", help="write points only")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("init-weights", parents=[common], help="write seeded random weights")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_init_weights)

    for name, func, text in (("match", cmd_match, "match two clouds"),
                             ("register", cmd_register, "match, then estimate a rigid transform")):
        p = sub.add_parser(name, parents=[common, model], help=text)
        p.add_argument("source")
        p.add_argument("target")
        p.add_argument("--output")
        p.set_defaults(func=func)
        if name == "register":
            p.add_argument("--correspondences", help="reuse a correspondence file instead of matching")
            p.add_argument("--ransac-iters", type=int, default=50_000)
            p.add_argument("--inlier-dist", type=float)

    p = sub.add_parser("eval", parents=[common, model], help="metrics over synthetic or stored pairs")
    p.add_argument("--data", help="folder of pair folders written by 'gen'")
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--shape", choices=["sphere", "box", "composite"], default="composite")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--overlap", type=float, default=0.7)
    p.add_argument("--deformation", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--output", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", parents=[common, model], help="run the invariant suite")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("bench", parents=[common], help="time PAM against a naive loop")
    p.add_argument("--widths", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, WeightsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
