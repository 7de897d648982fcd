"""Per-pair evaluation and order-independent aggregation."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ppfmatch.config import PipelineConfig, load_config_dict
from ppfmatch.errors import DegenerateGeometryError
from ppfmatch.geom import PointCloudTriplet
from ppfmatch.io import read_cloud, read_ground_truth
from ppfmatch.linalg import ModelWeights
from ppfmatch.metrics import (GroundTruth, feature_matching_recall, inlier_ratio, inlier_ratio_flow,
                              nfmr, ransac_registration, rmse_correspondences, rmse_transform)
from ppfmatch.pipeline import match_pair, prepare_cloud
from ppfmatch.synthetic import SyntheticPairSpec, generate_pair
from ppfmatch.weights import init_random_weights, load_weights


@dataclass(frozen=True)
class PairJob:
    index: int
    seed: int                         # synthetic seed, also the RANSAC seed
    spec: dict | None = None          # synthetic pair spec, or
    directory: str | None = None      # a folder written by ``ppfmatch gen``


def load_pair_dir(path: str | Path, cfg: PipelineConfig, estimate_normals: bool = False
                  ) -> tuple[PointCloudTriplet, PointCloudTriplet, GroundTruth]:
    path = Path(path)
    p_pts, p_nrm = read_cloud(path / "src.xyz")
    q_pts, q_nrm = read_cloud(path / "tgt.xyz")
    return (prepare_cloud(p_pts, p_nrm, estimate_normals, cfg),
            prepare_cloud(q_pts, q_nrm, estimate_normals, cfg),
            read_ground_truth(path / "gt.json"))


def evaluate_pair(cloud_p: PointCloudTriplet, cloud_q: PointCloudTriplet, truth: GroundTruth,
                  weights: ModelWeights, cfg: PipelineConfig, seed: int = 0) -> dict:
    corr = match_pair(cloud_p, cloud_q, weights, cfg).correspondences
    mc = cfg.metrics
    out: dict = {"correspondences": len(corr)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if truth.transform is not None:
            out["inlier_ratio"] = inlier_ratio(corr, cloud_p.points, cloud_q.points, truth.transform,
                                               mc.tau1_rigid)
            rmse1 = rmse2 = math.inf
            if len(corr) >= 3:
                try:
                    T, mask = ransac_registration(corr, cloud_p.points, cloud_q.points, mc.tau1_rigid,
                                                  mc.ransac_max_iters, seed)
                    rmse1 = rmse_correspondences(T, cloud_p.points, cloud_q.points, truth.correspondences)
                    rmse2 = rmse_transform(T, truth.transform, cloud_p.points, mc.rmse2_literal)
                    out["ransac_inliers"] = int(mask.sum())
                except DegenerateGeometryError:
                    pass
            out["rmse_variant1"] = rmse1
            out["rmse_variant2"] = rmse2
        else:
            out["inlier_ratio"] = inlier_ratio_flow(corr, cloud_p.points, cloud_q.points, truth.flow,
                                                    mc.tau1_nonrigid)
            out["nfmr"] = nfmr(corr, truth.correspondences, cloud_p.points, cloud_q.points, truth.flow,
                               mc.tau4_flow, mc.nfmr_k)
    return out


def aggregate(rows: list[dict], cfg: PipelineConfig) -> dict:
    """Dataset-level metrics; input order does not matter."""
    rows = sorted(rows, key=lambda r: r["index"])
    mc = cfg.metrics
    agg = {"pairs": len(rows),
           "mean_inlier_ratio": float(np.mean([r["inlier_ratio"] for r in rows])),
           "feature_matching_recall": feature_matching_recall([r["inlier_ratio"] for r in rows], mc.tau2_fmr)}
    rigid = [r for r in rows if "rmse_variant1" in r]
    if rigid:
        agg["registration_recall"] = float(np.mean([r["rmse_variant1"] < mc.tau3_rmse for r in rigid]))
        agg["registration_recall_variant2"] = float(np.mean([r["rmse_variant2"] < mc.tau3_rmse for r in rigid]))
    flows = [r["nfmr"] for r in rows if "nfmr" in r]
    if flows:
        agg["nfmr"] = float(np.mean(flows))
    return agg


_WEIGHTS_CACHE: dict = {}


def _weights_for(cfg: PipelineConfig, weights_path: str | None, weight_seed: int) -> ModelWeights:
    key = (cfg.config_hash(), weights_path, weight_seed)
    if key not in _WEIGHTS_CACHE:
        _WEIGHTS_CACHE[key] = (load_weights(weights_path, cfg) if weights_path
                               else init_random_weights(cfg, weight_seed))
    return _WEIGHTS_CACHE[key]


def run_job(job: PairJob, cfg_dict: dict, weights_path: str | None, weight_seed: int,
            estimate_normals: bool = False) -> dict:
    cfg = load_config_dict(cfg_dict)
    weights = _weights_for(cfg, weights_path, weight_seed)
    if job.directory is not None:
        cloud_p, cloud_q, truth = load_pair_dir(job.directory, cfg, estimate_normals)
        name = str(job.directory)
    else:
        cloud_p, cloud_q, truth = generate_pair(SyntheticPairSpec(**job.spec), job.seed)
        name = f"synthetic-{job.seed}"
    row = evaluate_pair(cloud_p, cloud_q, truth, weights, cfg, job.seed)
    return {"index": job.index, "name": name, **row}


def run_eval(jobs: list[PairJob], cfg: PipelineConfig, weights_path: str | None = None,
             weight_seed: int = 0, n_jobs: int = 1, estimate_normals: bool = False) -> dict:
    cfg_dict = cfg.model_dump()
    args = [(job, cfg_dict, weights_path, weight_seed, estimate_normals) for job in jobs]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(run_job, *zip(*args)))
    else:
        rows = [run_job(*a) for a in args]
    rows.sort(key=lambda r: r["index"])
    return {"config_hash": cfg.config_hash(), "mode": cfg.mode, "per_pair": rows,
            "aggregate": aggregate(rows, cfg)}
