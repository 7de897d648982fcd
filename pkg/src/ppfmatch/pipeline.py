"""End-to-end matching: encoder, global stack, decoder, coarse-to-fine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ppfmatch.config import PipelineConfig
from ppfmatch.errors import MissingNormalsError
from ppfmatch.geom import PointCloudTriplet, estimate_normals
from ppfmatch.global_transformer import run_global_stack
from ppfmatch.linalg import ModelWeights
from ppfmatch.matcher import CorrespondenceSet, coarse_to_fine
from ppfmatch.ppftrans import EncoderOutput, run_decoder, run_encoder
from ppfmatch.weights import SLACK_NAME


@dataclass(frozen=True)
class MatchResult:
    correspondences: CorrespondenceSet     # indices into the input clouds
    encoded: tuple[EncoderOutput, EncoderOutput]
    globals: tuple[PointCloudTriplet, PointCloudTriplet]
    decoded: tuple[PointCloudTriplet, PointCloudTriplet]

    def descriptors(self) -> dict[str, np.ndarray]:
        """Every intermediate feature array, keyed by stage and frame."""
        out = {}
        for frame, enc in zip("pq", self.encoded):
            for b, lvl in enumerate(enc.levels, start=1):
                out[f"encoder.block{b}.{frame}"] = lvl.features
        for frame, g, d in zip("pq", self.globals, self.decoded):
            out[f"global.{frame}"] = g.features
            out[f"decoder.{frame}"] = d.features
        return out


def prepare_cloud(points, normals=None, estimate: bool = False,
                  cfg: PipelineConfig | None = None) -> PointCloudTriplet:
    """Wrap raw arrays as a triplet with all-ones input features."""
    cfg = cfg or PipelineConfig()
    points = np.asarray(points, dtype=np.float64)
    if normals is None:
        if not estimate:
            raise MissingNormalsError("cloud has no normals; pass estimate=True to compute them")
        normals = estimate_normals(points, cfg.normal_k, cfg.viewpoint)
    return PointCloudTriplet.with_unit_features(points, normals)


def match_pair(cloud_p: PointCloudTriplet, cloud_q: PointCloudTriplet, weights: ModelWeights,
               cfg: PipelineConfig | None = None) -> MatchResult:
    cfg = cfg or PipelineConfig()
    enc_p = run_encoder(cloud_p, weights, cfg)
    enc_q = run_encoder(cloud_q, weights, cfg)
    glob_p, glob_q = run_global_stack(enc_p.superpoints, enc_q.superpoints, weights, cfg)
    # the decoder starts from the encoder's superpoints; the global stack only feeds matching
    dec_p = run_decoder(enc_p.superpoints, enc_p.levels, weights, cfg)
    dec_q = run_decoder(enc_q.superpoints, enc_q.levels, weights, cfg)
    local = coarse_to_fine(glob_p, glob_q, dec_p, dec_q, cfg.match,
                           float(weights[SLACK_NAME]), cfg.mode)
    idx_p = enc_p.level_indices(0)
    idx_q = enc_q.level_indices(0)
    corr = CorrespondenceSet(idx_p[local.src], idx_q[local.tgt], local.confidence, "point",
                             meta={"mode": cfg.mode})
    return MatchResult(corr, (enc_p, enc_q), (glob_p, glob_q), (dec_p, dec_q))
