"""Weight naming scheme, seeded initialization and the on-disk container.

File layout: 8 magic bytes ``ROITRW01``, a little-endian uint64 manifest
length, the JSON manifest, then one contiguous little-endian float32 blob
with every tensor stored row-major at its manifest offset.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ppfmatch.config import PipelineConfig
from ppfmatch.errors import WeightsError
from ppfmatch.linalg import FORMAT_VERSION, ModelWeights

MAGIC = b"ROITRW01"
SLACK_NAME = "matcher.slack_alpha"


def pam_shapes(prefix: str, c_in: int, c: int, c_out: int) -> dict[str, tuple[int, ...]]:
    shapes = {
        "W_coord": (4, c),
        "W_context": (c_in, c),
        "W_G": (c, c),
        "W_E": (c, c),
        "W_Q": (c, c),
        "W_K": (c, c),
        "W_V": (c, c),
        "W_msg": (c, c),
        "W_out": (c, c_out),
        "ln_gain": (c,),
        "ln_bias": (c,),
    }
    return {f"{prefix}.{k}": v for k, v in shapes.items()}


def pal_shapes(prefix: str, c: int) -> dict[str, tuple[int, ...]]:
    shapes = pam_shapes(f"{prefix}.pam", c, c, c)
    shapes[f"{prefix}.norm.gain"] = (c,)
    shapes[f"{prefix}.norm.bias"] = (c,)
    return shapes


def ffn_shapes(prefix: str, c: int, expansion: int) -> dict[str, tuple[int, ...]]:
    h = c * expansion
    return {
        f"{prefix}.W1": (c, h), f"{prefix}.b1": (h,),
        f"{prefix}.W2": (h, c), f"{prefix}.b2": (c,),
        f"{prefix}.ln_gain": (c,), f"{prefix}.ln_bias": (c,),
    }


def expected_shapes(cfg: PipelineConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    widths = [blk.out_channels for blk in cfg.encoder]
    c_in = 1
    for b, blk in enumerate(cfg.encoder, start=1):
        c = blk.out_channels
        shapes.update(pam_shapes(f"enc.block{b}.aal.pam", c_in, c, c))
        for p in range(1, blk.num_pal + 1):
            shapes.update(pal_shapes(f"enc.block{b}.pal{p}", c))
        c_in = c
    nb = len(cfg.encoder)
    for b in range(nb, 0, -1):
        out = widths[b - 1]
        anchor_w = widths[-1] if b == nb else widths[b]
        shapes[f"dec.block{b}.tul.zeta1"] = (out, out)
        shapes[f"dec.block{b}.tul.zeta2"] = (anchor_w, out)
        for p in range(1, cfg.encoder[b - 1].num_dec_pal + 1):
            shapes.update(pal_shapes(f"dec.block{b}.pal{p}", out))
    c = cfg.c_prime
    for b in range(1, cfg.g + 1):
        gsm = f"global.block{b}.gsm"
        for name in ("W_D", "W_A", "W_G", "W_E", "W_Q", "W_K", "W_V", "W_msg"):
            shapes[f"{gsm}.{name}"] = (c, c)
        shapes[f"{gsm}.ln_gain"] = (c,)
        shapes[f"{gsm}.ln_bias"] = (c,)
        shapes.update(ffn_shapes(f"{gsm}.ffn_ctx", c, cfg.ffn_expansion))
        shapes.update(ffn_shapes(f"{gsm}.ffn_geo", c, cfg.ffn_expansion))
        pcm = f"global.block{b}.pcm"
        for name in ("W_Q", "W_K", "W_V", "W_msg"):
            shapes[f"{pcm}.{name}"] = (c, c)
        shapes[f"{pcm}.ln_gain"] = (c,)
        shapes[f"{pcm}.ln_bias"] = (c,)
        shapes.update(ffn_shapes(f"{pcm}.ffn", c, cfg.ffn_expansion))
    shapes[SLACK_NAME] = ()
    return shapes


def init_random_weights(cfg: PipelineConfig, seed: int | None = None,
                        slack_alpha: float = 1.0) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, unit/zero norms."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    shapes = expected_shapes(cfg)
    tensors = {}
    for name in sorted(shapes):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if name == SLACK_NAME:
            tensors[name] = np.array(slack_alpha)
        elif leaf in ("ln_gain", "gain"):
            tensors[name] = np.ones(shape)
        elif leaf in ("ln_bias", "bias"):
            tensors[name] = np.zeros(shape)
        elif leaf in ("b1", "b2"):
            fan_in = shapes[name[:-2] + "W" + leaf[1]][0]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, shape)
    return ModelWeights(tensors, config_hash=cfg.config_hash())


def save_weights(weights: ModelWeights, path: str | Path) -> None:
    entries, chunks, offset = [], [], 0
    for name in weights:
        shape = list(np.shape(weights[name]))   # ascontiguousarray lifts 0-d to 1-d
        arr = np.ascontiguousarray(weights[name], dtype="<f4")
        entries.append({"name": name, "shape": shape, "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({
        "format_version": weights.format_version,
        "config_hash": weights.config_hash,
        "dtype": "float32",
        "blob_sha256": hashlib.sha256(b"".join(chunks)).hexdigest(),
        "tensors": entries,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_weights(path: str | Path, cfg: PipelineConfig | None = None) -> ModelWeights:
    """Read a weight file; with ``cfg`` also check names and shapes against it."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise WeightsError(f"cannot read weights {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise WeightsError(f"{path}: bad magic bytes")
    if len(raw) < 16:
        raise WeightsError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + mlen > len(raw):
        raise WeightsError(f"{path}: manifest length exceeds file size")
    try:
        manifest = json.loads(raw[16:16 + mlen])
        entries = manifest["tensors"]
        version = int(manifest["format_version"])
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightsError(f"{path}: corrupt manifest ({exc})") from exc
    if version != FORMAT_VERSION:
        raise WeightsError(f"{path}: unsupported format version {version}")
    if manifest.get("dtype", "float32") != "float32":
        raise WeightsError(f"{path}: unsupported dtype {manifest.get('dtype')}")
    blob = raw[16 + mlen:]
    digest = manifest.get("blob_sha256")
    if digest is not None and hashlib.sha256(blob).hexdigest() != digest:
        raise WeightsError(f"{path}: tensor data checksum mismatch")
    tensors = {}
    for e in entries:
        try:
            shape = tuple(int(s) for s in e["shape"])
            start, count = int(e["offset"]), int(e["count"])
            name = str(e["name"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightsError(f"{path}: corrupt manifest entry ({exc})") from exc
        if count != int(np.prod(shape)) or start < 0 or start + 4 * count > len(blob):
            raise WeightsError(f"{path}: tensor {name} lies outside the data blob")
        if name in tensors:
            raise WeightsError(f"{path}: duplicate tensor {name}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise WeightsError(f"{path}: tensor {name} holds non-finite values")
        tensors[name] = arr.reshape(shape)
    weights = ModelWeights(tensors, str(manifest.get("config_hash", "")), version)
    if cfg is not None:
        weights.validate(expected_shapes(cfg))
    return weights
