import math

import numpy as np
import pytest

from conftest import random_cloud, rel_err
from ppfmatch import oracles
from ppfmatch.errors import ShapeError
from ppfmatch.geom import random_transform
from ppfmatch.global_transformer import (PositionContextPair, angular_embed, feed_forward,
                                         fuse_geometric_embedding, gsm, pcm, run_global_stack,
                                         sinusoidal_distance_embed, sinusoidal_embed, triplet_angles)
from ppfmatch.linalg import layer_norm


def test_embedding_spot_values():
    e = sinusoidal_embed([0.2], 2, 0.2)
    assert e[0].tolist() == [math.sin(1.0), math.cos(1.0)]
    e = sinusoidal_embed(np.array(3.0), 4, 1.0)
    assert np.allclose(e, [math.sin(3), math.cos(3), math.sin(3 / 100), math.cos(3 / 100)], atol=1e-15)
    with pytest.raises(ValueError):
        sinusoidal_embed([1.0], 3, 1.0)


def test_distance_embedding_diagonal(rng):
    pts = rng.standard_normal((6, 3))
    e = sinusoidal_distance_embed(pts, 8)
    assert e.shape == (6, 6, 8)
    diag = e[np.arange(6), np.arange(6)]
    assert np.all(diag[:, 0::2] == 0) and np.all(diag[:, 1::2] == 1)
    assert np.array_equal(e, e.transpose(1, 0, 2))


def test_triplet_angles_on_a_line():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [2, 0, 0], [0, 5, 0]], float)
    a = triplet_angles(pts)
    assert a.shape == (5, 5, 3)
    # for point 0 the nearest others are 1 and 2 (opposite sides of it)
    assert a[0, 2, 0] == pytest.approx(math.pi, abs=1e-15)
    assert a[0, 1, 0] == 0.0
    assert a[0, 4, 0] == pytest.approx(math.pi / 2, abs=1e-15)
    assert np.all(a[np.arange(5), np.arange(5)] == 0)     # zero vector convention
    with pytest.raises(ValueError):
        triplet_angles(pts[:3])
    assert angular_embed(pts, 4).shape == (5, 5, 3, 4)


def test_fuse_takes_max_over_triplets():
    g_d = np.zeros((2, 2, 2))
    g_a = np.zeros((2, 2, 3, 2))
    g_a[0, 1, :, 0] = [1.0, 5.0, -2.0]
    out = fuse_geometric_embedding(g_d, g_a, np.eye(2), np.eye(2))
    assert out[0, 1].tolist() == [5.0, 0.0]
    out = fuse_geometric_embedding(np.ones((2, 2, 2)), g_a, 2 * np.eye(2), np.eye(2))
    assert out[0, 1].tolist() == [7.0, 2.0]


def test_gsm_reduces_to_standard_attention(rng, weights):
    w = weights.scope("global.block1.gsm")
    w["W_E"] = np.zeros_like(w["W_E"])
    w["W_G"] = np.zeros_like(w["W_G"])
    cloud = random_cloud(rng, 12, 256)
    out = gsm(cloud, w)
    assert rel_err(out.context, oracles.standard_self_attention(cloud.features, w)) <= 1e-9
    assert out.position.shape == (12, 256)


def test_gsm_width_check(rng, weights):
    with pytest.raises(ShapeError):
        gsm(random_cloud(rng, 6, 8), weights.scope("global.block1.gsm"))


def test_feed_forward_matches_oracle(rng, weights):
    w = {k[len("ffn_ctx."):]: v for k, v in weights.scope("global.block1.gsm").items()
         if k.startswith("ffn_ctx.")}
    x = rng.standard_normal((5, 256))
    assert rel_err(feed_forward(x, w), oracles.feed_forward(x, w)) <= 1e-12


def test_pcm_singleton_source(rng, weights):
    w = weights.scope("global.block1.pcm")
    tgt = PositionContextPair(rng.standard_normal((4, 256)), rng.standard_normal((4, 256)))
    src = PositionContextPair(rng.standard_normal((1, 256)), rng.standard_normal((1, 256)))
    out = pcm(tgt, src, w)
    # one key: the attention weight is exactly 1, so the message is that key's value
    msg = np.repeat(src.fused() @ w["W_V"], 4, axis=0) @ w["W_msg"]
    h = layer_norm(tgt.fused() + msg, w["ln_gain"], w["ln_bias"])
    ffn = {k[4:]: v for k, v in w.items() if k.startswith("ffn.")}
    assert rel_err(out, feed_forward(h, ffn)) <= 1e-12


def test_pcm_source_permutation(rng, weights):
    w = weights.scope("global.block1.pcm")
    tgt = PositionContextPair(rng.standard_normal((5, 256)), rng.standard_normal((5, 256)))
    src = PositionContextPair(rng.standard_normal((7, 256)), rng.standard_normal((7, 256)))
    perm = rng.permutation(7)
    flipped = PositionContextPair(src.position[perm], src.context[perm])
    assert rel_err(pcm(tgt, flipped, w), pcm(tgt, src, w)) <= 1e-12
    with pytest.raises(ShapeError):
        pcm(tgt, PositionContextPair(np.zeros((2, 3)), np.zeros((2, 3))), w)


def test_zero_blocks_pass_through(rng, weights, cfg):
    p, q = random_cloud(rng, 8, 256), random_cloud(rng, 9, 256)
    a, b = run_global_stack(p, q, weights, cfg, g=0)
    assert a is p and b is q
    with pytest.raises(ValueError):
        run_global_stack(p, q, weights, cfg, g=-1)


def test_global_stack_rigid_invariance(rng, weights, cfg):
    p, q = random_cloud(rng, 16, 256), random_cloud(rng, 14, 256)
    a, b = run_global_stack(p, q, weights, cfg)
    assert a.features.shape == (16, 256) and b.features.shape == (14, 256)
    Tp, Tq = random_transform(rng, 4.0), random_transform(rng, 4.0)
    c, d = run_global_stack(p.transformed(Tp), q.transformed(Tq), weights, cfg)
    assert rel_err(c.features, a.features) <= 1e-9
    assert rel_err(d.features, b.features) <= 1e-9
