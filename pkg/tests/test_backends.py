"""The numba kernels and their numpy fallbacks must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from coordtok import _geomkern as GK
from coordtok.toy import _kernels as K
from coordtok.toy.world import VOCAB_SIZE, generate_scene

NB, NP = K.BACKENDS["numba"], K.BACKENDS["numpy"]


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    w = rng.normal(0, 0.5, (K.N_FEATURES, VOCAB_SIZE))
    ref = rng.normal(0, 0.5, (K.N_FEATURES, VOCAB_SIZE))
    scenes = [generate_scene(k) for k in range(6)]
    seqs = [s.gt_tokens() for s in scenes]
    off = np.concatenate([[0], np.cumsum([len(t) for t in seqs])]).astype(np.int64)
    toks = np.concatenate(seqs)
    oc = np.stack([s.obs_count for s in scenes]).astype(np.int64)
    ob = np.stack([s.obs_box for s in scenes]).astype(np.int64)
    return rng, w, ref, scenes, toks, off, oc, ob


def test_features(setup):
    _, _, _, _, toks, off, oc, ob = setup
    a, b = NB["tf_features"](toks, off, oc, ob), NP["tf_features"](toks, off, oc, ob)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sft_grad(setup):
    _, w, _, _, toks, off, oc, ob = setup
    idx, val = NP["tf_features"](toks, off, oc, ob)
    (la, ga), (lb, gb) = NB["sft_grad"](w, idx, val, toks), NP["sft_grad"](w, idx, val, toks)
    assert la == pytest.approx(lb, rel=1e-12)
    assert np.allclose(ga, gb, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("temp, k, p", [(0.0, 0, 1.0), (1.0, 0, 1.0), (0.7, 20, 1.0), (1.3, 0, 0.9)])
def test_decode(setup, temp, k, p):
    rng, w, _, scenes, *_ = setup
    for s in scenes:
        u = rng.random(120)
        a = NB["decode"](w, s.obs_count, s.obs_box, 120, temp, k, p, u)
        b = NP["decode"](w, s.obs_count, s.obs_box, 120, temp, k, p, u)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


def test_policy_gradient_pieces(setup):
    rng, w, ref, scenes, *_ = setup
    s = scenes[0]
    toks, idx, val = NP["decode"](w, s.obs_count, s.obs_box, 80, 1.0, 0, 1.0, rng.random(80))
    for x, y in zip(NB["token_stats"](w, ref, idx, val, toks), NP["token_stats"](w, ref, idx, val, toks)):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-14)
    wt = rng.normal(size=len(toks))
    c = np.full(len(toks), 0.01)
    ga, gb = np.zeros_like(w), np.zeros_like(w)
    NB["pg_accumulate"](w, ref, idx, val, toks, wt, c, ga)
    NP["pg_accumulate"](w, ref, idx, val, toks, wt, c, gb)
    assert np.allclose(ga, gb, rtol=1e-10, atol=1e-14)


def test_geometry_kernels():
    rng = np.random.default_rng(1)
    for _ in range(20):
        k = int(rng.integers(3, 9))
        xs, ys = rng.uniform(-5, 70, k), rng.uniform(-5, 70, k)
        assert np.array_equal(GK._raster_nb(xs, ys, 64, 64), GK._raster_np(xs, ys, 64, 64))
        px, py = rng.uniform(-5, 70, 200), rng.uniform(-5, 70, 200)
        assert np.array_equal(GK._pip_nb(px, py, xs, ys), GK._pip_np(px, py, xs, ys))
        bits = GK._raster_np(xs, ys, 64, 64)
        assert np.array_equal(GK._row_extremes_nb(bits), GK._row_extremes_np(bits))
    # axis-aligned edges through pixel centers
    xs, ys = np.array([2.5, 10.5, 10.5, 2.5]), np.array([3.5, 3.5, 8.5, 8.5])
    assert np.array_equal(GK._raster_nb(xs, ys, 16, 16), GK._raster_np(xs, ys, 16, 16))


def test_env_flag_selects_numpy():
    code = "from coordtok import _accel; print(_accel.backend_name())"
    env = dict(os.environ, COORDTOK_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["COORDTOK_NO_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numba"
