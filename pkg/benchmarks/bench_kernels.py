"""Time the hot kernels under numba and under the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Each backend runs in its own interpreter, since the choice is fixed at import
time by ``COORDTOK_NO_NUMBA``.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up, also pays the jit compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def worker(repeat):
    from coordtok import _accel
    from coordtok import geometry as G
    from coordtok.codec import ImageExtent
    from coordtok.toy import _kernels as K
    from coordtok.toy.policy import LinearPolicy
    from coordtok.toy.train import Decoding, _sft_grad_w, sample_sequence
    from coordtok.toy.world import VOCAB_SIZE, generate_scene

    rng = np.random.default_rng(0)
    ang = np.sort(rng.uniform(0, 2 * np.pi, 24))
    rad = rng.uniform(400, 1000, 24)
    poly = np.stack([1024 + rad * np.cos(ang), 1024 + rad * np.sin(ang)], 1)
    ext = ImageExtent(2048, 2048)
    pts = rng.uniform(0, 2048, (200_000, 2))

    pol = LinearPolicy(rng.normal(0, 0.05, (K.N_FEATURES, VOCAB_SIZE)))
    scenes = [generate_scene(k) for k in range(32)]
    batch = [(s, s.gt_tokens()) for s in scenes]
    sampling = Decoding(temperature=1.0)
    dec_rng = np.random.default_rng(1)

    cases = {
        "rasterize 2048^2, 24-gon": lambda: G.rasterize(poly, ext),
        "points_in_polygon 2e5": lambda: G.points_in_polygon(pts, poly),
        "sft grad, batch 32": lambda: _sft_grad_w(pol, batch),
        "sample 32 sequences": lambda: [sample_sequence(pol, s, sampling, rng=dec_rng) for s in scenes],
    }
    out = {"backend": _accel.backend_name(),
           "seconds": {k: _best_of(f, repeat) for k, f in cases.items()}}
    print(json.dumps(out))


def run_backend(no_numba, repeat):
    env = dict(os.environ)
    env.pop("COORDTOK_NO_NUMBA", None)
    if no_numba:
        env["COORDTOK_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print raw timings")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    nb = run_backend(False, args.repeat)
    npy = run_backend(True, args.repeat)
    if args.json:
        print(json.dumps({"numba": nb, "numpy": npy}, indent=2))
        return
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for k, t in nb["seconds"].items():
        u = npy["seconds"][k]
        print(f"{k:<28}{1e3 * t:>10.2f}{1e3 * u:>10.2f}{u / t:>8.1f}x")


if __name__ == "__main__":
    main()
