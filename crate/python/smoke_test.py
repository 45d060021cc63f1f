#!/usr/bin/env python3
"""End-to-end check of the mdiff_py extension module.

Builds the cdylib with cargo, loads it from a scratch directory, and
exercises every exported type against plain-python reference math.
Exits non-zero on the first failed assertion.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "mdiff-py"], cwd=ROOT, check=True
    )
    libdir = ROOT / "target" / "debug"
    src = next(
        p
        for p in [libdir / "libmdiff_py.so", libdir / "libmdiff_py.dylib", libdir / "mdiff_py.dll"]
        if p.exists()
    )
    scratch = Path(tempfile.mkdtemp(prefix="mdiff_py_"))
    shutil.copy(src, scratch / "mdiff_py.so")
    sys.path.insert(0, str(scratch))
    import mdiff_py

    return mdiff_py


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    m = build_and_import()

    # schedule: linear betas, cached products, marginal coefficients
    sch = m.Schedule(100, 1e-4, 0.05)
    betas = sch.betas()
    assert len(betas) == 100 and close(betas[0], 1e-4) and close(betas[-1], 0.05)
    prod = 1.0
    for i, b in enumerate(betas, start=1):
        prod *= 1.0 - b
        assert close(sch.alpha_bar(i), prod, 1e-12), f"alpha_bar({i})"
    sig, noi = sch.marginal_coefficients(40)
    assert close(sig * sig + noi * noi, 1.0, 1e-12)

    # forward diffusion matches the closed form
    x0 = [[0.5, -1.0, 2.0], [0.0, 0.25, -0.75]]
    eps = [[1.0, 0.0, -1.0], [0.5, -0.5, 2.0]]
    xk = m.forward_diffuse(sch, x0, 40, eps)
    ab = sch.alpha_bar(40)
    for r in range(2):
        for c in range(3):
            want = math.sqrt(ab) * x0[r][c] + math.sqrt(1.0 - ab) * eps[r][c]
            assert close(xk[r][c], want, 1e-12)

    # prior KL against the Gaussian formula
    var = 1.0 - sch.alpha_bar(100)
    d = 6
    sq = sum(v * v for row in x0 for v in row)
    want_kl = 0.5 * (d * (var - 1.0 - math.log(var)) + sch.alpha_bar(100) * sq)
    assert close(m.prior_kl(sch, x0), want_kl, 1e-12)

    # a fresh model predicts exactly zero noise and samples deterministically
    model = m.Diffusion.init(2, 3, 2, 4, 8, 2, 1, 1, 4, True, 7)
    assert model.num_params() > 0
    obs = [[0.1 * (i + j) for j in range(6)] for i in range(3)]
    cond = model.encode_past(obs)
    assert len(cond.values()) == 4
    zeros2x6 = [[0.0] * 6, [0.0] * 6]
    eps_hat = model.predict_noise(
        m.forward_diffuse(sch, zeros2x6, 100, [[1.0] * 6, [1.0] * 6]), 100, cond
    )
    assert all(v == 0.0 for row in eps_hat for v in row), "fresh model must output 0"

    small = m.Schedule(5, 1e-4, 0.05)
    s1 = model.sample(small, cond, 3, 11, 0)
    s2 = model.sample(small, cond, 3, 11, 0)
    s3 = model.sample(small, cond, 3, 12, 0)
    assert s1 == s2, "sampling must be seed-deterministic"
    assert s1 != s3, "different seeds must give different draws"
    assert len(s1) == 3 and len(s1[0]) == 2 and len(s1[0][0]) == 6

    # checkpoint round trip preserves behaviour
    ckpt = Path(tempfile.mkdtemp(prefix="mdiff_ck_")) / "model.ckpt"
    model.save(str(ckpt), small)
    model2, small2 = m.Diffusion.load(str(ckpt))
    assert small2.k_max == 5
    assert model2.sample(small2, model2.encode_past(obs), 3, 11, 0) == s1
    assert model2.config_json() == model.config_json()

    # metrics agree with brute force
    a = [[0.0, 0.0], [1.0, 0.0]]
    b = [[0.0, 1.0], [1.0, 1.0]]
    c = [[3.0, 0.0], [3.0, 4.0]]
    gt = [[0.0, 0.0], [0.0, 1.0]]

    def dist(u, v):
        return math.sqrt(sum((x - y) ** 2 for ru, rv in zip(u, v) for x, y in zip(ru, rv)))

    want_apd = (dist(a, b) + dist(a, c) + dist(b, c)) / 3.0
    assert close(m.apd([a, b, c]), want_apd, 1e-12)
    assert m.apd([a]) == 0.0

    def one_ade(s):
        return sum(
            math.sqrt(sum((x - y) ** 2 for x, y in zip(rs, rg))) for rs, rg in zip(s, gt)
        ) / len(gt)

    assert close(m.ade([a, b, c], gt), min(one_ade(s) for s in [a, b, c]), 1e-12)
    fdes = [math.sqrt(sum((x - y) ** 2 for x, y in zip(s[-1], gt[-1]))) for s in [a, b, c]]
    assert close(m.fde([a, b, c], gt), min(fdes), 1e-12)
    assert close(m.mmade([a, b], [gt, c]), sum(m.ade([a, b], g) for g in [gt, c]) / 2, 1e-12)
    assert close(m.mmfde([a, b], [gt, c]), sum(m.fde([a, b], g) for g in [gt, c]) / 2, 1e-12)

    groups = m.multimodal_groups([[0.0, 0.0], [0.3, 0.0], [9.0, 9.0]], 0.5)
    assert groups == [[0, 1], [0, 1], [2]]

    zv = m.zero_velocity(obs, 4)
    assert zv == [obs[-1]] * 4

    # a fresh refiner is the identity map
    ref = m.Refiner.init(2, 2, 4, 2, 8, 0.01, 0.005, 100.0, 3)
    out = ref.refine(s1, cond)
    for si, oi in zip(s1, out):
        for rs, ro in zip(si, oi):
            assert all(close(x, y, 1e-12) for x, y in zip(rs, ro))

    # synthetic chains: right shape, pinned root, deterministic in the seed
    fps, frames = m.synth_chain(4, 6, 21)
    assert fps > 0 and len(frames) == 6 and len(frames[0]) == 12
    assert all(f[0] == 0.0 and f[1] == 0.0 and f[2] == 0.0 for f in frames)
    assert m.synth_chain(4, 6, 21)[1] == frames
    assert m.synth_chain(4, 6, 22)[1] != frames

    assert m.fold_seed(1, [2, 3]) == m.fold_seed(1, [2, 3])
    assert m.fold_seed(1, [2, 3]) != m.fold_seed(1, [3, 2])

    print("smoke test passed")


if __name__ == "__main__":
    main()
