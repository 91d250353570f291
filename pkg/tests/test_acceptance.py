"""Acceptance criteria 1-8.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured
values, then asserts. The simulated four-method study (criteria 4, 5 and 8)
is run once per session and shared.
"""
import math
import time

import numpy as np
import pytest

from conftest import random_operator, random_series
from spiralstorm.cli import main, simulate_dataset
from spiralstorm.config import load_config
from spiralstorm.fileformat import DatasetFile
from spiralstorm.manifold import (KernelMatrix, irls_weights, is_psd, laplacian,
                                  manifold_energy, temporal_laplacian)
from spiralstorm.metrics import hfen, report, ser, ssim
from spiralstorm.operators import MultiCoilKSpace
from spiralstorm.phantom import neighbor_fidelity
from spiralstorm.solvers import (kernel_lowrank_irls, lowrank_recon,
                                 solve_image_update, storm_highres, storm_iterative,
                                 storm_selfnav, storm_sense)
from spiralstorm.solvers import _central_problem
from test_manifold import eig_oracle_weights, random_correlation
from test_operators import direct_forward
from test_solvers import dense_solve

pytestmark = pytest.mark.acceptance

# 1200 interleaves, 6 per frame with every 6th a navigator: 200 frames of
# 5 imaging spirals plus one navigator, 8 coils, 30 dB measurement SNR
STUDY = {"n_interleaves": "1200", "spirals_per_frame": "6", "navigator_every": "6"}


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def study():
    cfg = load_config(None, STUDY)
    truth, acq, op, b = simulate_dataset(cfg)
    rc = cfg.recon
    out = {"truth": truth, "op": op, "b": b, "cfg": rc, "timings": {}}
    t_all = time.perf_counter()
    for name, fn in [("iterative", lambda: storm_iterative(op, b, rc)),
                     ("sense", lambda: storm_sense(op, b, rc)),
                     ("selfnav", lambda: storm_selfnav(op, b, rc)),
                     ("lowrank", lambda: lowrank_recon(op, b, cfg=rc))]:
        t0 = time.perf_counter()
        out[name] = fn()
        out["timings"][name] = time.perf_counter() - t0
    out["timings"]["total"] = time.perf_counter() - t_all
    return out


def test_criterion_1_operator(capsys):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst_adj = 0.0
    for _ in range(20):
        op = random_operator(rng, grid=16, n_frames=3, n_coils=2)
        x = random_series(rng, 3, 16)
        y = rng.standard_normal((2, len(op.coords))) + 1j * rng.standard_normal((2, len(op.coords)))
        lhs = np.vdot(op.forward(x).data, y)
        rhs = np.vdot(x, op.adjoint(MultiCoilKSpace(y, op.offsets)))
        worst_adj = max(worst_adj, abs(lhs - rhs) / abs(lhs))
    worst_fwd = 0.0
    for grid in (8, 12, 16):
        op = random_operator(rng, grid=grid, n_frames=2, n_coils=2, samples_per_frame=30)
        x = random_series(rng, 2, grid)
        worst_fwd = max(worst_fwd, rel(op.forward(x).data, direct_forward(op, x)))
    elapsed = time.perf_counter() - t0
    ok = worst_adj <= 1e-6 and worst_fwd <= 1e-6 and elapsed < 10
    verdict(capsys, 1, ok, f"adjoint {worst_adj:.2e}, forward {worst_fwd:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_solver(capsys):
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    op = random_operator(rng, grid=8, n_frames=2, n_coils=2, samples_per_frame=24)
    b = op.forward(random_series(rng, 2, 8))
    b = MultiCoilKSpace(b.data + 0.1 * rng.standard_normal(b.data.shape), b.offsets)
    W = rng.uniform(0, 1, (2, 2))
    L_eq = 20.0 * laplacian(W + W.T).L + 2.0 * temporal_laplacian(2).L
    ref, _, _ = dense_solve(op, b, L_eq)
    got, info = solve_image_update(op, b, L_eq, cg_iters=1000, cg_tol=1e-13, return_info=True)
    err = rel(got, ref)
    monotone = bool(np.all(np.diff(info.residuals) <= 1e-12 * info.residuals[0]))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-8 and monotone and elapsed < 10
    verdict(capsys, 2, ok, f"dense mismatch {err:.2e}, residual monotone {monotone}, {elapsed:.1f} s")
    assert ok


def test_criterion_3_manifold(capsys):
    rng = np.random.default_rng(13)
    worst, valid = 0.0, True
    for n in (3, 6, 10):
        K = random_correlation(rng, n)
        W = irls_weights(KernelMatrix(K, 1.3), 0.05)
        ref = eig_oracle_weights(K, 1.3, 0.05)
        sign = 1.0 if ref.sum() - np.trace(ref) >= 0 else -1.0
        worst = max(worst, np.max(np.abs(W - sign * ref)) / np.max(np.abs(ref)))
        L = laplacian(W).L
        valid &= bool(np.max(np.abs(L.sum(1))) <= 1e-10 * np.linalg.norm(L)
                      and np.allclose(L, L.T, rtol=0, atol=1e-14 * np.linalg.norm(L))
                      and is_psd(L))
    x = rng.standard_normal((9, 5, 5)) + 1j * rng.standard_normal((9, 5, 5))
    direct = sum(np.sum(np.abs(x[i + 1] - x[i]) ** 2) for i in range(8))
    trace_err = abs(manifold_energy(x, temporal_laplacian(9)) - direct) / direct
    ok = worst <= 1e-10 and valid and trace_err <= 1e-12
    verdict(capsys, 3, ok, f"oracle {worst:.1e}, Laplacian valid {valid}, trace {trace_err:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_4_method_trends(capsys, study):
    gt = study["truth"].frames
    reps = {m: report(gt, study[m].images, label=m).summary()
            for m in ("iterative", "sense", "selfnav", "lowrank")}
    s = {m: r["ser_mean"] for m, r in reps.items()}
    checks = {
        "iter-lowrank>=5": s["iterative"] - s["lowrank"] >= 5,
        "iter-sense>=5": s["iterative"] - s["sense"] >= 5,
        "|iter-selfnav|<=2.5": abs(s["iterative"] - s["selfnav"]) <= 2.5,
        "ssim+0.05": reps["iterative"]["ssim_mean"] > reps["lowrank"]["ssim_mean"] + 0.05,
        "hfen": reps["iterative"]["hfen_norm_mean"] < reps["lowrank"]["hfen_norm_mean"],
        "runtime<=15min": study["timings"]["total"] <= 900,
    }
    ok = all(checks.values())
    table = ", ".join(f"{m} SER {r['ser_mean']:.2f} SSIM {r['ssim_mean']:.3f} "
                      f"HFEN {r['hfen_norm_mean']:.4f}" for m, r in reps.items())
    failed = [k for k, v in checks.items() if not v]
    verdict(capsys, 4, ok, f"{table}; {study['timings']['total']:.0f} s"
            + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok


@pytest.mark.slow
def test_criterion_5_iteration_benefit(capsys, study):
    gt = study["truth"]
    hist = study["iterative"].laplacian_history
    fid = [neighbor_fidelity(L.W, gt) for L in hist[1:6]]
    increasing = all(b > a for a, b in zip(fid, fid[1:]))
    x1 = storm_highres(study["op"], study["b"], hist[1], study["cfg"])
    x5 = storm_highres(study["op"], study["b"], hist[5], study["cfg"])
    gain = ser(gt.frames, x5) - ser(gt.frames, x1)
    ok = increasing and gain >= 2
    verdict(capsys, 5, ok, f"fidelity iter 1-5 {fid} (strictly increasing {increasing}), "
                           f"SER gain {gain:.2f} dB")
    assert ok


def test_criterion_6_metrics(capsys):
    rng = np.random.default_rng(16)
    t0 = time.perf_counter()
    x = rng.uniform(0, 1, (2, 32, 32))
    checks = [
        abs(ssim(x, x) - 1) <= 1e-12,
        ser(x, x) == math.inf,
        hfen(x, x) == 0.0,
        abs(hfen(x, x + 0.25)) <= 1e-12,
    ]
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 5
    verdict(capsys, 6, ok, f"checks {checks}, {elapsed:.2f} s")
    assert ok


def test_criterion_7_determinism(capsys, tmp_path):
    small = ["--grid_size", "32", "--n_frames", "24", "--n_interleaves", "144",
             "--spirals_per_frame", "6", "--navigator_every", "6",
             "--samples_per_readout", "256", "--outer_iters", "2", "--cg_iters", "20"]
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["simulate", "--out", str(d), *small]) == 0
        assert main(["recon", "storm-iterative", "--input", str(d / "kspace.ssd"),
                     "--out", str(d / "rec"), *small]) == 0
        digests.append([DatasetFile.read(p).payload_digest() for p in
                        (d / "truth.ssd", d / "kspace.ssd", d / "rec" / "images.ssd",
                         d / "rec" / "laplacian.ssd")])
    ok = digests[0] == digests[1]
    verdict(capsys, 7, ok, f"{len(digests[0])} payload digests identical: {ok}")
    assert ok


@pytest.mark.slow
def test_criterion_8_irls_monotone(capsys, study):
    op_c, b_c = _central_problem(study["op"], study["b"], study["cfg"])
    res = kernel_lowrank_irls(op_c, b_c, study["cfg"], fixed_gamma=True)
    tr = res.objective_trace
    worst = max((tr[i + 1] - tr[i]) / abs(tr[i]) for i in range(len(tr) - 1))
    ok = worst <= 1e-6
    verdict(capsys, 8, ok, f"objective {[f'{v:.6g}' for v in tr]}, worst relative rise {worst:.1e}")
    assert ok
