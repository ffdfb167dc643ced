"""End-to-end acceptance criteria, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary; run ``pytest tests/test_acceptance.py -v`` to see them.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from contrastive_gap import gradcheck
from contrastive_gap.cli import main
from contrastive_gap.embedding_space import PairedEmbeddings, random_sphere_init
from contrastive_gap.experiments import (EXPERIMENTS, ClassProxySpec, ExperimentSpec, GridSpec,
                                         run_experiment, run_simat_proxy, run_zeroshot_proxy)
from contrastive_gap.losses import align_loss, clip_loss, uniform_loss, xuniform_loss
from contrastive_gap.metrics import (centroid_distance, linear_separability, pca_explained_variance,
                                     retrieval_accuracy)


def verdict(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])
    assert ok, detail


def test_criterion_01_gradients():
    start = time.perf_counter()
    losses = gradcheck.loss_errors(instances=10, n=8, d=16, temperatures=(1.0, 0.07, 0.01))
    enc = gradcheck.encoder_error()
    elapsed = time.perf_counter() - start
    worst = max(max(e["relative"] for e in losses.values()), enc["relative"])
    ok = worst <= 1e-5 and set(losses) >= {"clip", "uniform", "xuniform", "align", "CLIP", "CUA", "CUAXU"}
    verdict(1, ok and elapsed <= 10.0, f"max relative error {worst:.2e} (<= 1e-5), {elapsed:.1f}s (<= 10s)")


def test_criterion_02_closed_forms():
    ortho = np.eye(2)
    same = np.tile([0.6, 0.8], (5, 1))
    checks = {
        "clip N=1": clip_loss(PairedEmbeddings.from_arrays([[0.6, 0.8]], [[1.0, 0.0]]), 0.01).total == 0.0,
        "clip orthogonal tau=1": abs(clip_loss(PairedEmbeddings.from_arrays(ortho, ortho), 1.0).total
                                     - math.log(1 + math.exp(-1))) <= 1e-12,
        "uniform identical": abs(uniform_loss(same) - math.log(5)) <= 1e-12,
        "xuniform orthogonal": abs(xuniform_loss(PairedEmbeddings.from_arrays(ortho, ortho)) + 4) <= 1e-12,
        "align identical": align_loss(PairedEmbeddings.from_arrays(ortho, ortho)) == 0.0,
        "align antipodal": align_loss(PairedEmbeddings.from_arrays(ortho, -ortho)) == 4.0,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(2, not failed, "all closed forms exact" if not failed else f"failed: {', '.join(failed)}")


def test_criterion_03_idealized_gap():
    spec = ExperimentSpec("idealized_gap", dimensions=(64,), n=512)
    start = time.perf_counter()
    result = run_experiment(spec)
    elapsed = time.perf_counter() - start
    rows = result.details["per_seed"]
    passed = sum(r["passed"] for r in rows)
    init_cd = max(r["init_centroid_distance"] for r in rows)
    init_ls = max(r["init_linear_separability"] for r in rows)
    final_ls = min(r["final_linear_separability"] for r in rows)
    verdict(3, result.checks["gap_forms_d64"] and elapsed <= 600,
            f"{passed}/5 seeds; init centroid <= {init_cd:.3f}, init sep <= {init_ls:.2f}, "
            f"final sep >= {final_ls:.2f}; {elapsed:.0f}s")


def test_criterion_04_sphere3d():
    spec = ExperimentSpec("sphere3d")
    start = time.perf_counter()
    result = run_experiment(spec)
    per_seed = (time.perf_counter() - start) / len(spec.seeds)
    rows = result.details["per_seed"]
    passed = sum(r["passed"] for r in rows)
    verdict(4, result.checks["gap_closes"] and per_seed <= 300,
            f"{passed}/5 seeds; early i2t@1 <= {max(r['early_max_i2t@1'] for r in rows):.3f}, "
            f"final i2t@1 >= {min(r['final_i2t@1'] for r in rows):.2f}, "
            f"final sep <= {max(r['final_linear_separability'] for r in rows):.2f}; {per_seed:.0f}s/seed")


@pytest.fixture(scope="module")
def comparison():
    return run_experiment(ExperimentSpec("loss_comparison", dimensions=(128,)))


def test_criterion_05_directional_trends(comparison):
    names = ["centroid_distance_direction", "uniform_direction", "xuniform_direction", "align_direction"]
    votes = comparison.details["d128"]["votes"]
    summary = ", ".join(f"{k.split('_direction')[0]} {sum(votes[k.split('_direction')[0]])}/5" for k in names)
    verdict(5, all(comparison.checks[f"{k}_d128"] for k in names), summary)


def test_criterion_06_retrieval_parity(comparison):
    gap = comparison.details["d128"]["mean_abs_i2t_gap_cua_clip"]
    verdict(6, comparison.checks["retrieval_parity_d128"], f"mean |i2t@1 CUA - CLIP| = {gap:.3f} (<= 0.05)")


def test_criterion_07_metric_invariants():
    rng = np.random.default_rng(7)
    problems = []
    for k in range(1000):
        n, d = int(rng.integers(1, 40)), int(rng.integers(2, 10))
        p = PairedEmbeddings(random_sphere_init(n, d, rng), random_sphere_init(n, d, rng))
        if not 0.0 <= centroid_distance(p) <= 2.0:
            problems.append(f"centroid instance {k}")
        ratios = pca_explained_variance(p)
        if np.any(np.diff(ratios) > 1e-15) or abs(ratios.sum() - 1) > 1e-9:
            problems.append(f"pca instance {k}")
        if k < 100 and n >= 2:
            accs = [retrieval_accuracy(p, j) for j in range(1, n + 1)]
            if any(a > b for a, b in zip(accs, accs[1:])):
                problems.append(f"retrieval instance {k}")
    seps = [linear_separability(PairedEmbeddings(random_sphere_init(200, 8, 2 * s),
                                                 random_sphere_init(200, 8, 2 * s + 1)), seed=s)
            for s in range(20)]
    mean_sep = float(np.mean(seps))
    if not 0.4 <= mean_sep <= 0.6:
        problems.append(f"separability {mean_sep:.3f}")
    verdict(7, not problems, f"1000 instances; same-distribution separability {mean_sep:.3f}"
            + (f"; problems: {problems[:3]}" if problems else ""))


def test_criterion_08_simat(tmp_path):
    spec = ExperimentSpec("simat_proxy", seeds=(0, 1, 2, 3, 4), n=64, epochs=1, dimensions=(64,))
    result = run_simat_proxy(spec, GridSpec(10, 10))
    d = result.details
    z = abs(d["random_score"] - d["chance"]) / d["chance_sd"]
    verdict(8, result.checks["additive_exact"] and result.checks["random_at_chance"],
            f"additive {d['additive_score']:.3f}; random {d['random_score']:.4f} vs chance "
            f"{d['chance']:.4f} ({z:.1f} sd)")


def test_criterion_09_determinism(tmp_path):
    out = tmp_path / "run"
    mismatched = []
    for name in EXPERIMENTS:
        argv = ["run", "--experiment", name, "--out", str(out / name), "--deterministic",
                "--seed", "3", "--epochs", "2"]
        if name != "sphere3d":
            argv += ["--dims", "16"]
        outputs = []
        for _ in range(2):
            code = main(argv)
            files = {p.name: p.read_bytes() for p in sorted((out / name).iterdir())}
            outputs.append((code, files))
        if outputs[0] != outputs[1] or not outputs[0][1]:
            mismatched.append(name)
    verdict(9, not mismatched, f"{len(EXPERIMENTS)} experiments byte-identical on rerun"
            if not mismatched else f"differs: {', '.join(mismatched)}")


def test_criterion_10_zeroshot():
    spec = ExperimentSpec("zeroshot_proxy", seeds=(0,), n=64, epochs=1, dimensions=(64,))
    result = run_zeroshot_proxy(spec, ClassProxySpec(n_classes=10))
    d = result.details
    ordering = result.report_only["accuracy"]
    verdict(10, result.checks["identity_model_accurate"] and result.checks["untrained_at_chance"]
            and set(ordering) == {"clip", "cua", "cuaxu"},
            f"identity {d['identity_accuracy']:.2f} (>= 0.9); untrained {d['untrained_accuracy_mean']:.3f} "
            f"(0.1 +- 0.05); variant table report-only")
