"""Numbered acceptance criteria; each records a one-line detail for the summary."""

import time

import numpy as np
import pytest

from hcm import cli
from hcm.calibrate import CalibrationModel, normalize_quantile
from hcm.experiments import RunConfig, run_blob_ood, run_experiment
from hcm.head import HCMOutput, decompose, error_lower_bound, noise_variance_oracle
from hcm.loss import Huber, LossSpec, PowerP, SmoothL1, loss_grad, loss_total
from hcm.metrics import auroc, coverage_at_k, ece_reg, spearman


def detail(record_property, text):
    record_property("detail", text)


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


@pytest.mark.acceptance(1, "error lower bound suite")
def test_lower_bound_suite(record_property):
    rng = np.random.default_rng(101)
    n, D = 100_000, 3
    with Timer() as tm:
        y = rng.standard_normal((n, D)) * rng.uniform(0.1, 10, (n, 1))
        t = decompose(y)
        scale = np.where(rng.uniform(size=n) < 0.2, 10.0 ** rng.uniform(-9, -4, n), rng.uniform(0, 1, n))
        d_hat = t.d + scale[:, None] * rng.standard_normal((n, D))
        R_hat = t.R * np.exp(rng.normal(0, 0.3, n))
        b = error_lower_bound(t, HCMOutput(R_hat, d_hat))
        ok = b.epsilon_defined & (b.epsilon < 1)
        # reference computation straight from the raw arrays
        e_y = np.linalg.norm(R_hat[:, None] * d_hat - y, axis=1)
        u = R_hat * np.abs(np.linalg.norm(d_hat, axis=1) - 1)
        viol = np.sum(e_y[ok] < u[ok] * (1 - b.epsilon[ok]) - 1e-12)
        sandwich = np.sum((b.sandwich_lo > e_y + 1e-12) | (e_y > b.sandwich_hi + 1e-12))
    detail(record_property, f"{ok.sum()} triples with eps<1, {viol} violations, {sandwich} sandwich "
                            f"failures, {tm.elapsed:.2f}s")
    assert ok.sum() > 10_000
    assert viol == 0 and sandwich == 0
    assert np.allclose(b.e_y_norm, e_y, rtol=1e-12, atol=1e-12)
    assert tm.elapsed < 5


@pytest.mark.acceptance(2, "noise variance oracle")
def test_noise_variance_oracle(record_property):
    lines, ok = [], True
    with Timer() as tm:
        for D, g, s in ((10, 50.0, 1.0), (5, 20.0, 0.5), (25, 100.0, 2.0)):
            est = noise_variance_oracle(g, D, s, n_samples=10**6, seed=D)
            gap = abs(est.estimate - s * s)
            allowed = est.remainder + 3 * est.std_error
            ok &= gap <= allowed
            lines.append(f"D={D}: |err|={gap:.4f} <= {allowed:.4f}")
    detail(record_property, "; ".join(lines) + f"; {tm.elapsed:.1f}s")
    assert ok
    assert tm.elapsed < 30


def _fd(spec, t, R_hat, d_hat, h=1e-5):
    def f(R, d):
        return float(loss_total(spec, t, HCMOutput(np.float64(R), d)).total)
    g = [(f(R_hat + h, d_hat) - f(R_hat - h, d_hat)) / (2 * h)]
    for j in range(d_hat.size):
        e = np.zeros_like(d_hat)
        e[j] = h
        g.append((f(R_hat, d_hat + e) - f(R_hat, d_hat - e)) / (2 * h))
    return np.array(g)


@pytest.mark.acceptance(3, "loss gradient vs finite differences")
def test_loss_gradient(record_property):
    rng = np.random.default_rng(303)
    fams = (lambda: PowerP(rng.uniform(1, 3)), lambda: Huber(rng.uniform(0.1, 2)),
            lambda: SmoothL1(rng.uniform(0.1, 2)))
    worst, used = 0.0, set()
    with Timer() as tm:
        for i in range(1000):
            picks = (i % 3, (i // 3) % 3, (i // 9) % 3)
            used.update(picks)
            spec = LossSpec(*(fams[p]() for p in picks), lambda_norm=float(rng.uniform(0, 3)))
            D = int(rng.integers(2, 7))
            y = rng.standard_normal(D) * rng.uniform(0.2, 5)
            t = decompose(y)
            d_hat = t.d + rng.normal(0, 0.5, D)
            R_hat = float(t.R + rng.normal(0, 1.0))
            g_R, g_d = loss_grad(spec, t, HCMOutput(np.float64(R_hat), d_hat))
            a = np.r_[g_R, g_d]
            n = _fd(spec, t, R_hat, d_hat)
            worst = max(worst, np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-300))
    detail(record_property, f"max relative error {worst:.2e} over 1000 configs, {tm.elapsed:.1f}s")
    assert used == {0, 1, 2}
    assert worst <= 1e-4
    assert tm.elapsed < 10


@pytest.mark.acceptance(4, "toy 1-D noise tracking")
def test_toy1d(record_property):
    with Timer() as tm:
        art = run_experiment(RunConfig.default("toy1d"))
    s = art.summary
    detail(record_property, f"pearson {s['pearson_sigma']:.3f}, sigma_hat beyond {s['sigma_hat_beyond']:.2f} "
                            f"vs clean {s['sigma_hat_clean']:.2f}, {tm.elapsed:.1f}s")
    assert s["pearson_sigma"] >= 0.9
    assert s["sigma_hat_beyond"] > s["sigma_hat_clean"]
    assert tm.elapsed < 60


@pytest.mark.acceptance(5, "two-moons boundary geometry")
def test_two_moons(record_property):
    with Timer() as tm:
        art = run_experiment(RunConfig.default("two-moons"))
    s = art.summary
    detail(record_property, f"spearman {s['spearman_u_dist']:.3f}, median dist high-u "
                            f"{s['median_dist_high_u']:.3f} vs all {s['median_dist_all']:.3f} "
                            f"(n_high={s['n_high_u']}), accuracy {s['accuracy']:.3f}, {tm.elapsed:.1f}s")
    assert not s["degenerate"]
    assert s["spearman_u_dist"] <= -0.5
    assert s["n_high_u"] > 0 and s["median_dist_high_u"] < s["median_dist_all"]
    assert s["accuracy"] >= 0.95
    assert tm.elapsed < 60


@pytest.mark.acceptance(6, "temperature calibration pipeline")
def test_calibration_pipeline(record_property):
    with Timer() as tm:
        rng = np.random.default_rng(606)
        n = 10_000
        u = rng.uniform(0.1, 2.0, n)
        err = u * np.abs(rng.standard_normal(n))
        m = CalibrationModel.fit(u, err)
        u_cal = m.calibrate(u)
        c1, c2 = coverage_at_k(u_cal, err, 1), coverage_at_k(u_cal, err, 2)
    detail(record_property, f"T={m.T:.4f}, cov1 {c1:.3f}, cov2 {c2:.3f}, {tm.elapsed:.2f}s")
    assert abs(m.T - 1) <= 0.15
    assert 0.6 <= c1 <= 0.76
    assert 0.9 <= c2 <= 0.99
    assert tm.elapsed < 10


def _pairwise_auroc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def _loop_ece(u, r, B=10):
    lo, hi = u.min(), u.max()
    w = (hi - lo) / B
    sums = {}
    for ui, ri in zip(u, r):
        b = B - 1 if w == 0 else min(int((ui - lo) / w), B - 1)
        su, sr, c = sums.get(b, (0.0, 0.0, 0))
        sums[b] = (su + ui, sr + ri, c + 1)
    return sum(abs(su - sr) for su, sr, _ in sums.values()) / len(u)


def _avg_ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = np.empty(len(x))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@pytest.mark.acceptance(7, "metric oracles")
def test_metric_oracles(record_property):
    rng = np.random.default_rng(707)
    worst = {"auroc": 0.0, "ece": 0.0, "coverage": 0.0, "spearman": 0.0}
    for _ in range(40):
        s = rng.integers(0, 12, 50).astype(float)
        y = np.r_[0, 1, rng.integers(0, 2, 48)]
        worst["auroc"] = max(worst["auroc"], abs(auroc(s, y) - _pairwise_auroc(s, y)))
        u, r = rng.exponential(size=200), rng.exponential(size=200)
        worst["ece"] = max(worst["ece"], abs(ece_reg(u, r) - _loop_ece(u, r)))
        for k in (1, 2, 3):
            ref = sum(ri <= k * ui for ui, ri in zip(u, r)) / len(u)
            worst["coverage"] = max(worst["coverage"], abs(coverage_at_k(u, r, k) - ref))
        ut = np.round(u, 1)  # force ties
        ru, rr = _avg_ranks(list(ut)), _avg_ranks(list(r))
        ref_sp = np.sum((ru - ru.mean()) * (rr - rr.mean())) / np.sqrt(
            np.sum((ru - ru.mean()) ** 2) * np.sum((rr - rr.mean()) ** 2))
        worst["spearman"] = max(worst["spearman"], abs(spearman(ut, r) - ref_sp))
    ref_set = rng.gamma(2.0, size=5000)
    q = np.sort(normalize_quantile(ref_set, ref_set))
    n = q.size
    ks = max(np.max(np.arange(1, n + 1) / n - q), np.max(q - np.arange(n) / n))
    detail(record_property, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f", KS {ks:.4f} <= {2 / np.sqrt(n):.4f}")
    assert worst["auroc"] == 0.0
    assert max(worst["ece"], worst["coverage"], worst["spearman"]) <= 1e-10
    assert ks <= 2 / np.sqrt(n)


@pytest.mark.acceptance(8, "blob OOD ranking with and without mixup")
def test_blob_ood(record_property):
    rows = []
    with Timer() as tm:
        for seed in range(5):
            cfg = RunConfig.default("blob-ood").replace(seed=seed)
            van = run_blob_ood(cfg, False).summary
            mix = run_blob_ood(cfg, True).summary
            rows.append((van["auroc"], mix["auroc"], mix["u_between"], mix["u_centers"]))
    a0 = np.array([r[0] for r in rows])
    a1 = np.array([r[1] for r in rows])
    better = int(np.sum(a1 > a0))
    probes = all(r[2] > r[3] for r in rows)
    detail(record_property, f"vanilla AUROC min {a0.min():.3f}, mixup min {a1.min():.3f}, mixup better on "
                            f"{better}/5, probes ordered on all seeds: {probes}, {tm.elapsed:.0f}s")
    assert np.all(a0 >= 0.8)
    assert np.all(a1 >= a0 - 0.02)
    assert better >= 3
    assert probes
    assert tm.elapsed < 180


@pytest.mark.acceptance(9, "norm-penalty sweep harness")
def test_lambda_sweep(record_property):
    cfg = RunConfig.default("lambda-sweep")
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    sweep = a.tables["sweep"]
    lam0 = list(sweep["lambda"]).index(0.0)
    detail(record_property, f"lambdas {sweep['lambda'].tolist()}, lambda=0 median norm dev "
                            f"{sweep['median_norm_dev'][lam0]:.3f}, stable {bool(sweep['stable'][lam0])}")
    assert sweep["lambda"].tolist() == [0.0, 1.0, 3.0, 5.0]
    assert np.isfinite(sweep["final_loss"][lam0])
    assert sweep["median_norm_dev"][lam0] < 0.5 and sweep["stable"][lam0]
    assert a.tables["sweep"].to_csv() == b.tables["sweep"].to_csv()


@pytest.mark.acceptance(10, "end-to-end determinism")
def test_determinism(record_property, tmp_path):
    same = []
    for name in ("toy1d", "two-moons", "noise-shift", "blob-ood", "lambda-sweep"):
        for run in ("a", "b"):
            assert cli.main(["experiment", name, "--seed", "7", "--out", str(tmp_path / name / run),
                             "--quiet"]) == 0
        for f in ("scores.csv", "metrics.json"):
            same.append((tmp_path / name / "a" / f).read_bytes() == (tmp_path / name / "b" / f).read_bytes())
    detail(record_property, f"{sum(same)}/{len(same)} files byte-identical across reruns")
    assert all(same)
