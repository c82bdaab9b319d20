"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line with the measured numbers; the lines are
printed together at the end of the pytest run (see ``conftest.py``).  Trained
models are cached per session so criteria 6-9 share the same five runs.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from helpers import random_record
from landmark import cli, storage
from landmark.checks import all_passed, module_gradchecks
from landmark.config import RunConfig
from landmark.container import encode
from landmark.eem import distribution_label, eem_loss, joint_possibility
from landmark.lcm import ContextEncoder
from landmark.metrics import (EvalRecord, mean_recall_at_k, recall_at_k, top_k_triplets,
                              topn_recall_at_k, topn_triplets)
from landmark.model import Toggles, eem_records, freq_records, predict_scenes, train
from landmark.synth import BACKGROUND, freq_predict, generate_dataset

RESULTS: dict[int, str] = {}

RUNS = {
    "baseline": dict(enable_eem=False, enable_lam=False, enable_lcm=False),
    "EEM": dict(enable_eem=True, enable_lam=False, enable_lcm=False),
    "EEM+LAM": dict(enable_eem=True, enable_lam=True, enable_lcm=False),
    "LAM+LCM": dict(enable_eem=False, enable_lam=True, enable_lcm=True),
    "all": dict(enable_eem=True, enable_lam=True, enable_lcm=True),
}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


class Trained:
    """Lazily trains each toggle configuration once, on the default desk config."""

    def __init__(self, ds, cfg, marginals):
        self.ds, self.cfg, self.marginals = ds, cfg, marginals
        self.cache: dict[str, tuple] = {}

    def get(self, name):
        if name not in self.cache:
            cfg = self.cfg.with_overrides(**RUNS[name])
            t0 = time.perf_counter()
            res = train(self.ds, cfg, self.marginals)
            elapsed = time.perf_counter() - t0
            recs = predict_scenes(res.model, self.ds, self.ds.subset("eval"), "predcls", Toggles.from_config(cfg))
            self.cache[name] = (res, recs, elapsed)
        return self.cache[name]

    def r_mr(self, name, k=50):
        recs = self.get(name)[1]
        plain = [v for v in (recall_at_k(r, k) for r in recs) if v is not None]
        return float(np.mean(plain)), mean_recall_at_k(recs, k).mean


@pytest.fixture(scope="module")
def trained(desk_ds, desk_cfg, desk_marginals):
    return Trained(desk_ds, desk_cfg, desk_marginals)


# 1 -------------------------------------------------------------------------

def test_c1_gradient_integrity():
    t0 = time.perf_counter()
    reports = module_gradchecks(RunConfig(), h=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - t0
    worst = {k: r.max_rel_error for k, r in reports.items()}
    ok = all_passed(reports) and set(reports) == {"lam", "lcm", "eem", "full"} and elapsed < 120
    record(1, ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f}s")
    assert ok


# 2 -------------------------------------------------------------------------

def test_c2_distribution_and_metric_oracles():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    n = 1000
    worst = 0.0
    for _ in range(n):
        K = int(rng.integers(2, 16))
        a = rng.uniform(size=K) * (rng.random(K) > 0.2)
        b = rng.uniform(size=K)
        got = joint_possibility(a, b)
        worst = max(worst, max(abs(x - y) for x, y in zip(got, oracles.joint(a.tolist(), b.tolist()))))
        p, r, mu = rng.dirichlet(np.ones(K)), int(rng.integers(K)), float(rng.random())
        worst = max(worst, max(abs(x - y) for x, y in zip(distribution_label(p, r, mu), oracles.label(p.tolist(), r, mu))))
        d, l = rng.normal(size=K), rng.normal(size=K)
        worst = max(worst, abs(eem_loss(d, l).item() - oracles.mse(d.tolist(), l.tolist())))
    metric_bad = 0
    for i in range(n):
        recs = [random_record(rng, ties=bool(i % 2), scene_id=j) for j in range(2)]
        K, N = int(rng.integers(1, 12)), int(rng.integers(1, 4))
        for r in recs:
            kept = oracles.graph_topk(r.pairs.tolist(), r.scores.tolist(), K)
            metric_bad += top_k_triplets(r, K) != kept
            metric_bad += recall_at_k(r, K) != oracles.recall(r.gt, kept)
            pool = oracles.topn_pool(r.pairs.tolist(), r.scores.tolist(), N, K)
            metric_bad += topn_triplets(r, N, K) != pool
        got_mr = mean_recall_at_k(recs, K).mean
        worst = max(worst, abs(got_mr - oracles.mean_recall([(r.gt, r.pairs, r.scores) for r in recs], K)))
        vals = [oracles.recall(r.gt, oracles.topn_pool(r.pairs.tolist(), r.scores.tolist(), N, K)) for r in recs]
        vals = [v for v in vals if v is not None]
        worst = max(worst, abs(topn_recall_at_k(recs, N, K) - (math.fsum(vals) / len(vals) if vals else 0.0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and metric_bad == 0 and elapsed < 60
    record(2, ok, f"{n} instances per function, max abs diff {worst:.1e}, set mismatches {metric_bad}; {elapsed:.0f}s")
    assert ok


# 3 -------------------------------------------------------------------------

def test_c3_topn_identity():
    failures = []
    count = [0]

    @settings(max_examples=500, deadline=None, database=None)
    @given(st.integers(0, 2**32 - 1), st.booleans(), st.integers(1, 30))
    def prop(seed, ties, k):
        count[0] += 1
        rng = np.random.default_rng(seed)
        recs = [random_record(rng, ties=ties, scene_id=i) for i in range(int(rng.integers(1, 5)))]
        plain = [v for v in (recall_at_k(r, k) for r in recs) if v is not None]
        want = float(np.mean(plain)) if plain else 0.0
        if topn_recall_at_k(recs, 1, k) != want:
            failures.append((seed, ties, k))
        assert topn_recall_at_k(recs, 1, k) == want

    try:
        prop()
    finally:
        record(3, not failures, f"{count[0]} randomized prediction sets, exact equality, {len(failures)} mismatches")
    assert not failures


# 4 -------------------------------------------------------------------------

def test_c4_transformer_invariants():
    rng = np.random.default_rng(4)
    worst_row, non_equiv = 0.0, 0
    n_scenes = 200
    for i in range(n_scenes):
        enc = ContextEncoder(20, 64, 64, 2, 4, seed=i % 5)
        n = int(rng.integers(1, 9))
        classes, boxes = rng.integers(20, size=n), rng.uniform(0.05, 0.95, size=(n, 4))
        attn = []
        out = enc(classes, boxes, attn_out=attn).data
        for a in attn:
            worst_row = max(worst_row, float(np.abs(a.sum(axis=-1) - 1).max()))
        perm = rng.permutation(n)
        non_equiv += not np.array_equal(out[perm], enc(classes[perm], boxes[perm]).data)
    ok = non_equiv == 0 and worst_row <= 1e-9
    record(4, ok, f"{n_scenes} scenes: equivariance violations {non_equiv}, max |row sum - 1| {worst_row:.1e}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_c5_zeroshot_informativeness(desk_ds, desk_marginals):
    K = desk_marginals.m_sub.shape[1]
    bound = math.log(K) - 0.1
    scenes = desk_ds.subset("zeroshot")
    total, bad, worst = 0, 0, 0.0
    for s in scenes:
        for i, j, _ in s.triplets:
            ci, cj = s.classes[i], s.classes[j]
            f = freq_predict(desk_marginals.freq_counts, ci, cj)
            h = oracles.entropy(joint_possibility(desk_marginals.m_sub[ci], desk_marginals.m_obj[cj]))
            worst = max(worst, h)
            total += 1
            bad += f.informative or not h < bound
    ok = total > 0 and bad == 0
    record(5, ok, f"{total - bad}/{total} zero-shot pairs uninformative under FREQ with entropy < log K - 0.1 "
                  f"(max {worst:.3f} vs bound {bound:.3f})")
    assert ok


# 6 -------------------------------------------------------------------------

def test_c6_eem_beats_freq(trained, desk_ds, desk_marginals):
    res, _, elapsed = trained.get("EEM")
    scenes = desk_ds.subset("eval")
    eem = topn_recall_at_k(eem_records(res.model, scenes), 1, 100)
    freq = topn_recall_at_k(freq_records(desk_marginals, scenes), 1, 100)
    ok = eem - freq >= 0.02 and elapsed < 600
    record(6, ok, f"EEM top-1 {100 * eem:.2f} vs FREQ top-1 {100 * freq:.2f} "
                  f"(+{100 * (eem - freq):.2f} pts); trained in {elapsed:.0f}s")
    assert ok


# 7 -------------------------------------------------------------------------

def test_c7_full_improves_mean_recall(trained):
    r0, mr0 = trained.r_mr("baseline")
    r1, mr1 = trained.r_mr("all")
    elapsed = trained.get("baseline")[2] + trained.get("all")[2]
    drop = (r0 - r1) / r0 if r0 > 0 else 0.0
    ok = mr1 - mr0 >= 0.02 and drop < 0.10 and elapsed < 1200
    record(7, ok, f"mR@50 {100 * mr0:.2f} -> {100 * mr1:.2f} (+{100 * (mr1 - mr0):.2f}); "
                  f"R@50 {100 * r0:.2f} -> {100 * r1:.2f} ({-100 * drop:+.1f}% rel); {elapsed:.0f}s")
    assert ok


# 8 -------------------------------------------------------------------------

def test_c8_ablation_coverage(trained):
    _, base = trained.r_mr("baseline")
    rows = {name: trained.r_mr(name)[1] for name in ("EEM", "EEM+LAM", "LAM+LCM")}
    ok = all(v >= base for v in rows.values())
    record(8, ok, f"baseline mR@50 {100 * base:.2f}; " + ", ".join(f"{k} {100 * v:.2f}" for k, v in rows.items()))
    assert ok


# 9 -------------------------------------------------------------------------

def test_c9_lam_channel_selection(trained, desk_ds):
    res, _, _ = trained.get("all")
    proc = desk_ds.process
    pattern, distract = [], []
    for k in range(1, proc.n_predicates):
        rows = [(s.classes[i], s.classes[j]) for s in desk_ds.subset("eval") for i, j, p in s.triplets if p == k]
        if not rows:
            continue
        a = res.model.lam.attention(np.array([r[0] for r in rows]), np.array([r[1] for r in rows])).data
        pattern.append(a[:, proc.pattern_channels[k]].mean())
        distract.append(a[:, proc.distractor_channels].mean())
    pattern, distract = np.array(pattern), np.array(distract)
    ok = pattern.mean() > distract.mean()
    record(9, ok, f"mean attention pattern {pattern.mean():.4f} vs distractor {distract.mean():.4f}; "
                  f"{int(np.sum(pattern > distract))}/{len(pattern)} classes individually")
    assert ok


# 10 ------------------------------------------------------------------------

def test_c10_reproducibility(tmp_path):
    cfg = RunConfig(n_train=200, n_eval=40, n_zeroshot=20)
    blobs = [storage.dataset_blocks(generate_dataset(cfg.synth(), 11, cfg.to_text())) for _ in range(2)]
    same_data = encode("dataset", blobs[0]) == encode("dataset", blobs[1])
    storage.save_dataset(generate_dataset(cfg.synth(), 11, cfg.to_text()), tmp_path / "d.lmk")
    args = ["train", "--seed", "11", "--dataset", str(tmp_path / "d.lmk"), "--iterations", "25",
            "--set", "n_train=200", "--set", "n_eval=40", "--set", "n_zeroshot=20"]
    codes = [cli.main(args + ["--out", str(tmp_path / f"ck{i}.lmk")]) for i in range(2)]
    same_ck = (tmp_path / "ck0.lmk").read_bytes() == (tmp_path / "ck1.lmk").read_bytes()
    ok = same_data and same_ck and codes == [0, 0]
    record(10, ok, f"dataset bytes identical: {same_data}; checkpoints identical: {same_ck}")
    assert ok
