"""Recall@K, mean Recall@K and Top-N Recall@K under exact triplet matching.

Ranking ties are broken by (higher score, lower subject index, lower object
index, lower predicate index) everywhere, so every metric is a deterministic
function of the score order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalRecord:
    """Predictions for one scene.

    ``scores[p, k]`` is the score of predicate ``k`` for ordered pair
    ``pairs[p]``; entries set to ``-inf`` (e.g. background) are never
    candidates.  When ``pred_classes`` is given, a triplet only matches if both
    of its entities were labelled correctly.
    """

    scene_id: int
    gt: np.ndarray  # (m, 3)
    pairs: np.ndarray  # (P, 2)
    scores: np.ndarray  # (P, K)
    gt_classes: np.ndarray | None = None
    pred_classes: np.ndarray | None = None

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=np.int64).reshape(-1, 3)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape[0] != self.pairs.shape[0]:
            raise ValueError("scores and pairs disagree on the number of pairs")
        if np.any(np.isnan(self.scores)) or np.any(self.scores == np.inf):
            raise ValueError(f"scene {self.scene_id}: scores must be finite (or -inf to exclude)")

    def candidates(self) -> list[tuple[tuple[int, int], int, float]]:
        out = []
        for (s, o), row in zip(self.pairs, self.scores):
            for k, v in enumerate(row):
                if np.isfinite(v):
                    out.append(((int(s), int(o)), k, float(v)))
        return out

    def _label_ok(self) -> np.ndarray | None:
        if self.pred_classes is None or self.gt_classes is None:
            return None
        return np.asarray(self.pred_classes) == np.asarray(self.gt_classes)


def _rank(s, o, p, score) -> np.ndarray:
    return np.lexsort((p, o, s, -score))


def _hits(record: EvalRecord, kept: set[tuple[int, int, int]]) -> np.ndarray:
    ok = record._label_ok()
    hits = np.zeros(len(record.gt), dtype=bool)
    for t, (s, o, p) in enumerate(record.gt):
        if (int(s), int(o), int(p)) in kept and (ok is None or (ok[s] and ok[o])):
            hits[t] = True
    return hits


def top_k_triplets(record: EvalRecord, k: int) -> set[tuple[int, int, int]]:
    """Graph-constrained top-K: each pair contributes only its best predicate."""
    if k <= 0:
        raise ValueError("K must be positive")
    if record.pairs.shape[0] == 0:
        return set()
    best = np.argmax(record.scores, axis=1)  # first maximum = lowest predicate index
    score = record.scores[np.arange(len(best)), best]
    valid = np.isfinite(score)
    s, o = record.pairs[valid, 0], record.pairs[valid, 1]
    p, score = best[valid], score[valid]
    order = _rank(s, o, p, score)[:k]
    return {(int(s[i]), int(o[i]), int(p[i])) for i in order}


def recall_at_k(record: EvalRecord, k: int) -> float | None:
    """Fraction of ground-truth triplets recovered in the top K; None if the scene has none."""
    if len(record.gt) == 0:
        return None
    return float(_hits(record, top_k_triplets(record, k)).mean())


def topn_triplets(record: EvalRecord, n: int, k: int) -> set[tuple[int, int, int]]:
    """Each pair's top-N predicates, pooled and truncated to the best N*K."""
    if n < 1 or k <= 0:
        raise ValueError("N must be >= 1 and K > 0")
    P, nk = record.scores.shape
    if P == 0:
        return set()
    n_eff = min(n, nk)
    # stable sort on -score keeps lower predicate index first among ties
    order = np.argsort(-record.scores, axis=1, kind="stable")[:, :n_eff]
    rows = np.repeat(np.arange(P), n_eff)
    p = order.reshape(-1)
    score = record.scores[rows, p]
    valid = np.isfinite(score)
    s, o = record.pairs[rows[valid], 0], record.pairs[rows[valid], 1]
    p, score = p[valid], score[valid]
    keep = _rank(s, o, p, score)[: n * k]
    return {(int(s[i]), int(o[i]), int(p[i])) for i in keep}


def topn_recall_at_k(records: list[EvalRecord], n: int, k: int) -> float:
    vals = [float(_hits(r, topn_triplets(r, n, k)).mean()) for r in records if len(r.gt)]
    return float(np.mean(vals)) if vals else 0.0


def mean_over_records(records: list[EvalRecord], k: int) -> float:
    vals = [v for v in (recall_at_k(r, k) for r in records) if v is not None]
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class ClassRecall:
    per_class: dict[int, float]
    counts: dict[int, int]
    mean: float


def mean_recall_at_k(records: list[EvalRecord], k: int) -> ClassRecall:
    """Per-predicate recall over the whole corpus, macro-averaged over classes present."""
    hit: dict[int, int] = {}
    cnt: dict[int, int] = {}
    for r in records:
        if len(r.gt) == 0:
            continue
        h = _hits(r, top_k_triplets(r, k))
        for (_, _, p), ok in zip(r.gt, h):
            p = int(p)
            cnt[p] = cnt.get(p, 0) + 1
            hit[p] = hit.get(p, 0) + int(ok)
    per = {p: hit[p] / cnt[p] for p in sorted(cnt)}
    mean = float(np.mean(list(per.values()))) if per else 0.0
    return ClassRecall(per, dict(sorted(cnt.items())), mean)


# ---------------------------------------------------------------------------
# reports


def metrics_report(records: list[EvalRecord], task: str, ks=(20, 50, 100), ns=(1,),
                   predicate_names: list[str] | None = None) -> dict:
    out: dict = {"task": task, "n_records": sum(1 for r in records if len(r.gt)), "rows": []}
    for k in ks:
        mr = mean_recall_at_k(records, k)
        row = {
            "K": k,
            "R": mean_over_records(records, k),
            "mR": mr.mean,
            "topn": {str(n): topn_recall_at_k(records, n, k) for n in ns},
            "per_class": {
                (predicate_names[p] if predicate_names else str(p)): v for p, v in mr.per_class.items()
            },
        }
        out["rows"].append(row)
    return out


def format_report(report: dict) -> str:
    ns = list(report["rows"][0]["topn"]) if report["rows"] else []
    head = f"{'task':<8s} {'K':>4s} {'R@K':>8s} {'mR@K':>8s}" + "".join(f" {'Top' + n + '-R@K':>10s}" for n in ns)
    lines = [head]
    for row in report["rows"]:
        lines.append(
            f"{report['task']:<8s} {row['K']:>4d} {100 * row['R']:>8.2f} {100 * row['mR']:>8.2f}"
            + "".join(f" {100 * row['topn'][n]:>10.2f}" for n in ns)
        )
    return "\n".join(lines)


def pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or x.std() == 0 or y.std() == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])
