"""Pure-Python reference implementations used as independent oracles.

Nothing here imports the package; every quantity is recomputed with explicit
loops over plain lists.
"""

import math


def joint(a, b):
    prod = [x * y for x, y in zip(a, b)]
    tot = math.fsum(prod)
    if tot <= 0:
        return [1.0 / len(prod)] * len(prod)
    return [v / tot for v in prod]


def label(p, r, mu):
    return [mu * v + (1 - mu) * (1.0 if k == r else 0.0) for k, v in enumerate(p)]


def mse(d, l):
    return math.fsum((x - y) ** 2 for x, y in zip(d, l)) / len(d)


def _candidates(pairs, scores):
    for (s, o), row in zip(pairs, scores):
        for k, v in enumerate(row):
            if v != -math.inf:
                yield float(v), int(s), int(o), k


def _key(c):
    v, s, o, k = c
    return (-v, s, o, k)


def graph_topk(pairs, scores, K):
    best = []
    for (s, o), row in zip(pairs, scores):
        top_k, top_v = None, None
        for k, v in enumerate(row):
            if v == -math.inf:
                continue
            if top_v is None or v > top_v:
                top_k, top_v = k, float(v)
        if top_k is not None:
            best.append((top_v, int(s), int(o), top_k))
    best.sort(key=_key)
    return {(s, o, k) for _, s, o, k in best[:K]}


def topn_pool(pairs, scores, N, K):
    pool = []
    for (s, o), row in zip(pairs, scores):
        cands = sorted(_candidates([(s, o)], [row]), key=_key)
        pool.extend(cands[:N])
    pool.sort(key=_key)
    return {(s, o, k) for _, s, o, k in pool[: N * K]}


def recall(gt, kept):
    if not len(gt):
        return None
    return sum(1 for s, o, p in gt if (int(s), int(o), int(p)) in kept) / len(gt)


def mean_recall(records, K):
    """records: iterable of (gt, pairs, scores)."""
    hit, cnt = {}, {}
    for gt, pairs, scores in records:
        kept = graph_topk(pairs, scores, K)
        for s, o, p in gt:
            p = int(p)
            cnt[p] = cnt.get(p, 0) + 1
            hit[p] = hit.get(p, 0) + ((int(s), int(o), p) in kept)
    if not cnt:
        return 0.0
    return math.fsum(hit[p] / cnt[p] for p in cnt) / len(cnt)


def entropy(p):
    return -math.fsum(v * math.log(v) for v in p if v > 0)
