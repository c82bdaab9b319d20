import numpy as np

from landmark.metrics import EvalRecord


def random_record(rng, n_ent=None, n_pred=None, ties=False, scene_id=0):
    n = n_ent or int(rng.integers(2, 6))
    K = n_pred or int(rng.integers(2, 7))
    pairs = np.array([(i, j) for i in range(n) for j in range(n) if i != j])
    scores = rng.integers(0, 4, size=(len(pairs), K)).astype(float) if ties else rng.normal(size=(len(pairs), K))
    if rng.random() < 0.5:
        scores[:, 0] = -np.inf
    m = int(rng.integers(0, min(len(pairs), 5) + 1))
    pick = rng.choice(len(pairs), size=m, replace=False)
    gt = np.array([(*pairs[i], rng.integers(1, K)) for i in pick]).reshape(-1, 3)
    return EvalRecord(scene_id, gt, pairs, scores)
