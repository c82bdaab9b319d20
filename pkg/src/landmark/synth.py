"""Synthetic long-tail scene graphs with a known generative process.

Each relation is drawn independently: a predicate ``k`` from a Zipf prior over
the foreground predicates, then a (subject class, object class) pair from the
predicate's pair table slice, then an object box placed relative to the
subject box by the predicate's spatial rule.  Relation feature maps are a
deterministic function of the scene (boxes, annotated predicates and a
per-scene noise seed), so they are rebuilt on demand instead of stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

BACKGROUND = 0


class ConfigurationError(ValueError):
    pass


class VocabularyError(IndexError):
    pass


@dataclass
class Vocabulary:
    entity_classes: list[str]
    predicate_classes: list[str]

    def __post_init__(self):
        if len(self.entity_classes) < 2 or len(self.predicate_classes) < 2:
            raise ConfigurationError("need at least 2 entity classes and 2 predicate classes")
        if len(set(self.entity_classes)) != len(self.entity_classes):
            raise ConfigurationError("entity class names must be unique")
        if len(set(self.predicate_classes)) != len(self.predicate_classes):
            raise ConfigurationError("predicate names must be unique")

    @property
    def n_entities(self) -> int:
        return len(self.entity_classes)

    @property
    def n_predicates(self) -> int:
        return len(self.predicate_classes)

    @classmethod
    def synthetic(cls, n_entities: int, n_predicates: int) -> "Vocabulary":
        return cls(
            [f"obj{i:03d}" for i in range(n_entities)],
            ["__background__"] + [f"pred{k:02d}" for k in range(1, n_predicates)],
        )


@dataclass
class SceneInstance:
    scene_id: int
    classes: np.ndarray  # (n,) int
    boxes: np.ndarray  # (n, 4) cx, cy, w, h in [0, 1]
    triplets: np.ndarray  # (m, 3) subject index, object index, predicate
    entity_features: np.ndarray  # (n, v)
    feature_seed: int

    @property
    def n_entities(self) -> int:
        return int(self.classes.shape[0])

    @property
    def entities(self) -> list[tuple[int, tuple[float, float, float, float]]]:
        return [(int(c), tuple(float(x) for x in b)) for c, b in zip(self.classes, self.boxes)]

    def predicate_matrix(self) -> np.ndarray:
        """(n, n) predicate per ordered pair, background where unannotated."""
        n = self.n_entities
        mat = np.zeros((n, n), dtype=np.int64)
        if len(self.triplets):
            mat[self.triplets[:, 0], self.triplets[:, 1]] = self.triplets[:, 2]
        return mat

    def ordered_pairs(self) -> np.ndarray:
        n = self.n_entities
        s, o = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = s != o
        return np.stack([s[keep], o[keep]], axis=1)

    def validate(self, n_entity_classes: int, n_predicates: int) -> None:
        b = self.boxes
        if np.any(b[:, 2:] <= 0):
            raise ValueError(f"scene {self.scene_id}: non-positive box size")
        lo = b[:, :2] - b[:, 2:] / 2
        hi = b[:, :2] + b[:, 2:] / 2
        if np.any(lo < -1e-12) or np.any(hi > 1 + 1e-12):
            raise ValueError(f"scene {self.scene_id}: box outside unit square")
        if np.any((self.classes < 0) | (self.classes >= n_entity_classes)):
            raise ValueError(f"scene {self.scene_id}: class index out of range")
        t = self.triplets
        if len(t):
            n = self.n_entities
            if np.any(t[:, :2] < 0) or np.any(t[:, :2] >= n):
                raise ValueError(f"scene {self.scene_id}: triplet references missing entity")
            if np.any(t[:, 0] == t[:, 1]):
                raise ValueError(f"scene {self.scene_id}: subject equals object")
            if np.any((t[:, 2] < 1) | (t[:, 2] >= n_predicates)):
                raise ValueError(f"scene {self.scene_id}: predicate out of range")
            if len({(int(a), int(c)) for a, c, _ in t}) != len(t):
                raise ValueError(f"scene {self.scene_id}: two predicates on one ordered pair")


@dataclass
class SynthConfig:
    n_entity_classes: int = 20
    n_predicates: int = 11
    n_channels: int = 32
    spatial: int = 7
    visual_dim: int = 32
    n_train: int = 2000
    n_eval: int = 400
    n_zeroshot: int = 200
    min_entities: int = 3
    max_entities: int = 8
    zipf_exponent: float = 1.2
    pattern_per_predicate: int = 2
    subject_support: int = 10
    object_support: int = 10
    n_zeroshot_pairs: int = 8
    subject_reuse: float = 0.3
    pattern_amplitude: float = 0.6
    background_amplitude: float = 0.3
    confuser_prob: float = 0.6
    noise_std: float = 1.0
    entity_noise: float = 1.0
    prototype_scale: float = 1.0
    spatial_jitter: float = 0.35


@dataclass
class GenerativeProcess:
    """Everything needed to sample scenes and rebuild their relation features.

    ``pair_table[i, j, k]`` is p(subject class i, object class j | predicate k)
    for foreground ``k``; the background slice is zero.  Consequently the
    predicate posterior for a class pair is proportional to
    ``zipf[k] * pair_table[i, j, k]``.
    """

    vocab: Vocabulary
    pair_table: np.ndarray  # (E, E, K)
    spatial_rules: np.ndarray  # (K, 3): angle, distance / subject size, log size ratio
    zipf_exponent: float
    pattern_channels: list[np.ndarray]  # per predicate, incl. background
    distractor_channels: np.ndarray
    geometry_channels: np.ndarray
    templates: np.ndarray  # (K, H, W), each with spatial mean 1
    prototypes: np.ndarray  # (E, v)
    heldout_pairs: np.ndarray  # (z, 2) class pairs never seen in training
    n_channels: int = 32
    spatial: int = 7
    pattern_amplitude: float = 0.6
    background_amplitude: float = 0.3
    confuser_prob: float = 0.6
    noise_std: float = 1.0
    entity_noise: float = 1.0
    spatial_jitter: float = 0.35
    subject_reuse: float = 0.3

    def __post_init__(self):
        if np.any(self.pair_table < 0):
            raise ConfigurationError("pair table weights must be nonnegative")
        if any(len(p) == 0 for p in self.pattern_channels):
            raise ConfigurationError("every predicate needs at least one pattern channel")

    @property
    def n_predicates(self) -> int:
        return self.vocab.n_predicates

    def zipf_prior(self) -> np.ndarray:
        k = np.arange(1, self.n_predicates)
        w = k.astype(float) ** (-self.zipf_exponent)
        prior = np.zeros(self.n_predicates)
        prior[1:] = w / w.sum()
        return prior

    def heldout_mask(self) -> np.ndarray:
        E = self.vocab.n_entities
        mask = np.zeros((E, E), dtype=bool)
        if len(self.heldout_pairs):
            mask[self.heldout_pairs[:, 0], self.heldout_pairs[:, 1]] = True
        return mask

    def split_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """(train table, zero-shot table): pair table restricted to seen / held-out pairs."""
        mask = self.heldout_mask()[:, :, None]
        return self.pair_table * ~mask, self.pair_table * mask

    # -- relation features -------------------------------------------------

    def geometry_maps(self, boxes: np.ndarray, pairs: np.ndarray) -> np.ndarray:
        """Subject / object occupancy of the union box, rasterised on the spatial grid.

        Returns (P, 2, H, W).
        """
        S = self.spatial
        bs, bo = boxes[pairs[:, 0]], boxes[pairs[:, 1]]
        lo = np.minimum(bs[:, :2] - bs[:, 2:] / 2, bo[:, :2] - bo[:, 2:] / 2)
        hi = np.maximum(bs[:, :2] + bs[:, 2:] / 2, bo[:, :2] + bo[:, 2:] / 2)
        grid = (np.arange(S) + 0.5) / S
        out = np.zeros((len(pairs), 2, S, S))
        for r, b in enumerate((bs, bo)):
            blo = (b[:, :2] - b[:, 2:] / 2 - lo) / (hi - lo)
            bhi = (b[:, :2] + b[:, 2:] / 2 - lo) / (hi - lo)
            inx = (grid[None, :] >= blo[:, 0:1]) & (grid[None, :] <= bhi[:, 0:1])
            iny = (grid[None, :] >= blo[:, 1:2]) & (grid[None, :] <= bhi[:, 1:2])
            out[:, r] = iny[:, :, None] & inx[:, None, :]
        return out

    def relation_features(self, scene: SceneInstance, pairs: np.ndarray | None = None) -> np.ndarray:
        """Relation feature maps (P, C, H, W) for ``pairs`` (default: all ordered pairs).

        The noise for a scene is always drawn for the full n x n grid in a fixed
        order, so a pair's map does not depend on which other pairs are requested.
        """
        n, C, S = scene.n_entities, self.n_channels, self.spatial
        K = self.n_predicates
        rng = make_rng(scene.feature_seed, "relation-features")
        noise = rng.standard_normal((n, n, C, S, S)) * self.noise_std
        gain = rng.uniform(0.6, 1.4, size=(n, n))
        confused = rng.random((n, n)) < self.confuser_prob
        confuser_u = rng.random((n, n))
        confuser_gain = rng.uniform(0.6, 1.4, size=(n, n))

        if pairs is None:
            pairs = scene.ordered_pairs()
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        s, o = pairs[:, 0], pairs[:, 1]
        pred = scene.predicate_matrix()[s, o]
        maps = noise[s, o].copy()
        maps[:, self.geometry_channels] += self.geometry_maps(scene.boxes, pairs)
        amp = np.where(pred == BACKGROUND, self.background_amplitude, self.pattern_amplitude) * gain[s, o]
        for p in range(len(pairs)):
            k = pred[p]
            maps[p, self.pattern_channels[k]] += amp[p] * self.templates[k]
            if confused[s[p], o[p]]:
                # confuser drawn from the foreground predicates other than the true one
                n_other = K - 1 if k == BACKGROUND else K - 2
                kc = 1 + int(confuser_u[s[p], o[p]] * n_other)
                if k != BACKGROUND and kc >= k:
                    kc += 1
                maps[p, self.pattern_channels[kc]] += (
                    self.pattern_amplitude * confuser_gain[s[p], o[p]] * self.templates[kc]
                )
        return maps


def build_process(cfg: SynthConfig, seed: int) -> GenerativeProcess:
    E, K, C = cfg.n_entity_classes, cfg.n_predicates, cfg.n_channels
    if E < 2 or K < 2:
        raise ConfigurationError("need E >= 2 and K >= 2")
    n_pattern = K * cfg.pattern_per_predicate
    if n_pattern + 2 > C:
        raise ConfigurationError(
            f"{C} channels cannot hold {n_pattern} pattern channels plus 2 geometry channels"
        )
    if not 2 <= cfg.min_entities <= cfg.max_entities:
        raise ConfigurationError("entity range must satisfy 2 <= min <= max")
    rng = make_rng(seed, "process")
    vocab = Vocabulary.synthetic(E, K)

    table = np.zeros((E, E, K))
    for k in range(1, K):
        subj = rng.choice(E, size=min(cfg.subject_support, E), replace=False)
        obj = rng.choice(E, size=min(cfg.object_support, E), replace=False)
        a = np.zeros(E)
        b = np.zeros(E)
        a[subj] = rng.dirichlet(np.ones(len(subj)))
        b[obj] = rng.dirichlet(np.ones(len(obj)))
        table[:, :, k] = np.outer(a, b)

    angles = np.linspace(0, 2 * np.pi, K - 1, endpoint=False) + rng.uniform(-0.1, 0.1, K - 1)
    dist = np.where(np.arange(K - 1) % 2 == 0, 0.6, 1.3)
    ratio = np.log(np.array([0.5, 1.0, 2.0]))[np.arange(K - 1) % 3]
    rules = np.zeros((K, 3))
    rules[1:, 0], rules[1:, 1], rules[1:, 2] = angles, dist, ratio

    perm = rng.permutation(C)
    pattern = [np.sort(perm[k * cfg.pattern_per_predicate:(k + 1) * cfg.pattern_per_predicate])
               for k in range(K)]
    geometry = np.sort(perm[n_pattern:n_pattern + 2])
    distractors = np.sort(perm[n_pattern + 2:])

    S = cfg.spatial
    yy, xx = np.meshgrid(np.arange(S), np.arange(S), indexing="ij")
    templates = np.zeros((K, S, S))
    for k in range(K):
        cy, cx = rng.uniform(0, S - 1, size=2)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (S / 4) ** 2))
        templates[k] = bump / bump.mean()

    protos = rng.standard_normal((E, cfg.visual_dim))
    protos *= cfg.prototype_scale / np.linalg.norm(protos, axis=1, keepdims=True)

    heldout = _carve_zeroshot(table, cfg.n_zeroshot_pairs, rng)
    return GenerativeProcess(
        vocab=vocab,
        pair_table=table,
        spatial_rules=rules,
        zipf_exponent=cfg.zipf_exponent,
        pattern_channels=pattern,
        distractor_channels=distractors,
        geometry_channels=geometry,
        templates=templates,
        prototypes=protos,
        heldout_pairs=heldout,
        n_channels=C,
        spatial=S,
        pattern_amplitude=cfg.pattern_amplitude,
        background_amplitude=cfg.background_amplitude,
        confuser_prob=cfg.confuser_prob,
        noise_std=cfg.noise_std,
        entity_noise=cfg.entity_noise,
        spatial_jitter=cfg.spatial_jitter,
        subject_reuse=cfg.subject_reuse,
    )


def _carve_zeroshot(table: np.ndarray, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    """Pick class pairs to withhold from training.

    A pair is accepted only if, after removal, every foreground predicate keeps
    at least half of its pair mass and both classes still occur in their role
    in the remaining table (so their marginals stay informative).
    """
    if n_pairs == 0:
        return np.zeros((0, 2), dtype=np.int64)
    E = table.shape[0]
    mass = table.sum(axis=2)
    candidates = np.argwhere(mass > 0)
    candidates = candidates[rng.permutation(len(candidates))]
    kept = table.copy()
    chosen: list[tuple[int, int]] = []
    for i, j in candidates:
        trial = kept.copy()
        trial[i, j] = 0
        fg = trial[:, :, 1:].sum(axis=(0, 1)) / table[:, :, 1:].sum(axis=(0, 1))
        if fg.min() < 0.5 or trial[i].sum() <= 0 or trial[:, j].sum() <= 0:
            continue
        kept = trial
        chosen.append((int(i), int(j)))
        if len(chosen) == n_pairs:
            return np.array(chosen, dtype=np.int64)
    raise ConfigurationError(
        f"cannot carve {n_pairs} zero-shot class pairs from a vocabulary of {E} classes"
    )


# ---------------------------------------------------------------------------
# scene sampling


def _random_box(rng: np.random.Generator) -> np.ndarray:
    w, h = np.exp(rng.uniform(np.log(0.1), np.log(0.35), size=2))
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.array([cx, cy, w, h])


def _fit_box(cx, cy, w, h) -> np.ndarray:
    w = float(np.clip(w, 0.03, 0.9))
    h = float(np.clip(h, 0.03, 0.9))
    cx = float(np.clip(cx, w / 2, 1 - w / 2))
    cy = float(np.clip(cy, h / 2, 1 - h / 2))
    return np.array([cx, cy, w, h])


def place_object(subject_box: np.ndarray, rule: np.ndarray, jitter: float,
                 rng: np.random.Generator) -> np.ndarray:
    angle, dist, log_ratio = rule
    scale = (subject_box[2] + subject_box[3]) / 2
    a = angle + rng.normal(0, jitter)
    d = dist * np.exp(rng.normal(0, jitter / 2))
    cx = subject_box[0] + d * scale * np.cos(a)
    cy = subject_box[1] + d * scale * np.sin(a)
    r = np.exp(log_ratio + rng.normal(0, jitter / 2, size=2))
    return _fit_box(cx, cy, subject_box[2] * r[0], subject_box[3] * r[1])


def sample_scene(process: GenerativeProcess, table: np.ndarray, prior: np.ndarray,
                 n_range: tuple[int, int], scene_id: int, seed: int) -> SceneInstance:
    rng = make_rng(seed, "scene", scene_id)
    E = process.vocab.n_entities
    target = int(rng.integers(n_range[0], n_range[1] + 1))
    flat = table.reshape(E * E, -1)
    classes: list[int] = []
    boxes: list[np.ndarray] = []
    triplets: list[tuple[int, int, int]] = []
    while len(classes) < target:
        if target - len(classes) == 1:
            classes.append(int(rng.integers(E)))
            boxes.append(_random_box(rng))
            continue
        k = int(rng.choice(len(prior), p=prior))
        col = flat[:, k]
        cell = int(rng.choice(E * E, p=col / col.sum()))
        ci, cj = divmod(cell, E)
        same = [idx for idx, c in enumerate(classes) if c == ci]
        if same and rng.random() < process.subject_reuse:
            s = same[int(rng.integers(len(same)))]
        else:
            s = len(classes)
            classes.append(ci)
            boxes.append(_random_box(rng))
        o = len(classes)
        classes.append(cj)
        boxes.append(place_object(boxes[s], process.spatial_rules[k], process.spatial_jitter, rng))
        triplets.append((s, o, k))
    cls = np.array(classes, dtype=np.int64)
    feats = process.prototypes[cls] + rng.standard_normal((len(cls), process.prototypes.shape[1])) * process.entity_noise
    return SceneInstance(
        scene_id=scene_id,
        classes=cls,
        boxes=np.array(boxes, dtype=np.float64),
        triplets=np.array(triplets, dtype=np.int64).reshape(-1, 3),
        entity_features=feats,
        feature_seed=int(rng.integers(0, 2**62)),
    )


@dataclass
class Dataset:
    process: GenerativeProcess
    scenes: list[SceneInstance]
    split: dict[str, list[int]]
    seed: int = 0
    config_text: str = ""
    _by_id: dict[int, SceneInstance] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {s.scene_id: s for s in self.scenes}

    @property
    def vocab(self) -> Vocabulary:
        return self.process.vocab

    def scene(self, scene_id: int) -> SceneInstance:
        return self._by_id[scene_id]

    def subset(self, name: str) -> list[SceneInstance]:
        return [self._by_id[i] for i in self.split[name]]

    def relation_features(self, scene: SceneInstance, pairs=None) -> np.ndarray:
        return self.process.relation_features(scene, pairs)


def generate_dataset(cfg: SynthConfig, seed: int, config_text: str = "") -> Dataset:
    """Sample train / eval / zero-shot scenes.

    Train and eval scenes are drawn from the pair table with the held-out class
    pairs removed; zero-shot scenes draw their relations only from held-out
    pairs, so each of their triplet types has training count zero.
    """
    if cfg.n_train <= 0:
        raise ConfigurationError("n_train must be positive")
    process = build_process(cfg, seed)
    train_table, zs_table = process.split_tables()
    prior = process.zipf_prior()
    n_range = (cfg.min_entities, cfg.max_entities)

    scenes: list[SceneInstance] = []
    split: dict[str, list[int]] = {"train": [], "eval": [], "zeroshot": []}
    sid = 0
    for name, count in (("train", cfg.n_train), ("eval", cfg.n_eval)):
        for _ in range(count):
            scenes.append(sample_scene(process, train_table, prior, n_range, sid, seed))
            split[name].append(sid)
            sid += 1
    if cfg.n_zeroshot > 0:
        zs_mass = zs_table[:, :, 1:].sum(axis=(0, 1))
        zs_prior = np.zeros_like(prior)
        zs_prior[1:] = prior[1:] * (zs_mass > 0)
        if zs_prior.sum() <= 0:
            raise ConfigurationError("zero-shot carve left no predicates to sample")
        zs_prior /= zs_prior.sum()
        for _ in range(cfg.n_zeroshot):
            scenes.append(sample_scene(process, zs_table, zs_prior, n_range, sid, seed))
            split["zeroshot"].append(sid)
            sid += 1
    return Dataset(process, scenes, split, seed=seed, config_text=config_text)


def predicate_counts(scenes: list[SceneInstance], n_predicates: int) -> np.ndarray:
    counts = np.zeros(n_predicates, dtype=np.int64)
    for s in scenes:
        if len(s.triplets):
            counts += np.bincount(s.triplets[:, 2], minlength=n_predicates)
    return counts


def summary_text(ds: Dataset) -> str:
    vocab = ds.vocab
    lines = [f"# synthetic scene-graph dataset, seed={ds.seed}",
             f"entity_classes={vocab.n_entities} predicates={vocab.n_predicates} "
             f"channels={ds.process.n_channels} spatial={ds.process.spatial}"]
    for name, ids in ds.split.items():
        scenes = ds.subset(name)
        counts = predicate_counts(scenes, vocab.n_predicates)
        lines.append(f"[{name}] scenes={len(ids)} triplets={int(counts.sum())}")
        for k in range(1, vocab.n_predicates):
            lines.append(f"  {vocab.predicate_classes[k]:<16s} {int(counts[k]):>8d}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# annotation statistics


@dataclass
class MarginalTables:
    m_sub: np.ndarray  # (E, K)
    m_obj: np.ndarray  # (E, K)
    freq_counts: np.ndarray  # (E, E, K) int


@dataclass
class PredicateDistribution:
    values: np.ndarray
    normalized: bool = True
    informative: bool = True


def _normalize_rows(counts: np.ndarray, eps: float) -> np.ndarray:
    sm = counts.astype(np.float64) + eps
    tot = sm.sum(axis=-1, keepdims=True)
    uniform = np.full_like(sm, 1.0 / sm.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(tot > 0, sm / np.where(tot > 0, tot, 1.0), uniform)
    return out


def compute_marginals(train_scenes: list[SceneInstance], n_entity_classes: int,
                      n_predicates: int, smoothing_eps: float = 1e-3) -> MarginalTables:
    """Per-triplet-occurrence subject/object predicate marginals and FREQ counts.

    Rows with no observations (and eps = 0) fall back to uniform.
    """
    if not train_scenes:
        raise ValueError("compute_marginals needs at least one scene")
    E, K = n_entity_classes, n_predicates
    freq = np.zeros((E, E, K), dtype=np.int64)
    for scene in train_scenes:
        t = scene.triplets
        if len(t):
            np.add.at(freq, (scene.classes[t[:, 0]], scene.classes[t[:, 1]], t[:, 2]), 1)
    sub_counts = freq.sum(axis=1)
    obj_counts = freq.sum(axis=0)
    return MarginalTables(
        m_sub=_normalize_rows(sub_counts, smoothing_eps),
        m_obj=_normalize_rows(obj_counts, smoothing_eps),
        freq_counts=freq,
    )


def freq_predict(freq_counts: np.ndarray, subject_class: int, object_class: int) -> PredicateDistribution:
    E = freq_counts.shape[0]
    if not (0 <= subject_class < E and 0 <= object_class < E):
        raise VocabularyError(f"class pair ({subject_class}, {object_class}) outside [0, {E})")
    cell = freq_counts[subject_class, object_class].astype(np.float64)
    total = cell.sum()
    if total <= 0:
        return PredicateDistribution(np.full(cell.shape, 1.0 / cell.size), True, informative=False)
    return PredicateDistribution(cell / total, True, informative=True)
