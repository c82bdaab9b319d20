"""Minimal pairwise scene-graph baseline with the three language modules plugged in.

Pipeline per batch of scenes: LCM context is concatenated onto visual entity
features, LAM gates the relation feature maps, the baseline heads score
every sampled pair, and EEM scores are added to the logits.  A disabled
module is an identity passthrough (zero context slot, unit gates, zero
offset), so tensor shapes never depend on the toggles.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from . import tensor as T
from .config import RunConfig
from .eem import ExperienceEstimator, distribution_label, eem_loss, joint_possibility, offset_prediction
from .lam import LanguageAttention, refine_relation
from .layers import MLP, Module
from .lcm import ContextEncoder, fuse_entity
from .metrics import EvalRecord
from .rng import make_rng
from .synth import BACKGROUND, Dataset, MarginalTables, SceneInstance, compute_marginals, freq_predict
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Toggles:
    eem: bool = True
    lam: bool = True
    lcm: bool = True

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Toggles":
        return cls(cfg.enable_eem, cfg.enable_lam, cfg.enable_lcm)

    def label(self) -> str:
        on = [n.upper() for n in ("eem", "lam", "lcm") if getattr(self, n)]
        return "+".join(on) if on else "baseline"


class LandmarkModel(Module):
    def __init__(self, cfg: RunConfig):
        E, K, C, v = cfg.n_entity_classes, cfg.n_predicates, cfg.n_channels, cfg.visual_dim
        D, d, s = cfg.embed_dim, cfg.context_dim, cfg.seed
        self.lcm = ContextEncoder(E, D, d, cfg.lcm_layers, cfg.lcm_heads, cfg.lcm_ffn_mult, seed=s)
        self.lam = LanguageAttention(E, D, C, seed=s, hidden=cfg.lam_hidden, kernel=cfg.lam_kernel,
                                     stride=cfg.lam_stride, padding=cfg.lam_padding, inner=cfg.lam_inner)
        shared = cfg.share_tables
        self.eem = ExperienceEstimator(E, K, D, cfg.eem_hidden, cfg.eem_head_hidden, cfg.eem_fusion, seed=s,
                                       subject_table=self.lam.w_s if shared else None,
                                       object_table=self.lam.w_o if shared else None)
        self.entity_head = MLP([v, cfg.entity_hidden, E], s, "baseline.entity_head")
        self.relation_head = MLP([2 * (v + d) + C, cfg.relation_hidden, K], s, "baseline.relation_head")
        self.context_dim = d
        self.n_channels = C

    def module_parameters(self, name: str) -> dict[str, Tensor]:
        prefix = {"eem": "eem.", "lam": "lam.", "lcm": "lcm.", "baseline": ("entity_head.", "relation_head.")}[name]
        return {k: p for k, p in self.named_parameters() if k.startswith(prefix)}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {state[k].shape} != model {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)


@dataclass
class PairBatch:
    """Ordered pairs drawn from several scenes, with their relation maps."""

    scenes: list[SceneInstance]
    scene_index: np.ndarray  # (P,) position of the pair's scene in ``scenes``
    sub: np.ndarray  # (P,) entity index inside the scene
    obj: np.ndarray
    labels: np.ndarray  # (P,) annotated predicate, background when none
    rel_maps: np.ndarray  # (P, C, H, W)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = [s.n_entities for s in self.scenes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)

    @property
    def global_sub(self) -> np.ndarray:
        return self.offsets[self.scene_index] + self.sub

    @property
    def global_obj(self) -> np.ndarray:
        return self.offsets[self.scene_index] + self.obj


def make_batch(dataset: Dataset, scenes: list[SceneInstance], pairs: list[np.ndarray]) -> PairBatch:
    idx, sub, obj, lab, maps = [], [], [], [], []
    for i, (scene, pr) in enumerate(zip(scenes, pairs)):
        pr = np.asarray(pr, dtype=np.int64).reshape(-1, 2)
        pm = scene.predicate_matrix()
        idx.append(np.full(len(pr), i))
        sub.append(pr[:, 0])
        obj.append(pr[:, 1])
        lab.append(pm[pr[:, 0], pr[:, 1]])
        maps.append(dataset.relation_features(scene, pr))
    return PairBatch(scenes, np.concatenate(idx).astype(np.int64), np.concatenate(sub), np.concatenate(obj),
                     np.concatenate(lab), np.concatenate(maps))


def sample_training_pairs(scene: SceneInstance, bg_ratio: int, rng: np.random.Generator) -> np.ndarray:
    """All annotated pairs plus up to ``bg_ratio`` background pairs per annotated one."""
    fg = scene.triplets[:, :2]
    pm = scene.predicate_matrix()
    allp = scene.ordered_pairs()
    bg = allp[pm[allp[:, 0], allp[:, 1]] == BACKGROUND]
    n_bg = min(len(bg), bg_ratio * max(1, len(fg)))
    pick = bg[np.sort(rng.choice(len(bg), size=n_bg, replace=False))] if n_bg else bg[:0]
    return np.concatenate([fg, pick]).astype(np.int64)


@dataclass
class ForwardOutput:
    logits: Tensor  # (P, K) offset prediction d-hat
    baseline_logits: Tensor  # (P, K) before the offset
    eem_scores: Tensor | None  # (P, K) raw d
    entity_logits: Tensor  # (N, E)
    attention: Tensor | None  # (P, C)
    classes: np.ndarray  # (N,) labels fed to the language modules


def forward_batch(model: LandmarkModel, batch: PairBatch, toggles: Toggles,
                  classes: np.ndarray | None = None, joint_eem: bool = True) -> ForwardOutput:
    visual = T.Tensor(np.concatenate([s.entity_features for s in batch.scenes]))
    boxes = np.concatenate([s.boxes for s in batch.scenes])
    if classes is None:
        classes = np.concatenate([s.classes for s in batch.scenes])
    entity_logits = model.entity_head(visual)

    if toggles.lcm:
        ctx = []
        start = 0
        for s in batch.scenes:
            n = s.n_entities
            ctx.append(model.lcm(classes[start:start + n], s.boxes))
            start += n
        context = T.concat(ctx, axis=0)
    else:
        context = T.Tensor(np.zeros((visual.shape[0], model.context_dim)))
    n_hat = fuse_entity(visual, context)

    gs, go = batch.global_sub, batch.global_obj
    rel = T.Tensor(batch.rel_maps)
    attention = None
    if toggles.lam:
        attention = model.lam.attention(classes[gs], classes[go])
        pooled = T.mean_pool(refine_relation(rel, attention))
    else:
        pooled = T.mean_pool(rel)
    pair_in = T.concat([T.take_rows(n_hat, gs), T.take_rows(n_hat, go), pooled], axis=1)
    base = model.relation_head(pair_in)

    d = None
    logits = base
    if toggles.eem:
        d = model.eem(classes[gs], classes[go], boxes[gs], boxes[go])
        logits = offset_prediction(base, d if joint_eem else d.detach())
    return ForwardOutput(logits, base, d, entity_logits, attention, classes)


def forward_scene(model: LandmarkModel, dataset: Dataset, scene: SceneInstance, toggles: Toggles,
                  classes: np.ndarray | None = None) -> ForwardOutput:
    """All ordered pairs of one scene."""
    batch = make_batch(dataset, [scene], [scene.ordered_pairs()])
    return forward_batch(model, batch, toggles, classes)


@dataclass
class LossParts:
    total: Tensor
    ce: float
    mse: float
    entity_ce: float


def batch_loss(model: LandmarkModel, out: ForwardOutput, batch: PairBatch, marginals: MarginalTables,
               cfg: RunConfig, toggles: Toggles) -> LossParts:
    ce = T.cross_entropy(out.logits, batch.labels)
    gt_classes = np.concatenate([s.classes for s in batch.scenes])
    ent_ce = T.cross_entropy(out.entity_logits, gt_classes)
    total = ce + ent_ce
    mse_val = 0.0
    if toggles.eem:
        fg = np.flatnonzero(batch.labels != BACKGROUND)
        if fg.size:
            ci = out.classes[batch.global_sub[fg]]
            cj = out.classes[batch.global_obj[fg]]
            target = distribution_label(joint_possibility(marginals.m_sub[ci], marginals.m_obj[cj]),
                                        batch.labels[fg], cfg.mu)
            d = T.take_rows(out.eem_scores, fg)
            view = T.softmax(d, axis=-1) if cfg.eem_mse_on_softmax else d
            mse = eem_loss(view, target)
            mse_val = mse.item()
            if cfg.lambda_mse:
                total = total + mse * cfg.lambda_mse
    return LossParts(total, ce.item(), mse_val, ent_ce.item())


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: LandmarkModel
    config: RunConfig
    trace: list[dict]
    iteration: int
    rng_state: dict


def train(dataset: Dataset, cfg: RunConfig, marginals: MarginalTables | None = None,
          eval_fn=None) -> TrainResult:
    """Plain SGD with constant learning rate over shuffled train scenes."""
    toggles = Toggles.from_config(cfg)
    train_scenes = dataset.subset("train")
    if marginals is None:
        marginals = compute_marginals(train_scenes, dataset.vocab.n_entities, dataset.vocab.n_predicates,
                                      cfg.smoothing_eps)
    model = LandmarkModel(cfg)
    params = model.parameters()
    rng = make_rng(cfg.seed, "train")
    order = rng.permutation(len(train_scenes))
    cursor = 0
    trace: list[dict] = []
    for step in range(cfg.iterations):
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(len(train_scenes))
            cursor = 0
        picked = [train_scenes[i] for i in order[cursor:cursor + cfg.batch_size]]
        cursor += cfg.batch_size
        pairs = [sample_training_pairs(s, cfg.bg_ratio, rng) for s in picked]
        batch = make_batch(dataset, picked, pairs)

        for p in params:
            p.grad = None
        with Tape() as tape:
            out = forward_batch(model, batch, toggles, joint_eem=cfg.eem_joint)
            parts = batch_loss(model, out, batch, marginals, cfg, toggles)
        total = parts.total.item()
        if not np.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: total={total} ce={parts.ce} mse={parts.mse} "
                f"entity_ce={parts.entity_ce}"
            )
        tape.backward(parts.total)
        for p in params:
            if p.grad is not None:
                p.data -= cfg.lr * p.grad
        trace.append({"step": step, "total": total, "ce": parts.ce, "mse": parts.mse,
                      "entity_ce": parts.entity_ce})
        if cfg.eval_every and eval_fn is not None and (step + 1) % cfg.eval_every == 0:
            trace.append({"step": step, **eval_fn(model)})
        if step % 100 == 0:
            log.info("step %d total %.4f ce %.4f mse %.5f", step, total, parts.ce, parts.mse)
    return TrainResult(model, cfg, trace, cfg.iterations, rng.bit_generator.state)


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_KIND = "checkpoint"


def checkpoint_blocks(result: TrainResult) -> dict[str, object]:
    blocks: dict[str, object] = {
        "config": result.config.to_text(),
        "meta": json.dumps({"iteration": result.iteration}, sort_keys=True),
        "rng_state": json.dumps(result.rng_state, sort_keys=True),
    }
    for name, arr in result.model.state_dict().items():
        blocks[f"param/{name}"] = arr
    return blocks


def save_checkpoint(result: TrainResult, path: str | Path) -> None:
    container.save(path, CHECKPOINT_KIND, checkpoint_blocks(result))


def load_checkpoint(path: str | Path) -> TrainResult:
    _, b = container.load(path, expect_kind=CHECKPOINT_KIND)
    cfg = RunConfig.from_text(b["config"])
    model = LandmarkModel(cfg)
    model.load_state_dict({k[len("param/"):]: v for k, v in b.items() if k.startswith("param/")})
    meta = json.loads(b["meta"])
    return TrainResult(model, cfg, [], int(meta["iteration"]), json.loads(b["rng_state"]))


def save_trace(trace: list[dict], path: str | Path, config_text: str = "") -> None:
    lines = [json.dumps({"config": config_text}, sort_keys=True)] if config_text else []
    lines += [json.dumps(r, sort_keys=True) for r in trace]
    container.atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# prediction


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_scenes(model: LandmarkModel, dataset: Dataset, scenes: list[SceneInstance], task: str,
                   toggles: Toggles, chunk: int = 32, workers: int = 1) -> list[EvalRecord]:
    """Score every ordered pair of each scene; background is never a candidate.

    predcls feeds ground-truth labels to the language modules; sgcls feeds the
    entity head's argmax and multiplies pair scores by both entity confidences.
    """
    if task not in ("predcls", "sgcls"):
        raise ValueError(f"unknown task {task!r}")
    chunks = [scenes[i:i + chunk] for i in range(0, len(scenes), chunk)]

    def run(group: list[SceneInstance]) -> list[EvalRecord]:
        batch = make_batch(dataset, group, [s.ordered_pairs() for s in group])
        visual = np.concatenate([s.entity_features for s in group])
        ent_prob = _softmax_np(model.entity_head(T.Tensor(visual)).data)
        classes = None
        if task == "sgcls":
            classes = np.argmax(ent_prob, axis=1)
        out = forward_batch(model, batch, toggles, classes)
        probs = _softmax_np(out.logits.data)
        if task == "sgcls":
            conf = ent_prob.max(axis=1)
            probs = probs * (conf[batch.global_sub] * conf[batch.global_obj])[:, None]
        probs[:, BACKGROUND] = -np.inf
        records = []
        for i, s in enumerate(group):
            m = batch.scene_index == i
            records.append(EvalRecord(
                scene_id=s.scene_id,
                gt=s.triplets,
                pairs=np.stack([batch.sub[m], batch.obj[m]], axis=1),
                scores=probs[m],
                gt_classes=s.classes if task == "sgcls" else None,
                pred_classes=out.classes[batch.offsets[i]:batch.offsets[i] + s.n_entities]
                if task == "sgcls" else None,
            ))
        return records

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(run, chunks))
    else:
        groups = [run(c) for c in chunks]
    return [r for g in groups for r in g]


def predict_scene(model: LandmarkModel, dataset: Dataset, scene: SceneInstance, task: str,
                  toggles: Toggles) -> EvalRecord:
    return predict_scenes(model, dataset, [scene], task, toggles)[0]


def ranked_triplets(record: EvalRecord) -> list[tuple[int, int, int, float]]:
    """Per-pair predicate lists flattened and sorted by score (ties: s, o, p ascending)."""
    rows = [(s, o, p, v) for (s, o), p, v in record.candidates()]
    return sorted(((s, o, p, v) for s, o, p, v in rows), key=lambda t: (-t[3], t[0], t[1], t[2]))


def eem_records(model: LandmarkModel, scenes: list[SceneInstance]) -> list[EvalRecord]:
    """Score every pair with the experience estimator alone (softmax of d)."""
    records = []
    for s in scenes:
        pairs = s.ordered_pairs()
        d = model.eem(s.classes[pairs[:, 0]], s.classes[pairs[:, 1]],
                      s.boxes[pairs[:, 0]], s.boxes[pairs[:, 1]]).data
        scores = _softmax_np(d)
        scores[:, BACKGROUND] = -np.inf
        records.append(EvalRecord(s.scene_id, s.triplets, pairs, scores))
    return records


def freq_records(marginals: MarginalTables, scenes: list[SceneInstance]) -> list[EvalRecord]:
    records = []
    for s in scenes:
        pairs = s.ordered_pairs()
        scores = np.stack([
            freq_predict(marginals.freq_counts, s.classes[a], s.classes[b]).values for a, b in pairs
        ]) if len(pairs) else np.zeros((0, marginals.freq_counts.shape[2]))
        scores[:, BACKGROUND] = -np.inf
        records.append(EvalRecord(s.scene_id, s.triplets, pairs, scores))
    return records
