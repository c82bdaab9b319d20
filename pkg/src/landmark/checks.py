"""Per-module finite-difference checks on small seeded fixtures.

Each check builds the module from the run config, draws a fixture from a tiny
generated dataset and compares tape gradients of a scalar probe loss against
central differences for every parameter block.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .eem import distribution_label, eem_loss, joint_possibility
from .gradcheck import GradCheckReport, finite_diff_check
from .model import LandmarkModel, Toggles, batch_loss, forward_batch, make_batch
from .rng import make_rng
from .synth import compute_marginals, generate_dataset

MODULES = ("lam", "lcm", "eem", "full")


def _fixture(cfg: RunConfig):
    small = cfg.with_overrides(n_train=6, n_eval=2, n_zeroshot=1, min_entities=3, max_entities=4)
    ds = generate_dataset(small.synth(), cfg.seed)
    train = ds.subset("train")
    marg = compute_marginals(train, cfg.n_entity_classes, cfg.n_predicates, cfg.smoothing_eps)
    scene = max(train, key=lambda s: (len(s.triplets), s.n_entities))
    return ds, scene, marg


def _probe_pairs(scene, n_pairs: int) -> np.ndarray:
    """A few ordered pairs, annotated ones first.

    Every first-layer LAM bias shifts D*D/stride^2 pre-activations per pair;
    keeping the pair count low keeps most coordinates clear of ReLU kinks.
    """
    pairs = scene.ordered_pairs()
    labels = scene.predicate_matrix()[pairs[:, 0], pairs[:, 1]]
    order = np.argsort(labels == 0, kind="stable")
    return pairs[order[:n_pairs]]


def module_gradchecks(cfg: RunConfig, modules=MODULES, max_entries: int | None = 12,
                      h: float = 1e-5, tol: float = 1e-4, n_pairs: int = 2) -> dict[str, GradCheckReport]:
    cfg = cfg.with_overrides(enable_eem=True, enable_lam=True, enable_lcm=True)
    ds, scene, marg = _fixture(cfg)
    model = LandmarkModel(cfg)
    rng = make_rng(cfg.seed, "gradcheck")
    pairs = _probe_pairs(scene, n_pairs)
    sub_c, obj_c = scene.classes[pairs[:, 0]], scene.classes[pairs[:, 1]]
    reports: dict[str, GradCheckReport] = {}

    def run(name, f, params):
        reports[name] = finite_diff_check(f, params, h=h, tol=tol, max_entries=max_entries,
                                          seed=cfg.seed)

    if "lam" in modules:
        probe = rng.normal(size=(len(pairs), cfg.n_channels))
        run("lam", lambda: (model.lam.attention(sub_c, obj_c) * probe).sum(),
            dict(model.lam.named_parameters()))
    if "lcm" in modules:
        probe = rng.normal(size=(scene.n_entities, cfg.context_dim))
        run("lcm", lambda: (model.lcm(scene.classes, scene.boxes) * probe).sum(),
            dict(model.lcm.named_parameters()))
    if "eem" in modules:
        labels = scene.predicate_matrix()[pairs[:, 0], pairs[:, 1]]
        target = distribution_label(joint_possibility(marg.m_sub[sub_c], marg.m_obj[obj_c]), labels, cfg.mu)
        sb, ob = scene.boxes[pairs[:, 0]], scene.boxes[pairs[:, 1]]
        run("eem", lambda: eem_loss(T.softmax(model.eem(sub_c, obj_c, sb, ob), axis=-1), target),
            dict(model.eem.named_parameters()))
    if "full" in modules:
        batch = make_batch(ds, [scene], [pairs])
        toggles = Toggles(True, True, True)

        def full():
            out = forward_batch(model, batch, toggles, joint_eem=cfg.eem_joint)
            return batch_loss(model, out, batch, marg, cfg, toggles).total

        run("full", full, dict(model.named_parameters()))
    return reports


def report_lines(reports: dict[str, GradCheckReport]) -> list[str]:
    lines = []
    for name, rep in reports.items():
        lines.append(f"[{name}] max_rel={rep.max_rel_error:.3e} {'PASS' if rep.passed else 'FAIL'}")
        lines += ["  " + ln for ln in rep.lines()]
    return lines


def all_passed(reports: dict[str, GradCheckReport]) -> bool:
    return all(r.passed for r in reports.values())


def summary(reports: dict[str, GradCheckReport]) -> dict[str, float]:
    return {k: float(np.float64(r.max_rel_error)) for k, r in reports.items()}
