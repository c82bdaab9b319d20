"""Dataset and statistics files (see :mod:`landmark.container` for the byte layout)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import container
from .synth import Dataset, GenerativeProcess, MarginalTables, SceneInstance, Vocabulary, summary_text

_PROCESS_SCALARS = (
    "zipf_exponent", "n_channels", "spatial", "pattern_amplitude", "background_amplitude",
    "confuser_prob", "noise_std", "entity_noise", "spatial_jitter", "subject_reuse",
)


def dataset_blocks(ds: Dataset) -> dict[str, object]:
    p = ds.process
    blocks: dict[str, object] = {
        "vocab": json.dumps({"entity_classes": p.vocab.entity_classes,
                             "predicate_classes": p.vocab.predicate_classes}),
        "config": ds.config_text,
        "meta": json.dumps({"seed": ds.seed, "n_scenes": len(ds.scenes)}),
        "split": json.dumps(ds.split),
        "process/scalars": json.dumps({k: getattr(p, k) for k in _PROCESS_SCALARS}),
        "process/pair_table": p.pair_table,
        "process/spatial_rules": p.spatial_rules,
        "process/distractor_channels": p.distractor_channels,
        "process/geometry_channels": p.geometry_channels,
        "process/templates": p.templates,
        "process/prototypes": p.prototypes,
        "process/heldout_pairs": p.heldout_pairs,
    }
    for k, ch in enumerate(p.pattern_channels):
        blocks[f"process/pattern_channels/{k}"] = ch
    for s in ds.scenes:
        pre = f"scene/{s.scene_id}/"
        blocks[pre + "classes"] = s.classes
        blocks[pre + "boxes"] = s.boxes
        blocks[pre + "triplets"] = s.triplets
        blocks[pre + "entity_features"] = s.entity_features
        blocks[pre + "feature_seed"] = np.array([s.feature_seed], dtype=np.int64)
    return blocks


def save_dataset(ds: Dataset, path: str | Path, summary: bool = True) -> None:
    container.save(path, "dataset", dataset_blocks(ds))
    if summary:
        container.atomic_write_text(summary_path(path), summary_text(ds))


def summary_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.txt")


def load_dataset(path: str | Path) -> Dataset:
    _, b = container.load(path, expect_kind="dataset")
    vocab = Vocabulary(**json.loads(b["vocab"]))
    scalars = json.loads(b["process/scalars"])
    pattern = [b[f"process/pattern_channels/{k}"] for k in range(vocab.n_predicates)]
    process = GenerativeProcess(
        vocab=vocab,
        pair_table=b["process/pair_table"],
        spatial_rules=b["process/spatial_rules"],
        pattern_channels=pattern,
        distractor_channels=b["process/distractor_channels"],
        geometry_channels=b["process/geometry_channels"],
        templates=b["process/templates"],
        prototypes=b["process/prototypes"],
        heldout_pairs=b["process/heldout_pairs"],
        **scalars,
    )
    meta = json.loads(b["meta"])
    split = {k: [int(i) for i in v] for k, v in json.loads(b["split"]).items()}
    scenes = []
    for sid in sorted(i for ids in split.values() for i in ids):
        pre = f"scene/{sid}/"
        scenes.append(SceneInstance(
            scene_id=sid,
            classes=b[pre + "classes"],
            boxes=b[pre + "boxes"],
            triplets=b[pre + "triplets"].reshape(-1, 3),
            entity_features=b[pre + "entity_features"],
            feature_seed=int(b[pre + "feature_seed"][0]),
        ))
    return Dataset(process, scenes, split, seed=int(meta["seed"]), config_text=b["config"])


def save_stats(stats: MarginalTables, path: str | Path, config_text: str = "") -> None:
    container.save(path, "stats", {
        "config": config_text,
        "m_sub": stats.m_sub,
        "m_obj": stats.m_obj,
        "freq_counts": stats.freq_counts,
    })


def load_stats(path: str | Path) -> MarginalTables:
    _, b = container.load(path, expect_kind="stats")
    return MarginalTables(m_sub=b["m_sub"], m_obj=b["m_obj"], freq_counts=b["freq_counts"])
