"""Evaluation protocol and the end-to-end desk-scale run.

The toy CLIP is pretrained on its own corpus: different objects from the
fine-tuning set, rendered from a narrower band of elevations.  This keeps a
domain gap between the frozen encoders and the multi-view fine-tuning data.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgio
from .config import derive_rng
from .retrieval import EmbeddingIndex, build_class_embeddings, classify_batch, metrics, retrieve_topk
from .synth.captions import PROMPT_TEMPLATES
from .synth.dataset import DatasetManifest, generate_dataset
from .synth.scene import camera_setting
from .trainer import (ClipModel, FinetuneConfig, FinetuneResult, PretrainConfig, SplitData,
                      finetune_shape, load_split, pretrain_clip)

DEFAULT_EVAL_VIEWS = (1, 2, 4, 6, 12)
PRETRAIN_SEED_OFFSET = 7919
FINE_CAPTION = 2  # index of the fine-grained caption in every record


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    objects_per_class: int = 60
    views_per_object: int = 12
    resolution: int = 32
    camera: str = "full"
    pretrain_objects_per_class: int = 100
    pretrain_camera: str = "extended"
    eval_views: tuple[int, ...] = DEFAULT_EVAL_VIEWS

    def dumps(self) -> str:
        return cfgio.dumps(self)


def generate_pretrain_corpus(out_dir: str | os.PathLike, config: PipelineConfig) -> DatasetManifest:
    return generate_dataset(out_dir, config.pretrain_objects_per_class, config.views_per_object,
                            camera_setting(config.pretrain_camera), seed=config.seed + PRETRAIN_SEED_OFFSET,
                            resolution=config.resolution, val_fraction=0.0)


# -- evaluation -------------------------------------------------------------------

Encoder = Callable[[np.ndarray], np.ndarray]


def view_subsets(n_views: int, m: int, rng: np.random.Generator) -> list[np.ndarray]:
    """floor(n/m) disjoint m-view subsets from one random permutation."""
    if not 1 <= m <= n_views:
        raise ValueError(f"view count {m} outside [1, {n_views}]")
    perm = rng.permutation(n_views)
    return [perm[i * m:(i + 1) * m] for i in range(n_views // m)]


def embed_objects(encode: Encoder, views: np.ndarray, chunk: int = 64) -> np.ndarray:
    return np.concatenate([encode(views[i:i + chunk]) for i in range(0, len(views), chunk)])


def accuracy_at(encode: Encoder, data: SplitData, class_embeddings, m: int, seed: int = 0,
                labels: np.ndarray | None = None) -> dict[str, float]:
    """Top-1/3/5 with m views, averaged over each object's disjoint view subsets."""
    labels = data.labels if labels is None else labels
    n, n_views = data.views.shape[:2]
    subsets = [view_subsets(n_views, m, derive_rng(seed, "eval-views", i)) for i in range(n)]
    hits = {1: [], 3: [], 5: []}
    for s in range(len(subsets[0])):
        idx = np.stack([subsets[i][s] for i in range(n)])
        views = data.views[np.arange(n)[:, None], idx]
        ranks = classify_batch(embed_objects(encode, views), class_embeddings)
        for k in hits:
            hits[k].append(np.any(ranks[:, :k] == labels[:, None], axis=1))
    return {f"top{k}": float(np.mean(v)) for k, v in hits.items()}


def accuracy_table(shape_encode: Encoder, zs_encode: Encoder | None, data: SplitData, class_embeddings,
                   view_counts=DEFAULT_EVAL_VIEWS, seed: int = 0) -> list[dict]:
    rows = []
    for m in view_counts:
        row = {"views": m, **accuracy_at(shape_encode, data, class_embeddings, m, seed)}
        row["zs_top1"] = accuracy_at(zs_encode, data, class_embeddings, m, seed)["top1"] if zs_encode else float("nan")
        rows.append(row)
    return rows


def write_table(path: str | os.PathLike, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["views", "top1", "top3", "top5", "zs_top1"])
        for r in rows:
            w.writerow([r["views"]] + [f"{r[k]:.6f}" for k in ("top1", "top3", "top5", "zs_top1")])


def shape_index(encode: Encoder, data: SplitData) -> EmbeddingIndex:
    return EmbeddingIndex.from_vectors([r.id for r in data.records], embed_objects(encode, data.views))


def caption_retrieval(clip: ClipModel, index: EmbeddingIndex, data: SplitData, k: int = 5) -> dict[str, float]:
    """Fine caption -> shape retrieval; each caption's target is its own object."""
    queries = clip.encode_texts([r.captions[FINE_CAPTION] for r in data.records])
    rankings = [[i for i, _ in retrieve_topk(q, index, k)] for q in queries]
    return metrics(rankings, [r.id for r in data.records])


# -- the desk run -----------------------------------------------------------------

@dataclass
class DeskRun:
    clip: ClipModel
    eval_data: SplitData
    class_embeddings: object
    zero_shot: list[dict]
    finetuned: dict[str, FinetuneResult] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    retrieval: dict[str, dict[str, float]] = field(default_factory=dict)

    def score(self, camera: str) -> float:
        """Mean Top-1 over the evaluated view counts."""
        return float(np.mean([r["top1"] for r in self.tables[camera]]))


def desk_run(root: str | os.PathLike, config: PipelineConfig = PipelineConfig(),
             train_cameras=("full",), pretrain: PretrainConfig | None = None,
             finetune: FinetuneConfig | None = None) -> DeskRun:
    """Generate data, pretrain, fine-tune once per training camera, evaluate on held-out FullSphere views."""
    root = Path(root)
    seed = config.seed
    pretrain = pretrain or PretrainConfig(seed=seed)
    finetune = finetune or FinetuneConfig(seed=seed)
    corpus = generate_pretrain_corpus(root / "pretrain_data", config)
    clip = pretrain_clip(corpus, pretrain, out_dir=root / "clip")

    def dataset(camera: str) -> DatasetManifest:
        return generate_dataset(root / f"data_{camera}", config.objects_per_class, config.views_per_object,
                                camera_setting(camera), seed=seed, resolution=config.resolution)

    test_manifest = dataset("full")
    eval_data = load_split(test_manifest, "val")
    prompts = build_class_embeddings(test_manifest.classes, PROMPT_TEMPLATES, clip.encode_texts)
    zs = accuracy_table(clip.encode_images, None, eval_data, prompts, config.eval_views, seed)
    run = DeskRun(clip, eval_data, prompts, zs)
    for camera in train_cameras:
        manifest = test_manifest if camera_setting(camera).name == "FullSphere" else dataset(camera)
        result = finetune_shape(manifest, clip, finetune, out_dir=root / f"shape_{camera}")
        model = result.model
        table = accuracy_table(model.encode, clip.encode_images, eval_data, prompts, config.eval_views, seed)
        write_table(root / f"shape_{camera}" / "eval.csv", table)
        run.finetuned[camera] = result
        run.tables[camera] = table
        run.retrieval[camera] = caption_retrieval(clip, shape_index(model.encode, eval_data), eval_data)
    return run
