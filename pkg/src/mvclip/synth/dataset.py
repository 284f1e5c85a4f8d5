"""Dataset generation and the JSON-lines manifest.

Manifest layout: the first line is a header object (``"format"`` key);
every following line is one record with exactly the fields
``id, class, class_fine, captions, views, poses, split``.
Records are ordered by id.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import derive_rng
from .captions import GRANULARITIES, caption_scene
from .ppm import read_ppm, write_ppm
from .render import render_view
from .scene import PALETTE, PRIMITIVES, CameraSetting, FULL_SPHERE, Pose, sample_camera, sample_scene

MANIFEST_NAME = "manifest.jsonl"
FORMAT = "mvclip-manifest"
VERSION = 1
RECORD_FIELDS = ("id", "class", "class_fine", "captions", "views", "poses", "split")


@dataclass
class Record:
    id: str
    cls: str
    class_fine: str
    captions: list[str]
    views: list[str]
    poses: list[list[float]]
    split: str

    def to_json(self) -> dict:
        return {"id": self.id, "class": self.cls, "class_fine": self.class_fine,
                "captions": self.captions, "views": self.views, "poses": self.poses,
                "split": self.split}

    @classmethod
    def from_json(cls, obj: dict) -> "Record":
        if tuple(obj) != RECORD_FIELDS:
            raise ValueError(f"manifest record fields {tuple(obj)} != {RECORD_FIELDS}")
        return cls(obj["id"], obj["class"], obj["class_fine"], list(obj["captions"]),
                   list(obj["views"]), [list(p) for p in obj["poses"]], obj["split"])


@dataclass
class DatasetManifest:
    records: list[Record]
    header: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in manifest")

    def __eq__(self, other) -> bool:
        return (isinstance(other, DatasetManifest) and self.header == other.header
                and self.records == other.records)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    @property
    def classes(self) -> list[str]:
        return list(self.header.get("classes") or sorted({r.cls for r in self.records}))

    @property
    def fine_classes(self) -> list[str]:
        return list(self.header.get("classes_fine") or sorted({r.class_fine for r in self.records}))

    def dumps(self) -> str:
        lines = [json.dumps(self.header)]
        lines += [json.dumps(r.to_json()) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, root: Path | None = None) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty manifest")
        header = json.loads(lines[0])
        if header.get("format") != FORMAT:
            raise ValueError("manifest header missing or of the wrong format")
        return cls([Record.from_json(json.loads(ln)) for ln in lines[1:]], header, root)

    @classmethod
    def load(cls, root: str | os.PathLike) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME if root.is_dir() else root
        return cls.loads(path.read_text(encoding="utf-8"), path.parent)

    def load_views(self, record: Record) -> np.ndarray:
        """All stored views of a record as float32 (n, H, W, 3) in [0, 1]."""
        base = self.root or Path(".")
        return np.stack([read_ppm(base / v) for v in record.views]).astype(np.float32) / 255.0


def _render_object(out: Path, setting: CameraSetting, seed: int, resolution: int,
                   n_views: int, cls_index: int, primitive: str, i: int, split: str) -> Record:
    scene_id = f"{primitive}_{i:04d}"
    scene = sample_scene(derive_rng(seed, "scene", cls_index, i), primitive, scene_id)
    cam_rng = derive_rng(seed, "camera", cls_index, i)
    cap_rng = derive_rng(seed, "caption", cls_index, i)
    views, poses = [], []
    for j in range(n_views):
        pose = sample_camera(setting, cam_rng)
        rel = f"views/{scene_id}_v{j:02d}.ppm"
        write_ppm(out / rel, render_view(scene, pose, resolution))
        views.append(rel)
        poses.append(pose.as_list())
    captions = [caption_scene(scene, cap_rng, g) for g in GRANULARITIES]
    return Record(scene_id, primitive, scene.fine_class, captions, views, poses, split)


def generate_dataset(
    out_dir: str | os.PathLike,
    objects_per_class: int | dict[str, int] = 60,
    views_per_object: int = 12,
    setting: CameraSetting = FULL_SPHERE,
    seed: int = 0,
    resolution: int = 32,
    val_fraction: float = 0.2,
    classes: tuple[str, ...] = PRIMITIVES,
    workers: int = 1,
) -> DatasetManifest:
    """Render ``views_per_object`` views of every object and write the manifest.

    Scene contents depend only on ``seed`` (not on the camera setting), so
    datasets generated under different settings hold the same objects.
    """
    out = Path(out_dir)
    try:
        (out / "views").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    counts = objects_per_class if isinstance(objects_per_class, dict) else {c: objects_per_class for c in classes}

    jobs = []
    for cls_index, primitive in enumerate(PRIMITIVES):
        n = counts.get(primitive, 0)
        if n <= 0:
            continue
        order = derive_rng(seed, "split", cls_index).permutation(n)
        n_val = int(round(n * val_fraction))
        val = set(order[:n_val].tolist())
        for i in range(n):
            jobs.append((cls_index, primitive, i, "val" if i in val else "train"))

    def work(job):
        return _render_object(out, setting, seed, resolution, views_per_object, *job)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    records.sort(key=lambda r: r.id)

    header = {
        "format": FORMAT,
        "version": VERSION,
        "seed": seed,
        "camera": setting.name,
        "radius": list(setting.radius),
        "azimuth": list(setting.azimuth),
        "elevation": list(setting.elevation),
        "resolution": resolution,
        "views_per_object": views_per_object,
        "palette": {k: list(v) for k, v in PALETTE.items()},
        "classes": [c for c in PRIMITIVES if counts.get(c, 0) > 0],
        "classes_fine": [f"{c} {p}" for p in PRIMITIVES if counts.get(p, 0) > 0 for c in PALETTE],
        "lighting": "white background, one camera-relative directional light, ambient + Lambert",
    }
    manifest = DatasetManifest(records, header, out)
    (out / MANIFEST_NAME).write_text(manifest.dumps(), encoding="utf-8")
    return manifest


def pose_of(values) -> Pose:
    return Pose(*[float(v) for v in values])
