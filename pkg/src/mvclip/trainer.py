"""Toy CLIP pretraining and multi-view shape-encoder fine-tuning."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgio
from .config import derive_rng
from .contrastive import LogitScale, clip_loss, full_loss
from .encoder import EncoderConfig, VisionEncoder, pool_views
from .numerics import Parameter, Tensor, checkpoint, no_grad
from .synth.captions import grammar_words
from .synth.dataset import DatasetManifest, Record
from .text import TextConfig, TextEncoder, Vocab, tokenize_batch


# -- schedule and optimizer ---------------------------------------------------

def cosine_lr(step: int, total_steps: int, base: float, floor: float = 0.0) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * step / total_steps))


def warmup_cosine_lr(step: int, total_steps: int, base: float, floor: float = 0.0, warmup_steps: int = 0) -> float:
    """Linear ramp over ``warmup_steps``, then cosine decay over the rest."""
    if step < warmup_steps:
        return base * (step + 1) / warmup_steps
    return cosine_lr(step - warmup_steps, total_steps - warmup_steps, base, floor)


class Adam:
    """Adaptive-moment optimizer; moments are kept only for trainable parameters."""

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[Parameter] = [p for p in params if p.trainable]
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)


def checksum(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# -- configs --------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    lr_floor: float = 0.0
    warmup: float = 0.05
    seed: int = 0
    image_size: int = 32
    patch_size: int = 8
    width: int = 64
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    text_width: int = 64
    text_depth: int = 2
    text_heads: int = 4

    def dumps(self) -> str:
        return cfgio.dumps(self)

    @classmethod
    def loads(cls, text: str) -> "PretrainConfig":
        return cfgio.loads(text, cls)


@dataclass(frozen=True)
class FinetuneConfig:
    view_range: tuple[int, int] = (1, 6)
    frozen_prefix: int = 2
    mva_enabled: bool = True
    train_mlp: bool = False
    init_mode: str = "same"
    epochs: int = 30
    batch_size: int = 64
    lr: float = 3e-4
    lr_floor: float = 0.0
    schedule: str = "cosine"
    seed: int = 0
    checkpoint_every: int = 0
    max_views: int = 12

    def __post_init__(self):
        vmin, vmax = self.view_range
        if not 1 <= vmin <= vmax <= self.max_views:
            raise ValueError(f"view_range {self.view_range} must satisfy 1 <= vmin <= vmax <= {self.max_views}")
        if self.init_mode not in ("same", "fresh"):
            raise ValueError("init_mode must be 'same' or 'fresh'")
        if self.schedule != "cosine":
            raise ValueError("only the cosine schedule is supported")

    def dumps(self) -> str:
        return cfgio.dumps(self)

    @classmethod
    def loads(cls, text: str) -> "FinetuneConfig":
        return cfgio.loads(text, cls)


# large-corpus settings, kept for reference runs
LARGE_CORPUS_PROFILE = FinetuneConfig(epochs=80, batch_size=1600, lr=5e-5)


# -- data -------------------------------------------------------------------------

@dataclass
class SplitData:
    records: list[Record]
    views: np.ndarray       # (n, V, H, W, 3) float32
    labels: np.ndarray      # (n,) class index
    fine_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.records)


def load_split(manifest: DatasetManifest, split: str | None) -> SplitData:
    records = manifest.records if split is None else manifest.split(split)
    if not records:
        raise ValueError(f"no records in split {split!r}")
    classes, fine = manifest.classes, manifest.fine_classes
    views = np.stack([manifest.load_views(r) for r in records])
    return SplitData(records, views,
                     np.array([classes.index(r.cls) for r in records]),
                     np.array([fine.index(r.class_fine) for r in records]))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


class MetricsLog:
    def __init__(self, path: Path | None):
        self.rows: list[tuple[int, float, float]] = []
        self.path = path

    def add(self, step: int, lr: float, loss: float) -> None:
        self.rows.append((step, lr, loss))

    def write(self) -> None:
        if self.path is None:
            return
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "loss"])
            for step, lr, loss in self.rows:
                w.writerow([step, f"{lr:.8g}", f"{loss:.8g}"])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])


# -- models -----------------------------------------------------------------------

@dataclass
class ClipModel:
    image: VisionEncoder
    text: TextEncoder
    vocab: Vocab
    logit_scale: LogitScale

    def encode_texts(self, texts) -> np.ndarray:
        with no_grad():
            return self.text.encode(list(texts), self.vocab).data

    def encode_images(self, views: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.image.encode(views).data

    def state(self) -> dict[str, np.ndarray]:
        state = {f"image.{k}": v for k, v in self.image.state_dict().items()}
        state.update({f"text.{k}": v for k, v in self.text.state_dict().items()})
        state["logit_scale"] = self.logit_scale.param.data
        return state

    def save(self, directory: str | os.PathLike) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save(d / "clip.ddcp", self.state())
        (d / "image_encoder.cfg").write_text(self.image.config.dumps())
        (d / "text_encoder.cfg").write_text(self.text.config.dumps())
        self.vocab.save(d / "vocab.tsv")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "ClipModel":
        d = Path(directory)
        state = checkpoint.load(d / "clip.ddcp")
        image = VisionEncoder(EncoderConfig.loads((d / "image_encoder.cfg").read_text()))
        text = TextEncoder(TextConfig.loads((d / "text_encoder.cfg").read_text()))
        image.load_state_dict(state, "image.")
        text.load_state_dict(state, "text.")
        scale = LogitScale(trainable=False)
        scale.param.data = state["logit_scale"].astype(np.float32)
        model = cls(image, text, Vocab.load(d / "vocab.tsv"), scale)
        model.freeze()
        return model

    def freeze(self) -> None:
        self.image.freeze()
        self.text.freeze()
        self.logit_scale.param.set_trainable(False)


@dataclass
class ShapeModel:
    encoder: VisionEncoder
    logit_scale: LogitScale
    config: FinetuneConfig

    def encode(self, views: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.encoder.encode(views).data

    def save(self, directory: str | os.PathLike, name: str = "shape.ddcp") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        state = dict(self.encoder.state_dict())
        state["logit_scale"] = self.logit_scale.param.data
        checkpoint.save(d / name, state)
        (d / "shape_encoder.cfg").write_text(self.encoder.config.dumps())
        (d / "finetune.cfg").write_text(self.config.dumps())

    @classmethod
    def load(cls, directory: str | os.PathLike, name: str = "shape.ddcp") -> "ShapeModel":
        d = Path(directory)
        state = checkpoint.load(d / name)
        encoder = VisionEncoder(EncoderConfig.loads((d / "shape_encoder.cfg").read_text()))
        encoder.load_state_dict(state)
        encoder.freeze()
        scale = LogitScale(trainable=False)
        scale.param.data = state["logit_scale"].astype(np.float32)
        return cls(encoder, scale, FinetuneConfig.loads((d / "finetune.cfg").read_text()))


def build_vocab() -> Vocab:
    return Vocab(grammar_words())


def _caption_ids(records: list[Record], vocab: Vocab) -> np.ndarray:
    """Token ids (n, captions, T)."""
    return np.stack([tokenize_batch(r.captions, vocab) for r in records])


# -- stage 1: toy CLIP ------------------------------------------------------------

def pretrain_clip(manifest: DatasetManifest, config: PretrainConfig = PretrainConfig(),
                  data: SplitData | None = None, out_dir: str | os.PathLike | None = None,
                  log: MetricsLog | None = None) -> ClipModel:
    """Jointly train image and text encoders on (single view, caption) pairs."""
    if not manifest.records:
        raise ValueError("empty manifest")
    data = data or load_split(manifest, "train")
    c = config
    vocab = build_vocab()
    image = VisionEncoder(EncoderConfig(image_size=c.image_size, patch_size=c.patch_size, width=c.width,
                                        depth=c.depth, heads=c.heads, frozen_prefix=0, mva_enabled=False,
                                        embed_dim=c.embed_dim), seed=c.seed)
    text = TextEncoder(TextConfig(vocab_size=len(vocab), max_len=vocab.max_len, width=c.text_width,
                                  depth=c.text_depth, heads=c.text_heads, embed_dim=c.embed_dim),
                       seed=c.seed + 1)
    scale = LogitScale()
    params = image.parameters() + text.parameters() + [scale.param]
    opt = Adam(params)
    rng = derive_rng(c.seed, "pretrain")
    ids = _caption_ids(data.records, vocab)
    n, n_views = data.views.shape[:2]
    total = c.epochs * _steps_per_epoch(n, c.batch_size)
    log = log or MetricsLog(Path(out_dir) / "metrics.csv" if out_dir else None)
    step = 0
    for _ in range(c.epochs):
        for idx in _batches(n, c.batch_size, rng):
            v = rng.integers(n_views, size=len(idx))
            cap = rng.integers(ids.shape[1], size=len(idx))
            lr = warmup_cosine_lr(step, total, c.lr, c.lr_floor, int(c.warmup * total))
            opt.zero_grad()
            fi = image.encode(data.views[idx, v][:, None])
            ft = text.encode_ids(ids[idx, cap])
            loss = clip_loss(fi, ft, scale)
            loss.backward()
            opt.step(lr)
            scale.clamp()
            log.add(step, lr, float(loss.data))
            step += 1
    model = ClipModel(image, text, vocab, scale)
    model.freeze()
    if out_dir is not None:
        model.save(out_dir)
        (Path(out_dir) / "pretrain.cfg").write_text(c.dumps())
        log.write()
    return model


# -- stage 2: shape encoder -------------------------------------------------------

@dataclass
class FinetuneResult:
    model: ShapeModel
    log: MetricsLog
    view_counts: list[int]
    checksums_before: dict[str, str]
    checksums_after: dict[str, str]


def frozen_checksums(shape: VisionEncoder, clip: ClipModel, frozen: set[str]) -> dict[str, str]:
    return {
        "shape_frozen": checksum([p for name, p in shape.named_parameters() if name in frozen]),
        "image": checksum(clip.image.parameters()),
        "text": checksum(clip.text.parameters()),
    }


def init_shape_encoder(clip: ClipModel, config: FinetuneConfig, manifest: DatasetManifest | None = None,
                       pretrain_config: PretrainConfig | None = None,
                       data: SplitData | None = None) -> VisionEncoder:
    if config.init_mode == "same":
        source = clip.image
    else:
        base = pretrain_config or PretrainConfig()
        source = pretrain_clip(manifest, dataclasses.replace(base, seed=base.seed + 1000), data=data).image
    enc = source.with_config(frozen_prefix=config.frozen_prefix, mva_enabled=config.mva_enabled,
                             train_mlp=config.train_mlp, max_views=config.max_views)
    enc.configure_trainable()
    return enc


def finetune_shape(manifest: DatasetManifest, clip: ClipModel, config: FinetuneConfig = FinetuneConfig(),
                   data: SplitData | None = None, out_dir: str | os.PathLike | None = None,
                   cache: bool = True, pretrain_config: PretrainConfig | None = None,
                   max_steps: int | None = None) -> FinetuneResult:
    """Train E^S against frozen E^I / E^T with the four-term loss.

    With ``cache`` the frozen prefix, the per-view image features and the
    caption embeddings are computed once; each step then runs only the
    trainable suffix.  Both paths give the same loss up to float rounding.
    """
    data = data or load_split(manifest, "train")
    c = config
    n, n_views = data.views.shape[:2]
    vmin, vmax = c.view_range
    if vmax > n_views:
        raise ValueError(f"view_range {c.view_range} exceeds the {n_views} stored views per object")
    clip.freeze()
    shape = init_shape_encoder(clip, c, manifest, pretrain_config, data)
    scale = LogitScale(clip.logit_scale.temperature)
    frozen = {name for name, p in shape.named_parameters() if not p.trainable}
    before = frozen_checksums(shape, clip, frozen)
    opt = Adam(shape.trainable_parameters() + [scale.param])
    rng = derive_rng(c.seed, "finetune")
    ids = _caption_ids(data.records, clip.vocab)
    H, W, C = data.views.shape[2:]

    if cache:
        flat = data.views.reshape(n * n_views, 1, H, W, C)
        prefix = np.concatenate([shape.prefix_tokens(flat[i:i + 256]) for i in range(0, len(flat), 256)])
        prefix = prefix.reshape(n, n_views, *prefix.shape[2:])
        with no_grad():
            img_feats = np.concatenate([clip.image.view_features(flat[i:i + 256]).data
                                        for i in range(0, len(flat), 256)]).reshape(n, n_views, -1)
            txt = clip.text.encode_ids(ids.reshape(-1, ids.shape[-1])).data.reshape(n, ids.shape[1], -1)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = MetricsLog(out / "metrics.csv" if out else None)
    total = c.epochs * _steps_per_epoch(n, c.batch_size)
    if max_steps is not None:
        total = min(total, max_steps)
    counts: list[int] = []
    step = 0
    model = ShapeModel(shape, scale, c)
    for epoch in range(c.epochs):
        for idx in _batches(n, c.batch_size, rng):
            if step >= total:
                break
            m = int(rng.integers(vmin, vmax + 1))
            replace = m > n_views
            vidx = np.stack([rng.choice(n_views, m, replace=replace) for _ in idx])
            cap = rng.integers(ids.shape[1], size=len(idx))
            counts.append(m)
            lr = cosine_lr(step, total, c.lr, c.lr_floor)
            opt.zero_grad()
            rows = idx[:, None]
            if cache:
                fs = pool_views(shape.features_from_prefix(prefix[rows, vidx]))
                fi = Tensor(_normalize(img_feats[rows, vidx].mean(axis=1)))
                ft = Tensor(txt[idx, cap])
            else:
                views = data.views[rows, vidx]
                fs = shape.encode(views)
                fi = clip.image.encode(views)
                ft = clip.text.encode_ids(ids[idx, cap])
            loss = full_loss(fs, fi, ft, scale)
            loss.backward()
            opt.step(lr)
            scale.clamp()
            log.add(step, lr, float(loss.data))
            step += 1
        if out is not None and c.checkpoint_every and (epoch + 1) % c.checkpoint_every == 0:
            model.save(out, f"shape_epoch{epoch + 1:03d}.ddcp")
        if step >= total:
            break
    shape.freeze()
    after = frozen_checksums(shape, clip, frozen)
    if out is not None:
        model.save(out)
        log.write()
    return FinetuneResult(model, log, counts, before, after)


def _normalize(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)
