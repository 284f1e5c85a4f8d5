"""Command-line entry point: ``mvclip <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Settings come from
defaults, then ``--config`` (key=value lines; ``pretrain.*`` and
``finetune.*`` keys address the training configs), then flags.  The
effective settings are written to ``<out>/run_config.txt``.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgio
from .attn_viz import extract_attention, render_heatmap
from .checks import end_to_end_gradcheck
from .pipeline import DEFAULT_EVAL_VIEWS, accuracy_table, shape_index, write_table
from .retrieval import EmbeddingIndex, build_class_embeddings, classify_batch, concept_mix, retrieve_topk
from .synth.captions import PROMPT_TEMPLATES
from .synth.dataset import DatasetManifest, generate_dataset
from .synth.scene import camera_setting
from .trainer import ClipModel, FinetuneConfig, PretrainConfig, ShapeModel, finetune_shape, load_split, pretrain_clip

COMMANDS = ("gen-data", "pretrain", "finetune", "embed", "classify", "retrieve", "mix", "attnviz",
            "gradcheck", "eval")
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: str = ""
    ckpt: str = ""
    out: str = ""
    workers: int = 1
    camera: str = "full"
    objects_per_class: int = 60
    views_per_object: int = 12
    resolution: int = 32
    val_fraction: float = 0.2
    views: tuple[int, ...] = ()
    split: str = "val"
    query: str = ""
    k: int = 5
    a: str = ""
    b: str = ""
    object_id: str = ""
    token: tuple[int, int] = (0, 0)
    layer: int = -1
    head: str = "mean"


@dataclass
class Settings:
    run: RunConfig
    pretrain: PretrainConfig
    finetune: FinetuneConfig

    def dumps(self) -> str:
        lines = [cfgio.dumps(self.run)]
        for prefix, cfg in (("pretrain", self.pretrain), ("finetune", self.finetune)):
            lines += [f"{prefix}.{ln}\n" for ln in cfgio.dumps(cfg).splitlines()]
        return "".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mvclip", description="Multi-view contrastive shape encoder toolkit.")
    p.add_argument("command", choices=COMMANDS, metavar="command", help=" | ".join(COMMANDS))
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (all writes go here)")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--ckpt", help="checkpoint directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--views", help="view counts, e.g. 1,2,4")
    p.add_argument("--frozen-prefix", type=int)
    p.add_argument("--mva", choices=("on", "off"))
    p.add_argument("--view-range", help="MIN,MAX")
    p.add_argument("--train-mlp", choices=("on", "off"))
    p.add_argument("--init", choices=("same", "fresh"))
    p.add_argument("--camera", choices=("upper", "extended", "full"))
    p.add_argument("--objects", type=int, help="objects per class")
    p.add_argument("--split", choices=("train", "val", "all"))
    p.add_argument("--query", help="caption to retrieve with")
    p.add_argument("-k", type=int)
    p.add_argument("--a", help="first object id for mixing")
    p.add_argument("--b", help="second object id for mixing")
    p.add_argument("--id", dest="object_id", help="object id for attention maps")
    p.add_argument("--token", help="VIEW,PATCH query token")
    p.add_argument("--layer", type=int)
    p.add_argument("--head", help="'mean' or a head index")
    return p


def resolve(args: argparse.Namespace) -> Settings:
    values: dict[str, str] = {}
    if args.config:
        try:
            values = cfgio.parse_lines(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    flag_map = {
        "seed": "seed", "out": "out", "data": "data", "ckpt": "ckpt", "workers": "workers", "views": "views",
        "camera": "camera", "objects": "objects_per_class", "split": "split", "query": "query", "k": "k",
        "a": "a", "b": "b", "object_id": "object_id", "token": "token", "layer": "layer", "head": "head",
        "frozen_prefix": "finetune.frozen_prefix", "mva": "finetune.mva_enabled",
        "view_range": "finetune.view_range", "train_mlp": "finetune.train_mlp", "init": "finetune.init_mode",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr)
        if val is not None:
            values[key] = str(val)
    groups: dict[str, dict[str, str]] = {"run": {}, "pretrain": {}, "finetune": {}}
    for key, val in values.items():
        prefix, _, name = key.rpartition(".")
        if prefix not in ("", "pretrain", "finetune"):
            raise UsageError(f"unknown config section {prefix!r}")
        groups[prefix or "run"][name] = val
    try:
        run = cfgio.apply(RunConfig(), groups["run"])
        # one root seed feeds every subsystem
        pre = cfgio.apply(PretrainConfig(), {**groups["pretrain"], "seed": str(run.seed)})
        ft = cfgio.apply(FinetuneConfig(), {**groups["finetune"], "seed": str(run.seed)})
        camera_setting(run.camera)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return Settings(run, pre, ft)


def _need(value: str, flag: str) -> str:
    if not value:
        raise UsageError(f"{flag} is required for this command")
    return value


def _out(s: Settings) -> Path:
    out = Path(_need(s.run.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(s.dumps(), encoding="utf-8")
    return out


def _single_view_count(s: Settings, default: int) -> int:
    if not s.run.views:
        return default
    if len(s.run.views) != 1:
        raise UsageError("this command takes a single view count")
    return s.run.views[0]


def _split(manifest: DatasetManifest, name: str):
    return load_split(manifest, None if name == "all" else name)


def load_bundle(path: str) -> tuple[ClipModel, ShapeModel]:
    d = Path(path)
    return ClipModel.load(d / "clip"), ShapeModel.load(d)


# -- subcommands -----------------------------------------------------------------

def cmd_gen_data(s: Settings) -> None:
    out = _out(s)
    r = s.run
    m = generate_dataset(out, r.objects_per_class, r.views_per_object, camera_setting(r.camera), seed=r.seed,
                         resolution=r.resolution, val_fraction=r.val_fraction, workers=r.workers)
    print(f"wrote {len(m.records)} objects to {out}")


def cmd_pretrain(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    out = _out(s)
    clip = pretrain_clip(manifest, s.pretrain, out_dir=out)
    print(f"pretrained toy CLIP (temperature {clip.logit_scale.temperature:.4f}) -> {out}")


def cmd_finetune(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    clip = ClipModel.load(_need(s.run.ckpt, "--ckpt"))
    out = _out(s)
    result = finetune_shape(manifest, clip, s.finetune, out_dir=out, pretrain_config=s.pretrain)
    clip.save(out / "clip")
    ok = result.checksums_before == result.checksums_after
    print(f"fine-tuned {len(result.log.rows)} steps, final loss {result.log.losses[-1]:.4f}, "
          f"frozen weights {'unchanged' if ok else 'CHANGED'} -> {out}")


def cmd_embed(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    _, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    out = _out(s)
    data = _split(manifest, s.run.split)
    m = _single_view_count(s, data.views.shape[1])
    data.views = data.views[:, :m]
    index = shape_index(shape.encode, data)
    index.save(out / "embeddings.ddem")
    print(f"embedded {len(index)} objects with {m} views -> {out / 'embeddings.ddem'}")


def cmd_classify(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    clip, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    out = _out(s)
    data = _split(manifest, s.run.split)
    m = _single_view_count(s, data.views.shape[1])
    prompts = build_class_embeddings(manifest.classes, PROMPT_TEMPLATES, clip.encode_texts)
    ranks = classify_batch(shape.encode(data.views[:, :m]), prompts)
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("id,class,predicted\n")
        for rec, row in zip(data.records, ranks):
            fh.write(f"{rec.id},{rec.cls},{prompts.classes[row[0]]}\n")
    acc = float(np.mean(ranks[:, 0] == data.labels))
    print(f"top1 {acc:.4f} over {len(data)} objects with {m} views")


def _index_for(s: Settings, shape: ShapeModel) -> EmbeddingIndex:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    return shape_index(shape.encode, _split(manifest, s.run.split))


def cmd_retrieve(s: Settings) -> None:
    clip, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    query = _need(s.run.query, "--query")
    out = _out(s)
    index = _index_for(s, shape)
    hits = retrieve_topk(clip.encode_texts([query])[0], index, min(s.run.k, len(index)))
    with open(out / "retrieved.csv", "w", encoding="utf-8") as fh:
        fh.write("rank,id,score\n")
        for rank, (id_, score) in enumerate(hits, 1):
            fh.write(f"{rank},{id_},{score:.6f}\n")
            print(f"{rank}\t{id_}\t{score:.4f}")


def cmd_mix(s: Settings) -> None:
    _, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    a, b = _need(s.run.a, "--a"), _need(s.run.b, "--b")
    out = _out(s)
    index = _index_for(s, shape)
    for id_ in (a, b):
        if id_ not in index.ids:
            raise KeyError(f"object {id_!r} is not in the {s.run.split} split")
    mixed = concept_mix(index, index.vector(a), index.vector(b), exclude={a, b})
    (out / "mix.txt").write_text(f"{a}\t{b}\t{mixed}\n", encoding="utf-8")
    print(mixed)


def cmd_attnviz(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    _, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    object_id = _need(s.run.object_id, "--id")
    out = _out(s)
    records = {r.id: r for r in manifest.records}
    if object_id not in records:
        raise KeyError(f"unknown object id {object_id!r}")
    views = manifest.load_views(records[object_id])
    views = views[:_single_view_count(s, len(views))]
    head = s.run.head if s.run.head == "mean" else int(s.run.head)
    layer = None if s.run.layer < 0 else s.run.layer
    record = extract_attention(shape.encoder, views, layer, s.run.token, head)
    paths = render_heatmap(record, views, out, object_id, shape.encoder.config.grid)
    print(f"layer {record.layer}: wrote {len(paths)} overlays to {out}")


def cmd_gradcheck(s: Settings) -> int:
    err = end_to_end_gradcheck(seed=s.run.seed)
    print(f"max relative error {err:.3e}")
    if s.run.out:
        (_out(s) / "gradcheck.txt").write_text(f"{err:.6e}\n", encoding="utf-8")
    return 0 if err <= GRADCHECK_TOLERANCE else 2


def cmd_eval(s: Settings) -> None:
    manifest = DatasetManifest.load(_need(s.run.data, "--data"))
    clip, shape = load_bundle(_need(s.run.ckpt, "--ckpt"))
    out = _out(s)
    data = _split(manifest, s.run.split)
    counts = s.run.views or DEFAULT_EVAL_VIEWS
    if max(counts) > min(data.views.shape[1], shape.encoder.config.max_views):
        raise UsageError(f"view counts {counts} exceed the available views")
    prompts = build_class_embeddings(manifest.classes, PROMPT_TEMPLATES, clip.encode_texts)
    rows = accuracy_table(shape.encode, clip.encode_images, data, prompts, counts, s.run.seed)
    write_table(out / "eval.csv", rows)
    for r in rows:
        print(f"views {r['views']:>2}  top1 {r['top1']:.4f}  top3 {r['top3']:.4f}  "
              f"top5 {r['top5']:.4f}  zero-shot top1 {r['zs_top1']:.4f}")


HANDLERS = {
    "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "embed": cmd_embed,
    "classify": cmd_classify, "retrieve": cmd_retrieve, "mix": cmd_mix, "attnviz": cmd_attnviz,
    "gradcheck": cmd_gradcheck, "eval": cmd_eval,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve(args)
        return HANDLERS[args.command](settings) or 0
    except UsageError as exc:
        print(f"error: {exc}\n{parser.format_usage()}", file=sys.stderr, end="")
        return 1
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
