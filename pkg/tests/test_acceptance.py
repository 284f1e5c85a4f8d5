"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; a summary is printed at the end of every run regardless.
"""
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

import grad_cases
import oracles
from conftest import random_encoder
from mvclip.attn_viz import extract_attention
from mvclip.checks import end_to_end_gradcheck
from mvclip.cli import run
from mvclip.contrastive import full_loss, info_nce
from mvclip.encoder import encode_shape, mva_attention
from mvclip.numerics import Tensor, checkpoint, grad_check, no_grad
from mvclip.pipeline import PipelineConfig, desk_run
from mvclip.retrieval import ClassPromptSet, EmbeddingIndex, classify, concept_mix, retrieve_topk
from mvclip.synth.scene import camera_setting, sample_camera
from mvclip.trainer import ClipModel

SEEDS = (0, 1, 2)


def tree_digest(root: Path, skip=("run_config.txt",)) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


# -- 1. single-view and duplicated-view equivalence ------------------------------------

def test_criterion_1_mva_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {np.float64: 0.0, np.float32: 0.0}
    configs = 0
    for dtype, tol in ((np.float64, 1e-6), (np.float32, 1e-5)):
        for _ in range(30):
            enc = random_encoder(rng, dtype=dtype)
            c = enc.config
            configs += 1
            for block in enc.blocks:
                one = rng.standard_normal((1, c.tokens_per_view, c.width)).astype(dtype)
                single = mva_attention(block.attn, one, True)
                err = np.max(np.abs(single - mva_attention(block.attn, one, False)))
                m = int(rng.integers(2, c.max_views + 1))
                dup = mva_attention(block.attn, np.repeat(one, m, axis=0), True)
                err = max(err, np.max(np.abs(dup - single)))
                worst[dtype] = max(worst[dtype], float(err))
            # the same holds for the whole encoder
            view = rng.random((c.image_size, c.image_size, 3))
            ref = encode_shape(view[None], enc)
            plain = encode_shape(view[None], enc.with_config(mva_enabled=False))
            dup = encode_shape(np.repeat(view[None], int(rng.integers(2, c.max_views + 1)), axis=0), enc)
            worst[dtype] = max(worst[dtype], float(np.max(np.abs(ref - plain))), float(np.max(np.abs(dup - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst[np.float64] <= 1e-6 and worst[np.float32] <= 1e-5 and configs >= 50 and elapsed < 60
    report(1, ok, f"{configs} configs, max err f64 {worst[np.float64]:.2e} (<=1e-6), "
                  f"f32 {worst[np.float32]:.2e} (<=1e-5), {elapsed:.1f}s")
    assert ok


# -- 2. permutation invariance -----------------------------------------------------------

def test_criterion_2_permutation_invariance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst, cases = 0.0, 0
    for _ in range(120):
        enc = random_encoder(rng)
        c = enc.config
        m = int(rng.integers(1, c.max_views + 1))
        views = rng.random((m, c.image_size, c.image_size, 3))
        perm = rng.permutation(m)
        worst = max(worst, float(np.max(np.abs(encode_shape(views[perm], enc) - encode_shape(views, enc)))))
        cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and cases >= 100 and elapsed < 60
    report(2, ok, f"{cases} cases, max |diff| {worst:.2e} (<=1e-6), {elapsed:.1f}s")
    assert ok


# -- 3. gradient checks ------------------------------------------------------------------

def test_criterion_3_gradient_checks(report):
    t0 = time.perf_counter()
    per_op = {name: max(grad_check(*build(seed)) for seed in grad_cases.SEEDS)
              for name, build in grad_cases.CASES.items()}
    e2e = max(end_to_end_gradcheck(seed) for seed in range(3))
    elapsed = time.perf_counter() - t0
    worst_op = max(per_op, key=per_op.get)
    ok = max(per_op.values()) <= 1e-4 and e2e <= 1e-4 and elapsed < 300
    report(3, ok, f"{len(per_op)} ops x {len(grad_cases.SEEDS)} seeds, worst {worst_op} {per_op[worst_op]:.2e}; "
                  f"full_loss through 2-layer encoder {e2e:.2e} (<=1e-4), {elapsed:.1f}s")
    assert ok


# -- 4. loss analytics -------------------------------------------------------------------

def test_criterion_4_loss_analytics(report):
    rng = np.random.default_rng(404)
    errs = []
    for n in (2, 4, 8):
        v = rng.standard_normal(6)
        same = np.tile(v / np.linalg.norm(v), (n, 1))
        errs.append(abs(float(info_nce(same, same, 0.07).data) - math.log(n)))
    single = rng.standard_normal((1, 6))
    single /= np.linalg.norm(single)
    zero = abs(float(info_nce(single, single, 0.07).data))
    mean_err = 0.0
    for _ in range(20):
        n, d = int(rng.integers(1, 9)), int(rng.integers(2, 9))
        fs, fi, ft = (Tensor(x / np.linalg.norm(x, axis=1, keepdims=True)) for x in rng.standard_normal((3, n, d)))
        tau = float(rng.uniform(0.01, 1.0))
        terms = [info_nce(fs, ft, tau), info_nce(ft, fs, tau), info_nce(fs, fi, tau), info_nce(fi, fs, tau)]
        expected = sum(float(t.data) for t in terms) / 4
        mean_err = max(mean_err, abs(float(full_loss(fs, fi, ft, tau).data) - expected))
    ok = max(errs) <= 1e-6 and zero <= 1e-6 and mean_err <= 1e-7
    report(4, ok, f"|info_nce - ln N| max {max(errs):.1e} at N=2,4,8; N=1 gives {zero:.1e}; "
                  f"full_loss vs mean of terms {mean_err:.1e}")
    assert ok


# -- desk-scale runs shared by criteria 5, 6, 7 and 10 ---------------------------------------

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    runs, seconds, roots = {}, {}, {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        roots[seed] = tmp_path_factory.mktemp(f"desk{seed}")
        runs[seed] = desk_run(roots[seed], PipelineConfig(seed=seed), train_cameras=("full", "upper"))
        seconds[seed] = time.perf_counter() - t0
    return runs, seconds, roots


def _row(table, views):
    return next(r for r in table if r["views"] == views)


@pytest.mark.slow
def test_criterion_5_desk_pipeline(report, desk_runs):
    runs, seconds, _ = desk_runs
    lines, gains = [], 0
    ok = True
    for seed, run_ in runs.items():
        table = run_.tables["full"]
        acc4, acc1 = _row(table, 4)["top1"], _row(table, 1)["top1"]
        zs4 = _row(run_.zero_shot, 4)["top1"]
        gains += acc4 >= acc1 + 0.02
        ok &= acc4 >= 0.90 and acc4 >= zs4 and len(run_.eval_data) == 60
        lines.append(f"seed {seed}: 4v {acc4:.3f} 1v {acc1:.3f} zs4v {zs4:.3f} in {seconds[seed]:.0f}s")
    ok &= gains >= 2 and max(seconds.values()) <= 900
    report(5, ok, f"{'; '.join(lines)}; 4v >= 1v + 2pt in {gains}/3 seeds; "
                  f"total {sum(seconds.values()):.0f}s for 3 seeds (each <= 900s)")
    assert ok


@pytest.mark.slow
def test_criterion_6_freezing_contract(report, desk_runs):
    runs, _, roots = desk_runs
    ok, details = True, []
    for seed, run_ in runs.items():
        for camera, result in run_.finetuned.items():
            ok &= result.checksums_before == result.checksums_after
            # frozen shape parameters are still exactly the pretrained image weights
            clip_params = dict(run_.clip.image.named_parameters())
            # the returned model is frozen wholesale, so rebuild the fine-tune's trainable split
            rule = result.model.encoder.with_config()
            rule.configure_trainable()
            frozen_names = {n for n, p in rule.named_parameters() if not p.trainable}
            frozen = [(n, p) for n, p in result.model.encoder.named_parameters() if n in frozen_names]
            ok &= all(p.data.tobytes() == clip_params[n].data.tobytes() for n, p in frozen)
            details.append(len(frozen))
        # the frozen CLIP still matches its saved checkpoint
        saved = checkpoint.load(roots[seed] / "clip" / "clip.ddcp")
        ok &= saved.keys() == run_.clip.state().keys()
        ok &= all(saved[k].tobytes() == v.tobytes() for k, v in run_.clip.state().items())
    report(6, ok, f"{sum(len(r.finetuned) for r in runs.values())} fine-tunes: shape-frozen, image and text "
                  f"checksums unchanged; CLIP equals its saved checkpoint; {min(details)}-{max(details)} frozen tensors equal the pretrained weights")
    assert ok


@pytest.mark.slow
def test_criterion_7_retrieval_above_chance(report, desk_runs):
    runs, _, roots = desk_runs
    ok, lines = True, []
    for seed, run_ in runs.items():
        m = run_.retrieval["full"]
        chance = 1 / len(run_.eval_data)
        ok &= m["rr1"] >= 5 * chance and m["rr5"] > m["rr1"]
        lines.append(f"seed {seed}: RR@1 {m['rr1']:.3f} (>= {5 * chance:.3f}) RR@5 {m['rr5']:.3f}")
    report(7, ok, "; ".join(lines))
    assert ok


# -- 8. oracle equivalence -------------------------------------------------------------------

def test_criterion_8_oracle_equivalence(report):
    rng = np.random.default_rng(808)
    mismatches = 0
    for case in range(200):
        rows = oracles.random_index_case(rng, 1000)
        n, d = rows.shape
        ids = [str(i) for i in range(n)]
        index = EmbeddingIndex(ids, rows)
        q = rng.standard_normal(d)
        prompts = ClassPromptSet(ids, ["{}"], rows)
        mismatches += [int(c) for c, _ in classify(q, prompts)] != oracles.classify(q, rows)
        k = int(rng.integers(1, n + 1))
        mismatches += [int(i) for i, _ in retrieve_topk(q, index, k)] != oracles.topk(q, rows, k)
        fa, fb = rng.standard_normal((2, d))
        excluded = set(rng.choice(n, size=min(2, n - 1), replace=False).tolist()) if n > 1 else set()
        mismatches += int(concept_mix(index, fa, fb, exclude={str(i) for i in excluded})) != \
            oracles.mix(rows, fa, fb, excluded)
    report(8, mismatches == 0, f"200 indices of size <= 1000, {mismatches} mismatches across classify/topk/mix")
    assert mismatches == 0


# -- 9. bit-exact persistence ------------------------------------------------------------------

TINY_PRETRAIN = """\
resolution=8
objects_per_class=2
pretrain.epochs=1
pretrain.batch_size=4
pretrain.image_size=8
pretrain.patch_size=4
pretrain.width=8
pretrain.depth=2
pretrain.heads=2
pretrain.embed_dim=8
pretrain.text_width=8
pretrain.text_depth=1
pretrain.text_heads=2
"""


def test_criterion_9_bit_exact_persistence(report, tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_PRETRAIN)
    base = ["--config", str(cfg), "--seed", "11"]
    assert run(["gen-data", *base, "--out", str(tmp_path / "d1")]) == 0
    assert run(["gen-data", *base, "--out", str(tmp_path / "d2"), "--workers", "2"]) == 0
    assert run(["gen-data", *base, "--out", str(tmp_path / "d3")]) == 0
    d1, d2, d3 = (tree_digest(tmp_path / d) for d in ("d1", "d2", "d3"))
    gen_ok = d1 == d2 == d3 and len(d1) > 1

    assert run(["pretrain", *base, "--data", str(tmp_path / "d1"), "--out", str(tmp_path / "clip")]) == 0
    blob = (tmp_path / "clip" / "clip.ddcp").read_bytes()
    ClipModel.load(tmp_path / "clip").save(tmp_path / "clip2")
    arrays = checkpoint.loads(blob)
    ddcp_ok = (tmp_path / "clip2" / "clip.ddcp").read_bytes() == blob and checkpoint.dumps(arrays) == blob

    rng = np.random.default_rng(909)
    index = EmbeddingIndex.from_vectors([f"obj{i}" for i in range(50)], rng.standard_normal((50, 12)))
    index.save(tmp_path / "a.ddem")
    EmbeddingIndex.load(tmp_path / "a.ddem").save(tmp_path / "b.ddem")
    ddem_ok = all((tmp_path / f"a.ddem{s}").read_bytes() == (tmp_path / f"b.ddem{s}").read_bytes()
                  for s in ("", ".ids"))
    ok = gen_ok and ddcp_ok and ddem_ok
    report(9, ok, f"DDCP round-trip {'identical' if ddcp_ok else 'DIFFERS'} ({len(blob)} bytes); "
                  f"DDEM {'identical' if ddem_ok else 'DIFFERS'}; gen-data {len(d1)} files "
                  f"{'identical' if gen_ok else 'DIFFER'} over 3 runs")
    assert ok


# -- 10. camera regimes --------------------------------------------------------------------------

ELEVATIONS = {"upper": (0.0, 60.0), "extended": (-30.0, 60.0), "full": (-90.0, 90.0)}


def test_criterion_10a_camera_ranges(report):
    ok = True
    for name, (lo, hi) in ELEVATIONS.items():
        rng = np.random.default_rng(1010)
        r, az, el = np.array([sample_camera(camera_setting(name), rng).as_list() for _ in range(10_000)]).T
        ok &= bool(np.all((1.5 <= r) & (r <= 2.2)) and np.all((0 <= az) & (az < 360))
                   and np.all((lo <= el) & (el <= hi)))
    report(10, ok, "10k samples per setting inside radius [1.5,2.2], azimuth [0,360), "
                   "elevation [0,60] / [-30,60] / [-90,90]")
    assert ok


@pytest.mark.slow
def test_criterion_10b_full_sphere_beats_upper_hemisphere(report, desk_runs):
    runs, _, roots = desk_runs
    wins = sum(r.score("full") >= r.score("upper") for r in runs.values())
    scores = ", ".join(f"seed {s}: {r.score('full'):.3f} vs {r.score('upper'):.3f}" for s, r in runs.items())
    report(10, wins >= 2, f"FullSphere-trained >= UpperHem-trained on FullSphere val in {wins}/3 seeds ({scores})")
    assert wins >= 2


# -- 11. attention rows ----------------------------------------------------------------------------

def test_criterion_11_attention_rows(report):
    rng = np.random.default_rng(1111)
    worst_sum, lengths_ok, identical = 0.0, True, True
    for dtype in (np.float32, np.float64):
        for _ in range(20):
            enc = random_encoder(rng, dtype=dtype, depth=int(rng.integers(2, 4)), frozen_prefix=1)
            c = enc.config
            m = int(rng.integers(1, c.max_views + 1))
            views = rng.random((m, c.image_size, c.image_size, 3))
            head = "mean" if rng.random() < 0.5 else int(rng.integers(c.heads))
            token = (int(rng.integers(m)), int(rng.integers(c.num_patches)))
            rec = extract_attention(enc, views, token=token, head=head)
            worst_sum = max(worst_sum, abs(float(rec.row.sum()) - 1.0))
            lengths_ok &= rec.row.shape == (m * c.tokens_per_view,) and bool(np.all(rec.row >= 0))
            with no_grad():
                plain = enc.encode(views[None]).data
                captured = enc.encode(views[None], capture={}).data
            identical &= plain.tobytes() == captured.tobytes()
    ok = worst_sum <= 1e-6 and lengths_ok and identical
    report(11, ok, f"40 rows: max |sum - 1| {worst_sum:.1e}, length M*L {'ok' if lengths_ok else 'WRONG'}, "
                   f"capture {'bit-identical' if identical else 'CHANGES'} embedding")
    assert ok
