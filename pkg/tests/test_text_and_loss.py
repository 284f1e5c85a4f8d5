import math

import numpy as np
import pytest

from mvclip.contrastive import LogitScale, clip_loss, full_loss, info_nce
from mvclip.numerics import Tensor, grad_check, ops
from mvclip.text import BOS_ID, EOS_ID, PAD_ID, UNK_ID, TextConfig, TextEncoder, Vocab, encode_text, tokenize
from mvclip.trainer import build_vocab


@pytest.fixture(scope="module")
def vocab():
    return build_vocab()


@pytest.fixture(scope="module")
def text_encoder(vocab):
    return TextEncoder(TextConfig(vocab_size=len(vocab)), seed=1)


# -- tokenizer ------------------------------------------------------------------

def test_specials_reserved_and_ids_dense(vocab):
    assert vocab.itos[:4] == ["<bos>", "<eos>", "<pad>", "<unk>"]
    assert sorted(vocab.stoi.values()) == list(range(len(vocab)))


def test_tokenize_empty(vocab):
    assert tokenize("", vocab).tolist() == [BOS_ID, EOS_ID] + [PAD_ID] * 14


def test_tokenize_known_words(vocab):
    ids = tokenize("A Red  sphere", vocab).tolist()
    assert ids[:5] == [BOS_ID, vocab.stoi["a"], vocab.stoi["red"], vocab.stoi["sphere"], EOS_ID]
    assert ids[5:] == [PAD_ID] * 11


def test_tokenize_unknown_and_truncation(vocab):
    assert tokenize("a zxqv sphere", vocab)[2] == UNK_ID
    ids = tokenize(" ".join(["red"] * 30), vocab)
    assert len(ids) == 16 and ids[-1] == EOS_ID and ids[0] == BOS_ID


def test_every_caption_word_in_vocab(vocab):
    from mvclip.synth.captions import caption_scene
    from mvclip.synth.scene import sample_scene, PRIMITIVES
    rng = np.random.default_rng(0)
    for i in range(200):
        scene = sample_scene(rng, PRIMITIVES[i % 5], str(i))
        for g in ("class-only", "color+class", "fine"):
            assert UNK_ID not in tokenize(caption_scene(scene, rng, g), vocab)


def test_vocab_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.tsv"
    vocab.save(path)
    assert Vocab.load(path) == vocab
    assert path.read_text().splitlines()[4] == f"{vocab.itos[4]}\t4"
    with pytest.raises(ValueError):
        Vocab.loads("x\t0\n")


# -- text encoder ---------------------------------------------------------------

def test_text_embedding_unit_norm_and_deterministic(text_encoder, vocab):
    for caption in ("", "a red sphere", "a rendering of a small matte blue torus at scale 0.712"):
        a = encode_text(caption, text_encoder, vocab)
        b = encode_text(caption, text_encoder, vocab)
        assert a.tobytes() == b.tobytes()
        assert abs(np.linalg.norm(a) - 1.0) <= 1e-6


def test_padding_does_not_leak(text_encoder, vocab):
    # same words with a shorter max_len: identical tokens, fewer pads
    short = Vocab(vocab.itos[4:], max_len=8)
    enc_short = TextEncoder(TextConfig(vocab_size=len(vocab), max_len=16), seed=1)
    a = encode_text("a red sphere", text_encoder, vocab)
    b = encode_text("a red sphere", enc_short, short)
    np.testing.assert_allclose(a, b, atol=1e-6)


# -- contrastive losses -----------------------------------------------------------

def test_info_nce_single_pair_is_zero():
    a = np.array([[0.6, 0.8]])
    assert float(info_nce(a, np.array([[1.0, 0.0]]), 0.07).data) == 0.0


@pytest.mark.parametrize("n", [2, 4, 8])
def test_info_nce_identical_embeddings_is_log_n(n):
    e = np.tile([0.6, 0.8, 0.0], (n, 1))
    assert abs(float(info_nce(e, e, 0.07).data) - math.log(n)) <= 1e-6
    s = LogitScale()
    assert abs(float(full_loss(Tensor(e.astype(np.float32)), e.astype(np.float32), e.astype(np.float32), s).data)
               - math.log(n)) <= 1e-6


def test_info_nce_orthonormal_hand_value():
    e = np.eye(2)
    # two logits 1 and 0: -log(e / (e + 1)) = log(1 + e^-1)
    assert abs(float(info_nce(e, e, 1.0).data) - math.log(1 + math.exp(-1))) <= 1e-12
    assert abs(math.log(1 + math.exp(-1)) - 0.313262) < 1e-6


def test_info_nce_errors():
    with pytest.raises(ValueError):
        info_nce(np.zeros((0, 3)), np.zeros((0, 3)), 0.1)
    with pytest.raises(ValueError):
        info_nce(np.eye(3), np.eye(2), 0.1)
    with pytest.raises(ValueError):
        full_loss(np.eye(3), np.eye(3), np.eye(2), 0.1)


def _unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_full_loss_is_mean_of_terms_and_batch_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        fs, fi, ft = (_unit(rng, n, 5) for _ in range(3))
        tau = float(rng.uniform(0.02, 1.0))
        terms = [float(info_nce(a, b, tau).data) for a, b in ((fs, ft), (ft, fs), (fs, fi), (fi, fs))]
        loss = float(full_loss(fs, fi, ft, tau).data)
        assert abs(loss - sum(terms) / 4) <= 1e-7
        assert loss >= 0
        perm = rng.permutation(n)
        assert abs(float(full_loss(fs[perm], fi[perm], ft[perm], tau).data) - loss) <= 1e-12


def test_full_loss_gradient_wrt_inputs_and_scale():
    from mvclip.numerics import Parameter
    rng = np.random.default_rng(1)
    raw_s = Parameter(rng.standard_normal((4, 3)), dtype=np.float64)
    raw_i = Parameter(rng.standard_normal((4, 3)), dtype=np.float64)
    ft = _unit(rng, 4, 3)
    scale = LogitScale(0.3, dtype=np.float64)

    def loss():
        return full_loss(ops.l2_normalize(raw_s), ops.l2_normalize(raw_i), ft, scale)

    assert grad_check(loss, [raw_s, raw_i, scale.param]) <= 1e-4


def test_logit_scale_init_and_clamp():
    s = LogitScale()
    assert abs(s.temperature - 0.07) < 1e-6
    s.param.data = np.asarray(10.0, dtype=np.float32)
    s.clamp()
    assert abs(s.temperature - 0.01) < 1e-6


def test_clip_loss_symmetric_average():
    rng = np.random.default_rng(2)
    a, b = _unit(rng, 5, 4), _unit(rng, 5, 4)
    expected = (float(info_nce(a, b, 0.1).data) + float(info_nce(b, a, 0.1).data)) / 2
    assert abs(float(clip_loss(a, b, 0.1).data) - expected) <= 1e-12
