import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bintrans.asmtext import FunctionRecord
from bintrans.corpus import EOS_ID, MonoCorpus
from bintrans.embed import EmbeddingMatrix
from bintrans.xlate import (NoiseConfig, TrainSchedule, TranslationModel, TranslationRequest,
                            UntrainedModelError, add_noise, backtranslation_loss, backtranslation_pair,
                            denoising_loss, derive_seed, encode_block, load_model, save_model,
                            train_translator, translate_block, translate_blocks, translate_function)

SMALL = dict(enc_hidden=16, dec_hidden=24, batch_size=16, log_every=0)


def test_noise_length_one_unchanged():
    assert add_noise([7], NoiseConfig(seed=3)) == [7]


def test_noise_replay_seed0():
    # draws for seed 0 are positions 2 then 1: [1,2,3,4] -> [1,2,4,3] -> [1,4,2,3]
    rng = np.random.default_rng(0)
    out = [1, 2, 3, 4]
    for _ in range(len(out) // 2):
        i = int(rng.integers(0, len(out) - 1))
        out[i], out[i + 1] = out[i + 1], out[i]
    assert out == [1, 4, 2, 3]
    assert add_noise([1, 2, 3, 4], NoiseConfig(seed=0)) == out


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
def test_noise_preserves_multiset(block, seed):
    assert sorted(add_noise(block, NoiseConfig(seed=seed))) == sorted(block)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
def test_single_transposition_is_adjacent(block, seed):
    out = add_noise(block, NoiseConfig(seed=seed, swaps=1))
    diff = [i for i, (a, b) in enumerate(zip(block, out)) if a != b]
    assert diff == [] or (len(diff) == 2 and diff[1] == diff[0] + 1)


def test_derive_seed_stable():
    assert derive_seed(0, "a") == derive_seed(0, "a") != derive_seed(1, "a")
    assert 0 <= derive_seed(5, "x", 2) < 2**63


def test_request_needs_distinct_archs():
    with pytest.raises(ValueError):
        TranslationRequest(["RET"], "arm", "arm")


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(iterations=0).validate()


# --- toy language pair with perfectly aligned cross embeddings -------------------------

N_WORDS = 10


def cycle_run(rng, prefix):
    """Consecutive words along a fixed cycle; word order is fully determined."""
    start, n = rng.integers(0, N_WORDS), rng.integers(3, 7)
    return [f"{prefix}{(start + k) % N_WORDS}" for k in range(n)]


def twin_pair(seed=0, n_blocks=200, d=12):
    rng = np.random.default_rng(seed)
    a_blocks = [cycle_run(rng, "A") for _ in range(n_blocks)]
    b_blocks = [[w.replace("A", "B") for w in b] for b in a_blocks]
    rng.shuffle(b_blocks)
    corpora = {"x86": MonoCorpus.from_words("x86", "O2", a_blocks),
               "arm": MonoCorpus.from_words("arm", "O2", b_blocks)}
    base = rng.normal(size=(4 + N_WORDS, d))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    vec = {f"A{i}": base[4 + i] for i in range(N_WORDS)}
    vec.update({f"B{i}": base[4 + i] for i in range(N_WORDS)})
    caie = {}
    for arch, c in corpora.items():
        X = np.array([vec.get(w, base[k]) for k, w in enumerate(c.vocab.words)])
        caie[arch] = EmbeddingMatrix(c.vocab.words, X, "word", arch=arch)
    return corpora, caie


@pytest.fixture(scope="module")
def trained():
    corpora, caie = twin_pair()
    model = train_translator(corpora, caie, TrainSchedule(iterations=300, lr=3e-3, **SMALL), seed=1)
    return corpora, caie, model


def test_untrained_model_refuses_to_translate():
    corpora, caie = twin_pair()
    with pytest.raises(UntrainedModelError):
        translate_blocks([["B1"]], TranslationModel(caie), "arm", "x86")


def test_dimension_mismatch():
    corpora, caie = twin_pair()
    caie["arm"] = EmbeddingMatrix(caie["arm"].words, caie["arm"].X[:, :6], arch="arm")
    with pytest.raises(ValueError):
        train_translator(corpora, caie, TrainSchedule(iterations=1, **SMALL))


def test_two_decoders_and_shared_encoder():
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(**SMALL))
    assert sorted(m.decoders) == ["arm", "x86"]
    names = {n for n, _ in m.named_parameters()}
    assert not any("emb" in n for n in names)
    assert sum(n.startswith("encoder.") for n in names) > 0


def test_encode_is_pure_and_rejects_empty():
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(**SMALL))
    a = encode_block([5, 6, 7], m, "x86")
    assert a.shape == (3, 32) and torch.equal(a, encode_block([5, 6, 7], m, "x86"))
    with pytest.raises(ValueError):
        encode_block([], m, "x86")


def test_overlength_block_truncated_with_warning(caplog):
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(max_len=4, **SMALL))
    with caplog.at_level(logging.WARNING):
        out = encode_block([5] * 9, m, "x86")
    assert out.shape[0] == 4 and "truncated" in caplog.text


def test_initial_loss_near_log_vocab():
    rng = np.random.default_rng(0)
    V, d = 60, 32
    X = rng.normal(size=(V, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    words = [f"W{i}" for i in range(V)]
    caie = {a: EmbeddingMatrix(words, X, arch=a) for a in ("arm", "x86")}
    m = TranslationModel(caie, TrainSchedule())
    blocks = [list(rng.integers(4, V, 8)) for _ in range(32)]
    with torch.no_grad():
        loss = denoising_loss(blocks, "x86", m, np.random.default_rng(1)).item()
    assert abs(loss - np.log(V)) <= 0.2 * np.log(V)


def test_denoising_overfits_one_block():
    _, caie = twin_pair()
    torch.manual_seed(0)
    m = TranslationModel(caie, TrainSchedule(**SMALL))
    opt = torch.optim.Adam(m.trainable(), lr=1e-2)
    rng = np.random.default_rng(0)
    block = [[5, 6, 7]]
    for _ in range(500):
        loss = denoising_loss(block, "x86", m, rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        final = max(denoising_loss(block, "x86", m, np.random.default_rng(s)).item() for s in range(5))
    assert final <= 0.05


def _fd_check(model, loss_fn, n_coords, seed, eps=1e-4):
    """Compare autograd with central differences on random parameter coordinates (float64)."""
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss_fn().backward()
    params = [p for p in model.trainable() if p.grad is not None]
    worst = 0.0
    for _ in range(n_coords):
        p = params[int(rng.integers(0, len(params)))]
        j = int(rng.integers(0, p.numel()))
        flat = p.data.view(-1)
        old = flat[j].item()
        with torch.no_grad():
            flat[j] = old + eps
            hi = loss_fn().item()
            flat[j] = old - eps
            lo = loss_fn().item()
            flat[j] = old
        num = (hi - lo) / (2 * eps)
        ana = p.grad.view(-1)[j].item()
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-5))
    return worst


def _double_model():
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(**SMALL), seed=2).double()
    m.trained = True
    return m


def test_denoising_gradients_double_precision():
    m = _double_model()
    blocks = [[4, 5, 6, 7], [8, 9, 10]]
    worst = _fd_check(m, lambda: denoising_loss(blocks, "x86", m, np.random.default_rng(0)), 120, 0)
    assert worst <= 1e-5


def test_backtranslation_gradients_double_precision():
    m = _double_model()
    batch = backtranslation_pair([[4, 5, 6, 7], [8, 9, 10]], "x86", m)
    assert batch.sources
    worst = _fd_check(m, lambda: backtranslation_loss(batch, "x86", m), 120, 1)
    assert worst <= 1e-5


def test_pseudo_source_gets_no_gradient():
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(**SMALL), seed=3)
    batch = backtranslation_pair([[4, 5, 6], [7, 8, 9, 10]], "x86", m)
    m.zero_grad()
    backtranslation_loss(batch, "x86", m).backward()
    # x86 -> arm decoding produced the pseudo-sources; its decoder must see no gradient
    for p in m.decoders["arm"].parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0
    assert any(p.grad is not None and torch.count_nonzero(p.grad) for p in m.decoders["x86"].parameters())


def test_empty_decode_is_skipped_and_counted():
    _, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(**SMALL))
    with torch.no_grad():
        m.decoders["arm"].out_bias[EOS_ID] = 1e4
    batch = backtranslation_pair([[4, 5], [6, 7, 8]], "x86", m)
    assert batch.skipped == 2 and batch.sources == [] and m.skipped == 2


def test_one_token_language_backtranslation():
    a = MonoCorpus.from_words("x86", "O2", [["T"]] * 20)
    b = MonoCorpus.from_words("arm", "O2", [["U"]] * 20)
    X = np.eye(5, 6)
    caie = {"x86": EmbeddingMatrix(a.vocab.words, X, arch="x86"),
            "arm": EmbeddingMatrix(b.vocab.words, X, arch="arm")}
    m = train_translator({"x86": a, "arm": b}, caie, TrainSchedule(iterations=60, lr=1e-2, **SMALL))
    batch = backtranslation_pair([[4]], "x86", m)
    assert batch.sources == [[4]] and batch.targets == [[4]]
    assert translate_blocks([["T"]], m, "x86", "arm") == [["U"]]


def test_embeddings_frozen_through_training():
    corpora, caie = twin_pair()
    m = TranslationModel(caie, TrainSchedule(iterations=20, **SMALL))
    before = m.embedding_digest()
    raw = {a: m.decoders[a].emb.clone() for a in m.archs}
    train_translator(corpora, caie, m.schedule, model=m)
    assert m.embedding_digest() == before
    assert all(torch.equal(raw[a], m.decoders[a].emb) for a in m.archs)


def test_training_is_deterministic(tmp_path):
    corpora, caie = twin_pair()
    sched = TrainSchedule(iterations=15, **SMALL)
    for name in ("a", "b"):
        save_model(tmp_path / f"{name}.ubt", train_translator(corpora, caie, sched, seed=4))
    assert (tmp_path / "a.ubt").read_bytes() == (tmp_path / "b.ubt").read_bytes()


def test_learns_the_lexicon(trained):
    corpora, _, model = trained
    rng = np.random.default_rng(9)
    blocks = [cycle_run(rng, "B") for _ in range(50)]
    out = translate_blocks(blocks, model, "arm", "x86")
    assert out == [[w.replace("B", "A") for w in b] for b in blocks]


def test_loss_trend(trained):
    _, _, model = trained
    assert sorted(model.history) == ["backtranslate:arm", "backtranslate:x86", "denoise:arm", "denoise:x86"]
    for key, curve in model.history.items():
        curve = np.array(curve)
        q = len(curve) // 4
        assert np.nanmean(curve[-q:]) < np.nanmean(curve[:q]), key


def test_encoder_agrees_across_archs(trained):
    _, caie, model = trained
    a = [caie["x86"].index(w) for w in ["A1", "A2", "A3", "A4"]]
    b = [caie["arm"].index(w) for w in ["B1", "B2", "B3", "B4"]]
    u = encode_block(a, model, "x86").mean(0)
    v = encode_block(b, model, "arm").mean(0)
    assert torch.nn.functional.cosine_similarity(u, v, dim=0) >= 0.9


def test_beam_matches_greedy_on_confident_model(trained):
    _, _, model = trained
    blocks = [["B1", "B2", "B3"], ["B8", "B9", "B0", "B1"], ["B7", "B8", "B9"]]
    assert translate_blocks(blocks, model, "arm", "x86", beam=3) == translate_blocks(blocks, model, "arm", "x86")


def test_translate_function_keeps_order_and_name(trained):
    _, _, model = trained
    fn = FunctionRecord.from_words("f", "arm", [["B1", "B2", "B3"], ["B5", "B6", "B7", "B8"], ["B4", "B5", "B6"]])
    out = translate_function(fn, model, "x86")
    assert out.name == "f" and str(out.arch) == "x86"
    assert out.block_words() == [["A1", "A2", "A3"], ["A5", "A6", "A7", "A8"], ["A4", "A5", "A6"]]
    one = FunctionRecord.from_words("g", "arm", [["B8", "B9", "B0"]])
    assert translate_function(one, model, "x86").block_words() == [
        translate_block(TranslationRequest(["B8", "B9", "B0"], "arm", "x86"), model)]


def test_oov_word_mode_falls_back_to_unk(trained):
    _, _, model = trained
    assert translate_blocks([["NEVER_SEEN"]], model, "arm", "x86")[0] is not None


def test_save_load_round_trip(trained, tmp_path):
    _, _, model = trained
    save_model(tmp_path / "m.ubt", model, {"seed": 1})
    assert (tmp_path / "m.ubt").read_bytes()[:4] == b"UBT1"
    back = load_model(tmp_path / "m.ubt")
    blocks = [["B1", "B2", "B3"], ["B0", "B1", "B2"]]
    assert translate_blocks(blocks, back, "arm", "x86") == translate_blocks(blocks, model, "arm", "x86")
    save_model(tmp_path / "m2.ubt", back, {"seed": 1})
    assert (tmp_path / "m2.ubt").read_bytes() == (tmp_path / "m.ubt").read_bytes()


def test_load_rejects_other_files(tmp_path):
    (tmp_path / "x.ubt").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.ubt")
