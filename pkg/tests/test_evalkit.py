import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from bintrans.asmtext import FunctionRecord
from bintrans.embed import EmbeddingMatrix
from bintrans.evalkit import (BleuReport, EvalTriple, FunctionRef, SimilarityPair, TranslationEvalSet,
                              best_threshold, bleu_score, cosine_similarity, evaluate_translations,
                              format_bleu_report, format_similarity_table, function_embedding,
                              pair_accuracy, read_pairs, resolve_ref, similarity_accuracy,
                              split_validation, token_accuracy, write_pairs)
from bintrans.toyoracle import bleu_bruteforce

# translated and reference x86 rows of the second qualitative example: identical
LONG_BLOCK = [["MOV_RAX,[RBP+H]", "MOVZX_EAX,<BYTE_PTR>[RAX+6BH]", "AND_EAX,2", "TEST_AL,AL",
                "JNZ_SHORT_LOC_<TAG>"]]


def test_identity_is_one():
    assert bleu_score(LONG_BLOCK, LONG_BLOCK) == 1.0


def test_worked_example():
    s = bleu_score([list("abcde")], [list("abcdf")])
    assert s == pytest.approx(0.2 ** 0.25, abs=1e-12)
    assert s == pytest.approx(0.6687, abs=1e-4)


def test_empty_candidate_scores_zero():
    assert bleu_score([[]], [["a"]]) == 0.0
    with pytest.raises(ValueError):
        bleu_score([["a"]], [[]])
    with pytest.raises(ValueError):
        bleu_score([["a"]], [["a"], ["b"]])


def test_smoothing_only_on_zero_orders():
    cand, ref = [["a", "b", "x", "c"]], [["a", "b", "y", "c"]]
    assert bleu_score(cand, ref, smoothing=False) == 0.0
    # precisions 3/4, 1/3, 0/2 -> 0.1/2, 0/1 -> 0.1/1; equal lengths so BP = 1
    assert bleu_score(cand, ref) == pytest.approx((3 / 4 * 1 / 3 * 0.1 / 2 * 0.1 / 1) ** (1 / 4), abs=1e-12)


def test_short_blocks_use_effective_order():
    # a two-token perfect match has no 3- or 4-grams; those orders are left out
    assert bleu_score([["a", "b"]], [["a", "b"]]) == 1.0


blocks = st.lists(st.lists(st.sampled_from("abcdef"), min_size=0, max_size=9), min_size=1, max_size=5)


@settings(max_examples=300, deadline=None)
@given(blocks, st.data())
def test_matches_bruteforce(cand, data):
    ref = [data.draw(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=9)) for _ in cand]
    for smooth in (True, False):
        assert bleu_score(cand, ref, smoothing=smooth) == pytest.approx(
            bleu_bruteforce(cand, ref, smoothing=smooth), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(blocks, st.data())
def test_bounds_and_relabeling(cand, data):
    ref = [data.draw(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=9)) for _ in cand]
    s = bleu_score(cand, ref)
    assert 0.0 <= s <= 1.0
    perm = dict(zip("abcdef", data.draw(st.permutations("uvwxyz"))))
    relabel = lambda bs: [[perm[w] for w in b] for b in bs]
    assert bleu_score(relabel(cand), relabel(ref)) == s
    assert bleu_score(ref, ref) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=2, max_size=12), st.data())
def test_brevity_penalty_monotone(ref, data):
    cut = data.draw(st.integers(1, len(ref) - 1))
    short = ref[:cut]
    bp = lambda c: math.exp(min(0.0, 1 - len(ref) / len(c)))
    assert bp(short) <= bp(ref)
    assert bleu_score([short], [ref]) <= 1.0


def fn(name, arch, blocks_):
    return FunctionRecord.from_words(name, arch, blocks_)


def test_evaluate_translations_averages_functions():
    triples = [EvalTriple(fn("s1", "arm", [["X"]]), fn("r1", "x86", [list("abcdf")]), fn("t1", "x86", [list("abcde")])),
               EvalTriple(fn("s2", "arm", [["Y"]]), fn("r2", "x86", LONG_BLOCK), fn("t2", "x86", LONG_BLOCK))]
    rep = evaluate_translations(TranslationEvalSet(triples))
    assert rep.mean == pytest.approx((0.2 ** 0.25 + 1) / 2)
    assert [n for n, _ in rep.per_function] == ["s1", "s2"]
    text = format_bleu_report(rep)
    assert "mean function BLEU" in text and "s1" in text
    with pytest.raises(ValueError):
        TranslationEvalSet([EvalTriple(triples[0].source, triples[0].reference, fn("t", "arm", [["a"]]))])


def test_token_accuracy():
    assert token_accuracy([["a", "b"]], [["a", "b"]]) == 1.0
    assert token_accuracy([["a", "c", "d"]], [["a", "b"]]) == pytest.approx(1 / 3)
    assert token_accuracy([[]], [["a"]]) == 0.0


def _caie(d=4, seed=0):
    rng = np.random.default_rng(seed)
    words = ["<PAD>", "<UNK>", "<BOS>", "<EOS>", "I1", "I2", "I3"]
    return EmbeddingMatrix(words, rng.normal(size=(7, d)))


def test_function_embedding_definition():
    caie = _caie()
    one = function_embedding(fn("f", "x86", [["I1"]]), caie)
    assert np.array_equal(one.vector, caie.X[4]) and one.function == "f"
    two = function_embedding([["I1", "I1"], ["I2"]], caie)
    assert np.allclose(two.vector, 2 * caie.X[4] + caie.X[5])
    with pytest.raises(ValueError):
        function_embedding([[]], caie)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["I1", "I2", "I3"]), min_size=1, max_size=20), st.randoms())
def test_function_embedding_permutation_invariant(words, rnd):
    caie = _caie()
    shuffled = list(words)
    rnd.shuffle(shuffled)
    assert np.allclose(function_embedding([words], caie).vector, function_embedding([shuffled], caie).vector,
                       atol=1e-12)


def test_cosine_examples():
    assert cosine_similarity(np.array([1.0, 0]), np.array([1.0, 0])) == 1.0
    assert cosine_similarity(np.array([1.0, 0]), np.array([0.0, 1])) == 0.0
    assert cosine_similarity(np.array([1.0, 1]), np.array([1.0, 0])) == pytest.approx(math.sqrt(2) / 2)
    with pytest.raises(ValueError):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_best_threshold_enumeration():
    t, acc = best_threshold([0.9, 0.8, 0.3, 0.85], [1, 1, 0, 0])
    assert acc == 0.75 and t == 0.8
    # brute force over every cut point
    scores, labels = np.array([0.9, 0.8, 0.3, 0.85]), np.array([1, 1, 0, 0])
    brute = max(np.mean((scores >= c) == (labels == 1)) for c in list(scores) + [np.inf])
    assert acc == brute


def test_perfect_separation():
    pairs = [SimilarityPair("a", "b", 1, 0.9), SimilarityPair("a", "c", 0, 0.1)]
    t, acc = best_threshold([p.score for p in pairs], [p.label for p in pairs])
    assert acc == 1.0 and pair_accuracy(pairs, t) == 1.0
    with pytest.raises(ValueError):
        pair_accuracy([], 0.5)
    with pytest.raises(ValueError):
        pair_accuracy([SimilarityPair("a", "b", 1)], 0.5)


def test_split_is_seeded_and_disjoint():
    pairs = [SimilarityPair(str(i), "x", i % 2, i / 10) for i in range(10)]
    v1, t1 = split_validation(pairs, 0.5, 3)
    v2, t2 = split_validation(pairs, 0.5, 3)
    assert v1 == v2 and t1 == t2 and len(v1) == 5
    assert {p.f1 for p in v1}.isdisjoint({p.f1 for p in t1})
    res = similarity_accuracy(pairs, 0.5, 3)
    assert 0 <= res.accuracy <= 1 and res.n_test == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tf_normalization_leaves_cosines_unchanged(seed):
    rng = np.random.default_rng(seed)
    caie = _caie(8, seed)
    words = ["I1", "I2", "I3"]
    fns = [[list(rng.choice(words, rng.integers(1, 10)))] for _ in range(6)]
    raw = [function_embedding(f, caie) for f in fns]
    nrm = [function_embedding(f, caie, tf="normalized") for f in fns]
    for i in range(6):
        for j in range(6):
            try:
                c_raw = cosine_similarity(raw[i], raw[j])
            except ValueError:
                continue
            assert abs(c_raw - cosine_similarity(nrm[i], nrm[j])) <= 1e-12


def test_unknown_tf_mode():
    with pytest.raises(ValueError):
        function_embedding([["I1"]], _caie(), tf="log")


def test_similarity_table_layout():
    txt = format_similarity_table({"fastText": {"O0": 0.8, "O2": 0.953}, "word2vec": {"O2": 0.9}})
    head, row1, row2 = txt.splitlines()
    assert head.startswith("Tool for instruction embedding generation")
    assert "95.30%" in row1 and row2.split()[1] == "-"


def test_pairs_file_and_refs(tmp_path):
    (tmp_path / "x86.corpus").write_text("# seed=1\nA B\nC\nD E F\n")
    a = FunctionRef("f1", "x86", "x86.corpus", 0, 2)
    b = FunctionRef("f2", "x86", "x86.corpus", 2, 1)
    write_pairs(tmp_path / "pairs.tsv", [(a, b, 0)], {"seed": 1})
    ((ra, rb, label),) = read_pairs(tmp_path / "pairs.tsv")
    assert (ra, rb, label) == (a, b, 0)
    assert resolve_ref(ra, tmp_path).block_words() == [["A", "B"], ["C"]]
    with pytest.raises(ValueError):
        resolve_ref(FunctionRef("g", "x86", "x86.corpus", 2, 5), tmp_path)
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(ValueError):
        read_pairs(tmp_path / "bad.tsv")
