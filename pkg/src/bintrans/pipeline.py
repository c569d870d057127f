"""The toy twin-architecture pipeline: embeddings, mapping, translation, evaluation.

Side A of a twin corpus plays the high-resource architecture (x86) and side B
the low-resource one (arm); B is mapped into A's space and translated to A.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .asmtext import FunctionRecord
from .corpus import MonoCorpus
from .embed import EmbedTrainConfig, EmbeddingMatrix, train_maie
from .evalkit import (SimilarityPair, bleu_score, cosine_similarity, function_embedding,
                      similarity_accuracy, token_accuracy)
from .toyoracle import (TwinCorpus, TwinSpec, apply_adjacent_swaps, benign_function,
                        generate_twin_corpus, oracle_translate, vulnerable_function)
from .vulndetect import (LabeledSet, Metrics, OversampleConfig, evaluate_detection,
                         prepare_training_set, train_linear_svm)
from .xlate import TrainSchedule, TranslationModel, derive_seed, train_translator, translate_blocks
from .xmap import MappingTransform, SelfLearnConfig, cross_embeddings

log = logging.getLogger(__name__)

HIGH, LOW = "x86", "arm"


def toy_twin_spec(**overrides) -> TwinSpec:
    """Twin corpus used for the end-to-end check: 2,000 blocks a side, 300 words, p=0.1."""
    return replace(TwinSpec(vocab_size=300, n_blocks=2000, swap_p=0.1, zipf=0.7), **overrides)


def toy_embed_config(**overrides) -> EmbedTrainConfig:
    return replace(EmbedTrainConfig(epochs=20), **overrides)


def toy_schedule(**overrides) -> TrainSchedule:
    return replace(TrainSchedule(log_every=250), **overrides)


@dataclass
class ToyRun:
    twins: TwinCorpus
    corpora: dict            # arch -> MonoCorpus
    maie: dict               # arch -> EmbeddingMatrix
    caie: dict
    transform: MappingTransform
    model: TranslationModel | None
    seconds: dict = field(default_factory=dict)


def twin_corpora(twins: TwinCorpus, opt_level="O2") -> dict:
    return {HIGH: MonoCorpus.from_words(HIGH, opt_level, twins.a_blocks),
            LOW: MonoCorpus.from_words(LOW, opt_level, twins.b_blocks)}


def train_embeddings(corpora: dict, cfg: EmbedTrainConfig, seed: int) -> dict:
    """One MAIE per architecture, each from its own derived seed."""
    return {a: train_maie(c, replace(cfg, seed=derive_seed(seed, "embed", a) % 2**32))
            for a, c in sorted(corpora.items())}


def map_to_high(maie: dict, cfg: SelfLearnConfig | None = None):
    caie_low, caie_high, T = cross_embeddings(maie[LOW], maie[HIGH], cfg)
    return {LOW: caie_low, HIGH: caie_high}, T


def run_toy(spec: TwinSpec | None = None, embed_cfg: EmbedTrainConfig | None = None,
            map_cfg: SelfLearnConfig | None = None, schedule: TrainSchedule | None = None,
            seed: int = 0, translate: bool = True, callback=None) -> ToyRun:
    spec = spec or toy_twin_spec(seed=seed)
    embed_cfg = embed_cfg or toy_embed_config()
    map_cfg = map_cfg or SelfLearnConfig(seed=seed)
    seconds = {}
    t = time.process_time()
    twins = generate_twin_corpus(spec)
    corpora = twin_corpora(twins)
    maie = train_embeddings(corpora, embed_cfg, seed)
    seconds["embed"] = time.process_time() - t
    t = time.process_time()
    caie, T = map_to_high(maie, map_cfg)
    seconds["map"] = time.process_time() - t
    model = None
    if translate:
        t = time.process_time()
        model = train_translator(corpora, caie, schedule or toy_schedule(), seed=seed, callback=callback)
        seconds["xlate"] = time.process_time() - t
    return ToyRun(twins, corpora, maie, caie, T, model, seconds)


# --- evaluation --------------------------------------------------------------------------

@dataclass
class ToyTranslationScores:
    token_accuracy: float        # vs word-for-word lexicon rendering of the source
    mean_bleu: float             # per-function BLEU vs the same rendering, averaged
    corpus_bleu: float           # unsmoothed, all blocks pooled
    twin_token_accuracy: float   # vs the hidden A-side twin the B function was derived from
    twin_mean_bleu: float
    n_functions: int


def translate_low_functions(run: ToyRun, limit=None) -> list:
    fns = run.twins.b_functions[:limit]
    flat = [b for _, blocks in fns for b in blocks]
    out = translate_blocks(flat, run.model, LOW, HIGH)
    res, k = [], 0
    for _, blocks in fns:
        res.append(out[k:k + len(blocks)])
        k += len(blocks)
    return res


def score_toy_translation(run: ToyRun, limit=None) -> ToyTranslationScores:
    fns = run.twins.b_functions[:limit]
    hyps = translate_low_functions(run, limit)
    lex = run.twins.lexicon
    acc_c, acc_r, bleus, twin_bleus = [], [], [], []
    twin_refs = []
    for j, ((_, blocks), hyp) in enumerate(zip(fns, hyps)):
        ref = [oracle_translate(b, lex, "b2a") for b in blocks]
        twin = run.twins.a_functions[run.twins.b_twin[j]][1]
        acc_c.extend(hyp)
        acc_r.extend(ref)
        twin_refs.extend(twin)
        bleus.append(bleu_score(hyp, ref))
        twin_bleus.append(bleu_score(hyp, twin))
    return ToyTranslationScores(token_accuracy(acc_c, acc_r), float(np.mean(bleus)),
                                bleu_score(acc_c, acc_r, smoothing=False),
                                token_accuracy(acc_c, twin_refs), float(np.mean(twin_bleus)), len(fns))


def toy_similarity_pairs(run: ToyRun, caie: EmbeddingMatrix, limit=None, seed=0) -> list:
    """For each B function: (translation, its A twin) labelled 1 and (translation, another A function) labelled 0."""
    fns = run.twins.b_functions[:limit]
    hyps = translate_low_functions(run, limit)
    rng = np.random.default_rng(seed)
    a_fns = run.twins.a_functions
    pairs = []
    for j, ((name, _), hyp) in enumerate(zip(fns, hyps)):
        hyp = [b for b in hyp if b] or [["<UNK>"]]
        e1 = function_embedding(hyp, caie)
        twin = run.twins.b_twin[j]
        other = int(rng.integers(0, len(a_fns) - 1))
        other += other >= twin
        for idx, label in ((twin, 1), (other, 0)):
            e2 = function_embedding(a_fns[idx][1], caie)
            pairs.append(SimilarityPair(name, a_fns[idx][0], label, cosine_similarity(e1, e2)))
    return pairs


def toy_similarity(run: ToyRun, limit=None, seed=0):
    return similarity_accuracy(toy_similarity_pairs(run, run.caie[HIGH], limit, seed), 0.5, seed)


@dataclass
class ToyVulnResult:
    metrics: Metrics
    train_digest: str
    test_digest: str
    n_train: tuple
    n_test: tuple


def toy_vulnerability(run: ToyRun, n_benign=9999, n_test_benign=2000, n_test_vuln=5,
                      method="smote", seed=0) -> ToyVulnResult:
    """Train on A-side embeddings, test on translations of B-side twins.

    The vulnerable class is one signature block repeated in an otherwise
    ordinary function; the training set holds one vulnerable function.
    """
    rng = np.random.default_rng(derive_seed(seed, "vuln"))
    grammar, lex, p = run.twins.grammar, run.twins.lexicon, 0.1
    signature = grammar.sample(rng, 8)
    caie = run.caie[HIGH]

    train_fns = [benign_function(grammar, rng) for _ in range(n_benign)]
    train_fns.append(vulnerable_function(grammar, signature, rng))
    X = np.array([function_embedding(f, caie).vector for f in train_fns])
    y = np.array([0] * n_benign + [1])
    train = prepare_training_set(LabeledSet(X, y), OversampleConfig(method=method, seed=seed))
    model = train_linear_svm(train, seed=seed)
    train_digest = model.digest()

    test_a = [benign_function(grammar, rng) for _ in range(n_test_benign)]
    test_a += [vulnerable_function(grammar, signature, rng) for _ in range(n_test_vuln)]
    test_b = [[apply_adjacent_swaps(oracle_translate(b, lex, "a2b"), p, rng)[0] for b in f] for f in test_a]
    flat = translate_blocks([b for f in test_b for b in f], run.model, LOW, HIGH)
    vecs, k = [], 0
    for f in test_b:
        blocks = [b for b in flat[k:k + len(f)] if b] or [["<UNK>"]]
        k += len(f)
        vecs.append(function_embedding(blocks, caie).vector)
    test = LabeledSet(np.array(vecs), np.array([0] * n_test_benign + [1] * n_test_vuln))
    metrics = evaluate_detection(model, test)
    return ToyVulnResult(metrics, train_digest, model.digest(), train.counts(), test.counts())


def function_records(named_blocks, arch) -> list:
    return [FunctionRecord.from_words(n, arch, b) for n, b in named_blocks]
