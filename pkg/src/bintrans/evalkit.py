"""Translation BLEU, TF-weighted function embeddings and the similarity task."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .asmtext import FunctionRecord
from .embed import EmbeddingMatrix, lookup_vector
from .provenance import read_text_lines, write_text


# --- BLEU -----------------------------------------------------------------------------

def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu_stats(candidate, reference, max_n=4):
    """Clipped matches and candidate n-gram totals per order, plus both lengths."""
    if len(candidate) != len(reference):
        raise ValueError(f"{len(candidate)} candidate blocks vs {len(reference)} reference blocks")
    matches = [0] * max_n
    totals = [0] * max_n
    for c, r in zip(candidate, reference):
        for n in range(1, max_n + 1):
            cc = _ngrams(c, n)
            rc = _ngrams(r, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in cc.items())
            totals[n - 1] += sum(cc.values())
    return matches, totals, sum(map(len, candidate)), sum(map(len, reference))


def bleu_score(candidate, reference, max_n=4, smoothing=True, epsilon=0.1) -> float:
    """Corpus BLEU of candidate blocks against reference blocks (one reference each).

    Orders for which the candidate has no n-grams at all are left out of the
    geometric mean.  With ``smoothing`` a zero match count becomes
    ``epsilon``; without it any zero precision gives 0.
    """
    if not any(len(r) for r in reference):
        raise ValueError("reference is empty")
    matches, totals, c_len, r_len = bleu_stats(candidate, reference, max_n)
    if c_len == 0:
        return 0.0
    log_p = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            if not smoothing:
                return 0.0
            m = epsilon
        log_p.append(math.log(m / t))
    bp = min(0.0, 1.0 - r_len / c_len)
    return math.exp(bp + sum(log_p) / len(log_p))


@dataclass
class EvalTriple:
    source: FunctionRecord
    reference: FunctionRecord
    translated: FunctionRecord


@dataclass
class TranslationEvalSet:
    triples: list

    def __post_init__(self):
        for t in self.triples:
            if str(t.reference.arch) != str(t.translated.arch):
                raise ValueError(f"reference and translation of {t.source.name!r} differ in arch")


@dataclass
class BleuReport:
    per_function: list          # (name, score)
    mean: float
    corpus_unsmoothed: float


def function_bleu(translated: FunctionRecord, reference: FunctionRecord, max_n=4) -> float:
    return bleu_score(translated.block_words(), reference.block_words(), max_n)


def evaluate_translations(evalset: TranslationEvalSet, max_n=4) -> BleuReport:
    """Corpus BLEU per function, averaged over functions; plus unsmoothed BLEU over everything."""
    if not evalset.triples:
        raise ValueError("empty evaluation set")
    per = [(t.source.name, function_bleu(t.translated, t.reference, max_n)) for t in evalset.triples]
    cand = [b for t in evalset.triples for b in t.translated.block_words()]
    ref = [b for t in evalset.triples for b in t.reference.block_words()]
    return BleuReport(per, float(np.mean([s for _, s in per])),
                      bleu_score(cand, ref, max_n, smoothing=False))


def format_bleu_report(report: BleuReport, show_functions=True) -> str:
    lines = []
    if show_functions:
        width = max(len(n) for n, _ in report.per_function)
        lines += [f"{n.ljust(width)}  {s:.4f}" for n, s in report.per_function]
    lines.append(f"functions {len(report.per_function)}")
    lines.append(f"mean function BLEU {report.mean:.4f}")
    lines.append(f"corpus BLEU (unsmoothed) {report.corpus_unsmoothed:.4f}")
    return "\n".join(lines) + "\n"


def token_accuracy(candidate, reference) -> float:
    """Position-wise agreement over blocks; length differences count as errors."""
    hit = total = 0
    for c, r in zip(candidate, reference):
        hit += sum(a == b for a, b in zip(c, r))
        total += max(len(c), len(r))
    return hit / total if total else 1.0


# --- function embeddings ------------------------------------------------------------------

@dataclass
class FunctionEmbedding:
    vector: np.ndarray
    function: str = ""


def function_embedding(fn, caie: EmbeddingMatrix, tf: str = "raw") -> FunctionEmbedding:
    """Sum of each distinct instruction's CAIE weighted by its term frequency.

    ``tf="raw"`` uses occurrence counts; ``"normalized"`` divides them by the
    function length.  ``fn`` may be a FunctionRecord or a list of word blocks.
    """
    if isinstance(fn, FunctionRecord):
        name, words = fn.name, fn.words
    else:
        name, words = "", [w for b in fn for w in b]
    if not words:
        raise ValueError(f"function {name!r} has no instructions")
    counts = Counter(words)
    vec = np.zeros(caie.dim)
    for w in sorted(counts):
        vec += counts[w] * lookup_vector(w, caie)
    if tf == "normalized":
        vec /= len(words)
    elif tf != "raw":
        raise ValueError(f"unknown tf weighting {tf!r}")
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError(f"non-finite embedding for function {name!r}")
    return FunctionEmbedding(vec, name)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u.vector if isinstance(u, FunctionEmbedding) else u, dtype=np.float64)
    v = np.asarray(v.vector if isinstance(v, FunctionEmbedding) else v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# --- similarity task ---------------------------------------------------------------------

@dataclass
class SimilarityPair:
    f1: str
    f2: str
    label: int
    score: float | None = None


def best_threshold(scores, labels) -> tuple[float, float]:
    """Threshold t maximizing accuracy of (score >= t); returns (t, accuracy).

    Candidates are every observed score plus +inf; ties go to the smallest t.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if len(scores) == 0:
        raise ValueError("no scored pairs")
    best_t, best_acc = math.inf, float(np.mean(labels == 0))
    for t in np.unique(scores)[::-1]:
        acc = float(np.mean((scores >= t) == (labels == 1)))
        if acc >= best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


def pair_accuracy(pairs, threshold: float) -> float:
    if not pairs:
        raise ValueError("empty pair set")
    if any(p.score is None for p in pairs):
        raise ValueError("every pair must be scored first")
    return float(np.mean([(p.score >= threshold) == (p.label == 1) for p in pairs]))


def split_validation(pairs, fraction=0.5, seed=0):
    """Seeded random split into (validation, test)."""
    idx = np.random.default_rng(seed).permutation(len(pairs))
    cut = int(round(fraction * len(pairs)))
    return [pairs[i] for i in sorted(idx[:cut])], [pairs[i] for i in sorted(idx[cut:])]


@dataclass
class SimilarityResult:
    threshold: float
    validation_accuracy: float
    accuracy: float
    n_test: int


def similarity_accuracy(pairs, val_fraction=0.5, seed=0) -> SimilarityResult:
    """Pick the best threshold on a validation split and report test accuracy."""
    val, test = split_validation(pairs, val_fraction, seed)
    if not val or not test:
        raise ValueError("need pairs on both sides of the validation split")
    t, val_acc = best_threshold([p.score for p in val], [p.label for p in val])
    return SimilarityResult(t, val_acc, pair_accuracy(test, t), len(test))


def format_similarity_table(rows) -> str:
    """rows: {tool name: {opt level: accuracy}} -> similarity accuracy table."""
    levels = sorted({lvl for r in rows.values() for lvl in r})
    header = ["Tool for instruction embedding generation"] + levels
    body = [[tool] + [f"{100 * r[lvl]:.2f}%" if lvl in r else "-" for lvl in levels]
            for tool, r in rows.items()]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                for i, (c, w) in enumerate(zip(row, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


# --- eval-set file ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionRef:
    """A function as a run of lines in a corpus file."""
    id: str
    arch: str
    corpus: str
    first: int
    count: int


def write_pairs(path, pairs, provenance=None):
    """One pair per line: both function references, then the label."""
    lines = ["\t".join([*(str(x) for x in (a.id, a.arch, a.corpus, a.first, a.count)),
                        *(str(x) for x in (b.id, b.arch, b.corpus, b.first, b.count)), str(label)])
             for a, b, label in pairs]
    write_text(path, "".join(ln + "\n" for ln in lines), provenance)


def read_pairs(path):
    out = []
    for ln in read_text_lines(path):
        if not ln:
            continue
        f = ln.split("\t")
        if len(f) != 11:
            raise ValueError(f"{path}: expected 11 tab-separated fields, got {len(f)}")
        a = FunctionRef(f[0], f[1], f[2], int(f[3]), int(f[4]))
        b = FunctionRef(f[5], f[6], f[7], int(f[8]), int(f[9]))
        out.append((a, b, int(f[10])))
    return out


def resolve_ref(ref: FunctionRef, base_dir=".", cache=None) -> FunctionRecord:
    from .corpus import read_corpus

    cache = {} if cache is None else cache
    path = str(Path(base_dir) / ref.corpus)
    if path not in cache:
        cache[path] = read_corpus(path)
    blocks = cache[path]
    if ref.first + ref.count > len(blocks):
        raise ValueError(f"function {ref.id!r} references blocks beyond {ref.corpus}")
    return FunctionRecord.from_words(ref.id, ref.arch, blocks[ref.first:ref.first + ref.count])
