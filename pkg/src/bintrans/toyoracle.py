"""Ground-truth generators and brute-force oracles for desk-scale checks.

Nothing here imports the numeric code it is used to verify.
"""
from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class TwinSpec:
    vocab_size: int = 300
    zipf: float = 0.7
    block_len: tuple = (4, 12)
    swap_p: float = 0.1
    n_blocks: int = 2000
    seed: int = 0
    blocks_per_function: tuple = (1, 4)
    successors: int = 6

    def validate(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 0.0 <= self.swap_p <= 0.5:
            raise ValueError("swap_p must lie in [0, 0.5]")
        lo, hi = self.block_len
        if not 1 <= lo <= hi:
            raise ValueError("block_len must satisfy 1 <= min <= max")
        lo, hi = self.blocks_per_function
        if not 1 <= lo <= hi:
            raise ValueError("blocks_per_function must satisfy 1 <= min <= max")
        if self.n_blocks < 1 or self.successors < 1:
            raise ValueError("n_blocks and successors must be positive")


@dataclass
class Lexicon:
    a_to_b: dict

    def __post_init__(self):
        self.b_to_a = {b: a for a, b in self.a_to_b.items()}
        if len(self.b_to_a) != len(self.a_to_b):
            raise ValueError("lexicon is not a bijection")

    def __len__(self):
        return len(self.a_to_b)

    def write(self, path):
        Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in self.a_to_b.items()),
                              encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Lexicon":
        pairs = [ln.split("\t") for ln in Path(path).read_text(encoding="utf-8").splitlines()
                 if ln and not ln.startswith("#")]
        return cls({a: b for a, b in pairs})


@dataclass
class TwinCorpus:
    a_blocks: list
    b_blocks: list
    lexicon: Lexicon
    a_functions: list          # list of (name, [blocks])
    b_functions: list
    b_twin: list               # b function index -> a function index
    b_swaps: list              # per B block: positions i where (i, i+1) were swapped
    grammar: "BigramGrammar" = field(repr=False, default=None)


def _random_words(rng, n, length=6, taken=()):
    out, seen = [], set(taken)
    letters = np.array(list(string.ascii_uppercase))
    while len(out) < n:
        w = "".join(rng.choice(letters, length))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class BigramGrammar:
    """Sparse first-order Markov chain with Zipfian word popularity."""

    def __init__(self, words, zipf, successors, rng):
        self.words = list(words)
        V = len(words)
        weights = 1.0 / np.arange(1, V + 1) ** zipf
        self.unigram = weights / weights.sum()
        k = min(successors, V)
        self.next_ids = np.empty((V, k), dtype=np.int64)
        self.next_p = np.empty((V, k))
        for i in range(V):
            nxt = rng.choice(V, size=k, replace=False, p=self.unigram)
            p = self.unigram[nxt] * rng.gamma(1.0, 1.0, size=k)
            self.next_ids[i] = nxt
            self.next_p[i] = p / p.sum()

    def sample_ids(self, rng, length):
        ids = [int(rng.choice(len(self.words), p=self.unigram))]
        while len(ids) < length:
            row = ids[-1]
            ids.append(int(self.next_ids[row][rng.choice(self.next_ids.shape[1], p=self.next_p[row])]))
        return ids

    def sample(self, rng, length):
        return [self.words[i] for i in self.sample_ids(rng, length)]


def apply_adjacent_swaps(block, p, rng):
    """Left-to-right scan; each visited adjacent pair is swapped with probability p.

    A swapped pair is skipped over, so swaps never overlap.  Returns the new
    block and the swap positions.
    """
    out = list(block)
    swaps = []
    i = 0
    while i < len(out) - 1:
        if rng.random() < p:
            out[i], out[i + 1] = out[i + 1], out[i]
            swaps.append(i)
            i += 2
        else:
            i += 1
    return out, swaps


def generate_twin_corpus(spec: TwinSpec) -> TwinCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    a_words = _random_words(rng, spec.vocab_size)
    b_words = _random_words(rng, spec.vocab_size, taken=a_words)
    lexicon = Lexicon(dict(zip(a_words, rng.permutation(b_words).tolist())))
    grammar = BigramGrammar(a_words, spec.zipf, spec.successors, rng)

    a_functions, n = [], 0
    while n < spec.n_blocks:
        k = int(rng.integers(spec.blocks_per_function[0], spec.blocks_per_function[1] + 1))
        k = min(k, spec.n_blocks - n)
        blocks = [grammar.sample(rng, int(rng.integers(spec.block_len[0], spec.block_len[1] + 1)))
                  for _ in range(k)]
        a_functions.append((f"fa{len(a_functions):05d}", blocks))
        n += k

    order = rng.permutation(len(a_functions))
    b_functions, b_swaps = [], []
    for j, src in enumerate(order):
        blocks = []
        for block in a_functions[src][1]:
            img, sw = apply_adjacent_swaps([lexicon.a_to_b[w] for w in block], spec.swap_p, rng)
            blocks.append(img)
            b_swaps.append(sw)
        b_functions.append((f"fb{j:05d}", blocks))
    return TwinCorpus(
        a_blocks=[b for _, bl in a_functions for b in bl],
        b_blocks=[b for _, bl in b_functions for b in bl],
        lexicon=lexicon, a_functions=a_functions, b_functions=b_functions,
        b_twin=[int(i) for i in order], b_swaps=b_swaps, grammar=grammar)


def oracle_translate(block, lexicon: Lexicon, direction: str = "a2b"):
    table = {"a2b": lexicon.a_to_b, "b2a": lexicon.b_to_a}[direction]
    missing = [w for w in block if w not in table]
    if missing:
        raise KeyError(f"words not in lexicon: {missing[:5]}")
    return [table[w] for w in block]


def measured_swap_rate(twins: TwinCorpus) -> float:
    """Swap decisions recovered by comparing each B block with its hidden A twin."""
    swaps = decisions = 0
    for j, (_, b_blocks) in enumerate(twins.b_functions):
        a_blocks = twins.a_functions[twins.b_twin[j]][1]
        for a_block, b_block in zip(a_blocks, b_blocks):
            img = oracle_translate(a_block, twins.lexicon)
            i, n = 0, len(img)
            while i < n - 1:
                decisions += 1
                if img[i] != b_block[i] and img[i] == b_block[i + 1] and img[i + 1] == b_block[i]:
                    swaps += 1
                    i += 2
                else:
                    i += 1
    return swaps / max(decisions, 1)


# --- vulnerability toy -------------------------------------------------------------

def vulnerable_function(grammar: BigramGrammar, signature, rng, repeats=6):
    """A function dominated by repeated copies of one signature block."""
    blocks = [list(signature) for _ in range(repeats)]
    blocks.insert(int(rng.integers(0, repeats + 1)), grammar.sample(rng, int(rng.integers(4, 9))))
    return blocks


def benign_function(grammar: BigramGrammar, rng, n_blocks=(1, 4), block_len=(4, 12)):
    k = int(rng.integers(n_blocks[0], n_blocks[1] + 1))
    return [grammar.sample(rng, int(rng.integers(block_len[0], block_len[1] + 1))) for _ in range(k)]


# --- brute-force BLEU -----------------------------------------------------------------

def bleu_bruteforce(candidate, reference, max_n=4, smoothing=True, epsilon=0.1) -> float:
    """Corpus BLEU by explicit enumeration; same conventions as the production metric.

    Orders with no candidate n-grams at all are dropped (effective order);
    zero matches at a remaining order become ``epsilon`` when smoothing.
    """
    assert len(candidate) == len(reference)
    cand_len = sum(len(c) for c in candidate)
    ref_len = sum(len(r) for r in reference)
    if cand_len == 0:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        matched = 0
        possible = 0
        for c, r in zip(candidate, reference):
            ref_counts = {}
            for i in range(len(r) - n + 1):
                g = tuple(r[i:i + n])
                ref_counts[g] = ref_counts.get(g, 0) + 1
            cand_counts = {}
            for i in range(len(c) - n + 1):
                g = tuple(c[i:i + n])
                cand_counts[g] = cand_counts.get(g, 0) + 1
            for g, cnt in cand_counts.items():
                matched += min(cnt, ref_counts.get(g, 0))
                possible += cnt
        if possible == 0:
            continue
        if matched == 0:
            if not smoothing:
                return 0.0
            matched = epsilon
        precisions.append(matched / possible)
    product = 1.0
    for p in precisions:
        product *= p
    geo = product ** (1.0 / len(precisions))
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return geo * bp


# --- numeric oracles ---------------------------------------------------------------------

def finite_difference_grad(f, theta: np.ndarray, eps: float = 1e-4, coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``theta`` for the given flat coordinates."""
    theta = np.array(theta, dtype=np.float64, copy=True)
    flat = theta.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for c in coords:
        old = flat[c]
        flat[c] = old + eps
        hi = f(theta)
        flat[c] = old - eps
        lo = f(theta)
        flat[c] = old
        out.append((hi - lo) / (2 * eps))
    return np.asarray(out)


def random_orthogonal(d, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def plant_rotation(X: np.ndarray, sigma: float = 0.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    Q = random_orthogonal(X.shape[1], rng)
    Z = X @ Q
    if sigma:
        Z = Z + sigma * rng.standard_normal(Z.shape)
    return Z, Q


def shared_latent_twins(V, d, sigma, seed=0):
    """Two noisy rotated views of one latent point cloud with hidden row order.

    Returns (Xs, Zt, truth) with Zt[truth[i]] the twin of Xs[i].
    """
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((V, d))
    L /= np.linalg.norm(L, axis=1, keepdims=True)
    Xs = L + sigma * rng.standard_normal((V, d))
    Q = random_orthogonal(d, rng)
    Zt = (L + sigma * rng.standard_normal((V, d))) @ Q
    perm = rng.permutation(V)
    Z_perm = np.empty_like(Zt)
    Z_perm[perm] = Zt
    return Xs, Z_perm, perm
