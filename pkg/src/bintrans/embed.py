"""Mono-architecture instruction embeddings.

Skip-gram with negative sampling over instruction windows inside basic blocks.
In ``subword`` mode each word's input vector is its own row plus the mean of
its hashed character n-gram rows (fastText style); ``word`` mode drops the
n-gram table (word2vec style).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .corpus import SPECIALS, UNK_ID, MonoCorpus, Vocab
from .provenance import header_line, read_text_lines

log = logging.getLogger(__name__)

N_SPECIALS = len(SPECIALS)


@dataclass
class EmbedTrainConfig:
    dim: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.05
    seed: int = 0
    mode: str = "subword"
    buckets: int = 2_000_000
    min_n: int = 3
    max_n: int = 6

    def validate(self):
        for name in ("dim", "window", "negatives", "epochs", "buckets"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.mode not in ("subword", "word"):
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        if not 1 <= self.min_n <= self.max_n:
            raise ValueError("need 1 <= min_n <= max_n")


# --- subword n-grams -------------------------------------------------------------

def fnv1a(text: str) -> int:
    h = 2166136261
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, n_min: int, n_max: int) -> list[str]:
    if not 1 <= n_min <= n_max:
        raise ValueError("need 1 <= n_min <= n_max")
    marked = f"<{word}>"
    grams = [marked[i:i + n] for n in range(n_min, n_max + 1)
             for i in range(len(marked) - n + 1)]
    return grams or [marked]


def subword_ngrams(word: str, n_min: int, n_max: int, buckets: int) -> list[int]:
    return [fnv1a(g) % buckets for g in char_ngrams(word, n_min, n_max)]


@dataclass
class SubwordTable:
    """Hashed n-gram vectors; only buckets touched by the vocabulary are stored.

    Buckets never seen during training hold their zero initial value.
    """
    buckets: int
    min_n: int
    max_n: int
    bucket_ids: np.ndarray          # sorted, unique
    vectors: np.ndarray             # len(bucket_ids) x d

    def __post_init__(self):
        if self.buckets < 1:
            raise ValueError("bucket count must be >= 1")

    def rows_for(self, word: str) -> tuple[np.ndarray, int]:
        """Stored-row indices of the word's n-grams and the total n-gram count."""
        b = np.asarray(subword_ngrams(word, self.min_n, self.max_n, self.buckets))
        if len(self.bucket_ids) == 0:
            return np.empty(0, np.int64), len(b)
        pos = np.minimum(np.searchsorted(self.bucket_ids, b), len(self.bucket_ids) - 1)
        return pos[self.bucket_ids[pos] == b], len(b)

    def mean_vector(self, word: str) -> np.ndarray:
        rows, n = self.rows_for(word)
        return self.vectors[rows].sum(axis=0) / n


@dataclass
class EmbeddingMatrix:
    """Row i is the vector of vocabulary id i.

    ``center``/``rotation`` are set on cross-architecture embeddings so that
    OOV vectors composed from subwords go through the same normalization and
    mapping as the stored rows.
    """
    words: tuple
    X: np.ndarray
    mode: str = "word"
    subwords: SubwordTable | None = None
    arch: str = ""
    center: np.ndarray | None = None
    rotation: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.words = tuple(self.words)
        if self.X.shape[0] != len(self.words):
            raise ValueError("embedding rows do not match vocabulary size")
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def index(self, word) -> int | None:
        return self._index.get(word)

    def project(self, raw: np.ndarray) -> np.ndarray:
        """Send a raw composed vector into this matrix's space."""
        if self.center is None:
            return raw
        v = raw / (np.linalg.norm(raw) or 1.0)
        v = v - self.center
        v = v / (np.linalg.norm(v) or 1.0)
        return v @ self.rotation if self.rotation is not None else v


# --- SGNS objective -----------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss_and_grads(v_in, u_pos, u_neg):
    """Loss and gradients for a batch of (input vector, positive, negatives).

    v_in: (B, d), u_pos: (B, d), u_neg: (B, K, d).  Returns per-row losses and
    gradients w.r.t. each argument.
    """
    s_pos = np.einsum("bd,bd->b", v_in, u_pos)
    s_neg = np.einsum("bd,bkd->bk", v_in, u_neg)
    loss = np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg).sum(axis=1)
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    d_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
    d_pos = g_pos[:, None] * v_in
    d_neg = g_neg[:, :, None] * v_in[:, None, :]
    return loss, d_v, d_pos, d_neg


def sgns_example_loss(params: dict, center: int, context: int, negatives, ngram_rows=None) -> float:
    """Loss of a single (center, context, negatives) triple; used by gradient checks."""
    v = params["W_in"][center].copy()
    if ngram_rows is not None and len(ngram_rows):
        v = v + params["G"][ngram_rows].mean(axis=0)
    loss, *_ = sgns_loss_and_grads(v[None], params["W_out"][context][None],
                                   params["W_out"][np.asarray(negatives)][None])
    return float(loss[0])


def sgns_example_grads(params: dict, center: int, context: int, negatives, ngram_rows=None) -> dict:
    """Analytic gradients of :func:`sgns_example_loss` w.r.t. every parameter array."""
    negatives = np.asarray(negatives)
    v = params["W_in"][center].copy()
    if ngram_rows is not None and len(ngram_rows):
        v = v + params["G"][ngram_rows].mean(axis=0)
    _, d_v, d_pos, d_neg = sgns_loss_and_grads(v[None], params["W_out"][context][None],
                                               params["W_out"][negatives][None])
    grads = {k: np.zeros_like(a) for k, a in params.items()}
    grads["W_in"][center] += d_v[0]
    if ngram_rows is not None and len(ngram_rows):
        np.add.at(grads["G"], ngram_rows, d_v[0] / len(ngram_rows))
    grads["W_out"][context] += d_pos[0]
    np.add.at(grads["W_out"], negatives, d_neg[0])
    return grads


# --- training -------------------------------------------------------------------------

def _window_pairs(blocks, window, rng):
    """Skip-gram (center, context) pairs with word2vec-style reduced windows."""
    toks, bid = [], []
    for k, b in enumerate(blocks):
        b = [t for t in b if t >= N_SPECIALS]
        toks.extend(b)
        bid.extend([k] * len(b))
    toks = np.asarray(toks, dtype=np.int64)
    bid = np.asarray(bid, dtype=np.int64)
    n = len(toks)
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    reach = rng.integers(1, window + 1, size=n)
    pos, ctx, order = [], [], []
    idx = np.arange(n)
    for off in range(1, window + 1):
        for sign in (-1, 1):
            j = idx + sign * off
            ok = (j >= 0) & (j < n)
            ok[ok] &= bid[idx[ok]] == bid[j[ok]]
            ok &= reach >= off
            pos.append(idx[ok])
            ctx.append(j[ok])
            order.append(np.full(ok.sum(), 2 * off + (sign > 0)))
    pos = np.concatenate(pos)
    ctx = np.concatenate(ctx)
    order = np.concatenate(order)
    sort = np.lexsort((order, pos))
    return toks[pos[sort]], toks[ctx[sort]]


def _noise_table(vocab: Vocab):
    counts = np.asarray(vocab.counts, dtype=np.float64)
    counts[:N_SPECIALS] = 0.0
    probs = counts ** 0.75
    total = probs.sum()
    if total <= 0:
        raise ValueError("no trainable words in the vocabulary")
    return np.cumsum(probs / total)


@numba.njit(cache=True)
def _sgns_sweep(centers, contexts, negs, W_in, W_out, G, ng, ng_count, lr0, done, total):
    """Sequential SGD over (center, context) pairs, one update per pair.

    Returns the summed loss.  ``ng`` rows hold stored n-gram rows padded with -1;
    an empty ``G`` means word mode.
    """
    d = W_in.shape[1]
    K = negs.shape[1]
    subword = G.shape[0] > 0
    v = np.empty(d)
    grad = np.empty(d)
    loss = 0.0
    for p in range(centers.shape[0]):
        lr = lr0 * max(1e-4, 1.0 - (done + p) / total)
        c = centers[p]
        n_c = ng_count[c] if subword else 0
        for i in range(d):
            v[i] = W_in[c, i]
            grad[i] = 0.0
        for j in range(n_c):
            r = ng[c, j]
            for i in range(d):
                v[i] += G[r, i] / n_c
        for k in range(K + 1):
            t = contexts[p] if k == 0 else negs[p, k - 1]
            s = 0.0
            for i in range(d):
                s += v[i] * W_out[t, i]
            if k == 0:
                loss += np.logaddexp(0.0, -s)
                g = 1.0 / (1.0 + np.exp(-s)) - 1.0
            else:
                loss += np.logaddexp(0.0, s)
                g = 1.0 / (1.0 + np.exp(-s))
            for i in range(d):
                grad[i] += g * W_out[t, i]
                W_out[t, i] -= lr * g * v[i]
        for i in range(d):
            W_in[c, i] -= lr * grad[i]
        for j in range(n_c):
            r = ng[c, j]
            for i in range(d):
                G[r, i] -= lr * grad[i] / n_c
    return loss


def _ngram_index(words, cfg):
    """Sorted touched bucket ids and a padded (V, width) matrix of stored rows."""
    per_word = [subword_ngrams(w, cfg.min_n, cfg.max_n, cfg.buckets) for w in words]
    bucket_ids = np.unique(np.concatenate([np.asarray(b) for b in per_word]))
    width = max(len(b) for b in per_word)
    ng = np.full((len(words), width), -1, dtype=np.int64)
    for i, b in enumerate(per_word):
        ng[i, :len(b)] = np.searchsorted(bucket_ids, b)
    return bucket_ids, ng, (ng >= 0).sum(axis=1)


def train_maie(corpus: MonoCorpus, cfg: EmbedTrainConfig | None = None) -> EmbeddingMatrix:
    cfg = cfg or EmbedTrainConfig()
    cfg.validate()
    if not corpus.blocks or all(len(b) == 0 for b in corpus.blocks):
        raise ValueError("cannot train embeddings on an empty corpus")
    vocab = corpus.vocab
    V, d = len(vocab), cfg.dim
    rng = np.random.default_rng(cfg.seed)

    W_in = rng.uniform(-1.0 / d, 1.0 / d, size=(V, d))
    W_out = np.zeros((V, d))

    subword = cfg.mode == "subword"
    if subword:
        bucket_ids, ng, ng_count = _ngram_index(vocab.words, cfg)
        G = np.zeros((len(bucket_ids), d))
    else:
        ng, ng_count, G = np.zeros((V, 1), np.int64), np.zeros(V, np.int64), np.zeros((0, d))

    table = _noise_table(vocab)
    epoch_pairs = [None] * cfg.epochs
    # pairs are drawn up front so the linear lr decay knows the total
    for e in range(cfg.epochs):
        order = rng.permutation(len(corpus.blocks))
        epoch_pairs[e] = _window_pairs([corpus.blocks[i] for i in order], cfg.window, rng)
    total = sum(len(p[0]) for p in epoch_pairs)
    if total == 0:
        raise ValueError("corpus yields no training pairs (every block has < 2 known words)")

    losses = []
    done = 0
    for e in range(cfg.epochs):
        centers, contexts = epoch_pairs[e]
        negs = np.searchsorted(table, rng.random((len(centers), cfg.negatives)), side="right")
        loss = _sgns_sweep(centers, contexts, negs, W_in, W_out, G, ng, ng_count,
                           float(cfg.lr), done, float(total))
        done += len(centers)
        losses.append(loss / max(1, len(centers)))
        log.info("epoch %d/%d mean loss %.4f", e + 1, cfg.epochs, losses[-1])

    if subword:
        table_ = SubwordTable(cfg.buckets, cfg.min_n, cfg.max_n, bucket_ids, G)
        mask = ng >= 0
        X = W_in + (G[np.where(mask, ng, 0)] * mask[..., None]).sum(axis=1) / ng_count[:, None]
    else:
        table_, X = None, W_in
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("non-finite values in trained embeddings")
    meta = {"config": asdict(cfg), "epoch_loss": losses, "arch": str(corpus.arch)}
    return EmbeddingMatrix(vocab.words, X, cfg.mode, table_, str(corpus.arch), meta=meta)


# --- lookup ------------------------------------------------------------------------------

def lookup_vector(word: str, emb: EmbeddingMatrix) -> np.ndarray:
    i = emb.index(word)
    if i is not None:
        return emb.X[i]
    if emb.subwords is not None:
        return emb.project(emb.subwords.mean_vector(word))
    return emb.X[UNK_ID]


def nearest_neighbors(word: str, emb: EmbeddingMatrix, k: int = 10) -> list[tuple[str, float]]:
    if k >= len(emb.words):
        raise ValueError("k must be smaller than the vocabulary size")
    q = lookup_vector(word, emb)
    norms = np.linalg.norm(emb.X, axis=1) * (np.linalg.norm(q) or 1.0)
    cos = emb.X @ q / np.where(norms == 0, 1.0, norms)
    cos[:N_SPECIALS] = -np.inf
    own = emb.index(word)
    if own is not None:
        cos[own] = -np.inf
    order = np.argsort(-cos, kind="stable")[:k]
    return [(emb.words[i], float(cos[i])) for i in order if np.isfinite(cos[i])]


# --- file formats ------------------------------------------------------------------------

def write_embeddings_text(path, emb: EmbeddingMatrix, provenance: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if provenance is not None:
            f.write(header_line(provenance))
        f.write(f"{len(emb.words)} {emb.dim}\n")
        for w, row in zip(emb.words, emb.X):
            f.write(w + " " + " ".join(f"{x:.6g}" for x in row) + "\n")


def read_embeddings_text(path) -> EmbeddingMatrix:
    lines = read_text_lines(path)
    V, d = map(int, lines[0].split())
    words, rows = [], np.empty((V, d))
    for i, ln in enumerate(lines[1:V + 1]):
        parts = ln.rsplit(" ", d)
        words.append(parts[0])
        rows[i] = [float(x) for x in parts[1:]]
    return EmbeddingMatrix(words, rows, "word")


def write_embeddings_binary(path, emb: EmbeddingMatrix, provenance: dict | None = None):
    """JSON manifest line, then float32 little-endian arrays in manifest order."""
    arrays = [("X", emb.X)]
    if emb.subwords is not None:
        arrays += [("bucket_ids", emb.subwords.bucket_ids.astype(np.int64)),
                   ("G", emb.subwords.vectors)]
    if emb.center is not None:
        arrays.append(("center", emb.center))
    if emb.rotation is not None:
        arrays.append(("rotation", emb.rotation))
    manifest = {
        "format": "bintrans-embeddings/1", "mode": emb.mode, "arch": emb.arch,
        "words": list(emb.words), "provenance": provenance or {},
        "subwords": None if emb.subwords is None else
        {"buckets": emb.subwords.buckets, "min_n": emb.subwords.min_n, "max_n": emb.subwords.max_n},
        "arrays": [{"name": n, "shape": list(a.shape),
                    "dtype": "<i8" if a.dtype.kind == "i" else "<f4"} for n, a in arrays],
        "meta": emb.meta,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for (_, a), spec in zip(arrays, manifest["arrays"]):
            f.write(np.ascontiguousarray(a, dtype=spec["dtype"]).tobytes())


def read_embeddings_binary(path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    manifest = json.loads(data[:nl])
    off = nl + 1
    arrays = {}
    for spec in manifest["arrays"]:
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arrays[spec["name"]] = np.frombuffer(data, dt, n, off).reshape(spec["shape"]).astype(
            np.int64 if dt.kind == "i" else np.float64)
        off += n * dt.itemsize
    sub = None
    if manifest["subwords"] is not None:
        s = manifest["subwords"]
        sub = SubwordTable(s["buckets"], s["min_n"], s["max_n"], arrays["bucket_ids"], arrays["G"])
    return EmbeddingMatrix(manifest["words"], arrays["X"], manifest["mode"], sub, manifest["arch"],
                           arrays.get("center"), arrays.get("rotation"), manifest.get("meta", {}))
