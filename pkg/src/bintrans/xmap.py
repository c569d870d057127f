"""Unsupervised orthogonal mapping of one embedding space into another.

Self-learning alternates an orthogonal Procrustes fit with CSLS dictionary
induction, starting from a dictionary obtained by matching sorted
intra-space similarity profiles (which are invariant to rotation).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingMatrix
from .provenance import header_line, read_text_lines

log = logging.getLogger(__name__)


@dataclass
class SelfLearnConfig:
    csls_k: int = 10
    keep_prob: float = 0.9
    max_iter: int = 200
    tol: float = 1e-6
    init_vocab: int = 4000
    vocab_cutoff: int = 20000
    seed: int = 0

    def validate(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.csls_k < 1:
            raise ValueError("csls_k must be >= 1")
        if self.max_iter < 1 or self.init_vocab < 1 or self.vocab_cutoff < 1:
            raise ValueError("max_iter, init_vocab and vocab_cutoff must be positive")


@dataclass
class SeedDictionary:
    src: np.ndarray
    trg: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.src)

    def pairs(self):
        return list(zip(self.src.tolist(), self.trg.tolist()))


@dataclass
class MappingTransform:
    W: np.ndarray
    source: str = ""
    target: str = ""
    converged: bool = True
    history: list = field(default_factory=list)

    def orthogonality_error(self) -> float:
        return float(np.linalg.norm(self.W.T @ self.W - np.eye(self.W.shape[1])))


def _unit_rows(M):
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return M / norms


def preprocess_embeddings(X, words=None) -> np.ndarray:
    """Unit length, mean centering, unit length again."""
    if isinstance(X, EmbeddingMatrix):
        words = X.words if words is None else words
        X = X.X
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        name = words[zero[0]] if words is not None else f"row {zero[0]}"
        raise ValueError(f"zero embedding vector for {name!r}")
    X = X / norms[:, None]
    X = X - X.mean(axis=0)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        name = words[zero[0]] if words is not None else f"row {zero[0]}"
        raise ValueError(f"embedding for {name!r} vanishes after centering")
    return X / norms[:, None]


def procrustes_fit(Xs, Zt, dictionary) -> MappingTransform:
    """Orthogonal W minimizing ||Xs[src] W - Zt[trg]||_F."""
    if isinstance(dictionary, SeedDictionary):
        src, trg = dictionary.src, dictionary.trg
    else:
        src, trg = (np.asarray(a) for a in zip(*dictionary)) if len(dictionary) else ([], [])
    if len(src) == 0:
        raise ValueError("empty seed dictionary")
    if Xs.shape[1] != Zt.shape[1]:
        raise ValueError("source and target dimensions differ")
    u, _, vt = np.linalg.svd(Xs[src].T @ Zt[trg])
    return MappingTransform(u @ vt)


def _topk_mean(sim, k):
    """Mean of the k largest entries of each row."""
    k = min(k, sim.shape[1])
    part = np.partition(sim, sim.shape[1] - k, axis=1)[:, -k:]
    return part.mean(axis=1)


def csls_matrix(XsW, Zt, k=10):
    sim = XsW @ Zt.T
    r_t = _topk_mean(sim, k)        # source rows' neighbourhood in target space
    r_s = _topk_mean(sim.T, k)      # target rows' neighbourhood in source space
    return 2 * sim - r_t[:, None] - r_s[None, :]


def induce_dictionary(XsW, Zt, cfg: SelfLearnConfig | None = None, rng=None,
                      src_rows=None) -> SeedDictionary:
    """Each source row paired with its CSLS-best target row, pairs kept with keep_prob."""
    cfg = cfg or SelfLearnConfig()
    src_rows = np.arange(XsW.shape[0]) if src_rows is None else np.asarray(src_rows)
    scores = csls_matrix(XsW[src_rows], Zt, cfg.csls_k)
    trg = scores.argmax(axis=1)
    best = scores[np.arange(len(src_rows)), trg]
    if cfg.keep_prob < 1.0:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        keep = rng.random(len(src_rows)) < cfg.keep_prob
        if not keep.any():
            keep[np.argmax(best)] = True
    else:
        keep = np.ones(len(src_rows), bool)
    return SeedDictionary(src_rows[keep], trg[keep], best[keep])


def _sorted_similarity_profile(X):
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    sim = (u * s) @ u.T
    sim.sort(axis=1)
    return preprocess_embeddings(sim)


def initial_dictionary(Xs, Zt, cfg: SelfLearnConfig) -> SeedDictionary:
    n = min(cfg.init_vocab, Xs.shape[0], Zt.shape[0])
    xsim = _sorted_similarity_profile(Xs[:n])
    zsim = _sorted_similarity_profile(Zt[:n])
    sim = xsim @ zsim.T
    k = min(cfg.csls_k, n)
    sim = sim - _topk_mean(sim, k)[:, None] / 2 - _topk_mean(sim.T, k)[None, :] / 2
    trg = sim.argmax(axis=1)
    return SeedDictionary(np.arange(n), trg, sim[np.arange(n), trg])


def self_learn(Xs, Zt, cfg: SelfLearnConfig | None = None, skip_rows: int = 0) -> MappingTransform:
    """Fully unsupervised mapping; returns the W with the best mean CSLS.

    Rows are assumed to be in descending frequency order.  The first
    ``skip_rows`` rows (reserved tokens) take no part in learning.
    """
    cfg = cfg or SelfLearnConfig()
    cfg.validate()
    if Xs.shape[1] != Zt.shape[1]:
        raise ValueError("source and target dimensions differ")
    Xw, Zw = Xs[skip_rows:], Zt[skip_rows:]
    rng = np.random.default_rng(cfg.seed)
    d = Xs.shape[1]
    dictionary = initial_dictionary(Xw, Zw, cfg)
    src_rows = np.arange(min(cfg.vocab_cutoff, Xw.shape[0]))
    Zc = Zw[:min(cfg.vocab_cutoff, Zw.shape[0])]

    best_W, best_obj = np.eye(d), -np.inf
    history = []
    converged = False
    for it in range(cfg.max_iter):
        W = procrustes_fit(Xw, Zw, dictionary).W
        full = induce_dictionary(Xw @ W, Zc, SelfLearnConfig(csls_k=cfg.csls_k, keep_prob=1.0),
                                 src_rows=src_rows)
        obj = float(full.scores.mean())
        improved = obj - best_obj > cfg.tol
        if obj > best_obj:
            best_W, best_obj = W, obj
        history.append(best_obj)
        log.debug("self-learning iter %d: mean CSLS %.6f (best %.6f)", it, obj, best_obj)
        if not improved:
            converged = True
            break
        keep = rng.random(len(full)) < cfg.keep_prob if cfg.keep_prob < 1 else np.ones(len(full), bool)
        if not keep.any():
            keep[np.argmax(full.scores)] = True
        dictionary = SeedDictionary(full.src[keep], full.trg[keep], full.scores[keep])
    if not converged:
        log.warning("self-learning stopped at max_iter=%d without converging", cfg.max_iter)
    return MappingTransform(best_W, converged=converged, history=history)


def map_embeddings(Xs, W) -> np.ndarray:
    W = W.W if isinstance(W, MappingTransform) else W
    if Xs.shape[1] != W.shape[0]:
        raise ValueError(f"dimension mismatch: embeddings d={Xs.shape[1]}, mapping d={W.shape[0]}")
    return Xs @ W


def cross_embeddings(src: EmbeddingMatrix, trg: EmbeddingMatrix, cfg: SelfLearnConfig | None = None,
                     skip_rows: int = 4):
    """Map ``src`` into ``trg``'s space.  Returns (src CAIE, trg CAIE, transform).

    The target side's cross embeddings are its preprocessed vectors unchanged.
    """
    if src.dim != trg.dim:
        raise ValueError(f"dimension mismatch: {src.dim} vs {trg.dim}")
    Xs = preprocess_embeddings(src.X, src.words)
    Zt = preprocess_embeddings(trg.X, trg.words)
    T = self_learn(Xs, Zt, cfg, skip_rows=skip_rows)
    T.source, T.target = src.arch, trg.arch
    center_s = _unit_rows(src.X).mean(axis=0)
    center_t = _unit_rows(trg.X).mean(axis=0)
    meta = {"source": src.arch, "target": trg.arch}
    caie_s = EmbeddingMatrix(src.words, map_embeddings(Xs, T), src.mode, src.subwords, src.arch,
                             center_s, T.W.copy(), dict(meta))
    caie_t = EmbeddingMatrix(trg.words, Zt, trg.mode, trg.subwords, trg.arch,
                             center_t, np.eye(trg.dim), dict(meta))
    return caie_s, caie_t, T


def precision_at_1(XsW, Zt, truth, rows=None, csls_k=10) -> float:
    """Share of source rows whose CSLS-nearest target row is the true translation."""
    rows = np.arange(XsW.shape[0]) if rows is None else np.asarray(rows)
    pred = csls_matrix(XsW[rows], Zt, csls_k).argmax(axis=1)
    return float(np.mean(pred == np.asarray(truth)[rows]))


def write_mapping(path, T: MappingTransform, provenance: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if provenance is not None:
            f.write(header_line(dict(provenance, source=T.source, target=T.target)))
        f.write(f"{T.W.shape[0]}\n")
        for row in T.W:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_mapping(path) -> MappingTransform:
    lines = read_text_lines(path)
    d = int(lines[0])
    W = np.array([[float(x) for x in ln.split()] for ln in lines[1:d + 1]])
    return MappingTransform(W)
