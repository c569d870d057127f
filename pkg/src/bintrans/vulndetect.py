"""Vulnerability detection on function embeddings.

The minority (vulnerable) class is duplicated, then oversampled with ROS or
SMOTE, and a linear SVM is trained with Pegasos-style subgradient steps.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .provenance import header_line, read_text_lines


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ValueError("vectors and labels differ in length")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 (benign) or 1 (vulnerable)")

    def __len__(self):
        return len(self.y)

    @property
    def minority(self) -> np.ndarray:
        return self.X[self.y == 1]

    @property
    def majority(self) -> np.ndarray:
        return self.X[self.y == 0]

    def counts(self) -> tuple[int, int]:
        return int((self.y == 0).sum()), int((self.y == 1).sum())


@dataclass
class OversampleConfig:
    method: str = "smote"
    k_neighbors: int = 2
    ratio: float = 0.002
    duplicates: int = 3
    seed: int = 0

    def validate(self):
        if self.method not in ("ros", "smote"):
            raise ValueError(f"unknown oversampling method {self.method!r}")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")
        if self.k_neighbors < 1 or self.duplicates < 0:
            raise ValueError("k_neighbors must be >= 1 and duplicates >= 0")


def target_minority(n_majority: int, ratio: float) -> int:
    """ceil(ratio * n_majority), computed on the decimal value of ``ratio``."""
    return math.ceil(Fraction(str(ratio)) * n_majority)


def duplicate_minority(data: LabeledSet, copies: int) -> LabeledSet:
    """Append ``copies`` extra copies of every minority vector."""
    extra = np.repeat(data.minority, copies, axis=0)
    return LabeledSet(np.vstack([data.X, extra]), np.concatenate([data.y, np.ones(len(extra), np.int64)]))


def _needed(data: LabeledSet, cfg: OversampleConfig) -> int:
    n_maj, n_min = data.counts()
    if n_min == 0:
        raise ValueError("no minority samples to oversample")
    return max(0, target_minority(n_maj, cfg.ratio) - n_min)


def ros_oversample(data: LabeledSet, cfg: OversampleConfig | None = None) -> LabeledSet:
    cfg = cfg or OversampleConfig(method="ros")
    need = _needed(data, cfg)
    if need == 0:
        return data
    rng = np.random.default_rng(cfg.seed)
    pick = data.minority[rng.integers(0, len(data.minority), size=need)]
    return LabeledSet(np.vstack([data.X, pick]), np.concatenate([data.y, np.ones(need, np.int64)]))


@dataclass
class SmoteSamples:
    points: np.ndarray
    base: np.ndarray         # minority row each synthetic starts from
    neighbor: np.ndarray     # minority row it moves toward
    gap: np.ndarray          # interpolation factor in [0, 1)


def smote_synthesize(minority: np.ndarray, n: int, k: int, rng) -> SmoteSamples:
    m = len(minority)
    if m <= k:
        raise ValueError(f"SMOTE needs more than k_neighbors={k} minority samples, got {m}; "
                         "duplicate the minority class first")
    d2 = ((minority[:, None, :] - minority[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    nn_idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    base = rng.integers(0, m, size=n)
    neighbor = nn_idx[base, rng.integers(0, k, size=n)]
    gap = rng.random(n)
    pts = minority[base] + gap[:, None] * (minority[neighbor] - minority[base])
    return SmoteSamples(pts, base, neighbor, gap)


def smote_oversample(data: LabeledSet, cfg: OversampleConfig | None = None) -> LabeledSet:
    cfg = cfg or OversampleConfig()
    need = _needed(data, cfg)
    if len(data.minority) <= cfg.k_neighbors:
        raise ValueError(f"SMOTE needs more than k_neighbors={cfg.k_neighbors} minority samples, "
                         f"got {len(data.minority)}; duplicate the minority class first")
    if need == 0:
        return data
    s = smote_synthesize(data.minority, need, cfg.k_neighbors, np.random.default_rng(cfg.seed))
    return LabeledSet(np.vstack([data.X, s.points]), np.concatenate([data.y, np.ones(need, np.int64)]))


def prepare_training_set(data: LabeledSet, cfg: OversampleConfig) -> LabeledSet:
    """Duplicate the minority, then oversample with the configured method."""
    cfg.validate()
    data = duplicate_minority(data, cfg.duplicates)
    return (ros_oversample if cfg.method == "ros" else smote_oversample)(data, cfg)


# --- linear SVM ---------------------------------------------------------------------------

@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    lam: float

    def decision_function(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.w + self.b

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(np.int64)

    def digest(self) -> str:
        h = hashlib.sha256(np.asarray(self.w, dtype="<f8").tobytes())
        h.update(np.float64(self.b).tobytes())
        h.update(np.float64(self.lam).tobytes())
        return h.hexdigest()


def svm_objective(model: LinearModel, data: LabeledSet) -> float:
    """lam/2 ||w||^2 + mean hinge loss, labels mapped to +-1."""
    s = 2 * data.y - 1
    margins = s * model.decision_function(data.X)
    return float(model.lam / 2 * model.w @ model.w + np.maximum(0.0, 1.0 - margins).mean())


def train_linear_svm(data: LabeledSet, lam: float = 1e-4, epochs: int = 50, seed: int = 0,
                     history: list | None = None) -> LinearModel:
    """Pegasos-style SGD: one sample per step, then projection onto the 1/sqrt(lam) ball.

    The step is 1/(lam (t + n)) for n training samples; the offset keeps the
    first updates from overshooting.  The bias is the weight of a constant
    feature 1 appended to every vector.
    ``history`` receives the objective after each epoch when given.
    """
    n_maj, n_min = data.counts()
    if n_maj == 0 or n_min == 0:
        raise ValueError("training data must contain both classes")
    if lam <= 0 or epochs < 1:
        raise ValueError("lam must be positive and epochs >= 1")
    rng = np.random.default_rng(seed)
    X = np.hstack([data.X, np.ones((len(data), 1))])
    s = (2 * data.y - 1).astype(np.float64)
    w = np.zeros(X.shape[1])
    radius = 1.0 / math.sqrt(lam)
    t = len(data)
    for _ in range(epochs):
        for i in rng.permutation(len(data)):
            t += 1
            eta = 1.0 / (lam * t)
            violated = s[i] * (X[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * s[i] * X[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        if history is not None:
            history.append(svm_objective(LinearModel(w[:-1].copy(), float(w[-1]), lam), data))
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("non-finite SVM weights")
    return LinearModel(w[:-1].copy(), float(w[-1]), lam)


# --- metrics -------------------------------------------------------------------------------

@dataclass
class Metrics:
    tpr: float | None
    fpr: float | None
    precision: float | None
    f1: float | None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


def _ratio(a, b):
    return a / b if b else None


def metrics_from_counts(tp, fp, tn, fn) -> Metrics:
    tpr = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = None
    if tpr is not None and precision is not None:
        f1 = _ratio(2 * precision * tpr, precision + tpr)
    return Metrics(tpr, _ratio(fp, fp + tn), precision, f1, tp, fp, tn, fn)


def evaluate_detection(model: LinearModel, test: LabeledSet) -> Metrics:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = model.predict(test.X)
    y = test.y
    return metrics_from_counts(int(((pred == 1) & (y == 1)).sum()), int(((pred == 1) & (y == 0)).sum()),
                               int(((pred == 0) & (y == 0)).sum()), int(((pred == 0) & (y == 1)).sum()))


def format_detection_table(rows) -> str:
    """rows: iterable of (opt level, case, method, Metrics) -> detection metrics table."""
    header = ("Opt. Level", "Case", "Method", "True Positive Rate", "False Positive Rate",
              "Precision", "F1-score")
    fmt_v = lambda v: "undefined" if v is None else f"{v:.2f}"
    body = [(str(o), str(c), str(m), fmt_v(x.tpr), fmt_v(x.fpr), fmt_v(x.precision), fmt_v(x.f1))
            for o, c, m, x in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


# --- files ------------------------------------------------------------------------------------

def write_dataset(path, data: LabeledSet, provenance: dict | None = None, names=None):
    """One row per function: label, then the vector; optional trailing name after '#'."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if provenance is not None:
            f.write(header_line(provenance))
        for i, (label, row) in enumerate(zip(data.y, data.X)):
            line = f"{label} " + " ".join(f"{x:.17g}" for x in row)
            if names is not None:
                line += f" # {names[i]}"
            f.write(line + "\n")


def read_dataset(path) -> LabeledSet:
    labels, rows = [], []
    for ln in read_text_lines(path):
        if not ln:
            continue
        body = ln.split(" # ", 1)[0].split()
        labels.append(int(body[0]))
        rows.append([float(x) for x in body[1:]])
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows differ in dimension")
    return LabeledSet(np.array(rows), np.array(labels))


def write_linear_model(path, model: LinearModel, provenance: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if provenance is not None:
            f.write(header_line(dict(provenance, digest=model.digest())))
        f.write(f"{len(model.w)} {model.lam:.17g}\n{model.b:.17g}\n")
        f.write(" ".join(f"{x:.17g}" for x in model.w) + "\n")


def read_linear_model(path) -> LinearModel:
    lines = read_text_lines(path)
    d, lam = lines[0].split()
    w = np.array([float(x) for x in lines[2].split()])
    if len(w) != int(d):
        raise ValueError(f"{path}: weight vector has {len(w)} entries, header says {d}")
    return LinearModel(w, float(lines[1]), float(lam))
