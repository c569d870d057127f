"""Unsupervised basic-block translation between two architectures.

One bidirectional GRU encoder is shared by both architectures and reads the
frozen cross-architecture embeddings, so a block from either side lands in the
same representation space.  Each architecture has its own attentional GRU
decoder.  Training alternates four objectives per iteration: denoising on
each side and on-the-fly backtranslation in each direction.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .asmtext import FunctionRecord
from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .embed import N_SPECIALS, EmbeddingMatrix

log = logging.getLogger(__name__)

MAGIC = b"UBT1"


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class NoiseConfig:
    """Swap noise; ``swaps=None`` means floor(N/2) transpositions for a length-N block."""
    seed: int = 0
    swaps: int | None = None


@dataclass
class TrainSchedule:
    iterations: int = 3000
    batch_size: int = 32
    lr: float = 3e-4
    clip: float = 5.0
    max_len: int = 64
    enc_hidden: int = 128
    dec_hidden: int = 256
    log_every: int = 100

    def validate(self):
        for name in ("iterations", "batch_size", "max_len", "enc_hidden", "dec_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or self.clip <= 0:
            raise ValueError("lr and clip must be positive")


@dataclass
class TranslationRequest:
    block: list
    source: str
    target: str

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target architecture must differ")


def add_noise(block, cfg: NoiseConfig | None = None, rng=None) -> list:
    """Apply floor(N/2) adjacent transpositions one after another.

    Each transposition picks a position i uniformly from [0, N-2] and swaps
    items i and i+1.  ``rng`` (a numpy Generator) overrides ``cfg.seed``.
    """
    cfg = cfg or NoiseConfig()
    out = list(block)
    n = len(out)
    if n < 2:
        return out
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    k = n // 2 if cfg.swaps is None else cfg.swaps
    for i in rng.integers(0, n - 1, size=k):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def derive_seed(seed: int, *parts) -> int:
    """Stable 63-bit seed for a named sub-stream."""
    text = "/".join([str(seed)] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


@contextmanager
def _single_thread_determinism():
    threads = torch.get_num_threads()
    was_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(was_det)
        torch.set_num_threads(threads)


# --- model --------------------------------------------------------------------------

class Decoder(nn.Module):
    """GRU decoder with multiplicative (general) global attention.

    The output layer projects to the embedding space and scores against the
    target architecture's frozen embedding matrix, plus a per-word bias.
    """

    def __init__(self, emb: torch.Tensor, enc_dim: int, hidden: int):
        super().__init__()
        d = emb.shape[1]
        self.register_buffer("emb", emb)
        self.bridge = nn.Linear(enc_dim, hidden)
        self.rnn = nn.GRU(d, hidden, batch_first=True)
        self.attn = nn.Linear(hidden, enc_dim, bias=False)
        self.combine = nn.Linear(hidden + enc_dim, hidden)
        self.proj = nn.Linear(hidden, d, bias=False)
        self.out_bias = nn.Parameter(torch.zeros(emb.shape[0]))

    def init_state(self, enc, mask):
        m = mask.unsqueeze(-1).to(enc.dtype)
        pooled = (enc * m).sum(1) / m.sum(1).clamp(min=1.0)
        return torch.tanh(self.bridge(pooled)).unsqueeze(0)

    def forward(self, y_in, state, enc, mask):
        """y_in: (B, T) ids.  Returns logits (B, T, V) and the new state."""
        h, state = self.rnn(nn.functional.embedding(y_in, self.emb), state)
        scores = torch.bmm(self.attn(h), enc.transpose(1, 2))
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        ctx = torch.bmm(torch.softmax(scores, dim=-1), enc)
        att = torch.tanh(self.combine(torch.cat([h, ctx], dim=-1)))
        logits = self.proj(att) @ self.emb.T + self.out_bias
        return logits, state


class TranslationModel(nn.Module):
    def __init__(self, caie: dict, schedule: TrainSchedule | None = None, seed: int = 0):
        super().__init__()
        if len(caie) != 2:
            raise ValueError("a translation model covers exactly two architectures")
        dims = {e.dim for e in caie.values()}
        if len(dims) != 1:
            raise ValueError(f"cross-architecture embeddings disagree on dimension: {sorted(dims)}")
        self.schedule = schedule or TrainSchedule()
        self.seed = seed
        self.archs = tuple(sorted(caie))
        self.caie = dict(caie)
        self.vocab = {a: tuple(caie[a].words) for a in self.archs}
        self._index = {a: {w: i for i, w in enumerate(self.vocab[a])} for a in self.archs}
        d = dims.pop()
        enc_dim = 2 * self.schedule.enc_hidden
        torch.manual_seed(derive_seed(seed, "init"))
        self.encoder = nn.GRU(d, self.schedule.enc_hidden, batch_first=True, bidirectional=True)
        self.decoders = nn.ModuleDict({
            a: Decoder(torch.tensor(caie[a].X, dtype=torch.float32), enc_dim, self.schedule.dec_hidden)
            for a in self.archs})
        self.trained = False
        self.history = {}
        self.skipped = 0

    def other(self, arch):
        return self.archs[1] if arch == self.archs[0] else self.archs[0]

    def frozen_embeddings(self) -> dict:
        return {a: self.decoders[a].emb for a in self.archs}

    def embedding_digest(self) -> str:
        h = hashlib.sha256()
        for a in self.archs:
            h.update(self.decoders[a].emb.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    # the embedding tables are buffers, so parameters() is exactly the trainable set
    def trainable(self):
        return [p for p in self.parameters() if p.requires_grad]

    def encode(self, ids, lengths, arch):
        """ids: (B, T) padded tensor.  Returns (context vectors, mask)."""
        x = nn.functional.embedding(ids, self.decoders[arch].emb)
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.encoder(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
        mask = torch.arange(ids.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
        return out, mask

    def loss(self, src_blocks, src_arch, tgt_blocks, tgt_arch):
        """Mean token cross-entropy of decoding ``tgt_blocks`` from ``src_blocks``."""
        src, src_len = self._pad(src_blocks)
        enc, mask = self.encode(src, src_len, src_arch)
        dec = self.decoders[tgt_arch]
        y_in, y_out = self._teacher(tgt_blocks)
        logits, _ = dec(y_in, dec.init_state(enc, mask), enc, mask)
        return nn.functional.cross_entropy(logits.reshape(-1, logits.shape[-1]), y_out.reshape(-1),
                                           ignore_index=PAD_ID)

    def _clip(self, block):
        if len(block) > self.schedule.max_len:
            log.warning("block of %d instructions truncated to %d", len(block), self.schedule.max_len)
            return list(block[:self.schedule.max_len])
        return list(block)

    def _pad(self, blocks):
        blocks = [self._clip(b) for b in blocks]
        if any(len(b) == 0 for b in blocks):
            raise ValueError("cannot encode an empty block")
        T = max(len(b) for b in blocks)
        ids = torch.full((len(blocks), T), PAD_ID, dtype=torch.long)
        for i, b in enumerate(blocks):
            ids[i, :len(b)] = torch.as_tensor(b, dtype=torch.long)
        return ids, torch.tensor([len(b) for b in blocks])

    def _teacher(self, blocks):
        blocks = [self._clip(b) for b in blocks]
        T = max(len(b) for b in blocks) + 1
        y_in = torch.full((len(blocks), T), PAD_ID, dtype=torch.long)
        y_out = torch.full((len(blocks), T), PAD_ID, dtype=torch.long)
        for i, b in enumerate(blocks):
            y_in[i, :len(b) + 1] = torch.as_tensor([BOS_ID] + b, dtype=torch.long)
            y_out[i, :len(b) + 1] = torch.as_tensor(b + [EOS_ID], dtype=torch.long)
        return y_in, y_out

    @torch.no_grad()
    def greedy(self, blocks, src_arch, tgt_arch, max_out=None) -> list:
        """Greedy decoding of a batch; returns id lists without framing tokens."""
        src, src_len = self._pad(blocks)
        enc, mask = self.encode(src, src_len, src_arch)
        dec = self.decoders[tgt_arch]
        state = dec.init_state(enc, mask)
        limit = (2 * src_len + 5) if max_out is None else torch.full_like(src_len, max_out)
        B = len(blocks)
        y = torch.full((B, 1), BOS_ID, dtype=torch.long)
        out = [[] for _ in range(B)]
        done = torch.zeros(B, dtype=torch.bool)
        for t in range(int(limit.max())):
            logits, state = dec(y, state, enc, mask)
            logits = logits[:, -1]
            logits[:, PAD_ID] = float("-inf")
            logits[:, BOS_ID] = float("-inf")
            nxt = logits.argmax(-1)
            for i in range(B):
                if done[i]:
                    continue
                tok = int(nxt[i])
                if tok == EOS_ID or t >= int(limit[i]):
                    done[i] = True
                else:
                    out[i].append(tok)
            if bool(done.all()):
                break
            y = nxt.unsqueeze(1)
        return out

    @torch.no_grad()
    def beam(self, block, src_arch, tgt_arch, width=3) -> list:
        src, src_len = self._pad([block])
        enc, mask = self.encode(src, src_len, src_arch)
        dec = self.decoders[tgt_arch]
        limit = 2 * len(block) + 5
        beams = [(0.0, [BOS_ID], dec.init_state(enc, mask))]
        finished = []
        for _ in range(limit):
            cand = []
            for score, seq, state in beams:
                logits, new_state = dec(torch.tensor([[seq[-1]]]), state, enc, mask)
                logp = torch.log_softmax(logits[0, -1], -1)
                logp[PAD_ID] = float("-inf")
                logp[BOS_ID] = float("-inf")
                top = torch.topk(logp, width)
                for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                    cand.append((score + lp, seq + [tok], new_state))
            cand.sort(key=lambda c: (-c[0], c[1]))
            beams = []
            for c in cand:
                if c[1][-1] == EOS_ID:
                    finished.append(c)
                else:
                    beams.append(c)
                if len(beams) == width:
                    break
            if len(finished) >= width or not beams:
                break
        pool = finished or beams
        best = max(pool, key=lambda c: c[0])
        return [t for t in best[1][1:] if t != EOS_ID]


# --- training -----------------------------------------------------------------------

def encode_block(block, model: TranslationModel, arch: str) -> torch.Tensor:
    """Context vectors (T, 2*enc_hidden) for one id block."""
    if len(block) == 0:
        raise ValueError("cannot encode an empty block")
    with torch.no_grad():
        ids, lengths = model._pad([block])
        enc, _ = model.encode(ids, lengths, arch)
    return enc[0, :int(lengths[0])]


def denoising_loss(blocks, arch, model: TranslationModel, rng, noise: NoiseConfig | None = None):
    """Cross-entropy of rebuilding ``blocks`` from their swap-noised versions."""
    noisy = [add_noise(b, noise, rng) for b in blocks]
    return model.loss(noisy, arch, blocks, arch)


@dataclass
class BacktranslationBatch:
    sources: list            # pseudo-source blocks in the other arch
    targets: list            # original blocks
    skipped: int = 0


def backtranslation_pair(blocks, arch, model: TranslationModel) -> BacktranslationBatch:
    """Translate ``blocks`` (arch A) to the other arch without gradients.

    The pairs (translation -> original) train the reverse direction.  Empty
    translations are dropped and counted.
    """
    other = model.other(arch)
    was_training = model.training
    model.eval()
    hyp = model.greedy(blocks, arch, other)
    model.train(was_training)
    src, tgt, skipped = [], [], 0
    for h, b in zip(hyp, blocks):
        if len(h) == 0:
            skipped += 1
            continue
        src.append(h)
        tgt.append(list(b))
    model.skipped += skipped
    return BacktranslationBatch(src, tgt, skipped)


def backtranslation_loss(batch: BacktranslationBatch, arch, model: TranslationModel):
    """Loss of rebuilding the originals (in ``arch``) from the pseudo-sources."""
    return model.loss(batch.sources, model.other(arch), batch.targets, arch)


def _check_inputs(corpora: dict, caie: dict):
    if set(corpora) != set(caie):
        raise ValueError("corpora and embeddings must cover the same two architectures")
    dims = {e.dim for e in caie.values()}
    if len(dims) != 1:
        raise ValueError(f"cross-architecture embeddings disagree on dimension: {sorted(dims)}")
    for a, c in corpora.items():
        if not c.blocks:
            raise ValueError(f"empty corpus for {a}")
        if tuple(c.vocab.words) != tuple(caie[a].words):
            raise ValueError(f"embeddings for {a} do not cover the corpus vocabulary in id order")


def train_translator(corpora: dict, caie: dict, schedule: TrainSchedule | None = None, seed: int = 0,
                     model: TranslationModel | None = None, callback=None) -> TranslationModel:
    """corpora / caie: {arch: MonoCorpus} / {arch: EmbeddingMatrix} for exactly two archs."""
    schedule = schedule or TrainSchedule()
    schedule.validate()
    _check_inputs(corpora, caie)
    with _single_thread_determinism():
        if model is None:
            model = TranslationModel(caie, schedule, seed)
        archs = model.archs
        blocks = {a: [b for b in corpora[a].blocks if b] for a in archs}
        opt = torch.optim.Adam(model.trainable(), lr=schedule.lr)
        rng = np.random.default_rng(derive_seed(seed, "train"))
        objectives = [("denoise", archs[0]), ("denoise", archs[1]),
                      ("backtranslate", archs[0]), ("backtranslate", archs[1])]
        history = model.history or {f"{k}:{a}": [] for k, a in objectives}
        model.train()
        for it in range(schedule.iterations):
            for kind, arch in objectives:
                pick = rng.integers(0, len(blocks[arch]), size=schedule.batch_size)
                batch = [blocks[arch][i] for i in pick]
                if kind == "denoise":
                    loss = denoising_loss(batch, arch, model, rng)
                else:
                    # translate arch -> other, then learn other -> arch
                    bt = backtranslation_pair(batch, arch, model)
                    if not bt.sources:
                        history[f"{kind}:{arch}"].append(float("nan"))
                        continue
                    loss = backtranslation_loss(bt, arch, model)
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.trainable(), schedule.clip)
                opt.step()
                value = loss.item()
                if not np.isfinite(value):
                    raise FloatingPointError(f"non-finite {kind} loss for {arch} at iteration {it}")
                history[f"{kind}:{arch}"].append(value)
            if schedule.log_every and (it + 1) % schedule.log_every == 0:
                log.info("iter %d %s", it + 1, " ".join(
                    f"{k}={np.nanmean(v[-schedule.log_every:]):.3f}" for k, v in history.items()))
            if callback is not None:
                callback(it, model)
        model.eval()
        model.history = history
        model.trained = True
    return model


# --- inference ------------------------------------------------------------------------

def resolve_oov(word: str, model: TranslationModel, arch: str) -> int:
    """Id of ``word``, else its nearest in-vocab word by subword-composed CAIE cosine, else <UNK>."""
    idx = model._index[arch].get(word)
    if idx is not None:
        return idx
    emb = model.caie.get(arch)
    if emb is None or emb.subwords is None:
        return UNK_ID
    q = emb.project(emb.subwords.mean_vector(word))
    if not np.any(q):
        return UNK_ID
    X = emb.X[N_SPECIALS:]
    cos = X @ q / (np.linalg.norm(X, axis=1) * np.linalg.norm(q) + 1e-300)
    return N_SPECIALS + int(np.argmax(cos))


def _require_trained(model):
    if not getattr(model, "trained", False):
        raise UntrainedModelError("translation model has not been trained")


def translate_blocks(blocks, model: TranslationModel, source: str, target: str,
                     beam: int = 1, batch_size: int = 64) -> list:
    """Translate word blocks from ``source`` to ``target``; returns word lists."""
    _require_trained(model)
    if source == target:
        raise ValueError("source and target architecture must differ")
    for a in (source, target):
        if a not in model.archs:
            raise ValueError(f"model does not cover architecture {a!r} (has {model.archs})")
    ids = [[resolve_oov(w, model, source) for w in b] for b in blocks]
    vocab = model.vocab[target]
    out = [None] * len(ids)
    with _single_thread_determinism():
        todo = [i for i, b in enumerate(ids) if b]
        for i in range(len(ids)):
            if not ids[i]:
                out[i] = []
        if beam > 1:
            for i in todo:
                out[i] = model.beam(ids[i], source, target, beam)
        else:
            for s in range(0, len(todo), batch_size):
                chunk = todo[s:s + batch_size]
                for i, hyp in zip(chunk, model.greedy([ids[i] for i in chunk], source, target)):
                    out[i] = hyp
    return [[vocab[t] for t in h] for h in out]


def translate_block(request: TranslationRequest, model: TranslationModel, beam: int = 1) -> list:
    return translate_blocks([request.block], model, request.source, request.target, beam)[0]


def translate_function(fn: FunctionRecord, model: TranslationModel, target: str, beam: int = 1) -> FunctionRecord:
    """Translate every block of ``fn``; order and name are kept.

    A block whose translation comes out empty is rendered as a single <UNK>
    so the function keeps its block structure.
    """
    out = translate_blocks(fn.block_words(), model, str(fn.arch), target, beam)
    return FunctionRecord.from_words(fn.name, target, [b or [model.vocab[target][UNK_ID]] for b in out])


# --- serialization ----------------------------------------------------------------------

def _tensor_items(model: TranslationModel):
    items = [(k, v.detach().cpu().numpy().astype("<f4")) for k, v in model.state_dict().items()]
    for a in model.archs:
        sub = model.caie[a].subwords
        if sub is not None:
            items.append((f"subwords.{a}.bucket_ids", sub.bucket_ids.astype("<i8")))
            items.append((f"subwords.{a}.vectors", sub.vectors.astype("<f4")))
        for name in ("center", "rotation"):
            arr = getattr(model.caie[a], name)
            if arr is not None:
                items.append((f"{name}.{a}", np.asarray(arr).astype("<f4")))
    return items


def save_model(path, model: TranslationModel, provenance: dict | None = None):
    """``UBT1`` magic, uint32 LE manifest length, JSON manifest, then tensor payloads."""
    items = _tensor_items(model)
    manifest = {
        "archs": list(model.archs), "seed": model.seed, "schedule": asdict(model.schedule),
        "trained": model.trained, "skipped": model.skipped,
        "vocab": {a: list(model.vocab[a]) for a in model.archs},
        "modes": {a: model.caie[a].mode for a in model.archs},
        "subwords": {a: (None if model.caie[a].subwords is None else
                         {"buckets": model.caie[a].subwords.buckets, "min_n": model.caie[a].subwords.min_n,
                          "max_n": model.caie[a].subwords.max_n}) for a in model.archs},
        "history": model.history, "provenance": provenance or {},
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": v.dtype.str} for k, v in items],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(blob)) + blob)
        for _, v in items:
            f.write(np.ascontiguousarray(v).tobytes())


def load_model(path) -> TranslationModel:
    from .embed import SubwordTable

    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a translation model file")
    (n,) = struct.unpack("<I", data[4:8])
    manifest = json.loads(data[8:8 + n])
    off = 8 + n
    arrays = {}
    for t in manifest["tensors"]:
        dt = np.dtype(t["dtype"])
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arrays[t["name"]] = np.frombuffer(data, dt, count, off).reshape(t["shape"])
        off += count * dt.itemsize
    caie = {}
    for a in manifest["archs"]:
        sw = manifest["subwords"][a]
        sub = None if sw is None else SubwordTable(sw["buckets"], sw["min_n"], sw["max_n"],
                                                   arrays[f"subwords.{a}.bucket_ids"].astype(np.int64),
                                                   arrays[f"subwords.{a}.vectors"].astype(np.float64))
        center = arrays.get(f"center.{a}")
        rotation = arrays.get(f"rotation.{a}")
        caie[a] = EmbeddingMatrix(manifest["vocab"][a], arrays[f"decoders.{a}.emb"].astype(np.float64),
                                  manifest["modes"][a], sub, a,
                                  None if center is None else center.astype(np.float64),
                                  None if rotation is None else rotation.astype(np.float64))
    model = TranslationModel(caie, TrainSchedule(**manifest["schedule"]), manifest["seed"])
    state = {k: torch.from_numpy(arrays[k].copy()) for k in model.state_dict()}
    model.load_state_dict(state)
    model.trained = manifest["trained"]
    model.skipped = manifest["skipped"]
    model.history = manifest["history"]
    model.eval()
    return model
