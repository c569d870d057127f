"""Vocabularies, integer-encoded mono-architecture corpora and corpus statistics."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .asmtext import ArchId, FunctionRecord, parse_arch
from .provenance import read_text_lines, write_text

PAD, UNK, BOS, EOS = "<PAD>", "<UNK>", "<BOS>", "<EOS>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class OptLevel(str, enum.Enum):
    O0 = "O0"
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


class Vocab:
    """Immutable word <-> id bijection with frequency counts.

    Ids 0..3 are the specials; the rest follow descending count with
    lexicographic tie-breaking.
    """

    def __init__(self, words: Sequence[str], counts: Sequence[int]):
        if tuple(words[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(words) != len(counts):
            raise ValueError("words and counts differ in length")
        self._words = tuple(words)
        self._counts = tuple(int(c) for c in counts)
        self._index = {w: i for i, w in enumerate(self._words)}
        if len(self._index) != len(self._words):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self):
        return len(self._words)

    def __contains__(self, word):
        return word in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._words == other._words and self._counts == other._counts

    def __hash__(self):
        return hash(self._words)

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    @property
    def counts(self) -> tuple[int, ...]:
        return self._counts

    def id(self, word: str) -> int:
        return self._index.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        if not 0 <= idx < len(self._words):
            raise IndexError(f"id {idx} out of range for vocabulary of size {len(self._words)}")
        return self._words[idx]

    def serialize(self) -> str:
        lines = [str(len(self))]
        lines += [f"{w} {c}" for w, c in zip(self._words, self._counts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Vocab":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        n = int(lines[0])
        words, counts = [], []
        for ln in lines[1:n + 1]:
            w, c = ln.rsplit(" ", 1)
            words.append(w)
            counts.append(int(c))
        if len(words) != n:
            raise ValueError(f"vocabulary file declares {n} entries, found {len(words)}")
        return cls(words, counts)


def build_vocab(blocks: Iterable[Sequence[str]], min_count: int = 1) -> Vocab:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter = Counter(w for block in blocks for w in block)
    for s in SPECIALS:
        counter.pop(s, None)
    kept = sorted(((w, c) for w, c in counter.items() if c >= min_count),
                  key=lambda wc: (-wc[1], wc[0]))
    return Vocab(list(SPECIALS) + [w for w, _ in kept], [0] * 4 + [c for _, c in kept])


def encode_block(block: Sequence[str], vocab: Vocab) -> list[int]:
    return [vocab.id(w) for w in block]


def decode_block(ids: Sequence[int], vocab: Vocab) -> list[str]:
    return [vocab.word(int(i)) for i in ids]


@dataclass
class MonoCorpus:
    arch: ArchId
    opt_level: OptLevel
    vocab: Vocab
    blocks: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.arch = parse_arch(self.arch)
        self.opt_level = OptLevel(self.opt_level)
        V = len(self.vocab)
        for b in self.blocks:
            if any(not 0 <= i < V for i in b):
                raise ValueError("corpus contains ids outside the vocabulary")

    def __len__(self):
        return len(self.blocks)

    def word_blocks(self) -> list[list[str]]:
        return [decode_block(b, self.vocab) for b in self.blocks]

    @classmethod
    def from_words(cls, arch, opt_level, blocks, min_count: int = 1) -> "MonoCorpus":
        blocks = [list(b) for b in blocks]
        vocab = build_vocab(blocks, min_count)
        return cls(arch, opt_level, vocab, [encode_block(b, vocab) for b in blocks])


@dataclass(frozen=True)
class CorpusStats:
    function_count: int
    unique_instruction_count: int
    total_instruction_count: int


def corpus_stats(functions: Sequence[FunctionRecord]) -> CorpusStats:
    unique = set()
    total = 0
    for fn in functions:
        for block in fn.blocks:
            for ins in block.instructions:
                unique.add(ins.word)
                total += 1
    return CorpusStats(len(functions), len(unique), total)


def format_stats_table(rows) -> str:
    """rows: iterable of (opt_level, arch, CorpusStats) -> aligned text table."""
    header = ("Opt. Level", "ISA", "# of Functions", "# of Unique Instructions",
              "Total # of Instructions")
    body = [(str(o), str(a), f"{s.function_count:,}", f"{s.unique_instruction_count:,}",
             f"{s.total_instruction_count:,}") for o, a, s in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                              for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


# --- file formats -------------------------------------------------------------

def write_corpus(path, blocks: Iterable[Sequence[str]], provenance: dict | None = None):
    """One basic block per line, canonical words separated by single spaces."""
    write_text(path, "".join(" ".join(b) + "\n" for b in blocks), provenance)


def read_corpus(path) -> list[list[str]]:
    return [ln.split(" ") for ln in read_text_lines(path) if ln]


def write_vocab(path, vocab: Vocab, provenance: dict | None = None):
    write_text(path, vocab.serialize(), provenance)


def read_vocab(path) -> Vocab:
    return Vocab.parse(Path(path).read_text(encoding="utf-8"))


def write_functions(path, functions: Sequence[FunctionRecord], corpus_name: str,
                    provenance: dict | None = None) -> list[list[str]]:
    """Write a function index into a block corpus; returns the block list in corpus order.

    Each line is ``name<TAB>arch<TAB>first_block<TAB>block_count`` referring to
    line numbers (0-based, comments excluded) of ``corpus_name``.
    """
    lines = [f"# corpus={corpus_name}"]
    blocks = []
    for fn in functions:
        lines.append(f"{fn.name}\t{fn.arch}\t{len(blocks)}\t{len(fn.blocks)}")
        blocks.extend(fn.block_words())
    write_text(path, "\n".join(lines) + "\n", provenance)
    return blocks


def read_functions(path, blocks: Sequence[Sequence[str]]) -> list[FunctionRecord]:
    out = []
    for ln in read_text_lines(path):
        if not ln:
            continue
        name, arch, first, count = ln.split("\t")
        first, count = int(first), int(count)
        if first + count > len(blocks):
            raise ValueError(f"function {name!r} references blocks beyond the corpus")
        out.append(FunctionRecord.from_words(name, arch, blocks[first:first + count]))
    return out
