"""Disassembly listing parsing and instruction normalization.

A listing is the line-oriented dump accepted by :func:`parse_listing`::

    FUNC name
    LBL loc_1:
        mov eax, 1
        jmp loc_1
    ENDFUNC

Instructions become opaque single-token "words" after normalization, so
that a basic block can be treated as a sentence.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

__all__ = [
    "ArchId", "Instruction", "NormalizedInstruction", "BasicBlock", "FunctionRecord",
    "ListingParseError", "UnsupportedArchError",
    "parse_arch", "parse_instruction", "parse_listing", "normalize_instruction",
    "canonical_word", "is_block_terminator", "write_listing",
]

CONST_TAG = "<CONST>"
ADDR_TAG = "<ADDR>"
SYMBOL_TAG = "<TAG>"
VAR_TAG = "<VAR>"

MAX_PRESERVED_DIGITS = 4


class ListingParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno
        self.line = line
        self.reason = reason


class UnsupportedArchError(ValueError):
    pass


class ArchId(str, enum.Enum):
    X86 = "x86"
    ARM = "arm"

    def __str__(self) -> str:
        return self.value


def parse_arch(name) -> ArchId:
    if isinstance(name, ArchId):
        return name
    try:
        return ArchId(str(name).strip().lower())
    except ValueError:
        raise UnsupportedArchError(f"unsupported architecture: {name!r}") from None


@dataclass(frozen=True)
class Instruction:
    opcode: str
    operands: tuple[str, ...]
    arch: ArchId

    def __post_init__(self):
        if not self.opcode:
            raise ValueError("empty opcode")


@dataclass(frozen=True)
class NormalizedInstruction:
    opcode: str
    operands: tuple[str, ...]
    word: str
    tags_applied: frozenset = field(default_factory=frozenset)

    @property
    def text(self) -> str:
        """Human-readable form, e.g. ``MOV ECX, <CONST>``."""
        if not self.operands:
            return self.opcode
        return self.opcode + " " + ", ".join(self.operands)


@dataclass(frozen=True)
class BasicBlock:
    instructions: tuple[NormalizedInstruction, ...]

    def __post_init__(self):
        if not self.instructions:
            raise ValueError("basic block must contain at least one instruction")

    @property
    def words(self) -> list[str]:
        return [ins.word for ins in self.instructions]

    def __len__(self):
        return len(self.instructions)


@dataclass(frozen=True)
class FunctionRecord:
    name: str
    arch: ArchId
    blocks: tuple[BasicBlock, ...]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError(f"function {self.name!r} has no blocks")

    @property
    def words(self) -> list[str]:
        return [w for b in self.blocks for w in b.words]

    def block_words(self) -> list[list[str]]:
        return [b.words for b in self.blocks]

    @classmethod
    def from_words(cls, name: str, arch, blocks) -> "FunctionRecord":
        """Build a record from already-canonical words (no re-normalization)."""
        arch = parse_arch(arch)
        return cls(name, arch, tuple(
            BasicBlock(tuple(NormalizedInstruction(w, (), w) for w in block)) for block in blocks))


# --- operand vocabulary -------------------------------------------------------

def _x86_registers() -> set[str]:
    regs = set()
    for r in "ABCD":
        regs |= {f"R{r}X", f"E{r}X", f"{r}X", f"{r}L", f"{r}H"}
    for r in ("SI", "DI", "BP", "SP"):
        regs |= {"R" + r, "E" + r, r, r + "L"}
    for i in range(8, 16):
        regs |= {f"R{i}", f"R{i}D", f"R{i}W", f"R{i}B", f"R{i}L"}
    regs |= {"RIP", "EIP", "IP", "CS", "DS", "ES", "FS", "GS", "SS", "ST"}
    for i in range(32):
        regs |= {f"XMM{i}", f"YMM{i}", f"ZMM{i}"}
    for i in range(8):
        regs |= {f"ST{i}", f"MM{i}", f"K{i}", f"CR{i}", f"DR{i}"}
    return regs


def _arm_registers() -> set[str]:
    regs = {"SP", "LR", "PC", "FP", "IP", "SB", "SL", "APSR", "CPSR", "SPSR",
            "FPSCR", "XZR", "WZR"}
    for i in range(16):
        regs |= {f"R{i}", f"Q{i}"}
    for i in range(32):
        regs |= {f"S{i}", f"D{i}", f"X{i}", f"W{i}", f"V{i}"}
    return regs


_REGISTERS = {ArchId.X86: _x86_registers(), ArchId.ARM: _arm_registers()}
_SEGMENTS = {"CS", "DS", "ES", "FS", "GS", "SS"}
_KEYWORDS = {"SHORT", "NEAR", "FAR", "OFFSET", "LARGE", "PTR",
             "LSL", "LSR", "ASR", "ROR", "RRX"}
_SIZE_WORDS = "BYTE|WORD|DWORD|QWORD|TBYTE|FWORD|OWORD|XMMWORD|YMMWORD|ZMMWORD"
_PREFIX_KEYWORDS = "SHORT|NEAR|FAR|OFFSET|LARGE"
_X86_PREFIXES = {"REP", "REPE", "REPZ", "REPNE", "REPNZ", "LOCK"}
_CALL_OPCODES = {"CALL", "BL", "BLX"}

_HEX_H = re.compile(r"^([0-9][0-9A-Fa-f]*)[Hh]$")
_HEX_0X = re.compile(r"^0[Xx]([0-9A-Fa-f]+)$")
_DEC = re.compile(r"^([0-9]+)$")
_STACK_VAR = re.compile(r"^(?:VAR|ARG)_[0-9A-F]+$", re.I)
_DATA_NAME = re.compile(
    r"^(?:OFF|UNK|BYTE|WORD|DWORD|QWORD|XMMWORD|STRU|ASC|FLT|DBL|TBYTE|SEG)_[0-9A-F]+$", re.I)
_CODE_LABEL = re.compile(r"^((?:LOC|LOCRET|SUB|NULLSUB|J|DEF|JPT|LAB)_)[0-9A-F]+$", re.I)
_SIZE_PTR = re.compile(rf"^({_SIZE_WORDS})_PTR(?:_(.+))?$", re.I)
_PREFIX_KW = re.compile(rf"^({_PREFIX_KEYWORDS})_(.+)$", re.I)

# a tag, optionally glued to a kept identifier prefix (``LOC_<TAG>``)
_TOKEN = re.compile(r"(?P<tag>(?:[A-Za-z_][\w.$@?]*)?<[A-Z_]+>)|(?P<atom>[\w.$@?]+)|(?P<punct>\S)")

_ARM_COND = "EQ|NE|CS|HS|CC|LO|MI|PL|VS|VC|HI|LS|GE|LT|GT|LE|AL"
_ARM_BRANCH = re.compile(rf"^(?:B(?:{_ARM_COND})?|B\.(?:{_ARM_COND})|BX(?:{_ARM_COND})?|CBN?Z|TB[BH]|RET)(?:\.[WN])?$")
_X86_RETURNS = {"RET", "RETN", "RETF", "IRET", "IRETD", "IRETQ", "LOOP", "LOOPE", "LOOPNE",
                "LOOPZ", "LOOPNZ"}


def _literal_digits(atom: str) -> int | None:
    """Digit count of a numeric literal without radix markers, or None if not numeric."""
    for pat in (_HEX_H, _HEX_0X, _DEC):
        m = pat.match(atom)
        if m:
            return len(m.group(1))
    return None


def _canonical_spacing(text: str) -> str:
    # drop whitespace next to punctuation; whitespace between two words becomes "_"
    text = re.sub(r"\s*([^\w\s$@?.])\s*", r"\1", text.strip())
    return re.sub(r"\s+", "_", text)


def _split_operands(text: str) -> list[str]:
    ops, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth = max(0, depth - 1)
        if ch == "," and depth == 0:
            ops.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    ops.append("".join(cur))
    return [op for op in (_canonical_spacing(o) for o in ops) if op]


def parse_instruction(line: str, arch) -> Instruction:
    arch = parse_arch(arch)
    parts = line.strip().split(None, 1)
    if not parts:
        raise ValueError("empty instruction")
    opcode, rest = parts[0], (parts[1] if len(parts) > 1 else "")
    if opcode.upper() in _X86_PREFIXES and rest:
        sub = rest.split(None, 1)
        opcode = opcode + "_" + sub[0]
        rest = sub[1] if len(sub) > 1 else ""
    return Instruction(opcode, tuple(_split_operands(rest)), arch)


def _tokenize(operand: str) -> list[tuple[str, str]]:
    toks = []
    for m in _TOKEN.finditer(operand):
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "atom":
            sm = _SIZE_PTR.match(text)
            pm = _PREFIX_KW.match(text)
            if sm:
                toks.append(("sizeptr", sm.group(1).upper()))
                if sm.group(2):
                    toks.extend(_tokenize(sm.group(2)))
                continue
            if pm:
                toks.append(("keyword", pm.group(1)))
                toks.append(("glue", "_"))
                toks.extend(_tokenize(pm.group(2)))
                continue
        toks.append((kind, text))
    return toks


def _normalize_operand(operand: str, arch: ArchId, transfer: str | None, tags: set) -> str:
    regs = _REGISTERS[arch]
    toks = _tokenize(operand)
    n_atoms = sum(1 for k, _ in toks if k == "atom")
    out = []
    depth = 0
    for i, (kind, text) in enumerate(toks):
        if kind == "punct":
            if text in "[{(":
                depth += 1
            elif text in "]})" and depth > 0:
                depth -= 1
            out.append(text)
            continue
        if kind == "tag" or kind == "glue":
            out.append(text)
            continue
        if kind == "sizeptr":
            out.append(f"<{text}_PTR>")
            tags.add("PTR")
            continue
        if kind == "keyword":
            out.append(text)
            continue
        up = text.upper()
        prev = toks[i - 1] if i > 0 else None
        seg_prefixed = (prev is not None and prev == ("punct", ":") and i >= 2
                        and toks[i - 2][1].upper() in _SEGMENTS)
        if up in regs or up in _KEYWORDS:
            out.append(text)
            continue
        digits = _literal_digits(text)
        if digits is not None:
            # absolute address: sole atom of a memory reference or a direct branch target
            as_address = seg_prefixed or transfer is not None or (depth > 0 and n_atoms == 1)
            if digits > MAX_PRESERVED_DIGITS:
                out.append(ADDR_TAG if as_address else CONST_TAG)
                tags.add("ADDR" if as_address else "CONST")
            else:
                out.append(text)
            continue
        if _STACK_VAR.match(text):
            out.append(VAR_TAG)
            tags.add("VAR")
            continue
        if seg_prefixed or _DATA_NAME.match(text):
            out.append(ADDR_TAG)
            tags.add("ADDR")
            continue
        m = _CODE_LABEL.match(text)
        if m:
            out.append(m.group(1) + SYMBOL_TAG)
            tags.add("TAG")
            continue
        if transfer == "call" or depth > 0:
            # callee names and named stack/struct slots carry meaning
            out.append(text)
            continue
        out.append(SYMBOL_TAG)
        tags.add("TAG")
    return "".join(out)


def _transfer_kind(opcode: str, arch: ArchId) -> str | None:
    up = opcode.upper()
    if up in _CALL_OPCODES:
        return "call"
    if arch is ArchId.X86 and (up.startswith("J") or up in _X86_RETURNS):
        return "jump"
    if arch is ArchId.ARM and _ARM_BRANCH.match(up):
        return "jump"
    return None


def is_block_terminator(instr: Instruction) -> bool:
    """True for jumps (conditional or not) and returns; calls fall through."""
    if _transfer_kind(instr.opcode, instr.arch) == "jump":
        return True
    if instr.arch is ArchId.ARM:
        up = instr.opcode.upper()
        ops = [o.upper() for o in instr.operands]
        if up.startswith(("POP", "LDM")) and any(re.search(r"\bPC\b", o) for o in ops):
            return True
        if (up.startswith(("LDR", "MOV")) and ops and ops[0] == "PC"):
            return True
    return False


def normalize_instruction(instr: Instruction) -> NormalizedInstruction:
    transfer = _transfer_kind(instr.opcode, instr.arch)
    tags: set = set()
    operands = tuple(_normalize_operand(op, instr.arch, transfer, tags) for op in instr.operands)
    word = _join_word(instr.opcode, operands)
    return NormalizedInstruction(instr.opcode, operands, word, frozenset(tags))


def _join_word(opcode: str, operands) -> str:
    word = opcode if not operands else opcode + "_" + ",".join(operands)
    return re.sub(r"\s+", "", word)


def canonical_word(norm: NormalizedInstruction) -> str:
    return _join_word(norm.opcode, norm.operands)


def parse_listing(text: str, arch) -> list[FunctionRecord]:
    arch = parse_arch(arch)
    functions = []
    name = None
    blocks: list[list[NormalizedInstruction]] = []
    current: list[NormalizedInstruction] = []

    def close_block():
        nonlocal current
        if current:
            blocks.append(current)
            current = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split(None, 1)[0]
        if head == "FUNC":
            if name is not None:
                raise ListingParseError(lineno, raw, "FUNC inside unterminated function")
            parts = line.split()
            if len(parts) != 2:
                raise ListingParseError(lineno, raw, "expected 'FUNC <name>'")
            name, blocks, current = parts[1], [], []
        elif head == "ENDFUNC":
            if name is None or line != "ENDFUNC":
                raise ListingParseError(lineno, raw, "unexpected ENDFUNC")
            close_block()
            if not blocks:
                raise ListingParseError(lineno, raw, f"function {name!r} has no instructions")
            functions.append(FunctionRecord(
                name, arch, tuple(BasicBlock(tuple(b)) for b in blocks)))
            name = None
        elif head == "LBL":
            parts = line.split()
            if name is None:
                raise ListingParseError(lineno, raw, "label outside function")
            if len(parts) != 2 or not parts[1].endswith(":") or len(parts[1]) < 2:
                raise ListingParseError(lineno, raw, "expected 'LBL <label>:'")
            close_block()
        else:
            if name is None:
                raise ListingParseError(lineno, raw, "instruction outside function")
            if not re.match(r"^[A-Za-z][\w.]*$", head):
                raise ListingParseError(lineno, raw, "malformed opcode")
            instr = parse_instruction(line, arch)
            current.append(normalize_instruction(instr))
            if is_block_terminator(instr):
                close_block()
    if name is not None:
        raise ListingParseError(lineno + 1 if text else 1, "", f"function {name!r} missing ENDFUNC")
    return functions


def write_listing(functions) -> str:
    """Render functions back to the dump grammar, one label per block boundary."""
    lines = []
    for fn in functions:
        lines.append(f"FUNC {fn.name}")
        for i, block in enumerate(fn.blocks):
            if i:
                lines.append(f"LBL bb_{i}:")
            lines.extend("    " + ins.text for ins in block.instructions)
        lines.append("ENDFUNC")
    return "\n".join(lines) + ("\n" if lines else "")
