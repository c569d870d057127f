import re

import pytest
from hypothesis import given, settings, strategies as st

from bintrans.asmtext import (ArchId, ListingParseError, UnsupportedArchError, canonical_word,
                              is_block_terminator, normalize_instruction, parse_arch,
                              parse_instruction, parse_listing, write_listing)

SNIPPET = [
    ("MOV EDX, 11E1H", "MOV EDX, 11E1H"),
    ("MOV ECX, 0FFFFFFFH", "MOV ECX, <CONST>"),
    ("JLE LOC_9BA3B", "JLE LOC_<TAG>"),
    ("CALL CRYPTO_FREE", "CALL CRYPTO_FREE"),
    ("MOV RCX, CS:GLIBC_2_5", "MOV RCX, CS:<ADDR>"),
    ("MOV [RSP+VAR_58], RDX", "MOV [RSP+<VAR>], RDX"),
]


def norm(line, arch="x86"):
    return normalize_instruction(parse_instruction(line, arch))


@pytest.mark.parametrize("raw, expected", SNIPPET)
def test_snippet_rows(raw, expected):
    assert norm(raw).text == expected


def test_canonical_words():
    assert canonical_word(norm("MOV EDX, 11E1H")) == "MOV_EDX,11E1H"
    assert canonical_word(norm("MOV ECX, 0FFFFFFFH")) == "MOV_ECX,<CONST>"
    assert canonical_word(norm("RET")) == "RET"
    assert norm("RET").word == "RET"


@pytest.mark.parametrize("literal, kept", [
    ("0x1234", True), ("0x12345", False), ("1234", True), ("12345", False),
    ("0FFFFH", False), ("FFFFH", True), ("7", True), ("#0X37", True),
])
def test_constant_digit_rule(literal, kept):
    arch = "arm" if literal.startswith("#") else "x86"
    line = f"MOV R1, {literal}" if arch == "arm" else f"MOV EAX, {literal}"
    out = norm(line, arch).text
    assert ("<CONST>" not in out) == kept


def test_sample_blocks_keep_their_tags():
    # instructions that are already normalized stay as they are
    ref = "MOV RAX, [RBP+H]; MOVZX EAX, <BYTE_PTR>[RAX+6BH]; AND EAX, 2; TEST AL, AL; JNZ SHORT LOC_<TAG>"
    for ins in ref.split("; "):
        assert norm(ins).text.replace("SHORT_", "SHORT ") == ins


def test_byte_ptr_tag():
    assert norm("MOVZX EAX, BYTE PTR [RAX+6BH]").text == "MOVZX EAX, <BYTE_PTR>[RAX+6BH]"


def test_parse_arch():
    assert parse_arch("X86") is ArchId.X86
    assert str(ArchId.ARM) == "arm"
    with pytest.raises(UnsupportedArchError):
        parse_arch("mips")


def test_empty_listing():
    assert parse_listing("", "x86") == []


def test_straight_line_function():
    fns = parse_listing("FUNC f\nMOV EAX, 1\nADD EAX, 2\nPOP RBP\nENDFUNC\n", "x86")
    assert len(fns) == 1 and len(fns[0].blocks) == 1 and len(fns[0].blocks[0]) == 3


def test_branch_makes_three_blocks():
    text = """FUNC f
    CMP EAX, 1
    JLE LOC_10
    MOV EAX, 2
LBL LOC_10:
    RET
ENDFUNC
"""
    fns = parse_listing(text, "x86")
    assert [len(b) for b in fns[0].blocks] == [2, 1, 1]


def test_call_does_not_split():
    fns = parse_listing("FUNC f\nCALL FOO\nMOV EAX, 1\nENDFUNC\n", "x86")
    assert len(fns[0].blocks) == 1


def test_arm_branches():
    for line in ("BEQ LOC_1", "BX LR", "POP {R4, PC}", "B LOC_2"):
        assert is_block_terminator(parse_instruction(line, "arm")), line
    assert not is_block_terminator(parse_instruction("BL MEMCPY", "arm"))


@pytest.mark.parametrize("text, lineno", [
    ("MOV EAX, 1\n", 1),
    ("FUNC f\nMOV EAX, 1\n", 3),
    ("FUNC f\nLBL nocolon\nENDFUNC\n", 2),
    ("FUNC f\n1BAD\nENDFUNC\n", 2),
])
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(ListingParseError) as e:
        parse_listing(text, "x86")
    assert e.value.lineno == lineno


def test_comment_lines_are_ignored():
    fns = parse_listing("# header\nFUNC f\n# inside\nRET\nENDFUNC\n", "x86")
    assert len(fns) == 1 and fns[0].words == ["RET"]


X86_LINES = ["MOV EAX, 1", "MOV ECX, 0FFFFFFFH", "ADD RSP, 28H", "LEA RDI, ASC_4F2A1",
             "MOV [RBP+VAR_8], RAX", "CMP BYTE PTR [RAX], 0", "XOR EAX, EAX", "CALL MALLOC",
             "MOV RAX, QWORD PTR CS:OFF_123456", "PUSH RBX", "MOVZX EAX, WORD PTR [RDX+RCX*2]",
             "TEST AL, AL", "SHL EAX, 10H", "MOV DWORD PTR [RSP+ARG_0], 12345678H"]
JUMPS = ["JZ SHORT LOC_40A1", "JMP LOC_9BA3B", "RET", "JNZ LOC_1F"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from(X86_LINES), min_size=1, max_size=6), min_size=1, max_size=6),
       st.lists(st.sampled_from(JUMPS), min_size=6, max_size=6))
def test_listing_round_trip_and_boundaries(bodies, jumps):
    lines = ["FUNC g"]
    for body, jump in zip(bodies, jumps):
        lines += body + [jump]
    lines.append("ENDFUNC")
    (fn,) = parse_listing("\n".join(lines), "x86")
    assert [len(b) for b in fn.blocks] == [len(b) + 1 for b in bodies]
    for block in fn.blocks:
        # transfers only at the end of a block
        for ins in block.instructions[:-1]:
            assert ins.opcode not in ("JZ", "JMP", "RET", "JNZ")
        for w in block.words:
            assert re.fullmatch(r"[^\s]+", w)
    (again,) = parse_listing(write_listing([fn]), "x86")
    assert again.block_words() == fn.block_words()


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(X86_LINES + JUMPS + [r for r, _ in SNIPPET]))
def test_normalization_is_idempotent(line):
    once = norm(line)
    assert norm(once.text).word == once.word


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=16 ** 9))
def test_long_constants_never_survive(value):
    lit = f"{value:X}"
    lit = "0" + lit if lit[0] in "ABCDEF" else lit  # assembler syntax: leading digit
    out = norm(f"MOV EAX, {lit}H").word
    digits = re.findall(r"[0-9A-F]+H", out.split(",")[-1])
    assert all(len(d) - 1 <= 4 for d in digits)
    assert ("<CONST>" in out) == (len(lit) > 4)
