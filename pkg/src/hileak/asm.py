"""Parsing and emission of the supported Thumb-like assembly subset.

Kernels are straight-line: no branches or loops.  Registers are r0..r7 plus
sp.  The comment directive "; nop padding" expands to a configurable run of
`mov r7, r7` instructions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

LOW_REGS = {f"r{i}": i for i in range(8)}
SP = 13
REG_NAMES = {**LOW_REGS, "sp": SP}

MNEMONICS = {
    "ldr", "ldrb", "str", "strb", "push", "pop",
    "mov", "movs", "lsls", "lsrs", "adds", "subs",
    "eors", "ands", "orrs", "bics", "mvns",
}

NOP_PAD_DIRECTIVE = "nop padding"
DEFAULT_NOP_PAD = 9

_MEM_RE = re.compile(r"^\[\s*(\w+)\s*(?:,\s*#(-?\d+)\s*)?\]$")
_REGLIST_RE = re.compile(r"^\{([^}]*)\}$")


class AsmError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Instruction:
    mnemonic: str
    rd: int | None = None          # destination register
    rn: int | None = None          # base / first source register
    rm: int | None = None          # second source register
    imm: int | None = None         # immediate operand or memory offset
    reglist: tuple = ()            # push/pop register list
    line: int = 0                  # 1-based source line
    comment: str = ""              # provenance comment emitted above

    def key(self):
        """Operational identity, ignoring source position and comments."""
        return (self.mnemonic, self.rd, self.rn, self.rm, self.imm, self.reglist)

    def text(self) -> str:
        names = {v: k for k, v in REG_NAMES.items()}
        m = self.mnemonic
        if m in ("push", "pop"):
            return f"{m} {{{', '.join(names[r] for r in self.reglist)}}}"
        if m in ("ldr", "ldrb", "str", "strb"):
            mem = f"[{names[self.rn]}]" if not self.imm else f"[{names[self.rn]}, #{self.imm}]"
            return f"{m} {names[self.rd]}, {mem}"
        if m in ("mov", "movs"):
            src = f"#{self.imm}" if self.rm is None else names[self.rm]
            return f"{m} {names[self.rd]}, {src}"
        if m in ("lsls", "lsrs"):
            if self.imm is not None:
                return f"{m} {names[self.rd]}, {names[self.rm]}, #{self.imm}"
            return f"{m} {names[self.rd]}, {names[self.rm]}"
        if m == "mvns":
            return f"{m} {names[self.rd]}, {names[self.rm]}"
        if m in ("adds", "subs") and self.imm is not None:
            return f"{m} {names[self.rd]}, {names[self.rn]}, #{self.imm}"
        if m in ("adds", "subs") and self.rn != self.rd:
            return f"{m} {names[self.rd]}, {names[self.rn]}, {names[self.rm]}"
        return f"{m} {names[self.rd]}, {names[self.rm]}"


@dataclass
class Program:
    instructions: list = field(default_factory=list)
    source: str = ""

    def __len__(self):
        return len(self.instructions)

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return [i.key() for i in self.instructions] == [i.key() for i in other.instructions]

    def emit(self) -> str:
        lines = []
        for ins in self.instructions:
            if ins.comment:
                lines.append(f"; {ins.comment}")
            lines.append(ins.text())
        return "\n".join(lines) + "\n"


def _reg(tok: str, line: int, low_only: bool = True) -> int:
    tok = tok.strip().lower()
    if tok in LOW_REGS:
        return LOW_REGS[tok]
    if tok == "sp" and not low_only:
        return SP
    raise AsmError(f"register {tok!r} outside supported set r0..r7", line)


def _imm(tok: str, line: int, lo: int, hi: int) -> int:
    tok = tok.strip()
    if not tok.startswith("#"):
        raise AsmError(f"expected immediate, got {tok!r}", line)
    try:
        val = int(tok[1:], 0)
    except ValueError:
        raise AsmError(f"malformed immediate {tok!r}", line) from None
    if not lo <= val <= hi:
        raise AsmError(f"immediate {val} out of range [{lo}, {hi}]", line)
    return val


def _split_operands(rest: str) -> list[str]:
    # split on commas not inside brackets/braces
    parts, depth, cur = [], 0, ""
    for ch in rest:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _parse_instruction(text: str, line: int) -> Instruction:
    parts = text.split(None, 1)
    mnem = parts[0].lower()
    if mnem not in MNEMONICS:
        raise AsmError(f"unknown mnemonic {mnem!r}", line)
    ops = _split_operands(parts[1]) if len(parts) > 1 else []

    if mnem in ("push", "pop"):
        if len(ops) != 1 or not (m := _REGLIST_RE.match(ops[0])):
            raise AsmError(f"{mnem} expects a register list", line)
        regs = tuple(_reg(r, line) for r in m.group(1).split(","))
        if not regs:
            raise AsmError(f"{mnem} register list is empty", line)
        return Instruction(mnem, reglist=regs, line=line)

    if mnem in ("ldr", "ldrb", "str", "strb"):
        if len(ops) != 2 or not (m := _MEM_RE.match(ops[1])):
            raise AsmError(f"{mnem} expects 'rt, [rn(, #off)]'", line)
        rt = _reg(ops[0], line)
        rn = _reg(m.group(1), line, low_only=False)
        off = int(m.group(2)) if m.group(2) else 0
        hi = 1020 if mnem in ("ldr", "str") else 255
        if not 0 <= off <= hi:
            raise AsmError(f"offset {off} out of range [0, {hi}]", line)
        if mnem in ("ldr", "str") and off % 4:
            raise AsmError(f"word access offset {off} not a multiple of 4", line)
        return Instruction(mnem, rd=rt, rn=rn, imm=off, line=line)

    if mnem in ("mov", "movs"):
        if len(ops) != 2:
            raise AsmError(f"{mnem} expects 2 operands", line)
        rd = _reg(ops[0], line)
        if ops[1].startswith("#"):
            if mnem == "mov":
                raise AsmError("immediate move must use movs", line)
            return Instruction(mnem, rd=rd, imm=_imm(ops[1], line, 0, 255), line=line)
        return Instruction(mnem, rd=rd, rm=_reg(ops[1], line), line=line)

    if mnem in ("lsls", "lsrs"):
        if len(ops) == 3:
            return Instruction(mnem, rd=_reg(ops[0], line), rm=_reg(ops[1], line),
                               imm=_imm(ops[2], line, 0, 31), line=line)
        if len(ops) == 2:
            return Instruction(mnem, rd=_reg(ops[0], line), rn=_reg(ops[0], line),
                               rm=_reg(ops[1], line), line=line)
        raise AsmError(f"{mnem} expects 2 or 3 operands", line)

    if mnem == "mvns":
        if len(ops) != 2:
            raise AsmError("mvns expects 2 operands", line)
        return Instruction(mnem, rd=_reg(ops[0], line), rm=_reg(ops[1], line), line=line)

    # two/three operand ALU forms
    if mnem in ("adds", "subs"):
        if len(ops) == 3:
            rd, rn = _reg(ops[0], line), _reg(ops[1], line)
            if ops[2].startswith("#"):
                return Instruction(mnem, rd=rd, rn=rn,
                                   imm=_imm(ops[2], line, 0, 255), line=line)
            return Instruction(mnem, rd=rd, rn=rn, rm=_reg(ops[2], line), line=line)
        if len(ops) == 2:
            rd = _reg(ops[0], line)
            return Instruction(mnem, rd=rd, rn=rd, rm=_reg(ops[1], line), line=line)
        raise AsmError(f"{mnem} expects 2 or 3 operands", line)

    # eors/ands/orrs/bics: rd, rm
    if len(ops) != 2:
        raise AsmError(f"{mnem} expects 2 operands", line)
    rd = _reg(ops[0], line)
    return Instruction(mnem, rd=rd, rn=rd, rm=_reg(ops[1], line), line=line)


def parse_program(text: str, nop_pad: int = DEFAULT_NOP_PAD) -> Program:
    """Parse assembly source into an ordered Program.

    Comments start with ';' or '@'.  Labels ('name:') are accepted and
    skipped.  A comment consisting of the nop-padding directive expands to
    nop_pad `mov r7, r7` instructions.
    """
    if not text.strip():
        raise AsmError("empty program")
    instructions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = raw
        comment = ""
        for marker in (";", "@"):
            if marker in code:
                code, _, comment = code.partition(marker)
        code = code.strip()
        if not code and comment.strip().lower() == NOP_PAD_DIRECTIVE:
            for _ in range(nop_pad):
                instructions.append(Instruction("mov", rd=7, rm=7, line=lineno))
            continue
        if not code:
            continue
        if code.endswith(":") and re.fullmatch(r"[A-Za-z_.$][\w.$]*:", code):
            continue
        instructions.append(_parse_instruction(code, lineno))
    if not instructions:
        raise AsmError("program has no instructions")
    return Program(instructions=instructions, source=text)
