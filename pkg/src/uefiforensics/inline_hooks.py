"""Inline hook detection via prologue control-flow analysis.

Inline hooks patch the first instructions of a target function with a
control transfer into attacker code. The detector linearly sweeps each
service function's prologue, classifies control transfers, and follows
benign-looking in-image transfers through a bounded number of nesting
levels (attackers chain in-image jumps to defeat single-hop checks).

The decoder is intentionally narrow: control-transfer opcodes are decoded
in full (with legacy/REX prefixes), common straight-line instructions are
length-decoded and skipped, and anything else is classified opaque, which
terminates the sweep. A full-fidelity disassembler can be dropped in
behind ``decode_instruction`` without touching the detection logic.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace

from .dump_model import MemoryDump, OutOfBoundsRead, PhysAddr
from .image_registry import ImageMap, LoadedImageRecord
from .pointer_hooks import OwnershipBaseline
from .service_tables import ServiceTable, TableKind

logger = logging.getLogger(__name__)

DEFAULT_PROLOGUE_WINDOW = 32
DEFAULT_MAX_DEPTH = 3
DECODE_WINDOW = 16
_MASK64 = (1 << 64) - 1

CROSS_IMAGE_NOTE = (
    "target lies within another loaded image; a legitimate cross-image "
    "transfer can look identical, so analyst triage is advised"
)


class TransferKind(enum.Enum):
    CALL_RELATIVE = "call_relative"
    JMP_RELATIVE = "jmp_relative"
    JCC_RELATIVE = "jcc_relative"
    CALL_INDIRECT = "call_indirect"
    JMP_INDIRECT = "jmp_indirect"


@dataclass(frozen=True)
class ControlTransfer:
    at: PhysAddr
    kind: TransferKind
    length: int
    target: PhysAddr | None
    # For RIP-relative indirect forms: address of the 8-byte pointer slot.
    indirect_slot: PhysAddr | None = None


@dataclass(frozen=True)
class DecodedInstruction:
    """One classified instruction: a transfer, a return, or a skip."""

    length: int
    kind: str  # "transfer" | "ret" | "skip"
    transfer: ControlTransfer | None = None


# Stop reasons for the linear sweep.
STOP_WINDOW = "window_exhausted"
STOP_RET = "ret"
STOP_JMP = "unconditional_jmp"
STOP_OPAQUE = "opaque"


@dataclass(frozen=True)
class PrologueScan:
    transfers: tuple[ControlTransfer, ...]
    stop_reason: str
    end_addr: PhysAddr


@dataclass(frozen=True)
class InlineHookFinding:
    table_kind: TableKind
    service_name: str
    function_addr: PhysAddr
    hook_addr: PhysAddr
    final_target: PhysAddr | None
    chain: tuple[ControlTransfer, ...]
    target_image: LoadedImageRecord | None
    indeterminate: bool
    note: str | None = None


_LEGACY_PREFIXES = frozenset({0x26, 0x2E, 0x36, 0x3E, 0x64, 0x65, 0x66, 0x67, 0xF0, 0xF2, 0xF3})

# One-byte instructions with no operands.
_SINGLE = frozenset(
    {0x90, 0x98, 0x99, 0xC9, 0xCC, 0xF4, 0xF5, 0xF8, 0xF9, 0xFA, 0xFB, 0xFC, 0xFD}
    | set(range(0x50, 0x60))  # push/pop reg
)

# Opcodes taking only a mod/rm-encoded operand.
_MODRM_SKIP = frozenset(
    set(range(0x00, 0x04)) | set(range(0x08, 0x0C)) | set(range(0x10, 0x14))
    | set(range(0x18, 0x1C)) | set(range(0x20, 0x24)) | set(range(0x28, 0x2C))
    | set(range(0x30, 0x34)) | set(range(0x38, 0x3C))
    | {0x63, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x8B, 0x8D}
)

# mod/rm plus an 8-bit immediate.
_MODRM_IMM8 = frozenset({0x80, 0x83, 0xC0, 0xC1, 0xC6, 0x6B})
# mod/rm plus a 32-bit immediate.
_MODRM_IMM32 = frozenset({0x81, 0xC7, 0x69})

# Accumulator/immediate forms.
_IMM8_ONLY = frozenset({0x04, 0x0C, 0x14, 0x1C, 0x24, 0x2C, 0x34, 0x3C, 0x6A, 0xA8})
_IMM32_ONLY = frozenset({0x05, 0x0D, 0x15, 0x1D, 0x25, 0x2D, 0x35, 0x3D, 0x68, 0xA9})

# Two-byte (0F xx) opcodes taking a mod/rm operand.
_MODRM_SKIP_0F = frozenset({0x1F, 0xAF, 0xB6, 0xB7, 0xBE, 0xBF})

# Instructions whose immediate width depends on the 0x66 operand-size
# prefix; decoded opaque when 0x66 is present to avoid bogus lengths.
_OPSIZE_SENSITIVE = _MODRM_IMM32 | _IMM32_ONLY | set(range(0xB8, 0xC0))


def _sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def _modrm_operand_len(window: bytes, i: int) -> tuple[int, int, int]:
    """Operand byte count at window[i], plus (mod, rm) of the mod/rm byte."""
    modrm = window[i]
    mod = modrm >> 6
    rm = modrm & 7
    n = 1
    if mod == 3:
        return n, mod, rm
    has_sib = rm == 4
    if has_sib:
        n += 1
    if mod == 1:
        n += 1
    elif mod == 2:
        n += 4
    elif mod == 0:
        if rm == 5:
            n += 4  # RIP-relative disp32
        elif has_sib and (window[i + 1] & 7) == 5:
            n += 4
    return n, mod, rm


def decode_instruction(window: bytes, at: PhysAddr) -> DecodedInstruction | None:
    """Classify the instruction at the start of ``window``.

    Returns a transfer, a return, or a skip with its decoded length; None
    means the bytes could not be length-decoded (opaque). ``window`` is
    zero-padded to the 16 bytes instruction decoding may need.
    """
    if len(window) < DECODE_WINDOW:
        window = bytes(window) + b"\x00" * (DECODE_WINDOW - len(window))

    i = 0
    has_opsize = False
    while window[i] in _LEGACY_PREFIXES and i < 4:
        has_opsize = has_opsize or window[i] == 0x66
        i += 1
    rex = 0
    if 0x40 <= window[i] <= 0x4F:
        rex = window[i]
        i += 1

    op = window[i]
    i += 1

    def transfer(kind: TransferKind, length: int, target, slot=None):
        return DecodedInstruction(
            length, "transfer",
            ControlTransfer(at, kind, length, target, indirect_slot=slot),
        )

    if op == 0xE8 or op == 0xE9:
        disp = _sext(int.from_bytes(window[i:i + 4], "little"), 32)
        length = i + 4
        kind = TransferKind.CALL_RELATIVE if op == 0xE8 else TransferKind.JMP_RELATIVE
        return transfer(kind, length, (at + length + disp) & _MASK64)
    if op == 0xEB:
        length = i + 1
        disp = _sext(window[i], 8)
        return transfer(TransferKind.JMP_RELATIVE, length, (at + length + disp) & _MASK64)
    if 0x70 <= op <= 0x7F:
        length = i + 1
        disp = _sext(window[i], 8)
        return transfer(TransferKind.JCC_RELATIVE, length, (at + length + disp) & _MASK64)

    if op == 0x0F:
        op2 = window[i]
        i += 1
        if 0x80 <= op2 <= 0x8F:
            disp = _sext(int.from_bytes(window[i:i + 4], "little"), 32)
            length = i + 4
            return transfer(TransferKind.JCC_RELATIVE, length, (at + length + disp) & _MASK64)
        if op2 in _MODRM_SKIP_0F:
            n, _, _ = _modrm_operand_len(window, i)
            return DecodedInstruction(i + n, "skip")
        if op2 == 0x05:  # syscall
            return DecodedInstruction(i, "skip")
        return None

    if op == 0xFF:
        n, mod, rm = _modrm_operand_len(window, i)
        regop = (window[i] >> 3) & 7
        length = i + n
        if regop in (0, 1, 6):  # inc/dec/push
            return DecodedInstruction(length, "skip")
        if regop in (2, 3, 4, 5):
            kind = TransferKind.CALL_INDIRECT if regop in (2, 3) else TransferKind.JMP_INDIRECT
            slot = None
            if mod == 0 and rm == 5:
                disp = _sext(int.from_bytes(window[length - 4:length], "little"), 32)
                slot = (at + length + disp) & _MASK64
            return transfer(kind, length, None, slot=slot)
        return None
    if op == 0xFE:
        n, _, _ = _modrm_operand_len(window, i)
        if (window[i] >> 3) & 7 in (0, 1):
            return DecodedInstruction(i + n, "skip")
        return None

    if op == 0xC3:
        return DecodedInstruction(i, "ret")
    if op == 0xC2:
        return DecodedInstruction(i + 2, "ret")

    if op in _SINGLE:
        return DecodedInstruction(i, "skip")
    if has_opsize and op in _OPSIZE_SENSITIVE:
        return None
    if op in _MODRM_SKIP:
        n, _, _ = _modrm_operand_len(window, i)
        return DecodedInstruction(i + n, "skip")
    if op in _MODRM_IMM8:
        n, _, _ = _modrm_operand_len(window, i)
        return DecodedInstruction(i + n + 1, "skip")
    if op in _MODRM_IMM32:
        n, _, _ = _modrm_operand_len(window, i)
        return DecodedInstruction(i + n + 4, "skip")
    if op in _IMM8_ONLY or 0xB0 <= op <= 0xB7:
        return DecodedInstruction(i + 1, "skip")
    if op in _IMM32_ONLY:
        return DecodedInstruction(i + 4, "skip")
    if 0xB8 <= op <= 0xBF:  # mov reg, imm32/imm64
        return DecodedInstruction(i + (8 if rex & 0x08 else 4), "skip")

    return None


def scan_prologue(
    dump: MemoryDump, function_addr: PhysAddr, window: int = DEFAULT_PROLOGUE_WINDOW
) -> PrologueScan:
    """Linear sweep from ``function_addr``, collecting control transfers.

    Stops at the first of: window exhausted, a return, an unconditional
    jmp (the sweep cannot soundly continue past it), or opaque bytes.
    Conditional branches do not stop the sweep (fallthrough is reachable).
    RIP-relative indirect targets are resolved through the dump when the
    pointer slot is mapped.
    """
    if window < 1:
        raise ValueError("prologue window must be positive")
    if not dump.in_span(function_addr):
        raise OutOfBoundsRead(f"function address {function_addr:#x} outside dump span")

    avail = min(window + DECODE_WINDOW, dump.total_span - function_addr)
    code = dump.read_bytes(function_addr, avail)
    if avail < window + DECODE_WINDOW:
        code += b"\x00" * (window + DECODE_WINDOW - avail)

    transfers: list[ControlTransfer] = []
    cursor = 0
    stop = STOP_WINDOW
    while cursor < window:
        decoded = decode_instruction(code[cursor:cursor + DECODE_WINDOW], function_addr + cursor)
        if decoded is None:
            stop = STOP_OPAQUE
            break
        cursor += decoded.length
        if decoded.kind == "ret":
            stop = STOP_RET
            break
        t = decoded.transfer
        if t is None:
            continue
        if t.indirect_slot is not None and dump.in_span(t.indirect_slot, 8):
            t = replace(t, target=dump.read_u64(t.indirect_slot))
        transfers.append(t)
        if t.kind in (TransferKind.JMP_RELATIVE, TransferKind.JMP_INDIRECT):
            stop = STOP_JMP
            break
    return PrologueScan(tuple(transfers), stop, function_addr + cursor)


def detect_inline_hooks(
    dump: MemoryDump,
    table: ServiceTable,
    image_map: ImageMap,
    baseline: OwnershipBaseline | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    window: int = DEFAULT_PROLOGUE_WINDOW,
) -> list[InlineHookFinding]:
    """Scan every non-null service target for prologue control hijacks.

    A finding is raised when a transfer chain escapes the image owning the
    service function within ``max_depth`` nested transfers (the initial
    transfer counts as level 1), or when an indirect transfer cannot be
    statically resolved (``indeterminate``). Chains that remain in-image
    through the depth limit are considered benign.

    When the function address resolves to no loaded image, the table
    baseline (if given) stands in as the expected range; with neither, the
    entry is skipped here because the pointer detector already owns it.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    findings: list[InlineHookFinding] = []

    for entry in table.entries:
        if entry.pointer == 0:
            continue
        owner = image_map.resolve_owner(entry.pointer)
        if owner is None and baseline is not None:
            owner = baseline.image
        if owner is None or not dump.in_span(entry.pointer):
            continue

        def emit(chain: tuple[ControlTransfer, ...], indeterminate: bool) -> None:
            last = chain[-1]
            target_image = (
                image_map.resolve_owner(last.target) if last.target is not None else None
            )
            findings.append(
                InlineHookFinding(
                    table_kind=table.kind,
                    service_name=entry.name,
                    function_addr=entry.pointer,
                    hook_addr=chain[0].at,
                    final_target=last.target,
                    chain=chain,
                    target_image=target_image,
                    indeterminate=indeterminate,
                    note=CROSS_IMAGE_NOTE if target_image is not None else None,
                )
            )

        _walk(dump, owner, entry.pointer, window, (), max_depth, emit)

    return findings


def _walk(dump, owner, addr, window, chain, max_depth, emit) -> None:
    try:
        scan = scan_prologue(dump, addr, window)
    except OutOfBoundsRead:
        return
    for t in scan.transfers:
        extended = chain + (t,)
        if t.target is None:
            emit(extended, True)
            continue
        if owner.contains(t.target):
            if len(extended) < max_depth:
                _walk(dump, owner, t.target, window, extended, max_depth, emit)
        else:
            emit(extended, False)
