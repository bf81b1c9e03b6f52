"""Property-based checks of the structural laws the parsers rely on."""

import struct

from hypothesis import given, settings, strategies as st

from uefiforensics.dump_model import MemoryDump
from uefiforensics.inline_hooks import TransferKind, decode_instruction
from uefiforensics.service_tables import crc32_ieee

from helpers import brute_force_find, crc32_reference, sext


# --- CRC-32 ----------------------------------------------------------------

@given(st.binary(max_size=512))
def test_crc32_matches_bitwise_reference(data):
    assert crc32_ieee(data) == crc32_reference(data)


@given(st.binary(min_size=24, max_size=256))
def test_crc_involution(buf):
    # Recomputing over a buffer whose CRC field holds the computed value,
    # with the field re-zeroed for computation, yields the same value.
    work = bytearray(buf)
    work[16:20] = b"\x00\x00\x00\x00"
    computed = crc32_ieee(bytes(work))
    stored = bytearray(buf)
    stored[16:20] = struct.pack("<I", computed)
    rezeroed = bytearray(stored)
    rezeroed[16:20] = b"\x00\x00\x00\x00"
    assert crc32_ieee(bytes(rezeroed)) == computed


# --- sparse dump reads and scans -------------------------------------------

regions_strategy = st.lists(
    st.tuples(st.integers(0, 0x300), st.binary(min_size=1, max_size=0x80)),
    min_size=1,
    max_size=4,
)


def build_sparse(pieces):
    """Place variable-size chunks at non-overlapping, gap-separated offsets."""
    placed = []
    cursor = 0
    for gap, data in pieces:
        start = cursor + gap
        placed.append((start, data))
        cursor = start + len(data)
    return MemoryDump.from_regions(placed), cursor


@given(regions_strategy)
def test_read_bytes_equals_manual_reassembly(pieces):
    dump, span = build_sparse(pieces)
    # Manual reassembly from the original placement, independent of reads.
    flat = bytearray(span)
    cursor = 0
    for gap, data in pieces:
        start = cursor + gap
        flat[start:start + len(data)] = data
        cursor = start + len(data)
    assert dump.read_bytes(0, span) == bytes(flat)


@given(
    regions_strategy,
    st.sampled_from([b"ldri", b"\x00\x00\x00\x00", b"\xFF\xFF\xFF\xFF", b"BOOTSERV"]),
    st.sampled_from([1, 2, 4, 8]),
)
@settings(max_examples=200)
def test_find_signature_equals_brute_force(pieces, sig, alignment):
    dump, span = build_sparse(pieces)
    if span < len(sig):
        return
    flat = dump.read_bytes(0, span)
    got = [h.addr for h in dump.find_signature(sig, alignment)]
    assert got == brute_force_find(flat, sig, alignment)


@given(regions_strategy, st.integers(0, 0x500), st.integers(1, 0x80))
def test_gap_reads_are_zero(pieces, addr, length):
    dump, span = build_sparse(pieces)
    if addr + length > span:
        return
    data = dump.read_bytes(addr, length)
    flat = dump.read_bytes(0, span)
    assert data == flat[addr:addr + length]


# --- relative-target law ----------------------------------------------------

@given(
    st.sampled_from([0xE8, 0xE9]),
    st.integers(-(1 << 31), (1 << 31) - 1),
    st.integers(0, 1 << 48),
)
def test_rel32_target_law(opcode, disp, at):
    window = bytes([opcode]) + struct.pack("<i", disp) + bytes(11)
    t = decode_instruction(window, at).transfer
    assert t.length == 5
    assert t.target == (at + 5 + disp) & ((1 << 64) - 1)


@given(st.integers(0x70, 0x7F), st.integers(-128, 127), st.integers(0, 1 << 48))
def test_rel8_target_law(opcode, disp, at):
    window = bytes([opcode]) + struct.pack("<b", disp) + bytes(14)
    t = decode_instruction(window, at).transfer
    assert t.kind is TransferKind.JCC_RELATIVE
    assert t.target == (at + 2 + disp) & ((1 << 64) - 1)


@given(st.binary(min_size=1, max_size=16))
def test_decode_never_crashes_and_lengths_positive(window):
    decoded = decode_instruction(window, 0x1000)
    if decoded is not None:
        assert decoded.length >= 1
        if decoded.transfer is not None:
            assert decoded.transfer.length == decoded.length


@given(st.binary(min_size=2, max_size=16))
def test_decoded_relative_targets_recheck_from_bytes(window):
    # Whatever the decoder claims, the displacement must re-derive the target.
    decoded = decode_instruction(window, 0x4000)
    if decoded is None or decoded.transfer is None:
        return
    t = decoded.transfer
    if t.kind not in (TransferKind.CALL_RELATIVE, TransferKind.JMP_RELATIVE,
                      TransferKind.JCC_RELATIVE):
        return
    padded = bytes(window) + bytes(16)
    raw = padded[:t.length]
    if t.length >= 5:
        disp = sext(int.from_bytes(raw[-4:], "little"), 32)
    else:
        disp = sext(raw[-1], 8)
    assert t.target == (0x4000 + t.length + disp) & ((1 << 64) - 1)
