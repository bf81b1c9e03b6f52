"""Independent oracles and generators shared across the test suite.

Everything here deliberately avoids the library's own code paths: brute
force search, bitwise CRC, manual file reassembly, and a by-hand record
scan give second opinions the implementation is checked against.
"""

from __future__ import annotations

import json
import uuid
from random import Random

from uefiforensics.forge import (
    COMPACT_GEOMETRY,
    CORE_GUID,
    CRC_POLICIES,
    DECOY_FAKE_LDRI,
    DECOY_FAKE_SIGNATURE,
    INLINE_STYLES,
    ROLE_APP,
    ROLE_CORE,
    ROLE_DRIVER,
    STYLE_MOV_JMP,
    DecoySpec,
    ImageSpec,
    InlineHookSpec,
    PointerHookSpec,
    ScenarioSpec,
)
from uefiforensics.service_tables import TableKind, canonical_layout


def crc32_reference(data: bytes) -> int:
    """Bitwise CRC-32 (reflected 0xEDB88320), independent of binascii."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xEDB88320 if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def brute_force_find(flat: bytes, sig: bytes, alignment: int = 1) -> list[int]:
    """Byte-by-byte scan over a fully reassembled image."""
    hits = []
    start = 0
    while True:
        i = flat.find(sig, start)
        if i < 0:
            return hits
        if i % alignment == 0:
            hits.append(i)
        start = i + 1


def reassemble_dump_file(dump_path, map_path=None) -> bytes:
    """Rebuild the flat physical image straight from file + sidecar JSON."""
    data = open(dump_path, "rb").read()
    if map_path is None:
        return data
    records = json.loads(open(map_path, "r", encoding="utf-8").read())
    regions = [
        (int(str(r["phys_start"]), 0), int(str(r["file_offset"]), 0), int(str(r["length"]), 0))
        for r in records
    ]
    span = max(p + ln for p, _, ln in regions)
    flat = bytearray(span)
    for phys, off, ln in regions:
        flat[phys:phys + ln] = data[off:off + ln]
    return bytes(flat)


def brute_force_owners(records, addr):
    """Linear ownership scan over loaded-image records."""
    return [r for r in records if r.image_base <= addr < r.image_base + r.image_size]


def sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def random_guid(rng: Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128))).upper()


def random_scenario(rng: Random, index: int) -> ScenarioSpec:
    """A small randomized scenario on the compact geometry.

    Pointer and inline hooks target only auxiliary images, so the forge's
    injected-hook list is exactly the detector's expected finding set.
    """
    images = [ImageSpec(guid=CORE_GUID, size=0x8000, role=ROLE_CORE)]
    for i in range(rng.randint(1, 4)):
        flavor = rng.choice(("guid", "path", "both"))
        guid = random_guid(rng) if flavor in ("guid", "both") else None
        path = f"\\EFI\\rand\\img{index}_{i}.efi" if flavor in ("path", "both") else None
        images.append(
            ImageSpec(
                guid=guid,
                path=path,
                size=rng.choice((0x1000, 0x2000, 0x4000)),
                role=rng.choice((ROLE_DRIVER, ROLE_APP)),
            )
        )
    aux_keys = [img.key for img in images[1:]]

    used: set[tuple[TableKind, str]] = set()
    pointer_hooks = []
    for _ in range(rng.randint(0, 4)):
        kind = rng.choice(tuple(TableKind))
        service = rng.choice(canonical_layout(kind))
        if (kind, service) in used:
            continue
        used.add((kind, service))
        pointer_hooks.append(PointerHookSpec(kind, service, rng.choice(aux_keys)))
    inline_hooks = []
    for _ in range(rng.randint(0, 2)):
        kind = rng.choice(tuple(TableKind))
        service = rng.choice(canonical_layout(kind))
        if (kind, service) in used:
            continue
        used.add((kind, service))
        style = rng.choice(INLINE_STYLES)
        depth = 1 if style == STYLE_MOV_JMP else rng.randint(1, 4)
        inline_hooks.append(
            InlineHookSpec(service=service, table=kind, style=style, depth=depth,
                           payload=rng.choice(aux_keys))
        )
    null_services = []
    for _ in range(rng.randint(0, 2)):
        kind = rng.choice(tuple(TableKind))
        service = rng.choice(canonical_layout(kind))
        if (kind, service) in used:
            continue
        used.add((kind, service))
        null_services.append((kind, service))
    decoys = []
    if rng.random() < 0.3:
        decoys.append(DecoySpec(DECOY_FAKE_SIGNATURE))
    if rng.random() < 0.3:
        decoys.append(DecoySpec(DECOY_FAKE_LDRI))

    return ScenarioSpec(
        name=f"rand-{index}",
        images=tuple(images),
        pointer_hooks=tuple(pointer_hooks),
        inline_hooks=tuple(inline_hooks),
        crc_policy=rng.choice(CRC_POLICIES),
        decoys=tuple(decoys),
        null_services=tuple(null_services),
        geometry=COMPACT_GEOMETRY,
    )
