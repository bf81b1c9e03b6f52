"""Extraction of loaded PE/COFF images from a dump to standalone files.

Carving is driven exclusively by the validated loaded-image records: an
orphan MZ blob with no record is never carved. Each image is written
exactly as it lies in memory (image_size bytes from image_base); no
attempt is made to reconstruct the on-disk file layout.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path

from .dump_model import Anomaly, MemoryDump, OutOfBoundsRead, PhysAddr
from .image_registry import ImageIdentity, ImageMap

logger = logging.getLogger(__name__)

MANIFEST_NAME = "carve_manifest.json"
PE_SIGNATURE = b"PE\x00\x00"
_UNSAFE_CHARS = re.compile(r"[^A-Za-z0-9._-]")


@dataclass(frozen=True)
class CarvedImage:
    identity: ImageIdentity
    image_base: PhysAddr
    image_size: int
    output_name: str
    pe_valid: bool
    machine: int
    sha256: str


def validate_pe(data: bytes) -> tuple[bool, int]:
    """Check MZ magic and the PE signature chain; return (valid, machine)."""
    if len(data) < 0x40 or data[:2] != b"MZ":
        return False, 0
    e_lfanew = struct.unpack_from("<I", data, 0x3C)[0]
    if e_lfanew + 6 > len(data):
        return False, 0
    if data[e_lfanew:e_lfanew + 4] != PE_SIGNATURE:
        return False, 0
    machine = struct.unpack_from("<H", data, e_lfanew + 4)[0]
    return True, machine


def _sanitize_name(identity: ImageIdentity) -> str:
    if identity.file_path:
        base = identity.file_path.replace("\\", "/").rstrip("/").rsplit("/", 1)[-1]
    else:
        base = identity.guid or "image"
    base = _UNSAFE_CHARS.sub("_", base) or "image"
    if not base.lower().endswith(".efi"):
        base += ".efi"
    return base


def _unique_name(base: str, used: set[str]) -> str:
    if base not in used:
        used.add(base)
        return base
    stem, dot, ext = base.rpartition(".")
    n = 1
    while True:
        candidate = f"{stem}_{n}{dot}{ext}" if dot else f"{base}_{n}"
        if candidate not in used:
            used.add(candidate)
            return candidate
        n += 1


def carve_images(
    dump: MemoryDump, image_map: ImageMap, out_dir
) -> tuple[list[CarvedImage], list[Anomaly]]:
    """Write every recorded image to ``out_dir`` plus a JSON manifest.

    Files are named from the sanitized file path basename (or the GUID),
    with numeric suffixes on collision; ordering and naming are
    deterministic for a given dump. Records whose range falls outside the
    dump span are skipped with an anomaly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    carved: list[CarvedImage] = []
    anomalies: list[Anomaly] = []
    used_names: set[str] = set()
    for record in sorted(image_map.records, key=lambda r: (r.image_base, r.record_addr)):
        try:
            data = dump.read_bytes(record.image_base, record.image_size)
        except OutOfBoundsRead as exc:
            anomalies.append(Anomaly("carve_skipped", record.image_base, str(exc)))
            continue
        pe_valid, machine = validate_pe(data)
        if not pe_valid:
            anomalies.append(
                Anomaly(
                    "carved_image_invalid_pe",
                    record.image_base,
                    f"{record.identity.label}: bytes at image base fail PE validation",
                )
            )
        name = _unique_name(_sanitize_name(record.identity), used_names)
        (out_dir / name).write_bytes(data)
        carved.append(
            CarvedImage(
                identity=record.identity,
                image_base=record.image_base,
                image_size=record.image_size,
                output_name=name,
                pe_valid=pe_valid,
                machine=machine,
                sha256=hashlib.sha256(data).hexdigest(),
            )
        )
    _write_manifest(out_dir / MANIFEST_NAME, carved)
    logger.info("carved %d image(s) into %s", len(carved), out_dir)
    return carved, anomalies


def manifest_entry(image: CarvedImage) -> dict:
    return {
        "guid": image.identity.guid,
        "file_path": image.identity.file_path,
        "image_base": f"0x{image.image_base:x}",
        "image_size": image.image_size,
        "pe_valid": image.pe_valid,
        "machine": f"0x{image.machine:x}",
        "sha256": image.sha256,
        "file": image.output_name,
    }


def _write_manifest(path: Path, carved: list[CarvedImage]) -> None:
    manifest = {"schema": 1, "images": [manifest_entry(c) for c in carved]}
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
