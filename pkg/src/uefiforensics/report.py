"""Analysis orchestration and deterministic report assembly.

Runs the full pipeline — table parsing, image registry, pointer and inline
hook detection, optional carving — and renders the result as stable JSON
(fixed key order, lowercase hex addresses, sorted findings) and as a
human-readable text block per table. Wall-clock time lives only in
``meta.generated_at`` so the rest of the report is byte-reproducible.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import __version__
from .carver import CarvedImage, carve_images, manifest_entry
from .dump_model import Anomaly, MemoryDump, load_dump
from .image_registry import ImageMap, LoadedImageRecord, scan_loaded_images
from .inline_hooks import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_PROLOGUE_WINDOW,
    InlineHookFinding,
    detect_inline_hooks,
)
from .pointer_hooks import (
    BaselineError,
    OwnershipBaseline,
    PointerHookFinding,
    detect_pointer_hooks,
    infer_baseline,
)
from .service_tables import (
    KIND_ORDER,
    CrcStatus,
    ServiceTable,
    locate_tables,
    verify_table_integrity,
)

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2

_KIND_RANK = {kind: i for i, kind in enumerate(KIND_ORDER)}


@dataclass(frozen=True)
class AnalysisOptions:
    map_path: str | None = None
    baseline_guid: str | None = None
    prologue_window: int = DEFAULT_PROLOGUE_WINDOW
    max_depth: int = DEFAULT_MAX_DEPTH
    carve_dir: str | None = None
    unaligned_scan: bool = False


@dataclass
class TableReport:
    table: ServiceTable
    crc: CrcStatus
    baseline: OwnershipBaseline | None
    baseline_error: str | None = None


@dataclass
class AnalysisReport:
    dump: MemoryDump
    tables: list[TableReport]
    image_map: ImageMap
    pointer_findings: list[PointerHookFinding]
    inline_findings: list[InlineHookFinding]
    anomalies: list[Anomaly]
    carved: list[CarvedImage] = field(default_factory=list)
    carve_dir: str | None = None
    tool_version: str = __version__

    @property
    def has_findings(self) -> bool:
        return bool(self.pointer_findings or self.inline_findings)

    @property
    def exit_classification(self) -> str:
        return "findings" if self.has_findings else "clean"

    @property
    def exit_code(self) -> int:
        return EXIT_FINDINGS if self.has_findings else EXIT_CLEAN


def _hx(value: int | None) -> str | None:
    return None if value is None else f"0x{value:x}"


def content_sha256(dump: MemoryDump) -> str:
    """Digest of the mapped region contents in physical order."""
    h = hashlib.sha256()
    for region in dump.regions:
        h.update(dump.read_bytes(region.phys_start, region.length))
    return h.hexdigest()


def analyze_dump(dump: MemoryDump, options: AnalysisOptions | None = None) -> AnalysisReport:
    """Run parse -> detect -> (optionally) carve over a loaded dump."""
    options = options or AnalysisOptions()
    sig_align = 1 if options.unaligned_scan else 8
    ldri_align = 1 if options.unaligned_scan else 4

    tables, table_anomalies = locate_tables(dump, alignment=sig_align)
    image_map = scan_loaded_images(dump, alignment=ldri_align)
    anomalies = list(table_anomalies) + list(image_map.anomalies)

    table_reports: list[TableReport] = []
    pointer_findings: list[PointerHookFinding] = []
    inline_findings: list[InlineHookFinding] = []
    for table in tables:
        crc = verify_table_integrity(dump, table)
        baseline = None
        baseline_error = None
        try:
            baseline = infer_baseline(table, image_map, options.baseline_guid)
        except BaselineError as exc:
            baseline_error = str(exc)
            anomalies.append(Anomaly("no_baseline", table.table_addr, str(exc)))
        table_reports.append(TableReport(table, crc, baseline, baseline_error))
        if baseline is None:
            continue
        pointer_findings.extend(detect_pointer_hooks(table, image_map, baseline))
        inline_findings.extend(
            detect_inline_hooks(
                dump, table, image_map, baseline,
                max_depth=options.max_depth, window=options.prologue_window,
            )
        )

    table_reports.sort(key=lambda tr: (_KIND_RANK[tr.table.kind], tr.table.table_addr))
    pointer_findings.sort(key=lambda f: (_KIND_RANK[f.table_kind], f.service_index))
    inline_findings.sort(
        key=lambda f: (_KIND_RANK[f.table_kind], f.service_name, f.hook_addr)
    )
    anomalies.sort(key=lambda a: (a.kind, a.addr if a.addr is not None else -1, a.detail))

    report = AnalysisReport(
        dump=dump,
        tables=table_reports,
        image_map=image_map,
        pointer_findings=pointer_findings,
        inline_findings=inline_findings,
        anomalies=anomalies,
    )
    if options.carve_dir:
        carved, carve_anomalies = carve_images(dump, image_map, options.carve_dir)
        report.carved = carved
        report.carve_dir = options.carve_dir
        report.anomalies.extend(carve_anomalies)
    return report


def analyze_path(dump_path, options: AnalysisOptions | None = None) -> AnalysisReport:
    options = options or AnalysisOptions()
    dump = load_dump(dump_path, options.map_path)
    return analyze_dump(dump, options)


def _image_ref(record: LoadedImageRecord | None) -> dict | None:
    if record is None:
        return None
    return {
        "guid": record.identity.guid,
        "file_path": record.identity.file_path,
        "base": _hx(record.image_base),
        "size": record.image_size,
    }


def to_json_dict(report: AnalysisReport) -> dict:
    """Stable JSON form; only ``meta.generated_at`` varies between runs."""
    dump = report.dump
    doc = {
        "schema": 1,
        "tool_version": report.tool_version,
        "dump": {
            "path": dump.source_path,
            "total_span": _hx(dump.total_span),
            "regions": [
                {"phys_start": _hx(r.phys_start), "length": r.length} for r in dump.regions
            ],
            "sha256": content_sha256(dump),
        },
        "tables": [
            {
                "kind": tr.table.kind.value,
                "addr": _hx(tr.table.table_addr),
                "revision": _hx(tr.table.header.revision),
                "header_size": tr.table.header.header_size,
                "entry_count": len(tr.table.entries),
                "null_entries": len(tr.table.null_entries),
                "flags": list(tr.table.flags),
                "crc": {
                    "stored": _hx(tr.crc.stored),
                    "computed": _hx(tr.crc.computed),
                    "ok": tr.crc.crc_ok,
                },
                "baseline": (
                    None
                    if tr.baseline is None
                    else {
                        "image": _image_ref(tr.baseline.image),
                        "confidence": tr.baseline.confidence,
                        "source": tr.baseline.source,
                    }
                ),
            }
            for tr in report.tables
        ],
        "images": {
            "count": len(report.image_map),
            "records": [
                {
                    "guid": r.identity.guid,
                    "file_path": r.identity.file_path,
                    "base": _hx(r.image_base),
                    "size": r.image_size,
                    "record_addr": _hx(r.record_addr),
                }
                for r in report.image_map.records
            ],
        },
        "pointer_findings": [
            {
                "table": f.table_kind.value,
                "service": f.service_name,
                "index": f.service_index,
                "pointer": _hx(f.pointer),
                "severity": f.severity,
                "expected_image": _image_ref(f.expected_image),
                "target_image": _image_ref(f.target_image),
            }
            for f in report.pointer_findings
        ],
        "inline_findings": [
            {
                "table": f.table_kind.value,
                "service": f.service_name,
                "function_addr": _hx(f.function_addr),
                "hook_addr": _hx(f.hook_addr),
                "final_target": _hx(f.final_target),
                "indeterminate": f.indeterminate,
                "target_image": _image_ref(f.target_image),
                "note": f.note,
                "chain": [
                    {
                        "at": _hx(t.at),
                        "kind": t.kind.value,
                        "length": t.length,
                        "target": _hx(t.target),
                    }
                    for t in f.chain
                ],
            }
            for f in report.inline_findings
        ],
        "anomalies": [
            {"kind": a.kind, "addr": _hx(a.addr), "detail": a.detail} for a in report.anomalies
        ],
        "carve": (
            None
            if report.carve_dir is None
            else {
                "out_dir": str(report.carve_dir),
                "images": [manifest_entry(c) for c in report.carved],
            }
        ),
        "exit_classification": report.exit_classification,
        "meta": {"generated_at": datetime.now(timezone.utc).isoformat()},
    }
    return doc


def _describe_image(record: LoadedImageRecord | None) -> str:
    if record is None:
        return "<no loaded image>"
    return f"{record.identity.label} [{record.image_base:#x}..{record.image_end:#x})"


def render_text(report: AnalysisReport) -> str:
    """Figure-style text report: one block per table, then findings."""
    lines = []
    dump = report.dump
    lines.append(f"dump {dump.source_path}")
    lines.append(
        f"  span {dump.total_span:#x} in {len(dump.regions)} region(s), "
        f"{len(report.image_map)} loaded image(s)"
    )
    for tr in report.tables:
        t = tr.table
        lines.append(f"[{t.kind.value} services table @ {t.table_addr:#x}]")
        lines.append(
            f"  revision={t.header.revision:#x} header_size={t.header.header_size}"
            f" entries={len(t.entries)} null={len(t.null_entries)}"
        )
        lines.append(
            f"  crc32 stored={tr.crc.stored:#010x} computed={tr.crc.computed:#010x}"
            f" {'ok' if tr.crc.crc_ok else 'MISMATCH'} (advisory)"
        )
        if tr.baseline is not None:
            b = tr.baseline
            lines.append(
                f"  baseline {_describe_image(b.image)}"
                f" confidence={b.confidence} source={b.source}"
            )
        else:
            lines.append(f"  baseline unavailable: {tr.baseline_error}")
        if t.flags:
            lines.append(f"  flags: {', '.join(t.flags)}")

    lines.append(f"pointer hook findings ({len(report.pointer_findings)}):")
    for f in report.pointer_findings:
        lines.append(
            f"  [{f.table_kind.value}] {f.service_name} (#{f.service_index})"
            f" -> {f.pointer:#x} in {_describe_image(f.target_image)}"
            f" severity={f.severity}"
        )
    lines.append(f"inline hook findings ({len(report.inline_findings)}):")
    for f in report.inline_findings:
        first = f.chain[0]
        target = f"{f.final_target:#x}" if f.final_target is not None else "<unresolved>"
        lines.append(
            f"  [{f.table_kind.value}] {f.service_name} @ {f.function_addr:#x}:"
            f" {first.kind.value} at {f.hook_addr:#x} -> {target}"
            f" in {_describe_image(f.target_image)}"
            f" chain={len(f.chain)}{' indeterminate' if f.indeterminate else ''}"
        )
    lines.append(f"anomalies ({len(report.anomalies)}):")
    for a in report.anomalies:
        where = f" @ {a.addr:#x}" if a.addr is not None else ""
        lines.append(f"  {a.kind}{where}: {a.detail}")
    if report.carve_dir is not None:
        lines.append(f"carved {len(report.carved)} image(s) -> {report.carve_dir}")
    lines.append(f"verdict: {report.exit_classification}")
    return "\n".join(lines) + "\n"
