"""
Detecting inline hooks by prologue control-flow analysis
=========================================================

Inline hooks leave the service tables untouched and instead patch the
first instructions of a service function with a call or jmp into
attacker code. The detector sweeps each service target's prologue,
decodes control transfers, and follows in-image transfers through up to
three nesting levels — attackers chain in-image jumps precisely to
defeat single-hop checks.
"""

from uefiforensics import (
    detect_inline_hooks,
    infer_baseline,
    locate_tables,
    scan_loaded_images,
    scan_prologue,
)
from uefiforensics.forge import build_scenario, scenario_by_name
from uefiforensics.service_tables import TableKind


def inline_findings(scenario, max_depth=3):
    dump = scenario.dump
    tables, _ = locate_tables(dump)
    image_map = scan_loaded_images(dump)
    found = []
    for table in tables:
        baseline = infer_baseline(table, image_map)
        found += detect_inline_hooks(dump, table, image_map, baseline, max_depth=max_depth)
    return found


# --- single call patched into an event-service prologue --------------------
scenario = build_scenario(scenario_by_name("moonbounce"))
dump = scenario.dump

tables, _ = locate_tables(dump)
boot = next(t for t in tables if t.kind is TableKind.BOOT)
target = boot.pointer_of("CreateEventEx")
print(f"CreateEventEx -> {target:#x}; raw prologue sweep:")
for t in scan_prologue(dump, target).transfers:
    where = f"{t.target:#x}" if t.target is not None else "<unresolved>"
    print(f"  {t.kind.value} at {t.at:#x}, {t.length} bytes -> {where}")

for f in inline_findings(scenario):
    where = f.target_image.identity.label if f.target_image else "<unmapped memory>"
    print(f"FINDING: {f.table_kind.value}:{f.service_name} hooked at {f.hook_addr:#x}, "
          f"{f.chain[0].kind.value} -> {f.final_target:#x} in {where}")

# The tables themselves verify clean — the pointer detector reports
# nothing for this dump. Only instruction-level analysis sees the hook.

# --- nested chains and the depth threshold ----------------------------------
print("\nnesting threshold (three levels followed):")
for name in ("nested-3", "nested-4"):
    findings = inline_findings(build_scenario(scenario_by_name(name)))
    if findings:
        chain = findings[0].chain
        hops = " -> ".join(f"{t.target:#x}" for t in chain)
        print(f"  {name}: detected, chain of {len(chain)}: {hops}")
    else:
        print(f"  {name}: no finding (escape lies beyond the depth limit)")

# Raising the limit trades false-negative resistance for analyst noise:
deeper = inline_findings(build_scenario(scenario_by_name("nested-4")), max_depth=4)
print(f"  nested-4 at max_depth=4: {len(deeper)} finding(s), "
      f"chain length {len(deeper[0].chain)}")
