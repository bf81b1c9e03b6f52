"""
Detecting function-pointer hooks in service tables
===================================================

A service-table pointer should land inside the image that legitimately
implements the table's services. The detector learns that image by
majority vote over the table's own pointers, then flags every entry
escaping it — attributing each hook to the loaded image that contains
the rogue target.

Checksums are deliberately ignored for detection: the scenarios below
recalculate the table CRC after patching, exactly like the real attacks.
"""

from uefiforensics import (
    detect_pointer_hooks,
    infer_baseline,
    locate_tables,
    scan_loaded_images,
    verify_table_integrity,
)
from uefiforensics.forge import build_scenario, scenario_by_name

# A DXE-driver style attack: five pointers across the Boot and Runtime
# tables redirected into a malicious driver identified only by GUID.
scenario = build_scenario(scenario_by_name("cosmicstrand"))
dump = scenario.dump

tables, _ = locate_tables(dump)
image_map = scan_loaded_images(dump)
print(f"{len(image_map)} loaded images:")
for record in image_map.records:
    print(f"  {record.identity.label:<44} [{record.image_base:#x} .. {record.image_end:#x})")

for table in tables:
    baseline = infer_baseline(table, image_map)
    crc = verify_table_integrity(dump, table)
    findings = detect_pointer_hooks(table, image_map, baseline)
    print(f"\n[{table.kind.value} table]  baseline={baseline.image.identity.label} "
          f"({baseline.confidence})  crc_ok={crc.crc_ok}")
    if not findings:
        print("  no pointer hooks")
    for f in findings:
        target = f.target_image.identity.label if f.target_image else "<unmapped memory>"
        print(f"  {f.severity.upper()}: {f.service_name} (#{f.service_index}) "
              f"-> {f.pointer:#x} in {target}")

# Note the checksums above verified OK — the attacker recalculated them.
# Detection is structural, so the hooks are flagged anyway; matching the
# injected set recorded in the ground truth:
print("\nexpected (ground truth):",
      sorted((h.table.value, h.service) for h in scenario.truth.pointer_hooks))
