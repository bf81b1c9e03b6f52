"""
Forging a ground-truth dump and inspecting its service tables
==============================================================

The fixture forge builds a synthetic UEFI pre-boot memory dump the way
DXE-phase firmware lays one out: a core image full of stub service
functions, the Boot/Runtime/DXE service tables pointing into it, and
loaded-image bookkeeping records. Everything it emits is described
exactly by a ground-truth manifest, which is what makes the dumps usable
as test oracles.
"""

from pathlib import Path

from uefiforensics import load_dump, locate_tables, verify_table_integrity
from uefiforensics.forge import build_scenario, scenario_by_name

out_dir = Path("demo-output/forge")

# Build the "efiguard" scenario: a bootloader-style attack that rewrites
# two service-table pointers into a driver dropped on the EFI system
# partition, then fixes the table checksum to look intact.
scenario = build_scenario(scenario_by_name("efiguard"), seed=0)
paths = scenario.write(out_dir)
for label, path in paths.items():
    print(f"{label:>6}: {path}  ({path.stat().st_size:,} bytes)")

# The dump file stores only the populated regions; the sidecar map puts
# them back at their physical addresses (the gap in between reads as
# zeros, like an acquisition tool that skips reserved memory).
dump = load_dump(paths["dump"], paths["map"])
print(f"\nphysical span {dump.total_span:#x} across {len(dump.regions)} regions:")
for region in dump.regions:
    print(f"  [{region.phys_start:#010x} .. {region.phys_end:#010x})")

# Service tables are found by their 8-byte ASCII signatures and parsed
# into named, ordered function-pointer entries.
tables, anomalies = locate_tables(dump)
for table in tables:
    crc = verify_table_integrity(dump, table)
    print(f"\n[{table.kind.value} table @ {table.table_addr:#x}] "
          f"revision={table.header.revision:#x} crc_ok={crc.crc_ok}")
    for entry in table.entries[:5]:
        print(f"  {entry.index:3d}  {entry.name:<28} {entry.pointer:#x}")
    print(f"  ... {len(table.entries) - 5} more entries")

# The ground truth records what the forge injected; here, the two
# pointer rewrites that the detectors are expected to find.
print("\ninjected pointer hooks (ground truth):")
for hook in scenario.truth.pointer_hooks:
    print(f"  {hook.table.value}:{hook.service} -> {hook.hooked_pointer:#x} "
          f"({hook.target_key})")
