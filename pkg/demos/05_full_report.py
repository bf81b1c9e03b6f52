"""
The full analysis pipeline and its deterministic report
========================================================

One call runs table parsing, image registration, both hook detectors,
and optional carving, and produces two renderings: a text block per
table (what an analyst reads) and a stable JSON document (what tooling
consumes). Apart from the explicitly-excluded ``meta.generated_at``
timestamp, identical dumps produce byte-identical JSON.
"""

import json

from uefiforensics import analyze_dump, render_text, to_json_dict
from uefiforensics.forge import build_scenario, scenario_by_name
from uefiforensics.report import AnalysisOptions

scenario = build_scenario(scenario_by_name("glupteba"))

report = analyze_dump(scenario.dump, AnalysisOptions(max_depth=3, prologue_window=32))
print(render_text(report))

# Exit-code contract: 0 clean, 2 findings present, 1 operational error.
print(f"process exit code would be: {report.exit_code}")

# JSON determinism: strip the timestamp, serialize twice, compare.
doc_a = to_json_dict(report)
doc_b = to_json_dict(analyze_dump(scenario.dump))
for doc in (doc_a, doc_b):
    doc.pop("meta")
identical = json.dumps(doc_a) == json.dumps(doc_b)
print(f"reports byte-identical without meta: {identical}")

print("\npointer findings as JSON:")
print(json.dumps(doc_a["pointer_findings"], indent=2))
