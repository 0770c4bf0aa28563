"""
Scoring with mock backends and comparing against humans
=======================================================

Two deterministic mocks stand in for real models: one echoes the human score,
the other adds one (capped at 5).  Results are recorded to a cassette so the
run can be replayed offline.
"""

import tempfile
from pathlib import Path

from conceptgrader.dataset import Scenario, enumerate_triplets, load_dataset
from conceptgrader.fixtures import generate_fixture
from conceptgrader.gateway import BackendConfig, Gateway
from conceptgrader.metrics import build_report, render_text
from conceptgrader.parsing import parse_score

work = Path(tempfile.mkdtemp())
generate_fixture(work / "fixture", seed=0)
ds = load_dataset(work / "fixture")
triplets = enumerate_triplets(ds)

batches = {}
for backend in (BackendConfig("echo", rule="echo"), BackendConfig("noisy", rule="truth_plus_one")):
    with Gateway(backend, ds, cassette=work / f"{backend.backend_id}.jsonl", mode="record") as gw:
        for scenario in (Scenario.GENERIC, Scenario.COT):
            results = gw.run_batch(triplets, scenario, parallelism=8)
            batches[(backend.backend_id, scenario)] = [
                (parse_score(r.raw_text), ds.ground_truth[r.triplet]) for r in results
            ]

print(render_text(build_report(batches)))

# replaying needs no backend at all and makes no calls
with Gateway(BackendConfig("noisy", kind="replay", rule="truth_plus_one"), ds, cassette=work / "noisy.jsonl") as gw:
    again = gw.run_batch(triplets, Scenario.GENERIC)
print("replayed", len(again), "results,", gw.calls, "live calls")
