"""
Synthetic dataset and the four prompt scenarios
===============================================

Generate a seeded dataset, enumerate its scoring triplets and render the
Base, Generic, Detailed and chain-of-thought prompts for one of them.
"""

import tempfile
from pathlib import Path

from conceptgrader.dataset import Scenario, enumerate_triplets, load_dataset
from conceptgrader.fixtures import generate_fixture
from conceptgrader.prompts import build_prompt, golden_check

root = Path(tempfile.mkdtemp()) / "fixture"
generate_fixture(root, seed=0)
ds = load_dataset(root)

triplets = enumerate_triplets(ds)
print(len(ds.questions), "questions,", len(ds.student_ids), "students,", len(triplets), "triplets")
t = triplets[0]
print("first triplet:", t)

for scenario in Scenario:
    prompt = build_prompt(scenario, t, ds)
    print(f"--- {scenario.value}: {len(prompt.text)} chars, attachments {[a.path for a in prompt.attachments]}")

print(build_prompt(Scenario.DETAILED, t, ds).text)

# the packaged templates are checked byte for byte
print({s.value: golden_check(s) for s in Scenario})
