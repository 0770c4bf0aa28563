"""
Reading a score out of model text
=================================

Models do not always follow the requested ``<Score>k</Score>`` format.  The
parser tries tags, then ``\\boxed{k}``, then a lone digit, and reports which
rule fired or why nothing could be read.
"""

from conceptgrader.parsing import parse_score

replies = [
    "<Score>3</Score>",
    "The answer shows strong work. \\boxed{3}",
    "I considered 2 but settle on <Score>5</Score>",
    "Hmm. <Score>2</Score> Wait, maybe it is better. <Score>4</Score>",
    "The link strength is 4.",
    "<Score>7</Score>",
    "<Score>3.5</Score>",
    "<start of description> The image consists of a geometric diagram ...",
]
for text in replies:
    r = parse_score(text)
    outcome = f"{r.value} via {r.rule.value}" if r.ok else f"failed: {r.reason.value}"
    print(f"{text[:50]!r:55} {outcome}")
