"""The evaluation metrics on hand-sized inputs.

Run with: python3 demos/05_metrics.py
"""

import numpy as np

from ckl.metrics import (
    WordVectorTable,
    bleu_n,
    distinct_n,
    emb_average,
    emb_extrema,
    emb_greedy,
    p_at_n,
    rouge_l,
    spearman,
)

cands = [["the", "cat", "sat"], ["dogs", "bark", "loudly"]]
refs = [["the", "cat", "sat", "down"], ["dogs", "bark"]]

print("== n-gram overlap ==")
for n in (1, 2):
    print(f"BLEU-{n} =", round(bleu_n(cands, refs, n), 4))
print("ROUGE-L(cand0, ref0) =", round(rouge_l(cands[0], refs[0]), 4))
print("distinct-1 =", round(distinct_n(cands, 1), 4))
print("distinct-2 =", round(distinct_n(cands, 2), 4))

print("\n== bag-of-vector similarity ==")
table = WordVectorTable(
    {
        "the": np.array([0.1, 0.2]),
        "cat": np.array([0.9, 0.1]),
        "sat": np.array([0.4, -0.3]),
        "down": np.array([0.0, 0.8]),
    }
)
c, r = ["the", "cat", "sat"], ["the", "cat", "sat", "down"]
print("Average =", round(emb_average(c, r, table), 4))
print("Extrema =", round(emb_extrema(c, r, table), 4))
print("Greedy  =", round(emb_greedy(c, r, table), 4))

print("\n== ranking quality ==")
rankings = [[2, 0, 1], [0, 1, 2], [1, 2, 0]]
targets = [2, 1, 0]
for n in (1, 2, 3):
    print(f"P@{n} =", round(p_at_n(rankings, targets, n), 4))
print("Spearman([1,2,3,4], [1,1,0,0]) =", round(spearman([1, 2, 3, 4], [1.0, 1.0, 0.0, 0.0]), 4))
