"""Regenerate matrix_game_oracle.json by exhaustive enumeration with exact fractions.

Independent of ices.envs: the table is re-typed here from its description.
"""
import itertools
import json
import math
from fractions import Fraction as F
from pathlib import Path


def row(s, a0, a1):
    if s == 0:
        nxt = {0: 1, 1: 2, 2: 0}[a0]
        return [F(int(k == nxt)) for k in range(4)]
    if s == 1:
        return [F(1, 5), F(0), F(0), F(4, 5)] if a0 == a1 else [F(1, 2), F(1, 2), F(0), F(0)]
    if s == 2:
        return [F(0), F(1), F(0), F(0)] if a1 == 2 else [F(1, 3)] * 3 + [F(0)]
    return [F(0), F(0), F(0), F(1)]


def main():
    out = []
    for s, a0, a1 in itertools.product(range(4), range(3), range(3)):
        actual = row(s, a0, a1)
        for i in range(2):
            cf = [F(0)] * 4
            for a in range(3):
                r = row(s, a, a1) if i == 0 else row(s, a0, a)
                cf = [c + x / 3 for c, x in zip(cf, r)]
            kl = sum(float(p) * math.log(p / q) for p, q in zip(actual, cf) if p > 0)
            out.append({"state": s, "joint_action": [a0, a1], "agent": i, "kl": kl})
    Path(__file__).with_name("matrix_game_oracle.json").write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
