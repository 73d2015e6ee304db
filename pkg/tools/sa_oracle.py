"""Independent reimplementation of the synthesizability score formula.

Shares only the environment-string extraction with the package; everything
downstream (counting, familiarity, complexity, affine map, clamping) is
recomputed here from scratch so the two paths can be cross-checked. Prints
the frozen test values used in tests/test_metrics.py.
"""

from __future__ import annotations

import itertools
import math
import pathlib
import statistics
import sys
from collections import Counter

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

import networkx as nx

from polyhappy.chemfeat import atom_environments
from polyhappy.molgraph import parse_smiles

REFERENCE = ["*CC*", "*CC(*)c1ccccc1", "*OCC*", "*CC(*)Cl", "*NCCCCCC(*)=O"]


def oracle_sa(smiles: str, reference: list[str]) -> float:
    table = Counter(
        env for ref in reference for env in atom_environments(parse_smiles(ref))
    )
    g = parse_smiles(smiles)
    logs = [
        math.log(table[env]) if env in table else math.log(0.5)
        for env in atom_environments(g)
    ]
    familiarity = statistics.fmean(logs)

    heavy = sum(1 for a in g.atoms if not a.is_wildcard and a.element != "H")
    nxg = nx.Graph((b.a, b.b) for b in g.bonds)
    nxg.add_nodes_from(range(len(g.atoms)))
    rings = [set(c) for c in nx.minimum_cycle_basis(nxg)]
    fused = sum(
        1 for r1, r2 in itertools.combinations(rings, 2) if len(r1 & r2) >= 2
    )
    macro = sum(1 for r in rings if len(r) > 8)
    complexity = (heavy**1.005 - heavy) + math.log10(1 + fused) + math.log10(1 + macro)

    max_count = table.most_common(1)[0][1]
    raw = complexity - familiarity
    span = 2.5 + math.log(2) + math.log(max_count)
    score = 1 + 9 * (raw + math.log(max_count)) / span
    return max(1.0, min(10.0, score))


if __name__ == "__main__":
    for probe in ["*CC*", "*CC(*)C1CCC2CCCCC2C1", "*CC(*)c1ccccc1",
                  "*CC(*)C1(CC2CCC3CCCCCCCC3C2)CCCC1"]:
        print(probe, "->", repr(oracle_sa(probe, REFERENCE)))
