"""Shared fixtures and hypothesis strategies for the test suite."""

from __future__ import annotations

import random

import pytest
from hypothesis import strategies as st

from polyhappy.molgraph import MolGraph, parse_smiles

# One line per acceptance criterion, printed after the run so measured
# numbers (ratios, timings, step counts) survive output capture.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_note():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# Backbone pieces chain left to right; every piece leaves a free valence on
# its last atom so the next piece (or the closing wildcard) can attach.
BACKBONE_PIECES = [
    "C",
    "CC",
    "CCC",
    "O",
    "N",
    "S",
    "CO",
    "OC",
    "C(=O)",
    "C(=O)O",
    "OC(=O)",
    "C(=O)N",
    "NC(=O)",
    "c1ccc(cc1)",
    "Cc1ccc(cc1)",
    "C(F)(F)",
]

SIDELINE_PIECES = [
    "(C)",
    "(CC)",
    "(Cl)",
    "(F)",
    "(C#N)",
    "(C(C)C)",
    "(c1ccccc1)",
    "(C(F)(F)F)",
    "(OC)",
    "(C(=O)OC)",
]


@st.composite
def monomer_smiles(draw) -> str:
    """Random two-ended repeat-unit SMILES built from safe pieces."""
    n = draw(st.integers(min_value=1, max_value=5))
    parts = []
    for _ in range(n):
        piece = draw(st.sampled_from(BACKBONE_PIECES))
        parts.append(piece)
        # sidelines only on plain-carbon pieces, which have spare valence
        if piece in ("C", "CC", "CCC") and draw(st.booleans()):
            parts.append(draw(st.sampled_from(SIDELINE_PIECES)))
    return "*" + "".join(parts) + "*"


@st.composite
def monomer_graphs(draw) -> MolGraph:
    return parse_smiles(draw(monomer_smiles()))


def permuted(g: MolGraph, seed: int) -> MolGraph:
    """Relabel atoms by a seeded random permutation (bonds remapped)."""
    from polyhappy.molgraph import Atom, Bond

    rng = random.Random(seed)
    perm = list(range(len(g.atoms)))
    rng.shuffle(perm)  # perm[new] = old
    inverse = [0] * len(perm)
    for new, old in enumerate(perm):
        inverse[old] = new
    atoms = [
        Atom(
            g.atoms[old].element,
            g.atoms[old].formal_charge,
            g.atoms[old].aromatic,
            g.atoms[old].explicit_h,
            g.atoms[old].map_num,
        )
        for old in perm
    ]
    bonds = [Bond(inverse[b.a], inverse[b.b], b.order) for b in g.bonds]
    return MolGraph(atoms, bonds)
