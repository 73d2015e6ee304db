"""Molecular graphs for polymer repeat units.

Parses a SMILES subset (organic subset + brackets, branches, ring closures,
aromatic lowercase, ``[*]`` wildcards for polymerization points), computes
implicit hydrogens from a fixed valence table, checks valences, and produces
canonical atom orderings via iterative neighborhood refinement so that equal
structures serialize to equal strings.

Out of dialect by design: stereochemistry, isotopes, and reaction arrows are
rejected with a positioned parse error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import networkx as nx

# Bond order codes. AROMATIC participates in valence sums as 1.5.
SINGLE = 1
DOUBLE = 2
TRIPLE = 3
AROMATIC = 4

_ORDER_VALUE = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}
_BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}

WILDCARD = "*"

ELEMENTS = {"H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I", WILDCARD}

# Default valences used for implicit-hydrogen assignment and the valence
# check. Multi-valued entries list the allowed hypervalent states.
DEFAULT_VALENCES: dict[str, tuple[int, ...]] = {
    "H": (1,),
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "F": (1,),
    "Si": (4,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# Bare (bracket-free) atom symbols. Everything else needs brackets.
_ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "Si"}
_AROMATIC_BARE = {"b", "c", "n", "o", "p", "s"}

# Aromatic atoms that donate a lone pair to the ring (furan O, thiophene S)
# contribute order 1 per ring bond; the others carry one formal double bond.
_PI_DONORS = {"O", "S"}


class ParseError(ValueError):
    """SMILES text rejected; ``position`` indexes the offending character."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


@dataclass
class Atom:
    """One heavy atom, explicit hydrogen, or wildcard node.

    ``explicit_h`` is the total attached hydrogen count: written in brackets,
    or derived from the valence table for bare organic-subset atoms.
    ``map_num`` carries port numbers on wildcards in fragment keys; it is 0
    everywhere else.
    """

    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0
    map_num: int = 0

    @property
    def is_wildcard(self) -> bool:
        return self.element == WILDCARD


@dataclass
class Bond:
    a: int
    b: int
    order: int

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass
class MolGraph:
    """Attributed molecular graph. Treated as immutable after construction."""

    atoms: list[Atom]
    bonds: list[Bond]
    source_text: str | None = None
    _adj: dict[int, list[tuple[int, Bond]]] | None = field(
        default=None, repr=False, compare=False
    )

    def neighbors(self, idx: int) -> list[tuple[int, Bond]]:
        if self._adj is None:
            adj: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(len(self.atoms))}
            for bond in self.bonds:
                adj[bond.a].append((bond.b, bond))
                adj[bond.b].append((bond.a, bond))
            self._adj = adj
        return self._adj[idx]

    def degree(self, idx: int) -> int:
        return len(self.neighbors(idx))

    def bond_between(self, a: int, b: int) -> Bond | None:
        for nbr, bond in self.neighbors(a):
            if nbr == b:
                return bond
        return None

    def wildcard_indices(self) -> list[int]:
        return [i for i, atom in enumerate(self.atoms) if atom.is_wildcard]

    def heavy_indices(self) -> list[int]:
        return [
            i
            for i, atom in enumerate(self.atoms)
            if not atom.is_wildcard and atom.element != "H"
        ]

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.atoms)))
        g.add_edges_from((bond.a, bond.b) for bond in self.bonds)
        return g

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        return nx.is_connected(self.to_networkx())


@dataclass
class ValidityReport:
    valid: bool
    violations: list[tuple[int, str]]


# ---------------------------------------------------------------------------
# Parsing


def _parse_bracket(text: str, start: int) -> tuple[Atom, int]:
    # start indexes '['. Returns the atom and the index just past ']'.
    end = text.find("]", start)
    if end < 0:
        raise ParseError("unclosed bracket atom", start)
    body = text[start + 1 : end]
    pos = start + 1
    if not body:
        raise ParseError("empty bracket atom", start)
    i = 0
    if body[i].isdigit():
        raise ParseError("isotope labels are not supported", pos + i)

    aromatic = False
    element = None
    if body[i] == WILDCARD:
        element = WILDCARD
        i += 1
    else:
        for symbol in ("Cl", "Br", "Si"):
            if body.startswith(symbol, i):
                element = symbol
                i += len(symbol)
                break
        if element is None:
            ch = body[i]
            if ch in _AROMATIC_BARE:
                element = ch.upper()
                aromatic = True
                i += 1
            elif ch.isalpha() and ch.upper() in ELEMENTS and ch.isupper():
                element = ch
                i += 1
            else:
                raise ParseError(f"unknown element {ch!r}", pos + i)

    h_count = 0
    if i < len(body) and body[i] == "H" and element != "H":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        h_count = int(digits) if digits else 1

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        run = 0
        while i < len(body) and body[i] in "+-":
            if (body[i] == "+") != (sign > 0):
                raise ParseError("mixed charge signs", pos + i)
            run += 1
            i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        charge = sign * (int(digits) if digits else run)

    map_num = 0
    if i < len(body) and body[i] == ":":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if not digits:
            raise ParseError("atom map expects digits", pos + i)
        if element != WILDCARD:
            raise ParseError("atom maps are only supported on wildcards", pos + i)
        map_num = int(digits)

    if i < len(body):
        if body[i] in "@\\/":
            raise ParseError("stereochemistry is not supported", pos + i)
        raise ParseError(f"unexpected {body[i]!r} in bracket atom", pos + i)
    if element == WILDCARD and (h_count or charge):
        raise ParseError("wildcard atoms take no hydrogens or charge", start)

    return Atom(element, charge, aromatic, h_count, map_num), end + 1


def parse_smiles(text: str) -> MolGraph:
    """Parse SMILES text into a :class:`MolGraph`.

    Implicit hydrogens are assigned to bare organic-subset atoms from the
    valence table. Unmarked bonds between two aromatic atoms are aromatic
    when they lie on a ring and single otherwise. Errors carry the position
    of the offending character.
    """
    if not text:
        raise ParseError("empty SMILES", 0)

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bond_keys: set[tuple[int, int]] = set()
    bare: set[int] = set()  # atoms eligible for implicit hydrogens
    stack: list[int] = []
    prev: int | None = None
    pending: int | None = None
    pending_pos = 0
    # open ring closures: digit -> (atom index, bond code or None, position)
    rings: dict[int, tuple[int, int | None, int]] = {}
    unmarked: set[tuple[int, int]] = set()  # bonds with no written symbol

    def add_bond(a: int, b: int, order: int | None, pos: int, written: bool) -> None:
        if a == b:
            raise ParseError("bond joins an atom to itself", pos)
        key = (min(a, b), max(a, b))
        if key in bond_keys:
            raise ParseError("duplicate bond between atoms", pos)
        bond_keys.add(key)
        if order is None:
            if atoms[a].aromatic and atoms[b].aromatic:
                order = AROMATIC
                unmarked.add(key)
            else:
                order = SINGLE
        bonds.append(Bond(key[0], key[1], order))

    def attach(idx: int, pos: int) -> None:
        nonlocal prev, pending
        if prev is not None:
            add_bond(prev, idx, pending, pos, pending is not None)
        elif pending is not None:
            raise ParseError("bond symbol with no atom before it", pending_pos)
        pending = None
        prev = idx

    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "(":
            if prev is None:
                raise ParseError("branch opens before any atom", i)
            stack.append(prev)
            i += 1
        elif c == ")":
            if not stack:
                raise ParseError("unbalanced ')'", i)
            if pending is not None:
                raise ParseError("dangling bond symbol before ')'", pending_pos)
            prev = stack.pop()
            i += 1
        elif c in _BOND_CHARS:
            if pending is not None:
                raise ParseError("two bond symbols in a row", i)
            pending = _BOND_CHARS[c]
            pending_pos = i
            i += 1
        elif c == ".":
            if pending is not None:
                raise ParseError("bond symbol before '.'", pending_pos)
            prev = None
            i += 1
        elif c.isdigit() or c == "%":
            if prev is None:
                raise ParseError("ring closure before any atom", i)
            if c == "%":
                if i + 2 >= n or not (text[i + 1].isdigit() and text[i + 2].isdigit()):
                    raise ParseError("'%' expects two digits", i)
                digit = int(text[i + 1 : i + 3])
                width = 3
            else:
                digit = int(c)
                width = 1
            if digit in rings:
                open_atom, open_order, open_pos = rings.pop(digit)
                if open_atom == prev:
                    raise ParseError("ring closure bonds an atom to itself", i)
                order = pending if pending is not None else open_order
                if (
                    pending is not None
                    and open_order is not None
                    and pending != open_order
                ):
                    raise ParseError("conflicting ring-closure bond orders", i)
                add_bond(open_atom, prev, order, i, order is not None)
            else:
                rings[digit] = (prev, pending, i)
            pending = None
            i += width
        elif c == "[":
            atom, nxt = _parse_bracket(text, i)
            atoms.append(atom)
            attach(len(atoms) - 1, i)
            i = nxt
        elif c == WILDCARD:
            atoms.append(Atom(WILDCARD))
            attach(len(atoms) - 1, i)
            i += 1
        elif c in "@/\\":
            raise ParseError("stereochemistry is not supported", i)
        elif c.isspace():
            raise ParseError("whitespace inside SMILES", i)
        else:
            symbol = None
            for two in ("Cl", "Br", "Si"):
                if text.startswith(two, i):
                    symbol = two
                    break
            aromatic = False
            if symbol is None:
                if c in _AROMATIC_BARE:
                    symbol = c.upper()
                    aromatic = True
                elif c.isupper() and c in _ORGANIC_SUBSET:
                    symbol = c
                else:
                    raise ParseError(f"unknown element {c!r}", i)
            atoms.append(Atom(symbol, aromatic=aromatic))
            bare.add(len(atoms) - 1)
            attach(len(atoms) - 1, i)
            i += len(symbol)

    if pending is not None:
        raise ParseError("dangling bond symbol at end of input", pending_pos)
    if stack:
        raise ParseError("unbalanced '('", n - 1)
    if rings:
        digit, (_, _, pos) = next(iter(rings.items()))
        raise ParseError(f"unclosed ring digit {digit}", pos)

    graph = MolGraph(atoms, bonds, source_text=text)
    _demote_acyclic_aromatic_bonds(graph, unmarked)
    for idx in bare:
        atoms[idx].explicit_h = _implicit_hydrogens(graph, idx)
    return graph


def _demote_acyclic_aromatic_bonds(g: MolGraph, unmarked: set[tuple[int, int]]) -> None:
    # An unwritten bond between aromatic atoms is aromatic only on a ring;
    # biphenyl-style linkers fall back to single bonds.
    if not unmarked:
        return
    bridges = {tuple(sorted(e)) for e in nx.bridges(g.to_networkx())}
    for bond in g.bonds:
        key = (bond.a, bond.b)
        if bond.order == AROMATIC and key in unmarked and key in bridges:
            bond.order = SINGLE


def _bond_order_sum(g: MolGraph, idx: int) -> float:
    return sum(_ORDER_VALUE[bond.order] for _, bond in g.neighbors(idx))


def _implicit_hydrogens(g: MolGraph, idx: int) -> int:
    atom = g.atoms[idx]
    if atom.is_wildcard:
        return 0
    if atom.aromatic and atom.element in _PI_DONORS:
        # Lone-pair donors: ring bonds count as single toward saturation.
        total = sum(
            1.0 if bond.order == AROMATIC else _ORDER_VALUE[bond.order]
            for _, bond in g.neighbors(idx)
        )
    else:
        total = _bond_order_sum(g, idx)
    used = int(total)  # 1.5-per-aromatic-bond sums floor to one double bond
    for valence in DEFAULT_VALENCES[atom.element]:
        if valence >= used:
            return valence - used
    return 0


def check_valence(g: MolGraph) -> ValidityReport:
    """Check every atom against the default valence table.

    Aromatic bonds count 1.5 and half-integer sums round down (one formal
    double bond per atom); lone-pair donor atoms are also tried with their
    ring bonds counted as single so pyrrole-type rings pass. Charged atoms
    get their allowed valence shifted by the formal charge. Wildcards are
    exempt except that each must have exactly one single bond.
    """
    violations: list[tuple[int, str]] = []
    for idx, atom in enumerate(g.atoms):
        if atom.is_wildcard:
            if g.degree(idx) != 1:
                violations.append(
                    (idx, f"wildcard has degree {g.degree(idx)}, expected 1")
                )
            elif g.neighbors(idx)[0][1].order != SINGLE:
                violations.append((idx, "wildcard bond must be single"))
            continue
        if atom.aromatic:
            aromatic_bonds = sum(
                1 for _, bond in g.neighbors(idx) if bond.order == AROMATIC
            )
            if aromatic_bonds < 2:
                violations.append((idx, "aromatic atom not in an aromatic ring"))
                continue
        limit = max(DEFAULT_VALENCES[atom.element]) + atom.formal_charge
        total = int(_bond_order_sum(g, idx)) + atom.explicit_h
        if atom.aromatic:
            # Accept either pi role: one formal double bond (the floored
            # 1.5-per-bond sum) or lone-pair donation (ring bonds as singles,
            # e.g. pyrrole nitrogen and thiophene sulfur).
            donor = (
                int(
                    sum(
                        1.0 if bond.order == AROMATIC else _ORDER_VALUE[bond.order]
                        for _, bond in g.neighbors(idx)
                    )
                )
                + atom.explicit_h
            )
            total = min(total, donor)
        if total > limit:
            violations.append((idx, f"valence {total} > {limit}"))
    return ValidityReport(valid=not violations, violations=violations)


# ---------------------------------------------------------------------------
# Canonical ordering


def _initial_invariant(g: MolGraph, idx: int, tags: dict[int, str] | None):
    atom = g.atoms[idx]
    return (
        atom.element,
        g.degree(idx),
        atom.formal_charge,
        atom.aromatic,
        atom.explicit_h,
        atom.map_num,
        tags.get(idx, "") if tags else "",
    )


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    n = len(ranks)
    while True:
        keys = [
            (
                ranks[i],
                tuple(sorted((bond.order, ranks[nbr]) for nbr, bond in g.neighbors(i))),
            )
            for i in range(n)
        ]
        order = {key: rank for rank, key in enumerate(sorted(set(keys)))}
        new_ranks = [order[key] for key in keys]
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def canonical_rank(g: MolGraph, tags: dict[int, str] | None = None) -> list[int]:
    """Order atoms canonically via iterative neighborhood refinement.

    Atoms start from an attribute invariant (element, degree, charge,
    aromaticity, hydrogen count), then ranks are refined by sorted neighbor
    ranks until stable. Remaining ties are broken by promoting the
    smallest-index member of the smallest tied class and re-refining, which
    is deterministic and, for attributed molecular graphs, stable under
    relabeling (tied atoms are interchangeable).

    ``tags`` adds an opaque per-atom string to the initial invariant.
    Returns a permutation: ``result[i]`` is the canonical position of atom i.
    """
    n = len(g.atoms)
    if n == 0:
        return []
    keys = [_initial_invariant(g, i, tags) for i in range(n)]
    order = {key: rank for rank, key in enumerate(sorted(set(keys)))}
    ranks = _refine(g, [order[key] for key in keys])
    while len(set(ranks)) < n:
        counts: dict[int, list[int]] = {}
        for i, rank in enumerate(ranks):
            counts.setdefault(rank, []).append(i)
        tied_rank = min(rank for rank, members in counts.items() if len(members) > 1)
        chosen = min(counts[tied_rank])
        # Promote ahead of its classmates, keep everything else ordered.
        spread = [2 * r for r in ranks]
        for member in counts[tied_rank]:
            if member != chosen:
                spread[member] += 1
        order = {key: rank for rank, key in enumerate(sorted(set(spread)))}
        ranks = _refine(g, [order[key] for key in spread])
    return ranks


# ---------------------------------------------------------------------------
# Writing


def _atom_token(g: MolGraph, idx: int) -> str:
    atom = g.atoms[idx]
    if atom.is_wildcard:
        return f"[{WILDCARD}:{atom.map_num}]" if atom.map_num else f"[{WILDCARD}]"
    symbol = atom.element.lower() if atom.aromatic else atom.element
    plain_ok = (
        atom.formal_charge == 0
        and atom.map_num == 0
        and atom.element in _ORGANIC_SUBSET
        and atom.element != "Si"
        and (not atom.aromatic or atom.element.lower() in _AROMATIC_BARE)
        and atom.explicit_h == _implicit_hydrogens(g, idx)
    )
    if plain_ok:
        return symbol
    h = "" if atom.explicit_h == 0 else ("H" if atom.explicit_h == 1 else f"H{atom.explicit_h}")
    if atom.formal_charge == 0:
        charge = ""
    elif abs(atom.formal_charge) == 1:
        charge = "+" if atom.formal_charge > 0 else "-"
    else:
        charge = f"{atom.formal_charge:+d}"
    return f"[{symbol}{h}{charge}]"


def _bond_token(g: MolGraph, bond: Bond) -> str:
    if bond.order == DOUBLE:
        return "="
    if bond.order == TRIPLE:
        return "#"
    if bond.order == AROMATIC:
        return ""  # implicit between aromatic atoms
    if g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic:
        return "-"  # make single explicit so it does not re-read as aromatic
    return ""


def write_smiles(g: MolGraph, tags: dict[int, str] | None = None) -> str:
    """Serialize to canonical SMILES.

    Output is a pure function of the attributed graph: relabeled copies of
    the same structure produce identical strings. DFS roots and child order
    follow the canonical ranks; ring-closure digits are reused once closed.
    """
    n = len(g.atoms)
    if n == 0:
        return ""
    ranks = canonical_rank(g, tags)

    # Pass 1: classify edges into tree edges and ring closures, walking
    # children in canonical-rank order from the lowest-ranked root. In an
    # undirected DFS every non-tree edge joins a node to an ancestor, so
    # ring digits always open at the earlier-emitted endpoint.
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    opens: dict[int, list[int]] = {i: [] for i in range(n)}  # atom -> partners
    closes: dict[int, list[int]] = {i: [] for i in range(n)}
    visited: list[bool] = [False] * n
    classified: set[tuple[int, int]] = set()
    roots: list[int] = []

    def classify(idx: int) -> None:
        visited[idx] = True
        nbrs = sorted((nbr for nbr, _ in g.neighbors(idx)), key=lambda j: ranks[j])
        for nbr in nbrs:
            key = (min(idx, nbr), max(idx, nbr))
            if key in classified:
                continue
            classified.add(key)
            if visited[nbr]:
                opens[nbr].append(idx)
                closes[idx].append(nbr)
            else:
                children[idx].append(nbr)
                classify(nbr)

    components = sorted(
        nx.connected_components(g.to_networkx()),
        key=lambda comp: min(ranks[i] for i in comp),
    )
    for comp in components:
        root = min(comp, key=lambda i: ranks[i])
        roots.append(root)
        classify(root)

    # Pass 2: emit. Digits open at the shallower endpoint, carry the bond
    # symbol at the closing endpoint, and recycle after closing.
    pieces: list[str] = []
    digit_of: dict[tuple[int, int], int] = {}
    fresh_digits = itertools.count(1)
    recycled: list[int] = []
    emitted: dict[int, int] = {}

    def take_digit() -> int:
        return recycled.pop(0) if recycled else next(fresh_digits)

    def digit_token(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(idx: int) -> None:
        emitted[idx] = len(emitted)
        pieces.append(_atom_token(g, idx))
        for partner in sorted(closes[idx], key=lambda p: emitted[p]):
            key = (min(idx, partner), max(idx, partner))
            digit = digit_of.pop(key)
            pieces.append(_bond_token(g, g.bond_between(idx, partner)))
            pieces.append(digit_token(digit))
            recycled.append(digit)
            recycled.sort()
        for partner in opens[idx]:
            key = (min(idx, partner), max(idx, partner))
            digit = take_digit()
            digit_of[key] = digit
            pieces.append(digit_token(digit))
        kids = children[idx]
        for k, child in enumerate(kids):
            bond = _bond_token(g, g.bond_between(idx, child))
            if k < len(kids) - 1:
                pieces.append("(")
                pieces.append(bond)
                emit(child)
                pieces.append(")")
            else:
                pieces.append(bond)
                emit(child)

    for k, root in enumerate(roots):
        if k:
            pieces.append(".")
        emit(root)
    return "".join(pieces)


def canonical_form(g: MolGraph, tags: dict[int, str] | None = None) -> str:
    """Canonical string identity for isomorphism tests."""
    return write_smiles(g, tags)


def graph_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    """True iff the two attributed graphs have equal canonical forms."""
    if len(a.atoms) != len(b.atoms) or len(a.bonds) != len(b.bonds):
        return False
    return canonical_form(a) == canonical_form(b)


# ---------------------------------------------------------------------------
# Rings and edit helpers


def find_rings(g: MolGraph) -> list[frozenset[int]]:
    """Smallest set of smallest rings, as atom-index sets (cycle basis)."""
    basis = nx.minimum_cycle_basis(g.to_networkx())
    return [frozenset(cycle) for cycle in sorted(basis, key=lambda c: (len(c), sorted(c)))]


def ring_bonds(g: MolGraph) -> set[frozenset[int]]:
    """Bonds lying on at least one ring (complement of the bridges)."""
    bridges = {frozenset(e) for e in nx.bridges(g.to_networkx())}
    return {
        frozenset((bond.a, bond.b))
        for bond in g.bonds
        if frozenset((bond.a, bond.b)) not in bridges
    }


def subgraph(g: MolGraph, atom_indices: list[int]) -> tuple[MolGraph, dict[int, int]]:
    """Copy the induced subgraph. Returns (graph, old index -> new index)."""
    index_map = {old: new for new, old in enumerate(atom_indices)}
    atoms = [replace(g.atoms[old]) for old in atom_indices]
    bonds = [
        Bond(index_map[bond.a], index_map[bond.b], bond.order)
        for bond in g.bonds
        if bond.a in index_map and bond.b in index_map
    ]
    return MolGraph(atoms, bonds), index_map


def strip_wildcards(g: MolGraph, cap_with_h: bool = True) -> MolGraph:
    """Drop wildcard atoms; optionally cap each attachment with a hydrogen."""
    keep = [i for i, atom in enumerate(g.atoms) if not atom.is_wildcard]
    stripped, index_map = subgraph(g, keep)
    if cap_with_h:
        for w in g.wildcard_indices():
            for nbr, _ in g.neighbors(w):
                if not g.atoms[nbr].is_wildcard:
                    stripped.atoms[index_map[nbr]].explicit_h += 1
    return stripped
