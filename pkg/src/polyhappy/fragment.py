"""Acyclic-bond fragmentation of repeat units into port-annotated subgroups.

A repeat unit (exactly two wildcard ends) is cut at every acyclic single
non-aromatic bond between heavy atoms. Rings never break, so each piece is a
small rigid subgroup; the pieces form a tree whose edges remember the cut
bonds as numbered ports. The unique tree path between the two wildcard ends
is the mainline; everything hanging off it forms sideline subtrees.

Ports are numbered 1..k in the canonical atom order of the port-augmented
subgroup, which makes the serialized key identify a subgroup by both its
chemistry and its connection-point positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import networkx as nx

from .molgraph import (
    SINGLE,
    WILDCARD,
    Atom,
    Bond,
    MolGraph,
    canonical_rank,
    parse_smiles,
    ring_bonds,
    subgraph,
    write_smiles,
)


class FragmentationError(ValueError):
    pass


@dataclass
class Port:
    """An open attachment on a fragment. ``atom`` indexes the fragment graph."""

    atom: int
    port_id: int


@dataclass
class Fragment:
    """A connected subgroup with its open ports.

    ``graph`` holds only the subgroup's own atoms (no wildcards);
    ``source_atoms`` maps fragment atom i back to the parent monomer, and
    ``port_partners`` maps each port id to the original (atom, neighbor)
    pair of the bond that the port stands for.
    """

    graph: MolGraph
    ports: list[Port]
    canonical_key: str
    source_atoms: tuple[int, ...] | None = None
    port_partners: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def atom_count(self) -> int:
        return sum(1 for a in self.graph.atoms if a.element != "H")

    def port_by_id(self, port_id: int) -> Port:
        for port in self.ports:
            if port.port_id == port_id:
                return port
        raise KeyError(port_id)


@dataclass
class FragmentEdge:
    """One cut bond: fragment ``a`` port ``a_port`` joins ``b`` port ``b_port``."""

    a: int
    a_port: int
    b: int
    b_port: int


@dataclass
class FragmentTree:
    fragments: list[Fragment]
    edges: list[FragmentEdge]
    end_ports: list[tuple[int, int]]  # two (fragment index, port id) pairs
    source: MolGraph | None = None

    @property
    def end_fragments(self) -> tuple[int, int]:
        return self.end_ports[0][0], self.end_ports[1][0]

    @property
    def degenerate_ends(self) -> bool:
        """True when both polymerization points sit on the same atom."""
        (fa, pa), (fb, pb) = self.end_ports
        if fa != fb:
            return False
        frag = self.fragments[fa]
        return frag.port_by_id(pa).atom == frag.port_by_id(pb).atom

    def adjacency(self) -> dict[int, list[tuple[int, FragmentEdge]]]:
        adj: dict[int, list[tuple[int, FragmentEdge]]] = {
            i: [] for i in range(len(self.fragments))
        }
        for edge in self.edges:
            adj[edge.a].append((edge.b, edge))
            adj[edge.b].append((edge.a, edge))
        return adj


@dataclass
class Sideline:
    """A rooted subtree hanging off a mainline fragment."""

    host_port_id: int
    root: int
    members: tuple[int, ...]


@dataclass
class MainlineDecomposition:
    mainline: list[int]
    sidelines: dict[int, list[Sideline]]  # mainline fragment -> ordered subtrees


# ---------------------------------------------------------------------------
# Fragment construction


def build_fragment(g: MolGraph, atom_indices: set[int]) -> Fragment:
    """Cut ``atom_indices`` out of ``g`` as a fragment with canonical ports.

    Every bond that leaves the set becomes a port: bonds to wildcards are
    polymerization ends, other bonds are cut bonds. Port ids follow the
    canonical order of the port-augmented subgroup, so isomorphic subgroups
    with matching connection points get identical keys and port numbering.
    """
    ordered = sorted(atom_indices)
    frag_graph, index_map = subgraph(g, ordered)
    attachments: list[tuple[int, int]] = []  # (orig atom, orig partner)
    for orig in ordered:
        for nbr, bond in g.neighbors(orig):
            if nbr in atom_indices:
                continue
            if bond.order != SINGLE:
                raise FragmentationError(
                    f"non-single bond {orig}-{nbr} crosses the fragment boundary"
                )
            attachments.append((orig, nbr))
    attachments.sort()

    augmented = MolGraph(
        [replace(a) for a in frag_graph.atoms], list(frag_graph.bonds)
    )
    wildcard_for: list[int] = []
    for orig, _ in attachments:
        augmented.atoms.append(Atom(WILDCARD))
        w = len(augmented.atoms) - 1
        augmented.bonds.append(Bond(index_map[orig], w, SINGLE))
        wildcard_for.append(w)
    augmented = MolGraph(augmented.atoms, augmented.bonds)

    ranks = canonical_rank(augmented)
    order = sorted(range(len(attachments)), key=lambda i: ranks[wildcard_for[i]])
    ports: list[Port] = []
    port_partners: dict[int, tuple[int, int]] = {}
    for port_id, att_idx in enumerate(order, start=1):
        orig, partner = attachments[att_idx]
        ports.append(Port(atom=index_map[orig], port_id=port_id))
        port_partners[port_id] = (orig, partner)
        augmented.atoms[wildcard_for[att_idx]].map_num = port_id
    key = write_smiles(augmented)

    return Fragment(
        graph=frag_graph,
        ports=ports,
        canonical_key=key,
        source_atoms=tuple(ordered),
        port_partners=port_partners,
    )


def canonical_fragment_key(f: Fragment) -> str:
    """Serialized identity: canonical SMILES with ports as numbered wildcards."""
    return f.canonical_key


def fragment_with_ports(f: Fragment) -> MolGraph:
    """The fragment graph with one numbered wildcard atom per port."""
    atoms = [replace(a) for a in f.graph.atoms]
    bonds = list(f.graph.bonds)
    for port in f.ports:
        atoms.append(Atom(WILDCARD, map_num=port.port_id))
        bonds.append(Bond(port.atom, len(atoms) - 1, SINGLE))
    return MolGraph(atoms, bonds)


def parse_fragment_key(key: str) -> tuple[MolGraph, dict[int, int]]:
    """Parse a fragment key. Returns (graph, port id -> wildcard atom index)."""
    g = parse_smiles(key)
    port_atoms: dict[int, int] = {}
    for idx in g.wildcard_indices():
        map_num = g.atoms[idx].map_num
        if map_num <= 0 or map_num in port_atoms:
            raise FragmentationError(f"bad port numbering in key {key!r}")
        port_atoms[map_num] = idx
    if sorted(port_atoms) != list(range(1, len(port_atoms) + 1)):
        raise FragmentationError(f"port ids must be 1..k in key {key!r}")
    return g, port_atoms


# ---------------------------------------------------------------------------
# Fragmentation


def cut_bond_set(g: MolGraph) -> list[Bond]:
    """Bonds to cut: acyclic single non-aromatic bonds between heavy atoms."""
    in_ring = ring_bonds(g)
    cuts = []
    for bond in g.bonds:
        if bond.order != SINGLE or frozenset((bond.a, bond.b)) in in_ring:
            continue
        ea, eb = g.atoms[bond.a], g.atoms[bond.b]
        if ea.is_wildcard or eb.is_wildcard or ea.element == "H" or eb.element == "H":
            continue
        cuts.append(bond)
    return cuts


def fragment_acyclic(g: MolGraph) -> FragmentTree:
    """Cut every acyclic single bond between heavy atoms of a repeat unit.

    Requires a connected graph with exactly two wildcard ends. The result is
    a tree: one fragment per connected piece, one edge per cut bond, plus the
    two wildcard attachments recorded as end ports.
    """
    wildcards = g.wildcard_indices()
    if len(wildcards) != 2:
        raise FragmentationError(
            f"repeat unit must have exactly 2 wildcard ends, found {len(wildcards)}"
        )
    if not g.is_connected():
        raise FragmentationError("repeat unit graph is disconnected")

    cuts = cut_bond_set(g)
    cut_keys = {(b.a, b.b) for b in cuts}

    heavy = nx.Graph()
    heavy.add_nodes_from(i for i in range(len(g.atoms)) if i not in wildcards)
    for bond in g.bonds:
        if bond.a in wildcards or bond.b in wildcards:
            continue
        if (bond.a, bond.b) in cut_keys:
            continue
        heavy.add_edge(bond.a, bond.b)

    components = sorted(nx.connected_components(heavy), key=min)
    frag_of: dict[int, int] = {}
    fragments: list[Fragment] = []
    for fi, comp in enumerate(components):
        for atom in comp:
            frag_of[atom] = fi
        fragments.append(build_fragment(g, set(comp)))

    def port_id_at(fi: int, orig_atom: int, orig_partner: int) -> int:
        for port_id, pair in fragments[fi].port_partners.items():
            if pair == (orig_atom, orig_partner):
                return port_id
        raise FragmentationError("port bookkeeping mismatch")

    edges = [
        FragmentEdge(
            a=frag_of[bond.a],
            a_port=port_id_at(frag_of[bond.a], bond.a, bond.b),
            b=frag_of[bond.b],
            b_port=port_id_at(frag_of[bond.b], bond.b, bond.a),
        )
        for bond in cuts
    ]
    end_ports = []
    for w in sorted(wildcards):
        host = g.neighbors(w)[0][0]
        end_ports.append((frag_of[host], port_id_at(frag_of[host], host, w)))

    return FragmentTree(fragments, edges, end_ports, source=g)


# ---------------------------------------------------------------------------
# Mainline / sidelines


def locate_mainline(tree: FragmentTree) -> MainlineDecomposition:
    """Split the fragment tree into the end-to-end mainline and sidelines.

    The mainline is the unique tree path between the two end fragments (a
    single fragment when both ends share one). Sidelines of a host are
    ordered by ascending host port id.
    """
    adj = tree.adjacency()
    start, goal = tree.end_fragments
    parent: dict[int, int | None] = {start: None}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for nbr, _ in adj[node]:
            if nbr not in parent:
                parent[nbr] = node
                queue.append(nbr)
    if goal not in parent:
        raise FragmentationError("fragment tree is not connected")
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    mainline = list(reversed(path))
    on_path = set(mainline)

    def collect(root: int, blocked: int) -> tuple[int, ...]:
        seen = {blocked, root}
        stack = [root]
        members = [root]
        while stack:
            node = stack.pop()
            for nbr, _ in adj[node]:
                if nbr not in seen:
                    seen.add(nbr)
                    members.append(nbr)
                    stack.append(nbr)
        return tuple(sorted(members))

    sidelines: dict[int, list[Sideline]] = {}
    for i, host in enumerate(mainline):
        prev_frag = mainline[i - 1] if i > 0 else None
        next_frag = mainline[i + 1] if i + 1 < len(mainline) else None
        branches = []
        for nbr, edge in adj[host]:
            if nbr == prev_frag or nbr == next_frag:
                # Skip exactly one edge per mainline neighbor; parallel
                # edges cannot occur in a tree.
                prev_frag = None if nbr == prev_frag else prev_frag
                next_frag = None if nbr == next_frag else next_frag
                continue
            host_port = edge.a_port if edge.a == host else edge.b_port
            branches.append(Sideline(host_port, nbr, collect(nbr, host)))
        if branches:
            sidelines[host] = sorted(branches, key=lambda s: s.host_port_id)
    return MainlineDecomposition(mainline=mainline, sidelines=sidelines)


# ---------------------------------------------------------------------------
# Reassembly (inverse of fragmentation, used for verification)


def reassemble(tree: FragmentTree) -> MolGraph:
    """Reconnect all fragments and restore the wildcard ends."""
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    offsets: list[int] = []
    for frag in tree.fragments:
        offsets.append(len(atoms))
        atoms.extend(replace(a) for a in frag.graph.atoms)
        bonds.extend(
            Bond(b.a + offsets[-1], b.b + offsets[-1], b.order) for b in frag.graph.bonds
        )

    def global_atom(fi: int, port_id: int) -> int:
        return offsets[fi] + tree.fragments[fi].port_by_id(port_id).atom

    for edge in tree.edges:
        bonds.append(Bond(global_atom(edge.a, edge.a_port), global_atom(edge.b, edge.b_port), SINGLE))
    for fi, port_id in tree.end_ports:
        atoms.append(Atom(WILDCARD))
        bonds.append(Bond(global_atom(fi, port_id), len(atoms) - 1, SINGLE))
    return MolGraph(atoms, bonds)
