"""Hierarchical token strings for repeat units, and the codec around them.

A tiled monomer serializes as its mainline tokens in order, each followed by
parenthesized sideline chains in ascending host-port order:

    happy  := chain
    chain  := unit+
    unit   := TOKEN orient? ( '(' chain ')' )*
    orient := '<' in '>' | '<' in '.' out '>'

Decoding wires each unit through a positional convention: the chain enters at
the unit's lowest-numbered port, leaves at the highest remaining port, and
sideline chains fill the remaining ports in ascending order. Structures that
violate the convention (e.g. head-to-head linkages of an asymmetric subgroup)
carry an explicit ``<in.out>`` orientation. The encoder emits a marker only
when no port automorphism maps the actual wiring onto the default, and picks
the lexicographically smallest equivalent wiring, so equal structures always
produce equal strings.

The mainline direction is chosen to make the flattened token sequence
lexicographically smallest.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .fragment import (
    FragmentationError,
    FragmentEdge,
    FragmentTree,
    locate_mainline,
    parse_fragment_key,
)
from .forge import MonomerTiling, Tile, Vocabulary, VocabularyEntry, initial_tiling
from .molgraph import (
    SINGLE,
    WILDCARD,
    Atom,
    Bond,
    MolGraph,
    check_valence,
    graph_isomorphic,
    write_smiles,
)
from .fragment import build_fragment


class EncodingError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass
class HappyUnit:
    token: str
    groups: list[list["HappyUnit"]] = field(default_factory=list)
    in_port: int | None = None
    out_port: int | None = None


@dataclass
class HappyString:
    units: list[HappyUnit]


# ---------------------------------------------------------------------------
# Text layer


_TOKEN_RE = re.compile(r"^(?P<tok>[^\s()<>]+)(?:<(?P<i>\d+)(?:\.(?P<o>\d+))?>)?$")


def _unit_text(unit: HappyUnit) -> str:
    if unit.in_port is None and unit.out_port is None:
        return unit.token
    if unit.out_port is None:
        return f"{unit.token}<{unit.in_port}>"
    return f"{unit.token}<{unit.in_port}.{unit.out_port}>"


def flatten(h: HappyString) -> list[str]:
    """Flatten to a token list; parentheses are their own tokens."""
    out: list[str] = []

    def walk(units: list[HappyUnit]) -> None:
        for unit in units:
            out.append(_unit_text(unit))
            for group in unit.groups:
                out.append("(")
                walk(group)
                out.append(")")

    walk(h.units)
    return out


def parse_happy(tokens: list[str] | str) -> HappyString:
    """Parse a whitespace-flattened token sequence back into a tree."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    pos = 0

    def parse_chain(depth: int) -> list[HappyUnit]:
        nonlocal pos
        units: list[HappyUnit] = []
        while pos < len(tokens) and tokens[pos] != ")":
            text = tokens[pos]
            if text == "(":
                if not units:
                    raise DecodeError(f"group at position {pos} has no host unit")
                pos += 1
                group = parse_chain(depth + 1)
                if pos >= len(tokens) or tokens[pos] != ")":
                    raise DecodeError("unbalanced '(' in token sequence")
                pos += 1
                if not group:
                    raise DecodeError("empty sideline group")
                units[-1].groups.append(group)
            else:
                match = _TOKEN_RE.match(text)
                if not match:
                    raise DecodeError(f"malformed token {text!r} at position {pos}")
                units.append(
                    HappyUnit(
                        token=match["tok"],
                        in_port=int(match["i"]) if match["i"] else None,
                        out_port=int(match["o"]) if match["o"] else None,
                    )
                )
                pos += 1
        return units

    units = parse_chain(0)
    if pos != len(tokens):
        raise DecodeError(f"unbalanced ')' at position {pos}")
    if not units:
        raise DecodeError("empty token sequence")
    return HappyString(units)


_SMILES_TOKEN_RE = re.compile(
    r"\[[^\]]*\]|Cl|Br|Si|%\d\d|[BCNOPSFIbcnops*]|\d|[-=#:().]"
)


def tokenize_smiles(text: str) -> list[str]:
    """Split SMILES text into atom/bond/structure tokens (for length stats)."""
    tokens = []
    pos = 0
    while pos < len(text):
        match = _SMILES_TOKEN_RE.match(text, pos)
        if not match:
            raise ValueError(f"untokenizable character {text[pos]!r} at {pos}")
        tokens.append(match.group())
        pos = match.end()
    return tokens


# ---------------------------------------------------------------------------
# Tiling a monomer against a fixed vocabulary


def compute_tiling(g: MolGraph, vocab: Vocabulary) -> MonomerTiling:
    """Tile a monomer by matching vocabulary entries greedily.

    Vocabulary occurrences are connected sets of base fragments whose merged
    key is an entry; overlapping occurrences are resolved with the mining
    priority (iteration descending, atom count descending, key ascending).
    Matching whole entries directly also covers entries whose intermediate
    merge steps were pruned from the vocabulary. Fails if any fragment is
    left uncovered.
    """
    mt = initial_tiling(g)
    index_of_atom = {a: i for i, t in enumerate(mt.tiles) for a in t.atoms}
    adj: dict[int, set[int]] = {i: set() for i in range(len(mt.tiles))}
    for a, b in mt.cut_bonds:
        ia, ib = index_of_atom[a], index_of_atom[b]
        adj[ia].add(ib)
        adj[ib].add(ia)
    tile_atoms = [len(t.atoms) for t in mt.tiles]
    entry_sizes = {e.atom_count for e in vocab.entries}
    max_atoms = max(entry_sizes, default=0)

    matches: list[tuple[VocabularyEntry, frozenset[int]]] = []

    def consider(subset: frozenset[int], total: int) -> None:
        if total not in entry_sizes:
            return
        atoms = set().union(*(mt.tiles[i].atoms for i in subset))
        frag = build_fragment(g, atoms)
        entry = vocab.by_key.get(frag.canonical_key)
        if entry is not None:
            matches.append((entry, subset))

    def extend(seed: int, subset: frozenset[int], ext: list[int], total: int) -> None:
        # enumerate each connected superset exactly once (min element = seed)
        ext = list(ext)
        while ext:
            v = ext.pop()
            if total + tile_atoms[v] > max_atoms:
                continue
            grown = subset | {v}
            new_ext = ext + [
                w
                for w in adj[v]
                if w > seed and w not in grown and w not in ext
            ]
            consider(grown, total + tile_atoms[v])
            extend(seed, grown, new_ext, total + tile_atoms[v])

    for seed in range(len(mt.tiles)):
        base = frozenset([seed])
        consider(base, tile_atoms[seed])
        extend(seed, base, [w for w in adj[seed] if w > seed], tile_atoms[seed])

    def priority(match: tuple[VocabularyEntry, frozenset[int]]):
        entry, subset = match
        atoms = sorted(a for i in subset for a in mt.tiles[i].atoms)
        return (-entry.iteration, -entry.atom_count, entry.key, atoms)

    consumed: set[int] = set()
    tiles = []
    for entry, subset in sorted(matches, key=priority):
        if subset & consumed:
            continue
        consumed.update(subset)
        atoms = frozenset(a for i in subset for a in mt.tiles[i].atoms)
        tiles.append(Tile(atoms=atoms, key=entry.key, iteration=entry.iteration))
    leftovers = set(range(len(mt.tiles))) - consumed
    if leftovers:
        key = mt.tiles[min(leftovers)].key
        raise EncodingError(f"fragment {key!r} is not in the vocabulary")
    tiles.sort(key=lambda t: min(t.atoms))
    return MonomerTiling(graph=g, tiles=tiles, cut_bonds=mt.cut_bonds)


def tile_tree(mt: MonomerTiling) -> FragmentTree:
    """Lift a tiling to a fragment tree whose fragments are whole tiles."""
    g = mt.graph
    fragments = [build_fragment(g, set(tile.atoms)) for tile in mt.tiles]
    frag_of: dict[int, int] = {}
    for fi, tile in enumerate(mt.tiles):
        for atom in tile.atoms:
            frag_of[atom] = fi

    def port_id_at(fi: int, orig_atom: int, orig_partner: int) -> int:
        for port_id, pair in fragments[fi].port_partners.items():
            if pair == (orig_atom, orig_partner):
                return port_id
        raise EncodingError("tile port bookkeeping mismatch")

    edges = []
    for a, b in mt.cut_bonds:
        fa, fb = frag_of[a], frag_of[b]
        if fa == fb:
            continue
        edges.append(
            FragmentEdge(fa, port_id_at(fa, a, b), fb, port_id_at(fb, b, a))
        )
    end_ports = []
    for w in sorted(g.wildcard_indices()):
        host = g.neighbors(w)[0][0]
        end_ports.append((frag_of[host], port_id_at(frag_of[host], host, w)))
    return FragmentTree(fragments, edges, end_ports, source=g)


# ---------------------------------------------------------------------------
# Role-tagged canonical forms (marker minimization)

_ROLE_IN = 1
_ROLE_OUT = 2
_ROLE_GROUP_BASE = 10


def _key_graph(vocab: Vocabulary, key: str) -> tuple[MolGraph, dict[int, int]]:
    cache = getattr(vocab, "_key_graphs", None)
    if cache is None:
        cache = {}
        vocab._key_graphs = cache
    hit = cache.get(key)
    if hit is None:
        hit = parse_fragment_key(key)
        cache[key] = hit
    return hit


def _role_form(
    vocab: Vocabulary,
    key: str,
    in_id: int,
    out_id: int | None,
    group_tags: tuple[tuple[int, int], ...],
) -> str:
    """Canonical form of a subgroup with its ports tagged by wiring role.

    Two wirings of the same subgroup produce equal forms exactly when a port
    automorphism maps one onto the other (with sideline ports matched by the
    attached subtree identity), i.e. when they decode to isomorphic results.
    """
    cache = getattr(vocab, "_form_cache", None)
    if cache is None:
        cache = {}
        vocab._form_cache = cache
    cache_key = (key, in_id, out_id, group_tags)
    hit = cache.get(cache_key)
    if hit is not None:
        return hit
    graph, port_atoms = _key_graph(vocab, key)
    roles = {in_id: _ROLE_IN}
    if out_id is not None:
        roles[out_id] = _ROLE_OUT
    for port_id, tag in group_tags:
        roles[port_id] = _ROLE_GROUP_BASE + tag
    atoms = [replace(a) for a in graph.atoms]
    for port_id, atom_idx in port_atoms.items():
        atoms[atom_idx].map_num = roles[port_id]
    form = write_smiles(MolGraph(atoms, list(graph.bonds)))
    cache[cache_key] = form
    return form


def _choose_binding(
    vocab: Vocabulary,
    key: str,
    port_ids: list[int],
    actual_in: int,
    actual_out: int | None,
    subtree_tags: list[int],
) -> tuple[int, int | None]:
    """Smallest (in, out) wiring equivalent to the actual one.

    ``subtree_tags`` lists the sideline identity tags in emission order; for
    any candidate wiring they land on the remaining ports in ascending order.
    """

    def tags_for(in_id: int, out_id: int | None) -> tuple[tuple[int, int], ...]:
        rest = sorted(p for p in port_ids if p != in_id and p != out_id)
        return tuple(zip(rest, subtree_tags))

    actual_form = _role_form(
        vocab, key, actual_in, actual_out, tags_for(actual_in, actual_out)
    )
    if actual_out is None:
        candidates = [(i, None) for i in sorted(port_ids)]
    else:
        candidates = [
            (i, o)
            for i in sorted(port_ids)
            for o in sorted(port_ids)
            if i != o
        ]
    # Prefer the default wiring (no marker), then the smallest marker.
    default = _default_binding(port_ids, with_out=actual_out is not None)
    candidates.sort(key=lambda c: (c != default, c))
    for in_id, out_id in candidates:
        if (in_id, out_id) == (actual_in, actual_out):
            return actual_in, actual_out
        form = _role_form(vocab, key, in_id, out_id, tags_for(in_id, out_id))
        if form == actual_form:
            return in_id, out_id
    return actual_in, actual_out


def _default_binding(port_ids: list[int], with_out: bool) -> tuple[int, int | None]:
    in_id = min(port_ids)
    if not with_out:
        return in_id, None
    rest = [p for p in port_ids if p != in_id]
    return in_id, max(rest)


# ---------------------------------------------------------------------------
# Encoding


def encode(g: MolGraph, vocab: Vocabulary, tiling: MonomerTiling | None = None) -> HappyString:
    """Encode a repeat unit as a token string over ``vocab``.

    The mainline is traversed in the direction that makes the flattened
    sequence lexicographically smallest; sidelines nest depth-first in
    ascending host-port order. The result always decodes back to a graph
    isomorphic to the input.
    """
    mt = tiling if tiling is not None else compute_tiling(g, vocab)
    for tile in mt.tiles:
        if tile.key not in vocab.by_key:
            raise EncodingError(f"fragment {tile.key!r} is not in the vocabulary")
    tree = tile_tree(mt)
    decomposition = locate_mainline(tree)
    adj = tree.adjacency()

    token_of = {i: vocab.by_key[tile.key].token for i, tile in enumerate(mt.tiles)}
    subtree_key_cache: dict[int, str] = {}

    def subtree_identity(root: int, host: int) -> str:
        if root not in subtree_key_cache:
            members: set[int] = set()
            stack = [root]
            seen = {host, root}
            while stack:
                node = stack.pop()
                members.update(mt.tiles[node].atoms)
                for nbr, _ in adj[node]:
                    if nbr not in seen:
                        seen.add(nbr)
                        stack.append(nbr)
            subtree_key_cache[root] = build_fragment(g, members).canonical_key
        return subtree_key_cache[root]

    def edge_ports(edge: FragmentEdge, frag: int) -> int:
        return edge.a_port if edge.a == frag else edge.b_port

    def emit_unit(
        frag: int,
        in_port: int,
        out_port: int | None,
        branch_edges: list[tuple[int, int]],  # (host port, child frag)
        minimal: bool,
    ) -> HappyUnit:
        port_ids = [p.port_id for p in tree.fragments[frag].ports]
        branch_edges = sorted(branch_edges)
        keys = [subtree_identity(child, frag) for _, child in branch_edges]
        rank = {k: i for i, k in enumerate(sorted(set(keys)))}
        tags = [rank[k] for k in keys]
        key = tree.fragments[frag].canonical_key
        if minimal:
            chosen_in, chosen_out = _choose_binding(
                vocab, key, port_ids, in_port, out_port, tags
            )
        else:
            chosen_in, chosen_out = in_port, out_port
        default = _default_binding(port_ids, with_out=out_port is not None)
        unit = HappyUnit(token=token_of[frag])
        if (chosen_in, chosen_out) != default:
            unit.in_port = chosen_in
            unit.out_port = chosen_out
        unit.groups = [
            emit_chain(child, frag, host_port_unused=None, minimal=minimal)
            for (_, child) in branch_edges
        ]
        return unit

    def emit_chain(root: int, parent: int, host_port_unused, minimal: bool) -> list[HappyUnit]:
        # A sideline chain: spine continues through the default out port so
        # only in-markers can appear; remaining edges become nested groups.
        units: list[HappyUnit] = []
        node, prev = root, parent
        while True:
            in_port = None
            child_edges: list[tuple[int, int]] = []
            for nbr, edge in adj[node]:
                port = edge_ports(edge, node)
                if nbr == prev and in_port is None:
                    in_port = port
                else:
                    child_edges.append((port, nbr))
            if in_port is None:
                raise EncodingError("sideline chain lost its parent edge")
            if not child_edges:
                units.append(emit_unit(node, in_port, None, [], minimal))
                return units
            rest = sorted(p for p, _ in child_edges)
            spine_port = max(rest)
            spine_child = next(c for p, c in child_edges if p == spine_port)
            branches = [(p, c) for p, c in child_edges if p != spine_port]
            units.append(emit_unit(node, in_port, spine_port, branches, minimal))
            prev, node = node, spine_child

    def emit_mainline(order: list[int], minimal: bool) -> HappyString:
        ends = list(tree.end_ports)
        units: list[HappyUnit] = []
        for i, frag in enumerate(order):
            if i == 0:
                candidates = [p for f, p in ends if f == frag]
                in_port = candidates[0]
                ends.remove((frag, in_port))
            else:
                prev_edge = next(
                    e for n, e in adj[frag] if n == order[i - 1]
                )
                in_port = edge_ports(prev_edge, frag)
            if i + 1 < len(order):
                next_edge = next(e for n, e in adj[frag] if n == order[i + 1])
                out_port = edge_ports(next_edge, frag)
            else:
                out_port = next(p for f, p in ends if f == frag)
            branches = [
                (s.host_port_id, s.root)
                for s in decomposition.sidelines.get(frag, [])
            ]
            units.append(emit_unit(frag, in_port, out_port, branches, minimal))
        return HappyString(units)

    def emit_directions(minimal: bool) -> HappyString:
        forward = decomposition.mainline
        attempts = [forward, list(reversed(forward))]
        if len(forward) == 1 and len(set(tree.end_ports)) > 1:
            # Single-unit mainline: the two directions differ by which end
            # port is the entry; emit_mainline picks ends in list order.
            results = []
            for ends in (tree.end_ports, list(reversed(tree.end_ports))):
                saved = tree.end_ports
                tree.end_ports = list(ends)
                results.append(emit_mainline(forward, minimal))
                tree.end_ports = saved
            return min(results, key=flatten_key)
        return min((emit_mainline(order, minimal) for order in attempts), key=flatten_key)

    def flatten_key(h: HappyString) -> list[str]:
        return flatten(h)

    result = emit_directions(minimal=True)
    try:
        if graph_isomorphic(decode(result, vocab), g):
            return result
    except DecodeError:
        pass
    result = emit_directions(minimal=False)
    decoded = decode(result, vocab)
    if not graph_isomorphic(decoded, g):
        raise EncodingError("encoding verification failed")
    return result


# ---------------------------------------------------------------------------
# Decoding


def decode(h: HappyString, vocab: Vocabulary) -> MolGraph:
    """Instantiate and wire a token string back into a repeat-unit graph.

    Consecutive mainline units connect out-port to in-port with single bonds,
    sideline roots bond to their host ports, and the two free mainline end
    ports receive wildcard atoms. Unknown tokens and port-arity mismatches
    raise :class:`DecodeError`.
    """
    atoms: list[Atom] = []
    bonds: list[Bond] = []

    def instantiate(token: str) -> dict[int, int]:
        entry = vocab.by_token.get(token)
        if entry is None:
            raise DecodeError(f"unknown token {token!r}")
        graph, port_atoms = _key_graph(vocab, entry.key)
        offset = len(atoms)
        index_map: dict[int, int] = {}
        for idx, atom in enumerate(graph.atoms):
            if atom.is_wildcard:
                continue
            index_map[idx] = len(atoms)
            atoms.append(replace(atom, map_num=0))
        for bond in graph.bonds:
            if graph.atoms[bond.a].is_wildcard or graph.atoms[bond.b].is_wildcard:
                continue
            bonds.append(Bond(index_map[bond.a], index_map[bond.b], bond.order))
        ports: dict[int, int] = {}
        for port_id, w_idx in port_atoms.items():
            host = graph.neighbors(w_idx)[0][0]
            ports[port_id] = index_map[host]
        return ports

    def wire_chain(units: list[HappyUnit], mainline: bool) -> tuple[int, int | None]:
        first_in_atom: int | None = None
        prev_out_atom: int | None = None
        for i, unit in enumerate(units):
            ports = instantiate(unit.token)
            port_ids = sorted(ports)
            last = i == len(units) - 1
            has_out = mainline or not last
            in_id = unit.in_port if unit.in_port is not None else min(port_ids)
            if in_id not in ports:
                raise DecodeError(
                    f"token {unit.token!r} has no port {in_id} (ports {port_ids})"
                )
            rest = [p for p in port_ids if p != in_id]
            if has_out:
                out_id = unit.out_port if unit.out_port is not None else (
                    max(rest) if rest else None
                )
                if out_id is None or out_id not in rest:
                    raise DecodeError(
                        f"token {unit.token!r} cannot continue the chain: "
                        f"needs a free out port besides {in_id}"
                    )
                group_ids = [p for p in rest if p != out_id]
            else:
                if unit.out_port is not None:
                    raise DecodeError(
                        f"token {unit.token!r} ends a sideline but carries an out port"
                    )
                out_id = None
                group_ids = rest
            if len(unit.groups) != len(group_ids):
                raise DecodeError(
                    f"token {unit.token!r} has {len(group_ids)} open ports for "
                    f"sidelines but {len(unit.groups)} groups"
                )
            for gid, group in zip(group_ids, unit.groups):
                sub_in, _ = wire_chain(group, mainline=False)
                bonds.append(Bond(ports[gid], sub_in, SINGLE))
            if i == 0:
                first_in_atom = ports[in_id]
            else:
                bonds.append(Bond(prev_out_atom, ports[in_id], SINGLE))
            prev_out_atom = ports[out_id] if out_id is not None else None
        return first_in_atom, prev_out_atom

    if not h.units:
        raise DecodeError("empty token sequence")
    head, tail = wire_chain(h.units, mainline=True)
    for attach in (head, tail):
        atoms.append(Atom(WILDCARD))
        bonds.append(Bond(attach, len(atoms) - 1, SINGLE))
    result = MolGraph(atoms, bonds)
    report = check_valence(result)
    if not report.valid:
        raise DecodeError(f"decoded graph fails valence: {report.violations}")
    return result


def decode_string(text: str, vocab: Vocabulary) -> MolGraph:
    return decode(parse_happy(text), vocab)
