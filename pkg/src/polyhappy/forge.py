"""Frequency-based subgroup vocabulary mining over fragment tilings.

Starting from the acyclic-bond fragments of each repeat unit, every iteration
counts all adjacent-tile-pair merges across the corpus (every occurrence
counts, including repeats within one monomer), promotes the candidates seen
strictly more than ``threshold`` times, rewrites the corpus greedily with the
promoted entries, and removes promoted entries whose post-rewrite frequency
fell strictly below the threshold (their tiles re-expand into the children
recorded at merge time). The loop runs to a fixpoint.

Merge candidates are only admissible when the merged subgroup keeps at most
two open cut bonds to the rest of the monomer; polymerization ends are not
counted against that limit, so backbone motifs can absorb the chain ends.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator

from .fragment import Fragment, build_fragment, fragment_acyclic
from .molgraph import MolGraph, parse_smiles, write_smiles


class MiningError(ValueError):
    pass


@dataclass
class MiningConfig:
    threshold: int = 100
    max_iterations: int = 50


@dataclass
class VocabularyEntry:
    token: str
    key: str
    atom_count: int
    iteration: int
    frequency: int


class Vocabulary:
    """Token table mapping names to port-annotated subgroup keys."""

    def __init__(
        self,
        entries: list[VocabularyEntry],
        threshold: int,
        corpus_hash: str | None = None,
    ):
        self.entries = entries
        self.threshold = threshold
        self.corpus_hash = corpus_hash
        self.by_key = {e.key: e for e in entries}
        self.by_token = {e.token: e for e in entries}
        if len(self.by_key) != len(entries) or len(self.by_token) != len(entries):
            raise MiningError("vocabulary keys and tokens must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.by_key

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "threshold": self.threshold,
            "corpus_hash": self.corpus_hash,
            "entries": [
                {
                    "token": e.token,
                    "key": e.key,
                    "atom_count": e.atom_count,
                    "iteration": e.iteration,
                    "frequency": e.frequency,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        entries = [
            VocabularyEntry(
                token=item["token"],
                key=item["key"],
                atom_count=item["atom_count"],
                iteration=item["iteration"],
                frequency=item["frequency"],
            )
            for item in payload["entries"]
        ]
        return cls(entries, payload["threshold"], payload.get("corpus_hash"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class Tile:
    """A vocabulary-entry occurrence: a connected set of monomer atoms."""

    atoms: frozenset[int]
    key: str
    iteration: int
    children: tuple["Tile", "Tile"] | None = None


@dataclass
class MonomerTiling:
    """One monomer's current partition into vocabulary tiles."""

    graph: MolGraph
    tiles: list[Tile]
    cut_bonds: list[tuple[int, int]]  # original acyclic single bonds
    _merge_cache: dict[frozenset, Fragment] = field(default_factory=dict, repr=False)

    def tile_of(self) -> dict[int, Tile]:
        lookup: dict[int, Tile] = {}
        for tile in self.tiles:
            for atom in tile.atoms:
                lookup[atom] = tile
        return lookup

    def adjacent_pairs(self) -> list[tuple[Tile, Tile]]:
        """Tile pairs joined by a cut bond, in original bond order."""
        lookup = self.tile_of()
        pairs = []
        seen = set()
        for a, b in self.cut_bonds:
            ta, tb = lookup[a], lookup[b]
            if ta is tb:
                continue
            pair_key = frozenset((ta.atoms, tb.atoms))
            if pair_key in seen:
                continue
            seen.add(pair_key)
            pairs.append((ta, tb))
        return pairs

    def merged_fragment(self, ta: Tile, tb: Tile) -> Fragment:
        union = ta.atoms | tb.atoms
        frag = self._merge_cache.get(union)
        if frag is None:
            frag = build_fragment(self.graph, set(union))
            self._merge_cache[union] = frag
        return frag


def _external_cut_ports(g: MolGraph, frag: Fragment) -> int:
    # Ports standing for cut bonds; wildcard (polymerization end) ports are
    # exempt from the attachment-point limit.
    return sum(
        1
        for _, partner in frag.port_partners.values()
        if not g.atoms[partner].is_wildcard
    )


def initial_tiling(g: MolGraph) -> MonomerTiling:
    """One tile per acyclic-bond fragment (iteration 0)."""
    return _initial(g)[0]


def _initial(g: MolGraph) -> tuple[MonomerTiling, list[Fragment]]:
    tree = fragment_acyclic(g)
    tiles = [
        Tile(atoms=frozenset(f.source_atoms), key=f.canonical_key, iteration=0)
        for f in tree.fragments
    ]
    cut_bonds = []
    for edge in tree.edges:
        fa = tree.fragments[edge.a]
        orig, partner = fa.port_partners[edge.a_port]
        cut_bonds.append((orig, partner))
    return MonomerTiling(graph=g, tiles=tiles, cut_bonds=cut_bonds), tree.fragments


def enumerate_candidates(tilings: list[MonomerTiling]) -> dict[str, int]:
    """Count admissible adjacent-pair merges across the whole corpus."""
    counts: dict[str, int] = {}
    for mt in tilings:
        for ta, tb in mt.adjacent_pairs():
            frag = mt.merged_fragment(ta, tb)
            if _external_cut_ports(mt.graph, frag) > 2:
                continue
            counts[frag.canonical_key] = counts.get(frag.canonical_key, 0) + 1
    return counts


def resolve_overlaps(
    mt: MonomerTiling, promoted: dict[str, VocabularyEntry]
) -> MonomerTiling:
    """Rewrite one monomer with the promoted entries, greedily.

    Matches are ranked by later entry iteration, then larger merged atom
    count, then lexicographically smaller key, then leftmost position; each
    tile joins at most one accepted merge.
    """
    matches = []
    for ta, tb in mt.adjacent_pairs():
        frag = mt.merged_fragment(ta, tb)
        if _external_cut_ports(mt.graph, frag) > 2:
            continue
        entry = promoted.get(frag.canonical_key)
        if entry is None:
            continue
        matches.append((ta, tb, frag, entry))
    matches.sort(
        key=lambda m: (
            -m[3].iteration,
            -m[2].atom_count,
            m[3].key,
            sorted(m[0].atoms | m[1].atoms),
        )
    )
    consumed: set[int] = set()
    replacements: dict[frozenset, Tile] = {}
    for ta, tb, frag, entry in matches:
        union = ta.atoms | tb.atoms
        if union & consumed:
            continue
        consumed |= union
        merged = Tile(
            atoms=union, key=entry.key, iteration=entry.iteration, children=(ta, tb)
        )
        replacements[ta.atoms] = merged
        replacements[tb.atoms] = None  # consumed into its partner
    new_tiles = []
    for tile in mt.tiles:
        if tile.atoms in replacements:
            merged = replacements[tile.atoms]
            if merged is not None:
                new_tiles.append(merged)
        else:
            new_tiles.append(tile)
    return MonomerTiling(
        graph=mt.graph,
        tiles=new_tiles,
        cut_bonds=mt.cut_bonds,
        _merge_cache=mt._merge_cache,
    )


def _frequencies(tilings: list[MonomerTiling]) -> dict[str, int]:
    freq: dict[str, int] = {}
    for mt in tilings:
        for tile in mt.tiles:
            freq[tile.key] = freq.get(tile.key, 0) + 1
    return freq


def _expand_tile(tile: Tile, live: set[str]) -> list[Tile]:
    if tile.key in live:
        return [tile]
    if tile.children is None:
        raise MiningError(f"cannot re-expand base fragment {tile.key!r}")
    out = []
    for child in tile.children:
        out.extend(_expand_tile(child, live))
    return out


def forge_step(
    tilings: list[MonomerTiling],
    entries: dict[str, VocabularyEntry],
    config: MiningConfig,
    iteration: int,
) -> tuple[list[MonomerTiling], bool]:
    """One promote / rewrite / prune round. Returns (tilings, changed)."""
    counts: dict[str, int] = {}
    samples: dict[str, Fragment] = {}
    for mt in tilings:
        for ta, tb in mt.adjacent_pairs():
            frag = mt.merged_fragment(ta, tb)
            if _external_cut_ports(mt.graph, frag) > 2:
                continue
            key = frag.canonical_key
            counts[key] = counts.get(key, 0) + 1
            samples.setdefault(key, frag)

    promoted_keys = sorted(k for k, c in counts.items() if c > config.threshold)
    changed = False
    promoted: dict[str, VocabularyEntry] = {}
    for key in promoted_keys:
        entry = entries.get(key)
        if entry is None:
            entry = VocabularyEntry(
                token="",
                key=key,
                atom_count=samples[key].atom_count,
                iteration=iteration,
                frequency=0,
            )
            entries[key] = entry
            changed = True
        promoted[key] = entry

    if promoted:
        before = [tuple(mt.tiles) for mt in tilings]
        tilings = [resolve_overlaps(mt, promoted) for mt in tilings]
        if any(tuple(mt.tiles) != old for mt, old in zip(tilings, before)):
            changed = True

    # Prune promoted entries that fell below threshold; re-evaluate until
    # stable since re-expansion shifts frequencies again.
    while True:
        freq = _frequencies(tilings)
        dead = sorted(
            key
            for key, entry in entries.items()
            if entry.iteration >= 1 and freq.get(key, 0) < config.threshold
        )
        if not dead:
            break
        changed = True
        for key in dead:
            del entries[key]
        live = set(entries)
        tilings = [
            MonomerTiling(
                graph=mt.graph,
                tiles=[t for tile in mt.tiles for t in _expand_tile(tile, live)],
                cut_bonds=mt.cut_bonds,
                _merge_cache=mt._merge_cache,
            )
            for mt in tilings
        ]
    return tilings, changed


def corpus_hash(graphs: list[MolGraph]) -> str:
    digest = hashlib.sha256()
    for g in graphs:
        digest.update(write_smiles(g).encode())
        digest.update(b"\n")
    return digest.hexdigest()


def forge_run(
    corpus: list[MolGraph], config: MiningConfig | None = None
) -> tuple[Vocabulary, list[MonomerTiling]]:
    """Mine a subgroup vocabulary from repeat-unit graphs.

    Runs promote/rewrite/prune rounds until nothing changes or
    ``max_iterations`` is hit. The returned vocabulary lists every base
    fragment key plus all surviving promoted entries, with final tiling
    frequencies; tokens are ``G`` plus a zero-padded index ordered by
    (iteration, key).
    """
    config = config or MiningConfig()
    if config.threshold < 1:
        raise MiningError("threshold must be >= 1")
    if not corpus:
        raise MiningError("empty corpus")
    tilings: list[MonomerTiling] = []
    entries: dict[str, VocabularyEntry] = {}
    for g in corpus:
        mt, fragments = _initial(g)
        tilings.append(mt)
        for frag in fragments:
            if frag.canonical_key not in entries:
                entries[frag.canonical_key] = VocabularyEntry(
                    token="",
                    key=frag.canonical_key,
                    atom_count=frag.atom_count,
                    iteration=0,
                    frequency=0,
                )

    def snapshot():
        return (
            tuple(sorted(entries)),
            tuple(tuple(t.key for t in mt.tiles) for mt in tilings),
        )

    # Fixpoint is state-based: a promote/rewrite/prune round that lands on a
    # previously seen state (e.g. a promotion immediately pruned away) ends
    # the loop even though events fired inside the round.
    seen = {snapshot()}
    for iteration in range(1, config.max_iterations + 1):
        tilings, changed = forge_step(tilings, entries, config, iteration)
        new_state = snapshot()
        if not changed or new_state in seen:
            break
        seen.add(new_state)

    freq = _frequencies(tilings)
    ordered = sorted(entries.values(), key=lambda e: (e.iteration, e.key))
    width = max(3, len(str(max(len(ordered) - 1, 0))))
    final_entries = [
        VocabularyEntry(
            token=f"G{i:0{width}d}",
            key=e.key,
            atom_count=e.atom_count,
            iteration=e.iteration,
            frequency=freq.get(e.key, 0),
        )
        for i, e in enumerate(ordered)
    ]
    vocab = Vocabulary(final_entries, config.threshold, corpus_hash(corpus))
    return vocab, tilings


class ForgeVocabularyMiner(BaseEstimator):
    """Estimator facade: fit a subgroup vocabulary, transform to token strings.

    Parameters
    ----------
    threshold : promotion/prune frequency bound (strict on both sides).
    max_iterations : cap on promote/rewrite/prune rounds.
    """

    def __init__(self, threshold: int = 100, max_iterations: int = 50):
        self.threshold = threshold
        self.max_iterations = max_iterations

    def _graphs(self, X) -> list[MolGraph]:
        return [parse_smiles(x) if isinstance(x, str) else x for x in X]

    def fit(self, X, y=None):
        config = MiningConfig(self.threshold, self.max_iterations)
        self.vocabulary_, self.tilings_ = forge_run(self._graphs(X), config)
        return self

    def transform(self, X) -> list[str]:
        from .happy import encode, flatten

        self._check_fitted()
        return [
            " ".join(flatten(encode(g, self.vocabulary_))) for g in self._graphs(X)
        ]

    def inverse_transform(self, X: list[str]) -> list[str]:
        from .happy import decode_string

        self._check_fitted()
        return [write_smiles(decode_string(s, self.vocabulary_)) for s in X]

    def _check_fitted(self):
        if not hasattr(self, "vocabulary_"):
            raise RuntimeError("miner is not fitted; call fit(corpus) first")
