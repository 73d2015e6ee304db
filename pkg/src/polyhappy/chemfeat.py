"""Fixed descriptor vectors, scaling, selection, and Morgan fingerprints.

The descriptor schema is a deliberate 20-value contract (names in
``DESCRIPTOR_NAMES``) covering composition, rings, flexibility, and the
autocorrelation/ionization channels used by the attribution reports. All
computations treat wildcard atoms as hydrogen caps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .fragment import Fragment
from .molgraph import (
    AROMATIC,
    DOUBLE,
    SINGLE,
    TRIPLE,
    MolGraph,
    find_rings,
    ring_bonds,
    strip_wildcards,
)

# Standard atomic property tables (CRC values, rounded).
ATOMIC_MASS = {
    "H": 1.008, "B": 10.811, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.086, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "Br": 79.904, "I": 126.904,
}
VALENCE_ELECTRONS = {
    "H": 1, "B": 3, "C": 4, "N": 5, "O": 6, "F": 7, "Si": 4, "P": 5,
    "S": 6, "Cl": 7, "Br": 7, "I": 7,
}
POLARIZABILITY = {  # dipole polarizability, angstrom^3
    "H": 0.667, "B": 3.03, "C": 1.76, "N": 1.10, "O": 0.802, "F": 0.557,
    "Si": 5.38, "P": 3.63, "S": 2.90, "Cl": 2.18, "Br": 3.05, "I": 5.35,
}
IONIZATION_EV = {  # first ionization energy, eV
    "H": 13.598, "B": 8.298, "C": 11.260, "N": 14.534, "O": 13.618,
    "F": 17.423, "Si": 8.152, "P": 10.487, "S": 10.360, "Cl": 12.968,
    "Br": 11.814, "I": 10.451,
}

DESCRIPTOR_NAMES = [
    "mol_weight",
    "heavy_atoms",
    "ring_count",
    "aromatic_rings",
    "six_membered_rings",
    "rotatable_bonds",
    "rigidity",
    "sp3_carbon_fraction",
    "sp2_atoms",
    "double_bonds",
    "triple_bonds",
    "nitrogen_count",
    "oxygen_count",
    "sulfur_count",
    "halogen_count",
    "h_bond_donors",
    "h_bond_acceptors",
    "valence_electron_adjacency",
    "polarizability_adjacency",
    "mean_ionization_energy",
]

_HALOGENS = {"F", "Cl", "Br", "I"}


@dataclass
class DescriptorVector:
    values: np.ndarray
    names: list[str]

    def __post_init__(self):
        assert len(self.values) == len(self.names)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}


def _rotatable_bonds(g: MolGraph, in_ring: set[frozenset]) -> int:
    # single, non-aromatic, acyclic, and both endpoints are heavy atoms
    # bonded to at least two other heavy atoms (terminal bonds excluded)
    heavy_degree = [
        sum(1 for n, _ in g.neighbors(i) if g.atoms[n].element != "H")
        for i in range(len(g.atoms))
    ]
    count = 0
    for b in g.bonds:
        if b.order != SINGLE:
            continue
        if frozenset((b.a, b.b)) in in_ring:
            continue
        if g.atoms[b.a].element == "H" or g.atoms[b.b].element == "H":
            continue
        if heavy_degree[b.a] >= 2 and heavy_degree[b.b] >= 2:
            count += 1
    return count


def compute_descriptors(g: MolGraph) -> DescriptorVector:
    """Fixed 20-descriptor vector; wildcards are treated as hydrogen caps.

    sp2 atoms are aromatic atoms plus atoms carrying exactly one double bond
    (and no triple); sp3 carbons are non-aromatic carbons with single bonds
    only. Both autocorrelations are lag-1 Moreau-Broto sums of the atomic
    property product over all heavy-heavy bonds.
    """
    if any(a.is_wildcard for a in g.atoms):
        g = strip_wildcards(g)
    atoms = g.atoms
    rings = find_rings(g)
    in_ring = ring_bonds(g)

    weight = sum(
        ATOMIC_MASS[a.element] + a.explicit_h * ATOMIC_MASS["H"] for a in atoms
    )
    heavy = sum(1 for a in atoms if a.element != "H")
    aromatic_rings = sum(
        1 for r in rings if all(atoms[i].aromatic for i in r)
    )
    six_rings = sum(1 for r in rings if len(r) == 6)
    rotatable = _rotatable_bonds(g, in_ring)
    acyclic_heavy = sum(
        1
        for b in g.bonds
        if frozenset((b.a, b.b)) not in in_ring
        and atoms[b.a].element != "H"
        and atoms[b.b].element != "H"
    )
    rigidity = 1.0 if acyclic_heavy == 0 else 1.0 - rotatable / acyclic_heavy

    double_ct = {i: 0 for i in range(len(atoms))}
    triple_ct = {i: 0 for i in range(len(atoms))}
    for b in g.bonds:
        if b.order == DOUBLE:
            double_ct[b.a] += 1
            double_ct[b.b] += 1
        elif b.order == TRIPLE:
            triple_ct[b.a] += 1
            triple_ct[b.b] += 1
    carbons = [i for i, a in enumerate(atoms) if a.element == "C"]
    sp3_carbons = [
        i
        for i in carbons
        if not atoms[i].aromatic and double_ct[i] == 0 and triple_ct[i] == 0
    ]
    sp3_fraction = len(sp3_carbons) / len(carbons) if carbons else 0.0
    sp2 = sum(
        1
        for i, a in enumerate(atoms)
        if a.element != "H"
        and (a.aromatic or (double_ct[i] == 1 and triple_ct[i] == 0))
    )

    n_double = sum(1 for b in g.bonds if b.order == DOUBLE)
    n_triple = sum(1 for b in g.bonds if b.order == TRIPLE)
    n_count = sum(1 for a in atoms if a.element == "N")
    o_count = sum(1 for a in atoms if a.element == "O")
    s_count = sum(1 for a in atoms if a.element == "S")
    halogens = sum(1 for a in atoms if a.element in _HALOGENS)
    donors = sum(
        1 for a in atoms if a.element in ("N", "O") and a.explicit_h >= 1
    )
    acceptors = n_count + o_count

    valence_auto = 0.0
    polar_auto = 0.0
    for b in g.bonds:
        ea, eb = atoms[b.a].element, atoms[b.b].element
        if ea == "H" or eb == "H":
            continue
        valence_auto += VALENCE_ELECTRONS[ea] * VALENCE_ELECTRONS[eb]
        polar_auto += POLARIZABILITY[ea] * POLARIZABILITY[eb]
    heavies = [a for a in atoms if a.element != "H"]
    mean_ie = (
        sum(IONIZATION_EV[a.element] for a in heavies) / len(heavies)
        if heavies
        else 0.0
    )

    values = np.array(
        [
            weight,
            float(heavy),
            float(len(rings)),
            float(aromatic_rings),
            float(six_rings),
            float(rotatable),
            rigidity,
            sp3_fraction,
            float(sp2),
            float(n_double),
            float(n_triple),
            float(n_count),
            float(o_count),
            float(s_count),
            float(halogens),
            float(donors),
            float(acceptors),
            valence_auto,
            polar_auto,
            mean_ie,
        ],
        dtype=float,
    )
    return DescriptorVector(values, DESCRIPTOR_NAMES)


def subgroup_descriptors(f: Fragment) -> DescriptorVector:
    """Descriptors of a fragment with every port capped by a hydrogen."""
    atoms = [replace(a) for a in f.graph.atoms]
    for port in f.ports:
        atoms[port.atom].explicit_h += 1
    capped = MolGraph(atoms, list(f.graph.bonds))
    return compute_descriptors(capped)


# ---------------------------------------------------------------------------
# Scaling and selection


@dataclass
class ScalerParams:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        assert np.all(self.mins <= self.maxs)


def fit_scaler(vectors: list[np.ndarray] | np.ndarray) -> ScalerParams:
    data = np.asarray(vectors, dtype=float)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("need at least one vector to fit")
    return ScalerParams(mins=data.min(axis=0), maxs=data.max(axis=0))


def apply_scaler(v: np.ndarray, p: ScalerParams) -> np.ndarray:
    """(x - min) / (max - min); degenerate columns map to 0, no clamping."""
    v = np.asarray(v, dtype=float)
    span = p.maxs - p.mins
    out = np.zeros_like(v)
    ok = span > 0
    out[ok] = (v[ok] - p.mins[ok]) / span[ok]
    return out


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length series of size >= 2")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = math.sqrt(float(xd @ xd))
    sy = math.sqrt(float(yd @ yd))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("undefined correlation: zero variance")
    return float(xd @ yd) / (sx * sy)


def select_descriptors(dataset, target, k: int) -> list[int]:
    """Indices of the k descriptors most correlated with the target.

    |r| ranks descending; zero-variance columns count as |r| = 0; ties keep
    schema order.
    """
    data = np.asarray(dataset, dtype=float)
    if k > data.shape[1]:
        raise ValueError(f"k={k} exceeds descriptor count {data.shape[1]}")
    scores = []
    for j in range(data.shape[1]):
        try:
            r = abs(pearson(data[:, j], target))
        except ValueError:
            r = 0.0
        scores.append((-r, j))
    return [j for _, j in sorted(scores)[:k]]


# ---------------------------------------------------------------------------
# Morgan fingerprints

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def atom_environments(g: MolGraph, radius: int = 2) -> list[str]:
    """Canonical circular-environment strings for radii 0..radius.

    The radius-0 string encodes (element, charge, aromatic, H count); each
    higher radius appends the sorted (bond token, neighbor environment)
    list from the previous radius, so equal strings mean isomorphic
    neighborhoods. Wildcards are capped to hydrogens first.
    """
    if any(a.is_wildcard for a in g.atoms):
        g = strip_wildcards(g)
    bond_tok = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}
    current = [
        f"{a.element}{a.formal_charge:+d}{'a' if a.aromatic else ''}H{a.explicit_h}"
        for a in g.atoms
    ]
    all_envs = list(current)
    for _ in range(radius):
        nxt = []
        for i in range(len(g.atoms)):
            parts = sorted(
                bond_tok[bond.order] + current[n] for n, bond in g.neighbors(i)
            )
            nxt.append(current[i] + "(" + ",".join(parts) + ")")
        current = nxt
        all_envs.extend(current)
    return all_envs


@dataclass
class Fingerprint:
    """Fixed-width bit vector held as an int bitmask."""

    bits: int
    n_bits: int = 1024

    def count(self) -> int:
        return self.bits.bit_count()

    def to_hex(self) -> str:
        return format(self.bits, f"0{self.n_bits // 4}x")

    @classmethod
    def from_hex(cls, text: str, n_bits: int = 1024) -> "Fingerprint":
        if len(text) != n_bits // 4:
            raise ValueError(f"expected {n_bits // 4} hex chars, got {len(text)}")
        return cls(bits=int(text, 16), n_bits=n_bits)


def morgan_fingerprint(g: MolGraph, radius: int = 2, n_bits: int = 1024) -> Fingerprint:
    bits = 0
    for env in atom_environments(g, radius):
        bits |= 1 << (fnv1a_64(env.encode()) % n_bits)
    return Fingerprint(bits=bits, n_bits=n_bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.n_bits != b.n_bits:
        raise ValueError("fingerprint lengths differ")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


# ---------------------------------------------------------------------------
# Estimator facades


class DescriptorFeaturizer(BaseEstimator, TransformerMixin):
    """Stateless transformer: SMILES or MolGraph inputs to descriptor rows."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        from .molgraph import parse_smiles

        rows = []
        for item in X:
            g = parse_smiles(item) if isinstance(item, str) else item
            rows.append(compute_descriptors(g).values)
        return np.asarray(rows)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(DESCRIPTOR_NAMES, dtype=object)


class DescriptorMinMaxScaler(BaseEstimator, TransformerMixin):
    """Min-max scaler with the degenerate-column-to-zero contract."""

    def fit(self, X, y=None):
        self.params_ = fit_scaler(np.asarray(X, dtype=float))
        return self

    def transform(self, X) -> np.ndarray:
        return np.vstack([apply_scaler(row, self.params_) for row in np.asarray(X)])


class PearsonSelector(BaseEstimator, TransformerMixin):
    """Keep the k columns with the largest |Pearson r| against y."""

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y):
        self.selected_ = select_descriptors(np.asarray(X, dtype=float), y, self.k)
        return self

    def transform(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float)[:, self.selected_]


class MorganFingerprinter(BaseEstimator, TransformerMixin):
    """Transform SMILES or MolGraphs into fingerprint bit rows."""

    def __init__(self, radius: int = 2, n_bits: int = 1024):
        self.radius = radius
        self.n_bits = n_bits

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list[Fingerprint]:
        from .molgraph import parse_smiles

        out = []
        for item in X:
            g = parse_smiles(item) if isinstance(item, str) else item
            out.append(morgan_fingerprint(g, self.radius, self.n_bits))
        return out
