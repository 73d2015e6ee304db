"""Evaluation metrics for generated repeat-unit batches.

A batch keeps three parallel lists: the raw generated strings, the decoded
graphs (None where decoding or valence checking failed), and Morgan
fingerprints for the valid entries. Fraction metrics are computed over the
valid subset; specificity divides by the full batch size. Entropy uses the
natural log throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .chemfeat import Fingerprint, atom_environments, morgan_fingerprint, tanimoto
from .happy import HappyString, Vocabulary, decode_string, parse_happy
from .molgraph import (
    MolGraph,
    canonical_form,
    check_valence,
    find_rings,
    parse_smiles,
    strip_wildcards,
)

NORMALIZATION_TOL = 1e-9


class MetricError(Exception):
    """Raised when a metric is undefined for the given inputs."""


# ---------------------------------------------------------------------------
# Batches and references


@dataclass
class GenerationBatch:
    samples: list[str]
    decoded: list[MolGraph | None]
    fingerprints: list[Fingerprint | None]

    def __post_init__(self) -> None:
        if not (len(self.samples) == len(self.decoded) == len(self.fingerprints)):
            raise ValueError("batch lists must be parallel")
        for g, fp in zip(self.decoded, self.fingerprints):
            if (g is None) != (fp is None):
                raise ValueError("fingerprint present iff decoded present")

    @classmethod
    def from_samples(
        cls, samples: list[str], vocab: Vocabulary | None = None
    ) -> "GenerationBatch":
        """Decode raw strings; with a vocabulary they are token strings,
        without one they are read as SMILES."""
        decoded: list[MolGraph | None] = []
        fps: list[Fingerprint | None] = []
        for text in samples:
            g: MolGraph | None
            try:
                g = decode_string(text, vocab) if vocab is not None else parse_smiles(text)
                if not check_valence(g).valid:
                    g = None
            except Exception:  # noqa: BLE001 - any failure marks the sample invalid
                g = None
            decoded.append(g)
            fps.append(morgan_fingerprint(g) if g is not None else None)
        return cls(samples, decoded, fps)

    @property
    def valid_indices(self) -> list[int]:
        return [i for i, g in enumerate(self.decoded) if g is not None]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class EnvironmentTable:
    """Circular-environment frequency table fitted on a reference corpus."""

    counts: dict[str, int]

    @classmethod
    def fit(cls, graphs: list[MolGraph], radius: int = 2) -> "EnvironmentTable":
        counts: dict[str, int] = {}
        for g in graphs:
            for env in atom_environments(g, radius):
                counts[env] = counts.get(env, 0) + 1
        return cls(counts)

    @property
    def max_count(self) -> int:
        return max(self.counts.values(), default=0)


@dataclass(frozen=True)
class TrainingReference:
    canonical: frozenset[str]
    fingerprints: tuple[Fingerprint, ...]
    env_table: EnvironmentTable


def build_reference(graphs: list[MolGraph]) -> TrainingReference:
    return TrainingReference(
        canonical=frozenset(canonical_form(g) for g in graphs),
        fingerprints=tuple(morgan_fingerprint(g) for g in graphs),
        env_table=EnvironmentTable.fit(graphs),
    )


# ---------------------------------------------------------------------------
# Fraction metrics


def validity_fraction(batch: GenerationBatch) -> float:
    if not batch.samples:
        raise MetricError("empty batch")
    return len(batch.valid_indices) / len(batch.samples)


def novelty_fraction(batch: GenerationBatch, reference: TrainingReference) -> float:
    """Fraction of valid samples whose canonical form is absent from training."""
    valid = batch.valid_indices
    if not valid:
        raise MetricError("novelty undefined: no valid samples")
    novel = sum(
        1 for i in valid if canonical_form(batch.decoded[i]) not in reference.canonical
    )
    return novel / len(valid)


def nearest_train_similarity(
    fp: Fingerprint, train: tuple[Fingerprint, ...] | list[Fingerprint]
) -> float:
    if not train:
        raise MetricError("empty training reference")
    return max(tanimoto(fp, t) for t in train)


def mean_similarity(batch: GenerationBatch, reference: TrainingReference) -> float:
    """Batch mean of each valid sample's nearest-neighbor Tanimoto."""
    valid = batch.valid_indices
    if not valid:
        raise MetricError("similarity undefined: no valid samples")
    return float(
        np.mean(
            [
                nearest_train_similarity(batch.fingerprints[i], reference.fingerprints)
                for i in valid
            ]
        )
    )


def internal_diversity(batch: GenerationBatch, k: int = 10) -> float:
    """Mean over valid samples of (1 - sim) to their k most similar peers."""
    valid = batch.valid_indices
    if len(valid) < 2:
        raise MetricError("diversity undefined: fewer than 2 valid samples")
    fps = [batch.fingerprints[i] for i in valid]
    per_sample = []
    for i, fp in enumerate(fps):
        sims = sorted(
            (tanimoto(fp, other) for j, other in enumerate(fps) if j != i),
            reverse=True,
        )
        top = sims[: min(k, len(sims))]
        per_sample.append(float(np.mean([1.0 - s for s in top])))
    return float(np.mean(per_sample))


def _nearest_index(fp: Fingerprint, train: tuple[Fingerprint, ...]) -> int:
    # ties resolve to the lowest training index
    best, best_sim = 0, -1.0
    for j, t in enumerate(train):
        s = tanimoto(fp, t)
        if s > best_sim:
            best, best_sim = j, s
    return best


def specificity(batch: GenerationBatch, reference: TrainingReference) -> float:
    """Mean over valid samples of 1 - (share of the batch mapping to the same
    nearest training neighbor). The denominator is the full batch size."""
    valid = batch.valid_indices
    if not valid:
        raise MetricError("specificity undefined: no valid samples")
    if not reference.fingerprints:
        raise MetricError("empty training reference")
    nearest = {
        i: _nearest_index(batch.fingerprints[i], reference.fingerprints) for i in valid
    }
    counts: dict[int, int] = {}
    for t in nearest.values():
        counts[t] = counts.get(t, 0) + 1
    n = len(batch.samples)
    return float(np.mean([1.0 - counts[nearest[i]] / n for i in valid]))


# ---------------------------------------------------------------------------
# Entropy


def policy_entropy(distributions: list[list[np.ndarray]]) -> float:
    """Mean step entropy (natural log) pooled over all steps of all samples."""
    entropies = []
    for sequence in distributions:
        for step in sequence:
            p = np.asarray(step, dtype=float)
            if abs(float(p.sum()) - 1.0) > NORMALIZATION_TOL:
                raise MetricError(f"distribution sums to {p.sum()!r}, not 1")
            nz = p[p > 0]
            entropies.append(float(-(nz * np.log(nz)).sum()))
    if not entropies:
        raise MetricError("no decoding steps")
    return float(np.mean(entropies))


# ---------------------------------------------------------------------------
# Scaffold matching


def _attributed_nx(g: MolGraph) -> nx.Graph:
    out = nx.Graph()
    for i, atom in enumerate(g.atoms):
        out.add_node(i, element=atom.element, aromatic=atom.aromatic)
    for bond in g.bonds:
        out.add_edge(bond.a, bond.b, order=bond.order)
    return out


def contains_subgraph(g: MolGraph, scaffold: MolGraph) -> bool:
    """Port-ignoring containment: wildcards are removed from both sides and
    the scaffold skeleton is matched as a (non-induced) subgraph."""
    host = _attributed_nx(strip_wildcards(g, cap_with_h=False))
    pattern = _attributed_nx(strip_wildcards(scaffold, cap_with_h=False))
    matcher = nx.algorithms.isomorphism.GraphMatcher(
        host,
        pattern,
        node_match=lambda a, b: a["element"] == b["element"]
        and a["aromatic"] == b["aromatic"],
        edge_match=lambda a, b: a["order"] == b["order"],
    )
    return matcher.subgraph_is_monomorphic()


def unit_tokens(h: HappyString) -> list[str]:
    out = []

    def walk(units) -> None:
        for u in units:
            out.append(u.token)
            for grp in u.groups:
                walk(grp)

    walk(h.units)
    return out


def scaffold_fraction(
    batch: GenerationBatch,
    scaffold: str | MolGraph,
    mode: str = "token",
    vocab: Vocabulary | None = None,
) -> float:
    """Fraction of valid samples containing the scaffold.

    Token mode counts samples whose token string uses the scaffold token and
    requires the vocabulary; subgraph mode matches a scaffold graph inside
    each decoded sample, ignoring connection points.
    """
    valid = batch.valid_indices
    if not valid:
        raise MetricError("scaffold fraction undefined: no valid samples")
    if mode == "token":
        if not isinstance(scaffold, str):
            raise MetricError("token mode expects a scaffold token")
        if vocab is None or scaffold not in vocab.by_token:
            raise MetricError(f"unknown scaffold token: {scaffold}")
        hits = 0
        for i in valid:
            try:
                tokens = unit_tokens(parse_happy(batch.samples[i]))
            except Exception:  # noqa: BLE001 - raw SMILES sample, no tokens
                continue
            if scaffold in tokens:
                hits += 1
        return hits / len(valid)
    if mode == "subgraph":
        if not isinstance(scaffold, MolGraph):
            raise MetricError("subgraph mode expects a scaffold graph")
        hits = sum(1 for i in valid if contains_subgraph(batch.decoded[i], scaffold))
        return hits / len(valid)
    raise MetricError(f"unknown scaffold mode: {mode}")


# ---------------------------------------------------------------------------
# Synthesizability


def sa_score(g: MolGraph, table: EnvironmentTable) -> float:
    """Synthesizability estimate in [1, 10]; 1 is easiest.

    Familiarity is the mean log count of the molecule's circular
    environments in the reference table (unseen environments count as 0.5).
    Complexity adds a superlinear size penalty plus fused-ring and
    macrocycle terms. The difference is affinely mapped onto [1, 10]: the
    floor corresponds to a ring-free molecule built entirely from the
    table's most common environment, the ceiling to an all-unseen molecule
    with complexity 2.5 or more.
    """
    if not table.counts:
        raise MetricError("empty reference corpus")
    envs = atom_environments(g)
    if not envs:
        raise MetricError("empty molecule")
    familiarity = float(np.mean([math.log(table.counts.get(e, 0) or 0.5) for e in envs]))
    heavy = len([a for a in g.atoms if not a.is_wildcard and a.element != "H"])
    rings = find_rings(g)
    fused = sum(
        1
        for i in range(len(rings))
        for j in range(i + 1, len(rings))
        if len(rings[i] & rings[j]) >= 2
    )
    macro = sum(1 for r in rings if len(r) > 8)
    complexity = (heavy**1.005 - heavy) + math.log10(fused + 1) + math.log10(macro + 1)
    raw = complexity - familiarity
    lo = -math.log(table.max_count)
    hi = -math.log(0.5) + 2.5
    score = 1.0 + 9.0 * (raw - lo) / (hi - lo)
    return float(min(10.0, max(1.0, score)))


def mean_sa(batch: GenerationBatch, reference: TrainingReference) -> float:
    valid = batch.valid_indices
    if not valid:
        raise MetricError("SA undefined: no valid samples")
    return float(np.mean([sa_score(batch.decoded[i], reference.env_table) for i in valid]))


# ---------------------------------------------------------------------------
# Aggregate report


@dataclass
class MetricsReport:
    validity: float
    novelty: float | None = None
    mean_similarity: float | None = None
    internal_diversity: float | None = None
    mean_sa: float | None = None
    specificity: float | None = None
    entropy: float | None = None
    scaffold_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "validity": self.validity,
            "novelty": self.novelty,
            "mean_similarity": self.mean_similarity,
            "internal_diversity": self.internal_diversity,
            "mean_sa": self.mean_sa,
            "specificity": self.specificity,
            "entropy": self.entropy,
            "scaffold_fraction": self.scaffold_fraction,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_batch(
    batch: GenerationBatch,
    reference: TrainingReference,
    scaffold: str | MolGraph | None = None,
    scaffold_mode: str = "token",
    vocab: Vocabulary | None = None,
    distributions: list[list[np.ndarray]] | None = None,
) -> MetricsReport:
    """Compute every applicable metric; undefined ones are left as None."""
    report = MetricsReport(validity=validity_fraction(batch))

    def attempt(fn):
        try:
            return fn()
        except MetricError:
            return None

    report.novelty = attempt(lambda: novelty_fraction(batch, reference))
    report.mean_similarity = attempt(lambda: mean_similarity(batch, reference))
    report.internal_diversity = attempt(lambda: internal_diversity(batch))
    report.mean_sa = attempt(lambda: mean_sa(batch, reference))
    report.specificity = attempt(lambda: specificity(batch, reference))
    if distributions is not None:
        report.entropy = policy_entropy(distributions)
    if scaffold is not None:
        report.scaffold_fraction = attempt(
            lambda: scaffold_fraction(batch, scaffold, scaffold_mode, vocab)
        )
    return report
