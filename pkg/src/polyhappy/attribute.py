"""Integrated Gradients attribution over the descriptor-based oracle.

Attribution works on the (subgroups x descriptors) input: a monomer is tiled
into vocabulary subgroups, each contributing a row of scaled descriptor
values, and the pooled oracle predicts from the row mean. Integrated
Gradients along the straight path from an all-zero baseline yields one
attribution per matrix entry; row sums grouped by token give subgroup
importances, column sums give descriptor importances. The completeness gap
|sum(IG) - (f(x) - f(baseline))| is always reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .chemfeat import DESCRIPTOR_NAMES, apply_scaler, subgroup_descriptors
from .design import PropertyOracle
from .fragment import build_fragment
from .happy import Vocabulary, compute_tiling
from .molgraph import MolGraph


class AttributionError(Exception):
    """Raised for inconsistent inputs to the attribution routines."""


def integrated_gradients(
    f,
    grad_f,
    x: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = 200,
) -> np.ndarray:
    """Midpoint-rule path integral of grad_f from baseline to x.

    IG_i = (x_i - b_i) * mean over alpha in {(j - 0.5)/steps} of
    grad_f(b + alpha (x - b))_i. For linear f this is exact at any step
    count; f itself is only needed by callers checking completeness.
    """
    x = np.asarray(x, dtype=float)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=float)
    if b.shape != x.shape:
        raise AttributionError(f"baseline shape {b.shape} != input shape {x.shape}")
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    delta = x - b
    grads = np.array(
        [np.asarray(grad_f(b + ((j - 0.5) / steps) * delta), dtype=float)
         for j in range(1, steps + 1)]
    )
    if grads.shape[1:] != x.shape:
        raise AttributionError("grad_f output shape does not match input")
    return delta * grads.mean(axis=0)


def completeness_gap(f, x, baseline, attributions) -> float:
    total = math.fsum(np.asarray(attributions, dtype=float).ravel())
    return abs(total - (float(f(x)) - float(f(baseline))))


@dataclass(frozen=True)
class PooledOracleModel:
    """Linear property model over the mean of per-subgroup descriptor rows.

    The input matrix holds one row per subgroup, already restricted to the
    oracle's selected descriptors and min-max scaled; the prediction is
    bias + weights . mean(rows).
    """

    oracle: PropertyOracle

    def value(self, matrix: np.ndarray) -> float:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return float(self.oracle.weights @ matrix.mean(axis=0) + self.oracle.bias)

    def grad(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        rows = matrix.shape[0]
        return np.tile(self.oracle.weights / rows, (rows, 1))

    def input_matrix(self, g: MolGraph, vocab: Vocabulary) -> tuple[np.ndarray, list[str]]:
        """Scaled per-subgroup descriptor rows plus the parallel token list."""
        tiling = compute_tiling(g, vocab)
        tokens = [vocab.by_key[tile.key].token for tile in tiling.tiles]
        sel = list(self.oracle.selected)
        rows = []
        for tile in tiling.tiles:
            frag = build_fragment(g, set(tile.atoms))
            full = subgroup_descriptors(frag).values
            rows.append(apply_scaler(full[sel], self.oracle.scaler))
        return np.array(rows), tokens


@dataclass
class AttributionReport:
    attributions: np.ndarray  # (subgroups x selected descriptors)
    tokens: list[str]
    descriptor_names: list[str]
    completeness_gap: float

    @property
    def subgroup_totals(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for token, row in zip(self.tokens, self.attributions):
            out[token] = out.get(token, 0.0) + float(row.sum())
        return out

    @property
    def descriptor_totals(self) -> dict[str, float]:
        sums = self.attributions.sum(axis=0)
        return {name: float(v) for name, v in zip(self.descriptor_names, sums)}

    def to_dict(self) -> dict:
        return {
            "subgroups": [
                {"token": token, "value": value}
                for token, value in self.subgroup_totals.items()
            ],
            "descriptors": [
                {"name": name, "value": value}
                for name, value in self.descriptor_totals.items()
            ],
            "completeness_gap": self.completeness_gap,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def attribute_monomer(
    g: MolGraph,
    vocab: Vocabulary,
    oracle: PropertyOracle,
    steps: int = 200,
) -> AttributionReport:
    """Attribute the pooled oracle's prediction to subgroups and descriptors."""
    model = PooledOracleModel(oracle)
    matrix, tokens = model.input_matrix(g, vocab)
    shape = matrix.shape

    def f(flat: np.ndarray) -> float:
        return model.value(flat.reshape(shape))

    def grad(flat: np.ndarray) -> np.ndarray:
        return model.grad(flat.reshape(shape)).ravel()

    flat = matrix.ravel()
    attributions = integrated_gradients(f, grad, flat, steps=steps).reshape(shape)
    gap = completeness_gap(f, flat, np.zeros_like(flat), attributions)
    names = [DESCRIPTOR_NAMES[i] for i in oracle.selected]
    return AttributionReport(attributions, tokens, names, gap)
