"""Dataset ingestion, validation, and cross-validation splits.

The on-disk format is CSV with a mandatory ``smiles`` column and optional
property columns ``tg_K``, ``tm_K``, ``eg_eV``, ``density_gcc``. Rows that
fail to parse, are not two-ended repeat units, or violate valence rules are
logged to a rejects file rather than aborting the run. Duplicate rows (same
canonical form) are dropped with a warning.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .molgraph import MolGraph, check_valence, parse_smiles, write_smiles

logger = logging.getLogger(__name__)

PROPERTY_KEYS = ("tg_K", "tm_K", "eg_eV", "density_gcc")


class DataError(Exception):
    """Raised for malformed dataset files or invalid split plans."""


@dataclass(frozen=True)
class DatasetRecord:
    smiles: str
    properties: dict[str, float] = field(default_factory=dict)

    def graph(self) -> MolGraph:
        return parse_smiles(self.smiles)


@dataclass(frozen=True)
class SplitPlan:
    n_folds: int = 5
    n_repeats: int = 1
    seed: int = 0


def _validate_row(smiles: str) -> str | None:
    """Return a rejection reason, or None if the row is a usable repeat unit."""
    try:
        g = parse_smiles(smiles)
    except Exception as err:  # noqa: BLE001 - reason goes to the rejects file
        return f"parse error: {err}"
    if len(g.wildcard_indices()) != 2:
        return f"expected 2 connection points, found {len(g.wildcard_indices())}"
    if not g.is_connected():
        return "disconnected structure"
    report = check_valence(g)
    if not report.valid:
        idx, reason = report.violations[0]
        return f"atom {idx}: {reason}"
    return None


def ingest(csv_path: str | Path, rejects_path: str | Path | None = None) -> list[DatasetRecord]:
    """Load and validate a dataset CSV.

    Returns one record per valid, canonically-unique row. Invalid rows are
    written to ``rejects_path`` (default: alongside the input with a
    ``.rejects.csv`` suffix) with their row number and reason.
    """
    csv_path = Path(csv_path)
    if rejects_path is None:
        rejects_path = csv_path.with_suffix(".rejects.csv")
    rejects_path = Path(rejects_path)

    with csv_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{csv_path}: empty file")
        if "smiles" not in reader.fieldnames:
            raise DataError(f"{csv_path}: missing required column 'smiles'")
        rows = list(reader)
    if not rows:
        raise DataError(f"{csv_path}: no data rows")

    records: list[DatasetRecord] = []
    rejects: list[tuple[int, str, str]] = []
    seen: dict[str, int] = {}
    for i, row in enumerate(rows, start=2):  # header is line 1
        smiles = (row.get("smiles") or "").strip()
        reason = _validate_row(smiles) if smiles else "empty smiles"
        if reason is not None:
            rejects.append((i, smiles, reason))
            continue
        canon = write_smiles(parse_smiles(smiles))
        if canon in seen:
            logger.warning(
                "%s line %d: duplicate of line %d (%s), dropped",
                csv_path, i, seen[canon], canon,
            )
            continue
        seen[canon] = i
        props: dict[str, float] = {}
        for key in PROPERTY_KEYS:
            raw = (row.get(key) or "").strip()
            if not raw:
                continue
            try:
                props[key] = float(raw)
            except ValueError:
                rejects.append((i, smiles, f"non-numeric {key}: {raw!r}"))
                props = {}
                break
        else:
            records.append(DatasetRecord(smiles=smiles, properties=props))

    with rejects_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line", "smiles", "reason"])
        writer.writerows(rejects)
    if rejects:
        logger.warning("%s: %d rows rejected, see %s", csv_path, len(rejects), rejects_path)
    return records


def kfold_split(records: list[DatasetRecord], plan: SplitPlan) -> list[list[list[int]]]:
    """Partition record indices into folds, once per repeat.

    Returns ``n_repeats`` partitions; each partition is a list of
    ``n_folds`` index lists whose sizes differ by at most one and whose
    union is every record index. Deterministic for a given plan.
    """
    n = len(records)
    if plan.n_folds < 2:
        raise DataError(f"n_folds must be >= 2, got {plan.n_folds}")
    if plan.n_repeats < 1:
        raise DataError(f"n_repeats must be >= 1, got {plan.n_repeats}")
    if n < plan.n_folds:
        raise DataError(f"cannot split {n} records into {plan.n_folds} folds")
    rng = np.random.default_rng(plan.seed)
    repeats: list[list[list[int]]] = []
    for _ in range(plan.n_repeats):
        order = rng.permutation(n)
        folds = [chunk.tolist() for chunk in np.array_split(order, plan.n_folds)]
        repeats.append(folds)
    return repeats


def load_bundled() -> list[DatasetRecord]:
    """Load the packaged monomer corpus."""
    source = resources.files("polyhappy.data").joinpath("monomers.csv")
    records: list[DatasetRecord] = []
    with source.open(newline="") as fh:
        for row in csv.DictReader(fh):
            props = {k: float(row[k]) for k in PROPERTY_KEYS if row.get(k)}
            records.append(DatasetRecord(smiles=row["smiles"], properties=props))
    return records
