"""Generate the bundled repeat-unit corpus with synthetic property columns.

Monomers are drawn from common polymer families plus systematic variations,
validated with the package's own parser, deduplicated by canonical form, and
written to src/polyhappy/data/monomers.csv. Property columns are smooth
deterministic functions of the descriptor vector with small seeded noise so
that oracle training has recoverable signal.

Run from the repository root:  python3 tools/make_corpus.py
"""

from __future__ import annotations

import csv
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from polyhappy.chemfeat import compute_descriptors
from polyhappy.molgraph import check_valence, parse_smiles, write_smiles

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "polyhappy" / "data" / "monomers.csv"


def candidates() -> list[str]:
    out: list[str] = []

    # Classic addition polymers.
    out += [
        "*CC*", "*CCC*", "*CCCC*", "*CCCCC*", "*CCCCCC*", "*CCCCCCC*",
        "*CCCCCCCC*",
        "*CC(*)C", "*CC(*)CC", "*CC(*)CCC", "*CC(*)C(C)C",
        "*C(F)(F)C(F)(F)*", "*CC(F)(F)*", "*C(F)(F)C(F)(F)O*",
        "*CC(*)O", "*CC(*)OC(=O)C",
    ]

    # Vinyl family: *CC(*)R over recurring substituents.
    vinyl_r = [
        "c1ccccc1", "Cl", "F", "C#N", "c1ccc(C)cc1", "c1ccc(Cl)cc1",
        "c1ccc(F)cc1", "c1ccc(OC)cc1", "c1ccncc1", "C(=O)N", "OC",
        "c1ccc(C(C)(C)C)cc1", "c1ccc(Br)cc1", "C(=O)O", "c1ccc(C#N)cc1",
        "c1ccc2ccccc2c1",
    ]
    out += [f"*CC(*){r}" for r in vinyl_r]

    # Acrylates and methacrylates over an ester alcohol series.
    esters = ["C", "CC", "CCC", "CCCC", "CC(C)C", "CCCCCC", "CCO", "CC(C)(C)C"]
    out += [f"*CC(*)C(=O)O{r}" for r in esters]
    out += [f"*CC(*)(C)C(=O)O{r}" for r in esters]

    # Polyethers and polyacetals.
    out += [
        "*OCC*", "*OCCC*", "*OCCCC*", "*OCCCCC*", "*OCCCCCC*", "*OC*",
        "*OCCOCC*", "*OCCOCCOCC*", "*OCC(C)*", "*OCC(CC)*",
    ]

    # Polyesters: diacid x diol grid.
    diacids = ["CC", "CCCC", "CCCCCC", "c1ccc(cc1)"]
    diols = ["CC", "CCC", "CCCC", "CCCCCC"]
    for da in diacids:
        for do in diols:
            out.append(f"*OC(=O){da}C(=O)O{do}*")
    out += [
        "*OCCOC(=O)c1ccc(cc1)C(*)=O",
        "*OCCCCOC(=O)c1ccc(cc1)C(*)=O",
        "*OCCOC(=O)c1cccc(c1)C(*)=O",
        "*OCC(C)OC(=O)c1ccc(cc1)C(*)=O",
        "*OC(=O)CCCCC(=O)OCCOCC*",
    ]

    # Polyamides: lactam series plus diamine x diacid grid.
    out += [f"*N{'C' * n}C(*)=O" for n in range(3, 9)]
    diamines = ["CCCCCC", "CCCC", "CC"]
    for dn in diamines:
        for da in ["CCCC", "CCCCCC", "c1ccc(cc1)"]:
            out.append(f"*N{dn}NC(=O){da}C(*)=O")
    out += [
        "*Nc1ccc(cc1)NC(=O)c1ccc(cc1)C(*)=O",
        "*Nc1cccc(c1)NC(=O)c1ccc(cc1)C(*)=O",
        "*Nc1ccc(cc1)NC(=O)CCCCC(*)=O",
    ]

    # Polyurethane-like carbamate backbones.
    out += [
        "*NC(=O)OCCOC(=O)N{0}*".format(""),
        "*NCCCCCCNC(=O)OCCOC(*)=O",
        "*NC(=O)Oc1ccc(cc1)OC(*)=O",
    ]

    # Aromatic mainline engineering polymers.
    out += [
        "*c1ccc(*)cc1", "*c1ccc(cc1)c1ccc(*)cc1", "*Cc1ccc(C*)cc1",
        "*Oc1ccc(*)cc1", "*Sc1ccc(*)cc1", "*Oc1ccc(cc1)c1ccc(*)cc1",
        "*Oc1ccc(cc1)C(C)(C)c1ccc(cc1)OC(*)=O",
        "*Oc1ccc(cc1)C(C)(C)c1ccc(cc1)OC(=O)c1ccc(cc1)C(*)=O",
        "*Oc1ccc(cc1)S(=O)(=O)c1ccc(cc1)Oc1ccc(*)cc1",
        "*Oc1ccc(cc1)C(=O)c1ccc(*)cc1",
        "*c1ccc(*)s1", "*c1ccc(*)o1", "*c1ccc(*)[nH]1",
        "*Cc1ccc(cc1)c1ccc(C*)cc1",
    ]

    # Vinyl aromatics with spaced substituents (shared phenylene motifs).
    out += [
        "*CC(*)c1ccc(CC)cc1", "*CC(*)c1ccc(CCC)cc1", "*CC(*)c1ccc(OCC)cc1",
        "*CC(*)c1ccc(S(=O)(=O)C)cc1", "*CC(*)c1ccc(C(=O)OC)cc1",
    ]

    # Halogen and sulfur backbones.
    out += [
        "*CC(Cl)*", "*CC(*)(C)Cl", "*C(Cl)(Cl)C*", "*SCC*", "*SCCS*",
        "*SCCCS*", "*SCCSCC*", "*CSC*",
    ]

    # Carbonate and sulfone variations.
    out += [
        "*OC(=O)Oc1ccc(cc1)C(C)(C)c1ccc(*)cc1",
        "*OC(=O)OCC*", "*OC(=O)OCCCC*",
    ]

    # Acrylamides and N-substituted amides.
    out += [
        "*CC(*)C(=O)NC", "*CC(*)C(=O)NCC", "*CC(*)C(=O)N(C)C",
        "*CC(*)(C)C(=O)NC",
    ]

    # Ether-ester and mixed backbones for motif crossover.
    out += [
        "*OCCOC(=O)CC*", "*OCCOC(=O)CCCC*", "*OCCCCOC(=O)CC*",
        "*CCOC(=O)CC*", "*CCOC(=O)CCCC*",
    ]

    # Substituted ethylenes with double bonds kept in the mainline.
    out += [
        "*C=CC*", "*C=CCC*", "*CC=CC*", "*C=Cc1ccc(C=C*)cc1",
        "*N=Cc1ccc(cc1)C=N*",
    ]

    # Silicon-free PDMS analogues are out of dialect; use isobutylene etc.
    out += [
        "*CC(C)(C)*", "*CC(*)(C)C", "*CC(*)(C)CC", "*CC(*)(CC)CC",
    ]

    # Extra vinyl ethers and esters.
    out += [f"*CC(*)O{r}" for r in ("C", "CC", "CCC", "CCCC", "CC(C)C")]
    out += [f"*CC(*)OC(=O){r}" for r in ("C", "CC", "CCC")]

    # Cyclic-containing backbones (rings never cut).
    out += [
        "*C1CCC(*)CC1", "*C1CCC(CC1)C*", "*CC1CCC(C*)CC1",
        "*C1CCC(*)CC1".replace("C1CCC", "C1CC(C)C"),
    ]

    # Long-spacer aromatics (shared phenylene + methylene runs).
    out += [
        "*OCCCCOC(=O)c1ccc(cc1)c1ccc(cc1)C(*)=O",
        "*NCCCCCCNC(=O)c1ccc(cc1)c1ccc(cc1)C(*)=O",
        "*Cc1ccc(cc1)OCCOc1ccc(C*)cc1",
    ]

    # Disubstituted vinyls over paired substituents.
    pairs = [
        ("C", "c1ccccc1"), ("C", "C(=O)OC"), ("C", "C#N"), ("F", "F"),
        ("C", "Cl"), ("Cl", "Cl"), ("C", "C(=O)OCC"), ("C", "c1ccc(C)cc1"),
    ]
    out += [f"*CC(*)({a}){b}" for a, b in pairs]

    # Styrene copolymer-style two-unit repeats (strong motif overlap).
    comono = ["c1ccccc1", "C(=O)OC", "C#N", "Cl", "c1ccc(C)cc1", "C(=O)OCC"]
    for a in comono:
        for b in comono:
            if a < b:
                out.append(f"*CC({a})CC(*){b}")

    # Additional ester alcohols across acrylate backbones.
    extra_esters = ["CCCCC", "CCCCCCCC", "CC(CC)CCCC", "CCc1ccccc1", "Cc1ccccc1"]
    out += [f"*CC(*)C(=O)O{r}" for r in extra_esters]
    out += [f"*CC(*)(C)C(=O)O{r}" for r in extra_esters]

    # Extended polyether and thioether series.
    out += [
        "*OCCCCCCC*", "*OCCCCCCCC*", "*OCCOCCCC*", "*OCCCOCCC*",
        "*SCCCCS*", "*SCCCC*", "*OCCSCC*",
    ]

    # More polyamide spacer combinations.
    out += [f"*N{'C' * n}NC(=O){'C' * m}C(*)=O" for n, m in
            [(2, 2), (2, 6), (4, 2), (4, 6), (6, 2), (6, 8), (8, 4), (8, 6)]]

    # Ester-amide hybrids.
    out += [
        "*OCCOC(=O)NCCCCCCNC(*)=O",
        "*OCCCCOC(=O)NCCCCCCNC(*)=O",
        "*OC(=O)CCC(=O)NCCNC(*)=O",
    ]

    # Ring-spacer aliphatics and mixed aromatic spacers.
    out += [
        "*CCc1ccc(CC*)cc1", "*CCCc1ccc(CCC*)cc1", "*OCc1ccc(CO*)cc1",
        "*CC(*)Cc1ccccc1", "*CC(*)CCc1ccccc1",
        "*Oc1ccc(cc1)C(=O)Oc1ccc(*)cc1", "*Oc1ccc(cc1)OC(=O)c1ccc(*)cc1",
        "*c1ccc(cc1)C(=O)Nc1ccc(*)cc1", "*c1ccc(cc1)S(=O)(=O)c1ccc(*)cc1",
        "*c1ccc(cc1)Oc1ccc(*)cc1", "*c1ccc(cc1)Sc1ccc(*)cc1",
        "*c1ccc(cc1)C(C)(C)c1ccc(*)cc1", "*c1ccc(cc1)C(=O)c1ccc(*)cc1",
    ]

    # Fluorinated ethers and esters.
    out += [
        "*OCC(F)(F)*", "*OC(F)(F)C(F)(F)*", "*CC(*)OC(=O)C(F)(F)F",
        "*CC(*)c1ccc(C(F)(F)F)cc1", "*C(F)(F)CC(F)(F)*",
    ]

    # Branched and gem-disubstituted backbones.
    out += [
        "*CC(C)C*", "*CC(CC)C*", "*CC(C)CC(C)*", "*CC(C)(C)CC*",
        "*CC(C)CC*", "*CCC(C)C*", "*CCC(C)CC*",
    ]

    return out


def synth_properties(values, rng) -> dict[str, float]:
    d = values
    # indices per chemfeat.DESCRIPTOR_NAMES
    aromatic_rings, six_rings = d[3], d[4]
    rigidity, sp2, donors = d[6], d[8], d[15]
    halogens, heavy, weight = d[14], d[1], d[0]
    mean_ie = d[19]
    tg = 170 + 110 * rigidity + 24 * aromatic_rings + 11 * donors + 4 * halogens
    tm = tg + 95 + 12 * six_rings + 0.4 * heavy
    eg = max(0.8, 6.1 - 0.8 * aromatic_rings - 0.09 * sp2 + 0.012 * heavy)
    density = 0.84 + 0.012 * mean_ie + 0.045 * halogens + 0.0006 * weight
    return {
        "tg_K": round(tg + rng.normal(0, 5), 1),
        "tm_K": round(tm + rng.normal(0, 7), 1),
        "eg_eV": round(eg + rng.normal(0, 0.1), 3),
        "density_gcc": round(density + rng.normal(0, 0.015), 4),
    }


def main() -> None:
    rng = np.random.default_rng(20240817)
    seen: dict[str, str] = {}
    rows = []
    rejected = []
    for text in candidates():
        try:
            g = parse_smiles(text)
        except Exception as err:  # noqa: BLE001
            rejected.append((text, str(err)))
            continue
        if len(g.wildcard_indices()) != 2 or not g.is_connected():
            rejected.append((text, "not a two-ended repeat unit"))
            continue
        report = check_valence(g)
        if not report.valid:
            rejected.append((text, f"valence: {report.violations}"))
            continue
        canon = write_smiles(g)
        if canon in seen:
            rejected.append((text, f"duplicate of {seen[canon]}"))
            continue
        seen[canon] = text
        props = synth_properties(compute_descriptors(g).values, rng)
        rows.append({"smiles": canon, **props})

    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["smiles", "tg_K", "tm_K", "eg_eV", "density_gcc"]
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} monomers to {OUT}")
    if rejected:
        print(f"rejected {len(rejected)}:")
        for text, why in rejected:
            print(f"  {text}: {why}")


if __name__ == "__main__":
    main()
