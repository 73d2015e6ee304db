"""Token-string codec tests: grammar, round trips, markers, tokenization."""

import pytest
from hypothesis import given, settings

from conftest import monomer_graphs
from polyhappy.forge import MiningConfig, Vocabulary, VocabularyEntry, forge_run
from polyhappy.happy import (
    DecodeError,
    EncodingError,
    HappyString,
    HappyUnit,
    compute_tiling,
    decode,
    decode_string,
    encode,
    flatten,
    parse_happy,
    tokenize_smiles,
)
from polyhappy.molgraph import graph_isomorphic, parse_smiles, write_smiles

STYRENE = "*CC(*)c1ccccc1"


def spec_styrene_vocab():
    """The three-token vocabulary used by the styrene walkthrough."""
    entries = [
        VocabularyEntry("G1", "[*:1]C[*:2]", 1, 0, 0),
        VocabularyEntry("G2", "[*:1]C([*:2])[*:3]", 1, 0, 0),
        VocabularyEntry("G3", "[*:1]c1ccccc1", 6, 0, 0),
    ]
    return Vocabulary(entries, 1, "manual")


def linker_vocab():
    """Asymmetric two-port token for orientation-marker tests."""
    entries = [
        VocabularyEntry("G0", "[*:1]CO[*:2]", 2, 1, 0),
        VocabularyEntry("G1", "[*:1]C[*:2]", 1, 0, 0),
        VocabularyEntry("G2", "[*:1]O[*:2]", 1, 0, 0),
    ]
    return Vocabulary(entries, 1, "manual")


class TestGrammar:
    def test_flatten_simple(self):
        h = HappyString([HappyUnit("G1"), HappyUnit("G2", groups=[[HappyUnit("G3")]])])
        assert flatten(h) == ["G1", "G2", "(", "G3", ")"]

    def test_parse_inverse_on_nested_shapes(self):
        shapes = [
            "G1",
            "G1 G2 ( G3 )",
            "G1 ( G2 ( G3 ) ) G4",
            "G1 ( G2 ) ( G3 ) G4 ( G5 G6 )",
        ]
        for text in shapes:
            tokens = text.split()
            assert flatten(parse_happy(tokens)) == tokens

    def test_orientation_marker_round_trip(self):
        for text in ("G0 G0<2.1>", "G1<3> G2", "G5<1.4> ( G2 )"):
            tokens = text.split()
            assert flatten(parse_happy(tokens)) == tokens

    def test_unbalanced_markers(self):
        with pytest.raises(DecodeError):
            parse_happy("G1 ( G2")
        with pytest.raises(DecodeError):
            parse_happy("G1 G2 )")

    def test_group_needs_host(self):
        with pytest.raises(DecodeError):
            parse_happy("( G1 )")

    def test_empty_rejected(self):
        with pytest.raises(DecodeError):
            parse_happy("")
        with pytest.raises(DecodeError):
            parse_happy("G1 ( )")


class TestTokenizeSmiles:
    def test_plain_atoms(self):
        assert tokenize_smiles("CCO") == ["C", "C", "O"]

    def test_ring_digits(self):
        assert tokenize_smiles("c1ccccc1") == ["c", "1", "c", "c", "c", "c", "c", "1"]

    def test_brackets_and_two_letter(self):
        assert tokenize_smiles("[*]C(Cl)Br") == ["[*]", "C", "(", "Cl", ")", "Br"]
        assert len(tokenize_smiles("[*]C(Cl)Br")) == 6

    def test_percent_closure_single_token(self):
        assert "%12" in tokenize_smiles("C%12CCCCC%12")

    def test_unparseable(self):
        with pytest.raises(ValueError):
            tokenize_smiles("C$C")


class TestEncode:
    def test_styrene_walkthrough_string(self):
        g = parse_smiles(STYRENE)
        h = encode(g, spec_styrene_vocab())
        assert flatten(h) == ["G1", "G2", "(", "G3", ")"]

    def test_single_token_monomer(self):
        vocab = Vocabulary([VocabularyEntry("G1", "[*:1]C[*:2]", 1, 0, 0)], 1, "m")
        h = encode(parse_smiles("*C*"), vocab)
        assert flatten(h) == ["G1"]

    def test_direction_invariance(self):
        vocab = spec_styrene_vocab()
        fwd = encode(parse_smiles("*CC(*)c1ccccc1"), vocab)
        rev = encode(parse_smiles("*C(c1ccccc1)C*"), vocab)
        assert flatten(fwd) == flatten(rev)

    def test_unknown_fragment_named_in_error(self):
        vocab = Vocabulary([VocabularyEntry("G1", "[*:1]C[*:2]", 1, 0, 0)], 1, "m")
        with pytest.raises(EncodingError, match=r"\[\*:1\]O\[\*:2\]"):
            encode(parse_smiles("*CO*"), vocab)

    def test_mined_entry_with_pruned_intermediates_still_tiles(self):
        corpus = [parse_smiles(STYRENE) for _ in range(5)]
        vocab, _ = forge_run(corpus, MiningConfig(threshold=3))
        h = encode(parse_smiles(STYRENE), vocab)
        assert flatten(h) == ["G003"]


class TestOrientationMarkers:
    def test_head_to_tail_needs_no_marker(self):
        h = encode(parse_smiles("*COCO*"), linker_vocab())
        assert flatten(h) == ["G0", "G0"]

    def test_head_to_head_gets_marker(self):
        h = encode(parse_smiles("*COOC*"), linker_vocab())
        assert flatten(h) == ["G0", "G0<2.1>"]

    def test_marker_distinguishes_isomers(self):
        vocab = linker_vocab()
        hh = parse_smiles("*COOC*")
        ht = parse_smiles("*COCO*")
        assert not graph_isomorphic(hh, ht)
        assert flatten(encode(hh, vocab)) != flatten(encode(ht, vocab))
        assert graph_isomorphic(decode(encode(hh, vocab), vocab), hh)
        assert graph_isomorphic(decode(encode(ht, vocab), vocab), ht)

    def test_symmetric_unit_never_marked(self):
        corpus = [parse_smiles("*CCCC*") for _ in range(3)]
        vocab, _ = forge_run(corpus, MiningConfig(threshold=2))
        h = encode(parse_smiles("*CCCC*"), vocab)
        assert all("<" not in t for t in flatten(h))


class TestDecode:
    def test_walkthrough_inverse(self):
        g = decode_string("G1 G2 ( G3 )", spec_styrene_vocab())
        assert graph_isomorphic(g, parse_smiles(STYRENE))

    def test_unknown_token(self):
        with pytest.raises(DecodeError, match="G9"):
            decode_string("G9", spec_styrene_vocab())

    def test_one_port_token_cannot_chain(self):
        with pytest.raises(DecodeError):
            decode_string("G3 G3", spec_styrene_vocab())

    def test_arity_mismatch_too_many_groups(self):
        with pytest.raises(DecodeError):
            decode_string("G1 ( G3 ) G1", spec_styrene_vocab())

    def test_arity_mismatch_missing_group(self):
        # G2 has three ports; mid-chain it must carry exactly one group
        with pytest.raises(DecodeError):
            decode_string("G1 G2 G1", spec_styrene_vocab())

    def test_default_wiring_for_marker_free_strings(self):
        g = decode_string("G0 G0", linker_vocab())
        assert graph_isomorphic(g, parse_smiles("*COCO*"))

    def test_decode_checks_valence(self):
        bad = Vocabulary(
            [VocabularyEntry("G1", "[*:1]C([*:2])([*:3])([*:4])[*:5]", 1, 0, 0)],
            1,
            "m",
        )
        with pytest.raises(DecodeError):
            decode_string("G1 ( G1 ) ( G1 ) G1", bad)


class TestComputeTiling:
    def test_partition(self):
        vocab = spec_styrene_vocab()
        mt = compute_tiling(parse_smiles(STYRENE), vocab)
        g = mt.graph
        covered = sorted(a for t in mt.tiles for a in t.atoms)
        assert covered == sorted(g.heavy_indices())

    def test_prefers_larger_entries(self):
        entries = [
            VocabularyEntry("G0", "[*:1]C[*:2]", 1, 0, 0),
            VocabularyEntry("G1", "[*:1]CC[*:2]", 2, 1, 0),
        ]
        vocab = Vocabulary(entries, 1, "m")
        mt = compute_tiling(parse_smiles("*CCCC*"), vocab)
        assert sorted(len(t.atoms) for t in mt.tiles) == [2, 2]


@settings(max_examples=40, deadline=None)
@given(monomer_graphs())
def test_bijection_property(g):
    vocab, tilings = forge_run([g, g, g], MiningConfig(threshold=2))
    h = encode(g, vocab, tilings[0])
    assert graph_isomorphic(decode(h, vocab), g)
    tokens = flatten(h)
    assert flatten(parse_happy(tokens)) == tokens


@settings(max_examples=25, deadline=None)
@given(monomer_graphs())
def test_greedy_tiling_bijection_property(g):
    vocab, _ = forge_run([g, g, g], MiningConfig(threshold=2))
    h = encode(g, vocab)
    assert graph_isomorphic(decode(h, vocab), g)
