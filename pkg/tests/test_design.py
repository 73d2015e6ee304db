"""Oracle math, reward composition, and policy-gradient tests."""

import json
import math

import numpy as np
import pytest

from polyhappy.chemfeat import DESCRIPTOR_NAMES, ScalerParams, compute_descriptors
from polyhappy.design import (
    BOS,
    EOS,
    DesignError,
    Policy,
    PropertyOracle,
    PropertyTarget,
    RewardConfig,
    compute_rewards,
    fit_ngram,
    predict_property,
    r2_score,
    reinforce_update,
    ridge_fit,
    rl_train,
    sample_batch,
    sequence_log_prob,
    train_oracle,
)
from polyhappy.forge import Vocabulary, VocabularyEntry
from polyhappy.metrics import EnvironmentTable, GenerationBatch, build_reference, sa_score
from polyhappy.molgraph import parse_smiles

MONOMERS = [
    "*CC*", "*CCC*", "*CCCC*", "*OCC*", "*OCCC*", "*SCC*", "*CC(*)C",
    "*CC(*)CC", "*CC(*)Cl", "*CC(*)F", "*CC(*)c1ccccc1", "*CC(*)C#N",
    "*OCCOCC*", "*NCCCCCC(*)=O", "*CC(*)C(=O)OC", "*CC(*)(C)C(=O)OC",
    "*c1ccc(*)cc1", "*Cc1ccc(C*)cc1", "*CC(*)O", "*CC(F)(F)*",
]


def constant_oracle(value, name="const"):
    return PropertyOracle(
        name, (), ScalerParams(np.array([]), np.array([])), np.array([]), float(value)
    )


def linker_vocab():
    entries = [
        VocabularyEntry("G0", "[*:1]CO[*:2]", 2, 0, 0),
        VocabularyEntry("G1", "[*:1]C[*:2]", 1, 0, 0),
    ]
    return Vocabulary(entries, 1, "manual")


class TestRidge:
    def test_lambda_zero_equals_least_squares(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        w, b = ridge_fit(x, y, 0.0)
        aug = np.hstack([x, np.ones((30, 1))])
        ls, *_ = np.linalg.lstsq(aug, y, rcond=None)
        assert np.allclose(w, ls[:4], atol=1e-9)
        assert b == pytest.approx(ls[4], abs=1e-9)

    def test_singular_system_raises(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(DesignError, match="singular"):
            ridge_fit(x, np.array([1.0, 2.0, 3.0]), 0.0)

    def test_infinite_lambda_predicts_mean(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        w, b = ridge_fit(x, y, 1e12)
        assert np.allclose(w, 0.0, atol=1e-9)
        assert b == pytest.approx(y.mean(), abs=1e-9)


class TestR2:
    def test_perfect_fit(self):
        assert r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_mean_predictor_zero(self):
        truths = [1.0, 2.0, 3.0, 6.0]
        mean = sum(truths) / 4
        assert r2_score([mean] * 4, truths) == 0.0

    def test_three_point_hand_value(self):
        # ss_res = 1, ss_tot = 2
        assert r2_score([1.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(0.5)

    def test_constant_truths_error(self):
        with pytest.raises(DesignError):
            r2_score([1.0, 2.0], [5.0, 5.0])

    def test_length_mismatch(self):
        with pytest.raises(DesignError):
            r2_score([1.0], [1.0, 2.0])


class TestTrainOracle:
    def dataset(self, fn, smiles=MONOMERS):
        out = []
        for s in smiles:
            g = parse_smiles(s)
            out.append((g, fn(compute_descriptors(g).values)))
        return out

    def test_exact_linear_function_r2_one(self):
        i = DESCRIPTOR_NAMES.index("heavy_atoms")
        data = self.dataset(lambda d: 3.0 * d[i] + 7.0)
        oracle = train_oracle(data, k=1, ridge_lambda=0.0)
        assert oracle.train_r2 == pytest.approx(1.0, abs=1e-9)
        for g, target in data:
            assert predict_property(oracle, g) == pytest.approx(target, abs=1e-6)

    def test_huge_lambda_predicts_mean(self):
        data = self.dataset(lambda d: d[0])
        oracle = train_oracle(data, k=3, ridge_lambda=1e12)
        mean = np.mean([v for _, v in data])
        for g, _ in data[:4]:
            assert predict_property(oracle, g) == pytest.approx(mean, abs=1e-6)

    def test_matches_independent_normal_equations(self):
        rng = np.random.default_rng(7)
        data = self.dataset(
            lambda d: 2.0 * d[0] - 5.0 * d[6] + 0.5 * d[1] + rng.normal(0, 0.1)
        )
        oracle = train_oracle(data, k=5, ridge_lambda=0.0)
        # independent solver: lstsq on the same scaled design matrix
        from polyhappy.chemfeat import apply_scaler

        full = np.array([compute_descriptors(g).values for g, _ in data])
        xs = np.array(
            [apply_scaler(row, oracle.scaler) for row in full[:, list(oracle.selected)]]
        )
        y = np.array([v for _, v in data])
        sol, *_ = np.linalg.lstsq(np.hstack([xs, np.ones((len(y), 1))]), y, rcond=None)
        assert np.allclose(oracle.weights, sol[:-1], atol=1e-9)
        assert oracle.bias == pytest.approx(sol[-1], abs=1e-9)

    def test_too_few_records(self):
        data = self.dataset(lambda d: d[0], MONOMERS[:4])
        with pytest.raises(DesignError):
            train_oracle(data, k=5)

    def test_validation_r2_reported(self):
        data = self.dataset(lambda d: 2.0 * d[1] + 1.0)
        oracle = train_oracle(data[:14], k=2, ridge_lambda=0.0, validation=data[14:])
        assert oracle.validation_r2 == pytest.approx(1.0, abs=1e-6)

    def test_zero_weight_oracle_predicts_bias(self):
        oracle = constant_oracle(42.0)
        assert predict_property(oracle, parse_smiles("*CC*")) == 42.0

    def test_hand_dot_product(self):
        g = parse_smiles("*CC*")
        d = compute_descriptors(g).values
        sel = (0, 1)
        scaler = ScalerParams(np.array([0.0, 0.0]), np.array([100.0, 10.0]))
        oracle = PropertyOracle("t", sel, scaler, np.array([2.0, -1.0]), 5.0)
        expected = 2.0 * (d[0] / 100.0) - 1.0 * (d[1] / 10.0) + 5.0
        assert predict_property(oracle, g) == pytest.approx(expected)

    def test_weights_length_invariant(self):
        with pytest.raises(DesignError):
            PropertyOracle(
                "t", (0,), ScalerParams(np.zeros(1), np.ones(1)), np.array([1.0, 2.0]), 0.0
            )


class TestPolicy:
    def test_vocabulary_includes_specials(self):
        p = Policy(("A", "B"))
        assert p.vocabulary == [BOS, "A", "B", EOS]
        assert p.emittable == ("A", "B", EOS)

    def test_unseen_context_uniform(self):
        p = Policy(("A", "B"))
        assert np.allclose(p.distribution(("A", "B")), [1 / 3, 1 / 3, 1 / 3])

    def test_distribution_normalized(self):
        p = Policy(("A", "B"), logits={("<bos>", "<bos>"): np.array([3.0, -1.0, 0.5])})
        assert p.distribution(p.initial_context()).sum() == pytest.approx(1.0)

    def test_rejects_bad_construction(self):
        with pytest.raises(DesignError):
            Policy(("A", "A"))
        with pytest.raises(DesignError):
            Policy((BOS,))
        with pytest.raises(DesignError):
            Policy(("A",), context_length=1)

    def deterministic_policy(self):
        big = 50.0
        logits = {
            (BOS, BOS): np.array([big, 0.0, 0.0]),      # -> A
            (BOS, "A"): np.array([0.0, big, 0.0]),      # -> B
            ("A", "B"): np.array([0.0, 0.0, big]),      # -> EOS
        }
        return Policy(("A", "B"), 3, logits)

    def test_deterministic_policy_identical_samples(self):
        result = sample_batch(self.deterministic_policy(), 5, seed=3)
        assert result.sequences == [["A", "B"]] * 5
        assert result.batch.samples == ["A B"] * 5

    def test_fixed_seed_reproducible(self):
        p = Policy(("A", "B"))
        a = sample_batch(p, 50, seed=11)
        b = sample_batch(p, 50, seed=11)
        assert a.sequences == b.sequences

    def test_max_len_truncates(self):
        logits = {(BOS,): np.array([50.0, 0.0, -50.0])}
        p = Policy(("A", "B"), 2, {(BOS,): np.array([50.0, -50.0, -50.0]),
                                   ("A",): np.array([50.0, -50.0, -50.0])})
        result = sample_batch(p, 1, max_len=7, seed=0)
        assert result.sequences == [["A"] * 7]

    def test_unigram_frequencies_within_3_sigma(self):
        probs = np.array([0.3, 0.2, 0.5])
        p = Policy(("A", "B"), 2, {(BOS,): np.log(probs)})
        n = 100_000
        result = sample_batch(p, n, seed=42)
        first = [seq[0] if seq else EOS for seq in result.sequences]
        for tok, expect in zip(("A", "B", EOS), probs):
            freq = first.count(tok) / n
            sigma = math.sqrt(expect * (1 - expect) / n)
            assert abs(freq - expect) < 3 * sigma

    def test_distributions_recorded_per_step(self):
        result = sample_batch(Policy(("A",)), 3, seed=0)
        for seq, dists in zip(result.sequences, result.distributions):
            assert len(dists) == len(seq) + 1 or len(seq) == 64


class TestSequenceLogProb:
    def test_deterministic_policy_zero(self):
        p = TestPolicy().deterministic_policy()
        assert sequence_log_prob(p, ["A", "B"]) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_closed_form(self):
        p = Policy(("A", "B", "C"))
        # 3 steps: two tokens plus EOS, uniform over 4 emittables
        assert sequence_log_prob(p, ["A", "C"]) == pytest.approx(3 * math.log(1 / 4))

    def test_unknown_token(self):
        with pytest.raises(DesignError):
            sequence_log_prob(Policy(("A",)), ["Z"])

    def test_matches_empirical_frequency(self):
        p = Policy(("A",), 2)
        n = 100_000
        result = sample_batch(p, n, seed=5)
        freq = result.sequences.count(["A"]) / n
        expect = math.exp(sequence_log_prob(p, ["A"]))
        sigma = math.sqrt(expect * (1 - expect) / n)
        assert abs(freq - expect) < 3 * sigma


class TestFitNgram:
    def test_counts_realize_mle(self):
        corpus = [["A", "B"], ["A", "B"], ["A", "C"]]
        p = fit_ngram(corpus, ["A", "B", "C"], context_length=2)
        d_bos = p.distribution((BOS,))
        assert d_bos[0] == pytest.approx(1.0, abs=1e-9)  # P(A|BOS)
        d_a = p.distribution(("A",))
        assert d_a[1] == pytest.approx(2 / 3, abs=1e-9)  # P(B|A)
        assert d_a[2] == pytest.approx(1 / 3, abs=1e-9)  # P(C|A)
        d_b = p.distribution(("B",))
        assert d_b[3] == pytest.approx(1.0, abs=1e-9)    # P(EOS|B)

    def test_unknown_corpus_token_rejected(self):
        with pytest.raises(DesignError):
            fit_ngram([["Z"]], ["A"])


class TestRewards:
    def batch(self, samples):
        return GenerationBatch.from_samples(samples)

    def bare_config(self, **kw):
        defaults = dict(
            diversity_weight=0.0, similarity_weight=0.0,
            specificity_weight=0.0, sa_weight=0.0,
        )
        defaults.update(kw)
        return RewardConfig(**defaults)

    def test_invalid_sample_reward_exactly_zero(self):
        config = self.bare_config(diversity_weight=1.0)
        rewards, breakdowns = compute_rewards(self.batch(["*CC*", "junk(", "*OCC*"]), config)
        assert rewards[1] == 0.0
        assert breakdowns[1].valid is False and breakdowns[1].reward == 0.0

    def test_property_clamp_rules(self):
        t = PropertyTarget(constant_oracle(0), "greater_than", 600.0)
        assert t.raw(650.0) == 600.0
        assert t.raw(550.0) == 550.0
        t = PropertyTarget(constant_oracle(0), "less_than", 4.5)
        assert t.raw(3.0) == -4.5
        assert t.raw(6.0) == -6.0
        t = PropertyTarget(constant_oracle(0), "match", 100.0)
        assert t.raw(100.0) == 0.0
        assert t.raw(90.0) == -10.0

    def test_greater_than_monotone_and_saturating(self):
        t = PropertyTarget(constant_oracle(0), "greater_than", 10.0)
        grid = [t.raw(v) for v in np.linspace(0, 20, 41)]
        assert all(b >= a for a, b in zip(grid, grid[1:]))
        assert all(t.raw(v) == 10.0 for v in (10.0, 11.0, 500.0))

    def test_less_than_flat_below_decreasing_above(self):
        t = PropertyTarget(constant_oracle(0), "less_than", 4.5)
        assert t.raw(1.0) == t.raw(4.5) == -4.5
        assert t.raw(5.0) > t.raw(6.0)

    def test_scaled_terms_in_unit_interval(self):
        config = RewardConfig(
            similarity_weight=1.0, specificity_weight=1.0, diversity_weight=1.0,
            sa_weight=1.0, sa_table=EnvironmentTable.fit([parse_smiles("*CC*")]),
        )
        ref = build_reference([parse_smiles(s) for s in MONOMERS[:6]])
        batch = self.batch(["*CC*", "*OCC*", "*CC(*)c1ccccc1", "bad("])
        rewards, breakdowns = compute_rewards(batch, config, ref)
        for b in breakdowns:
            if b.valid:
                assert all(0.0 <= v <= 1.0 for v in b.scaled.values())
        total_weight = 4.0
        assert all(0.0 <= r <= total_weight for r in rewards)

    def test_degenerate_minmax_is_half(self):
        config = self.bare_config(
            property_targets=(PropertyTarget(constant_oracle(5.0), "match", 5.0),)
        )
        rewards, breakdowns = compute_rewards(self.batch(["*CC*", "*OCC*"]), config)
        assert all(b.scaled["property:const"] == 0.5 for b in breakdowns)
        assert np.allclose(rewards, 0.5)

    def test_zero_sim_spec_weights_train_set_invariant(self):
        config = self.bare_config(
            diversity_weight=1.0,
            property_targets=(PropertyTarget(constant_oracle(1.0), "match", 0.0),),
            sa_weight=1.0, sa_table=EnvironmentTable.fit([parse_smiles("*OCC*")]),
        )
        batch = self.batch(["*CC*", "*CCC*", "*OCC*"])
        ref_a = build_reference([parse_smiles("*CC*")])
        ref_b = build_reference([parse_smiles("*NCCCCCC(*)=O"), parse_smiles("*SCC*")])
        ra, _ = compute_rewards(batch, config, ref_a)
        rb, _ = compute_rewards(batch, config, ref_b)
        rn, _ = compute_rewards(batch, config, None)
        assert np.array_equal(ra, rb) and np.array_equal(ra, rn)

    def test_similarity_needs_reference(self):
        config = self.bare_config(similarity_weight=1.0)
        with pytest.raises(DesignError, match="reference"):
            compute_rewards(self.batch(["*CC*"]), config, None)

    def test_sa_needs_table(self):
        config = self.bare_config(sa_weight=1.0)
        with pytest.raises(DesignError, match="environment table"):
            compute_rewards(self.batch(["*CC*"]), config)

    def test_sa_raw_uses_negative_clamp(self):
        table = EnvironmentTable.fit([parse_smiles(s) for s in MONOMERS[:8]])
        config = self.bare_config(sa_weight=1.0, sa_table=table)
        batch = self.batch(["*CC*", "*CC(*)C1CCC2CCCCC2C1"])
        _, breakdowns = compute_rewards(batch, config)
        for i, b in enumerate(breakdowns):
            expected = -max(sa_score(batch.decoded[i], table), 4.5)
            assert b.raw["sa"] == pytest.approx(expected)

    def test_scaffold_token_term(self):
        vocab = linker_vocab()
        batch = GenerationBatch.from_samples(["G0", "G1 G1", "G0 G1"], vocab=vocab)
        config = self.bare_config(scaffold="G0")
        rewards, breakdowns = compute_rewards(batch, config)
        assert [b.raw["scaffold"] for b in breakdowns] == [1.0, 0.0, 1.0]

    def test_empty_batch_errors(self):
        with pytest.raises(DesignError):
            compute_rewards(self.batch([]), self.bare_config())

    def test_negative_weight_rejected(self):
        with pytest.raises(DesignError):
            RewardConfig(diversity_weight=-1.0)


class TestReinforce:
    def test_equal_rewards_no_update(self):
        p = Policy(("A", "B"))
        updated = reinforce_update(p, [["A"], ["B"]], [1.0, 1.0])
        assert updated.logits == {} or all(
            np.allclose(v, 0.0) for v in updated.logits.values()
        )

    def test_rewarded_token_probability_increases(self):
        p = Policy(("A", "B"))
        before = p.distribution(p.initial_context())[0]
        updated = reinforce_update(p, [["A"], ["B"]], [1.0, 0.0])
        after = updated.distribution(updated.initial_context())[0]
        assert after > before

    def test_original_policy_unchanged(self):
        p = Policy(("A", "B"), 3, {(BOS, BOS): np.zeros(3)})
        reinforce_update(p, [["A"]], [1.0])
        assert np.allclose(p.logits[(BOS, BOS)], 0.0)

    def test_gradient_matches_finite_differences(self):
        sequences = [["A", "B"], ["B"], ["A"]]
        rewards = np.array([1.0, 0.2, 0.4])
        adv = rewards - rewards.mean()
        contexts = [(BOS, BOS), (BOS, "A"), ("A", "B"), (BOS, "B"), ("B", EOS)]
        rng = np.random.default_rng(9)
        base = {c: rng.normal(size=3) for c in contexts}

        def make(logits):
            return Policy(("A", "B"), 3, logits)

        def objective(logits):
            pol = make(logits)
            return sum(
                a * sequence_log_prob(pol, s) for a, s in zip(adv, sequences)
            )

        updated = reinforce_update(make(base), sequences, rewards, learning_rate=1.0)
        eps = 1e-6
        for ctx in [(BOS, BOS), (BOS, "A"), ("A", "B"), (BOS, "B")]:
            for j in range(3):
                hi = {c: v.copy() for c, v in base.items()}
                lo = {c: v.copy() for c, v in base.items()}
                hi[ctx][j] += eps
                lo[ctx][j] -= eps
                fd = (objective(hi) - objective(lo)) / (2 * eps)
                analytic = updated.logits[ctx][j] - base[ctx][j]
                assert analytic == pytest.approx(fd, abs=1e-4)

    def test_rewards_alignment_checked(self):
        with pytest.raises(DesignError):
            reinforce_update(Policy(("A",)), [["A"]], [1.0, 2.0])


class TestRLTrain:
    def config(self):
        return RewardConfig(
            diversity_weight=0.0, similarity_weight=0.0, specificity_weight=0.0,
            sa_weight=0.0, scaffold="G0", batch_size=32,
        )

    def reference(self):
        return build_reference([parse_smiles("*CC*")])

    def test_zero_steps_unchanged(self):
        p = fit_ngram([["G0"], ["G1"]], ["G0", "G1"])
        result = rl_train(p, self.config(), 0, self.reference(), linker_vocab(), seed=0)
        assert result.policy is p and result.trajectory == []

    def test_deterministic_per_seed(self):
        p = Policy(("G0", "G1"))
        a = rl_train(p, self.config(), 4, self.reference(), linker_vocab(), seed=5)
        b = rl_train(p, self.config(), 4, self.reference(), linker_vocab(), seed=5)
        assert [s.mean_reward for s in a.trajectory] == [s.mean_reward for s in b.trajectory]
        assert set(a.policy.logits) == set(b.policy.logits)
        for ctx in a.policy.logits:
            assert np.allclose(a.policy.logits[ctx], b.policy.logits[ctx])

    def test_scaffold_fraction_improves(self):
        p = Policy(("G0", "G1"))
        result = rl_train(p, self.config(), 30, self.reference(), linker_vocab(), seed=2)
        first = result.trajectory[0].report.scaffold_fraction
        last = result.trajectory[-1].report.scaffold_fraction
        assert last > first
        assert last > 0.8

    def test_trajectory_jsonl(self, tmp_path):
        p = Policy(("G0", "G1"))
        log = tmp_path / "traj.jsonl"
        result = rl_train(
            p, self.config(), 3, self.reference(), linker_vocab(), seed=0,
            trajectory_path=log,
        )
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(lines) == 3
        assert lines[0]["step"] == 0
        assert lines[0]["mean_reward"] == pytest.approx(result.trajectory[0].mean_reward)
        assert "validity" in lines[0] and "entropy" in lines[0]
