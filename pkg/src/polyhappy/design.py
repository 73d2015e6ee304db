"""Property oracle, reward composition, and REINFORCE policy training.

The generator is a tabular k-gram softmax policy: each context (the previous
k-1 tokens, BOS-padded) owns a logit vector over the emittable tokens (the
generation vocabulary plus EOS). Contexts never seen keep zero logits, i.e.
a uniform distribution. Policies are immutable; updates return new ones.
This is deliberately the same sample / log-prob / update seam a neural
decoder would plug into, with analytic gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chemfeat import (
    ScalerParams,
    apply_scaler,
    compute_descriptors,
    fit_scaler,
    select_descriptors,
    tanimoto,
)
from .happy import Vocabulary, parse_happy
from .metrics import (
    EnvironmentTable,
    GenerationBatch,
    MetricsReport,
    TrainingReference,
    contains_subgraph,
    evaluate_batch,
    sa_score,
    unit_tokens,
)
from .molgraph import MolGraph

BOS = "<bos>"
EOS = "<eos>"


class DesignError(Exception):
    """Raised for invalid oracle, policy, or reward configuration inputs."""


# ---------------------------------------------------------------------------
# Property oracle


@dataclass(frozen=True)
class PropertyOracle:
    property_name: str
    selected: tuple[int, ...]
    scaler: ScalerParams
    weights: np.ndarray
    bias: float
    train_r2: float | None = None
    validation_r2: float | None = None

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.selected):
            raise DesignError("weights length must equal number of selected descriptors")


def _design_matrix(graphs: list[MolGraph]) -> np.ndarray:
    return np.array([compute_descriptors(g).values for g in graphs], dtype=float)


def ridge_fit(x: np.ndarray, y: np.ndarray, ridge_lambda: float) -> tuple[np.ndarray, float]:
    """Closed-form ridge with an unpenalized intercept (via centering)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + ridge_lambda * np.eye(x.shape[1])
    try:
        weights = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as err:
        raise DesignError(f"singular system: {err}") from err
    return weights, float(y_mean - weights @ x_mean)


def r2_score(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.size < 2:
        raise DesignError("r2 needs two equal-length series of size >= 2")
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DesignError("r2 undefined for constant truths")
    ss_res = float(((t - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def train_oracle(
    dataset: list[tuple[MolGraph, float]],
    k: int = 8,
    ridge_lambda: float = 1e-6,
    property_name: str = "property",
    validation: list[tuple[MolGraph, float]] | None = None,
) -> PropertyOracle:
    """Pearson-select k descriptors, min-max scale them, solve ridge."""
    if len(dataset) < k + 2:
        raise DesignError(f"need at least {k + 2} records to fit {k} descriptors")
    graphs = [g for g, _ in dataset]
    y = np.array([v for _, v in dataset], dtype=float)
    full = _design_matrix(graphs)
    selected = tuple(select_descriptors(full, y, k))
    scaler = fit_scaler(full[:, selected])
    xs = np.array([apply_scaler(row, scaler) for row in full[:, selected]])
    weights, bias = ridge_fit(xs, y, ridge_lambda)
    oracle = PropertyOracle(property_name, selected, scaler, weights, bias)
    train_pred = xs @ weights + bias
    oracle = replace(oracle, train_r2=r2_score(train_pred, y))
    if validation:
        val_pred = [predict_property(oracle, g) for g, _ in validation]
        val_true = [v for _, v in validation]
        oracle = replace(oracle, validation_r2=r2_score(val_pred, val_true))
    return oracle


def predict_property(oracle: PropertyOracle, g: MolGraph) -> float:
    row = compute_descriptors(g).values[list(oracle.selected)]
    return float(oracle.weights @ apply_scaler(row, oracle.scaler) + oracle.bias)


# ---------------------------------------------------------------------------
# Tabular k-gram policy


@dataclass(frozen=True)
class Policy:
    tokens: tuple[str, ...]
    context_length: int = 3
    logits: dict[tuple[str, ...], np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.context_length < 2:
            raise DesignError("context_length must be >= 2")
        if BOS in self.tokens or EOS in self.tokens:
            raise DesignError("special tokens are added automatically")
        if len(set(self.tokens)) != len(self.tokens):
            raise DesignError("duplicate tokens")

    @property
    def vocabulary(self) -> list[str]:
        return [BOS, *self.tokens, EOS]

    @property
    def emittable(self) -> tuple[str, ...]:
        return (*self.tokens, EOS)

    def _index(self, token: str) -> int:
        try:
            return self.emittable.index(token)
        except ValueError:
            raise DesignError(f"unknown token: {token}") from None

    def initial_context(self) -> tuple[str, ...]:
        return (BOS,) * (self.context_length - 1)

    def shift(self, context: tuple[str, ...], token: str) -> tuple[str, ...]:
        return (*context, token)[-(self.context_length - 1):]

    def context_logits(self, context: tuple[str, ...]) -> np.ndarray:
        found = self.logits.get(context)
        if found is None:
            return np.zeros(len(self.emittable))
        return found

    def distribution(self, context: tuple[str, ...]) -> np.ndarray:
        z = self.context_logits(context)
        e = np.exp(z - z.max())
        return e / e.sum()


def fit_ngram(
    corpus: list[list[str]], tokens: list[str], context_length: int = 3
) -> Policy:
    """Count-based maximum-likelihood initialization from token sequences."""
    policy = Policy(tuple(tokens), context_length)
    counts: dict[tuple[str, ...], np.ndarray] = {}
    for sequence in corpus:
        ctx = policy.initial_context()
        for tok in [*sequence, EOS]:
            idx = policy._index(tok)
            counts.setdefault(ctx, np.zeros(len(policy.emittable)))[idx] += 1
            ctx = policy.shift(ctx, tok)
    # log of counts realizes the MLE under softmax; zero counts get a floor
    logits = {
        ctx: np.where(c > 0, np.log(np.maximum(c, 1e-300)), -30.0)
        for ctx, c in counts.items()
    }
    return Policy(tuple(tokens), context_length, logits)


@dataclass
class SampleResult:
    batch: GenerationBatch
    sequences: list[list[str]]
    distributions: list[list[np.ndarray]]


def sample_batch(
    policy: Policy,
    n: int,
    vocab: Vocabulary | None = None,
    max_len: int = 64,
    seed: int | np.random.Generator = 0,
) -> SampleResult:
    """Autoregressively sample n sequences; deterministic for a fixed seed."""
    if n < 1:
        raise DesignError("n must be >= 1")
    rng = np.random.default_rng(seed)
    sequences: list[list[str]] = []
    distributions: list[list[np.ndarray]] = []
    k = len(policy.emittable)
    for _ in range(n):
        ctx = policy.initial_context()
        toks: list[str] = []
        dists: list[np.ndarray] = []
        while len(toks) < max_len:
            p = policy.distribution(ctx)
            dists.append(p)
            choice = policy.emittable[rng.choice(k, p=p)]
            if choice == EOS:
                break
            toks.append(choice)
            ctx = policy.shift(ctx, choice)
        sequences.append(toks)
        distributions.append(dists)
    samples = [" ".join(toks) for toks in sequences]
    return SampleResult(GenerationBatch.from_samples(samples, vocab), sequences, distributions)


def sequence_log_prob(policy: Policy, tokens: list[str]) -> float:
    """Log probability of emitting the sequence then EOS."""
    total = 0.0
    ctx = policy.initial_context()
    for tok in [*tokens, EOS]:
        p = policy.distribution(ctx)
        total += math.log(p[policy._index(tok)])
        ctx = policy.shift(ctx, tok)
    return total


# ---------------------------------------------------------------------------
# Rewards


@dataclass(frozen=True)
class PropertyTarget:
    oracle: PropertyOracle
    mode: str  # match | greater_than | less_than
    target: float
    weight: float = 1.0

    def raw(self, value: float) -> float:
        if self.mode == "match":
            return -abs(value - self.target)
        if self.mode == "greater_than":
            return min(value, self.target)
        if self.mode == "less_than":
            return -max(value, self.target)
        raise DesignError(f"unknown property mode: {self.mode}")


@dataclass(frozen=True)
class RewardConfig:
    property_targets: tuple[PropertyTarget, ...] = ()
    diversity_target: float = 0.6
    similarity_target: float = 0.7
    specificity_target: float = 1.0
    sa_threshold: float = 4.5
    diversity_weight: float = 1.0
    similarity_weight: float = 1.0
    specificity_weight: float = 1.0
    sa_weight: float = 1.0
    scaffold: str | MolGraph | None = None
    scaffold_weight: float = 1.0
    sa_table: EnvironmentTable | None = None
    batch_size: int = 512

    def __post_init__(self) -> None:
        weights = [
            self.diversity_weight, self.similarity_weight,
            self.specificity_weight, self.sa_weight, self.scaffold_weight,
            *(t.weight for t in self.property_targets),
        ]
        if any(w < 0 for w in weights):
            raise DesignError("weights must be >= 0")
        for value in (self.diversity_target, self.similarity_target,
                      self.specificity_target, self.sa_threshold):
            if not math.isfinite(value):
                raise DesignError("thresholds must be finite")


@dataclass
class RewardBreakdown:
    valid: bool
    raw: dict[str, float]
    scaled: dict[str, float]
    reward: float


def _minmax_scale(raw: dict[int, float]) -> dict[int, float]:
    values = list(raw.values())
    lo, hi = min(values), max(values)
    if hi == lo:
        return {i: 0.5 for i in raw}
    return {i: (v - lo) / (hi - lo) for i, v in raw.items()}


def compute_rewards(
    batch: GenerationBatch,
    config: RewardConfig,
    reference: TrainingReference | None = None,
) -> tuple[np.ndarray, list[RewardBreakdown]]:
    """Per-sample rewards: invalid samples score exactly 0; each active term
    is min-max scaled to [0,1] across the valid samples and summed with its
    weight. The training reference is consulted only by the similarity and
    specificity terms; zeroing those weights removes the dependency."""
    n = len(batch.samples)
    if n == 0:
        raise DesignError("empty batch")
    valid = batch.valid_indices
    terms: dict[str, tuple[float, dict[int, float]]] = {}

    for t, target in enumerate(config.property_targets):
        name = f"property:{target.oracle.property_name}" + (f"#{t}" if t else "")
        raws = {i: target.raw(predict_property(target.oracle, batch.decoded[i]))
                for i in valid}
        terms[name] = (target.weight, raws)

    if config.diversity_weight > 0 and valid:
        fps = {i: batch.fingerprints[i] for i in valid}
        raws = {}
        for i in valid:
            sims = sorted(
                (tanimoto(fps[i], fps[j]) for j in valid if j != i), reverse=True
            )[:10]
            div = float(np.mean([1.0 - s for s in sims])) if sims else 0.0
            raws[i] = min(div, config.diversity_target)
        terms["diversity"] = (config.diversity_weight, raws)

    if config.similarity_weight > 0 and valid:
        if reference is None:
            raise DesignError("similarity term needs a training reference")
        raws = {
            i: -abs(
                max(tanimoto(batch.fingerprints[i], t) for t in reference.fingerprints)
                - config.similarity_target
            )
            for i in valid
        }
        terms["similarity"] = (config.similarity_weight, raws)

    if config.specificity_weight > 0 and valid:
        if reference is None:
            raise DesignError("specificity term needs a training reference")
        nearest = {}
        for i in valid:
            sims = [tanimoto(batch.fingerprints[i], t) for t in reference.fingerprints]
            nearest[i] = sims.index(max(sims))
        shared: dict[int, int] = {}
        for t in nearest.values():
            shared[t] = shared.get(t, 0) + 1
        raws = {
            i: -abs((1.0 - shared[nearest[i]] / n) - config.specificity_target)
            for i in valid
        }
        terms["specificity"] = (config.specificity_weight, raws)

    if config.sa_weight > 0 and valid:
        if config.sa_table is None:
            raise DesignError("SA term needs an environment table in the config")
        raws = {
            i: -max(sa_score(batch.decoded[i], config.sa_table), config.sa_threshold)
            for i in valid
        }
        terms["sa"] = (config.sa_weight, raws)

    if config.scaffold is not None and config.scaffold_weight > 0 and valid:
        if isinstance(config.scaffold, str):
            raws = {}
            for i in valid:
                try:
                    toks = unit_tokens(parse_happy(batch.samples[i]))
                except Exception:  # noqa: BLE001 - raw SMILES sample
                    toks = []
                raws[i] = 1.0 if config.scaffold in toks else 0.0
        else:
            raws = {
                i: 1.0 if contains_subgraph(batch.decoded[i], config.scaffold) else 0.0
                for i in valid
            }
        terms["scaffold"] = (config.scaffold_weight, raws)

    scaled_terms = {name: (w, _minmax_scale(raws)) for name, (w, raws) in terms.items() if raws}
    rewards = np.zeros(n)
    breakdowns = []
    for i in range(n):
        if batch.decoded[i] is None:
            breakdowns.append(RewardBreakdown(False, {}, {}, 0.0))
            continue
        raw = {name: raws[i] for name, (_, raws) in terms.items()}
        scaled = {name: s[i] for name, (_, s) in scaled_terms.items()}
        reward = sum(w * s[i] for _, (w, s) in scaled_terms.items())
        rewards[i] = reward
        breakdowns.append(RewardBreakdown(True, raw, scaled, reward))
    return rewards, breakdowns


# ---------------------------------------------------------------------------
# REINFORCE


def reinforce_update(
    policy: Policy,
    sequences: list[list[str]],
    rewards: np.ndarray | list[float],
    learning_rate: float = 0.05,
) -> Policy:
    """One policy-gradient step: logits[ctx] += lr * advantage *
    (onehot(token) - softmax(ctx)), summed over all steps of all samples.
    The advantage baseline is the batch mean reward."""
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) != len(sequences):
        raise DesignError("rewards must align with sequences")
    baseline = float(rewards.mean())
    new_logits = {ctx: z.copy() for ctx, z in policy.logits.items()}
    size = len(policy.emittable)
    for toks, reward in zip(sequences, rewards):
        advantage = float(reward) - baseline
        if advantage == 0.0:
            continue
        ctx = policy.initial_context()
        for tok in [*toks, EOS]:
            grad = -policy.distribution(ctx)
            grad[policy._index(tok)] += 1.0
            acc = new_logits.setdefault(ctx, np.zeros(size))
            acc += learning_rate * advantage * grad
            ctx = policy.shift(ctx, tok)
    return Policy(policy.tokens, policy.context_length, new_logits)


@dataclass
class TrajectoryStep:
    step: int
    mean_reward: float
    report: MetricsReport

    def to_dict(self) -> dict:
        return {"step": self.step, "mean_reward": self.mean_reward, **self.report.to_dict()}


@dataclass
class RLResult:
    policy: Policy
    trajectory: list[TrajectoryStep]


def rl_train(
    policy: Policy,
    config: RewardConfig,
    steps: int,
    reference: TrainingReference,
    vocab: Vocabulary | None = None,
    learning_rate: float = 0.05,
    max_len: int = 64,
    seed: int = 0,
    trajectory_path=None,
) -> RLResult:
    """sample -> reward -> update loop; deterministic per seed.

    Each step's full metric report and mean reward are recorded, and
    optionally appended to a JSON-lines file.
    """
    rng = np.random.default_rng(seed)
    trajectory: list[TrajectoryStep] = []
    sink = open(trajectory_path, "w") if trajectory_path else None
    try:
        for step in range(steps):
            result = sample_batch(policy, config.batch_size, vocab, max_len, rng)
            rewards, _ = compute_rewards(result.batch, config, reference)
            policy = reinforce_update(policy, result.sequences, rewards, learning_rate)
            report = evaluate_batch(
                result.batch,
                reference,
                scaffold=config.scaffold,
                scaffold_mode="token" if isinstance(config.scaffold, str) else "subgraph",
                vocab=vocab,
                distributions=result.distributions,
            )
            entry = TrajectoryStep(step, float(np.mean(rewards)), report)
            trajectory.append(entry)
            if sink:
                sink.write(json.dumps(entry.to_dict()) + "\n")
    finally:
        if sink:
            sink.close()
    return RLResult(policy, trajectory)
