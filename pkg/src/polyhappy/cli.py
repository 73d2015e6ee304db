"""Command-line surface tying the pipeline together.

CSV datasets in, JSON artifacts out; every artifact is written atomically
(temp file then rename) and every random choice flows through --seed. Exit
codes: 0 success, 1 usage error, 2 data error, 3 internal error.

Config files carry a schema_version field (currently 1); unknown versions
are rejected rather than guessed at.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attribute import AttributionError, attribute_monomer
from .chemfeat import ScalerParams
from .dataset import DataError, DatasetRecord, SplitPlan, ingest, kfold_split
from .design import (
    DesignError,
    Policy,
    PropertyOracle,
    PropertyTarget,
    RewardConfig,
    fit_ngram,
    predict_property,
    r2_score,
    ridge_fit,
    rl_train,
    sample_batch,
    train_oracle,
)
from .forge import MiningConfig, MiningError, Vocabulary, forge_run
from .happy import DecodeError, EncodingError, decode_string, encode, flatten, tokenize_smiles
from .metrics import (
    EnvironmentTable,
    GenerationBatch,
    MetricError,
    build_reference,
    evaluate_batch,
)
from .molgraph import ParseError, parse_smiles, write_smiles

SCHEMA_VERSION = 1

DATA_ERRORS = (
    DataError, ParseError, MiningError, EncodingError, DecodeError,
    MetricError, DesignError, AttributionError, FileNotFoundError,
    json.JSONDecodeError, KeyError, ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _read_config(path: str | Path) -> dict:
    config = json.loads(Path(path).read_text())
    version = config.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported config schema_version: {version!r}")
    return config


def _load_records(path: str | Path, rejects: str | Path | None = None) -> list[DatasetRecord]:
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
        return [DatasetRecord(r["smiles"], r.get("properties", {})) for r in rows]
    return ingest(path, rejects)


def _load_vocab(path: str | Path) -> Vocabulary:
    return Vocabulary.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# Oracle and policy artifacts


def _oracle_to_json(oracle: PropertyOracle) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "property_name": oracle.property_name,
        "selected": list(oracle.selected),
        "scaler": {"mins": oracle.scaler.mins.tolist(), "maxs": oracle.scaler.maxs.tolist()},
        "weights": oracle.weights.tolist(),
        "bias": oracle.bias,
        "train_r2": oracle.train_r2,
        "validation_r2": oracle.validation_r2,
    }


def _oracle_from_json(data: dict) -> PropertyOracle:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported oracle schema_version: {data.get('schema_version')!r}")
    return PropertyOracle(
        data["property_name"],
        tuple(data["selected"]),
        ScalerParams(np.array(data["scaler"]["mins"]), np.array(data["scaler"]["maxs"])),
        np.array(data["weights"]),
        data["bias"],
        data.get("train_r2"),
        data.get("validation_r2"),
    )


def _policy_to_json(policy: Policy) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tokens": list(policy.tokens),
        "context_length": policy.context_length,
        "logits": {" ".join(ctx): z.tolist() for ctx, z in policy.logits.items()},
    }


def _policy_from_json(data: dict) -> Policy:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported policy schema_version: {data.get('schema_version')!r}")
    logits = {tuple(k.split(" ")): np.array(v) for k, v in data["logits"].items()}
    return Policy(tuple(data["tokens"]), data["context_length"], logits)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    records = ingest(args.input, args.rejects)
    payload = [{"smiles": r.smiles, "properties": r.properties} for r in records]
    atomic_write(args.output, json.dumps(payload, indent=2))
    print(f"ingested {len(records)} records -> {args.output}")
    return 0


def cmd_forge(args) -> int:
    records = _load_records(args.input)
    graphs = [parse_smiles(r.smiles) for r in records]
    vocab, _ = forge_run(graphs, MiningConfig(args.threshold, args.max_iterations))
    atomic_write(args.output, vocab.dumps())
    merged = sum(1 for e in vocab.entries if e.iteration > 0)
    print(f"vocabulary: {len(vocab.entries)} entries ({merged} merged) -> {args.output}")
    return 0


def cmd_encode(args) -> int:
    vocab = _load_vocab(args.vocab)
    if args.smiles:
        print(" ".join(flatten(encode(parse_smiles(args.smiles), vocab))))
        return 0
    if not (args.input and args.output):
        raise UsageError("encode needs --smiles or --input and --output")
    records = _load_records(args.input)
    rows = []
    for r in records:
        text = " ".join(flatten(encode(parse_smiles(r.smiles), vocab)))
        rows.append({"smiles": r.smiles, "happy": text})
    atomic_write(args.output, json.dumps(rows, indent=2))
    print(f"encoded {len(rows)} monomers -> {args.output}")
    return 0


def cmd_decode(args) -> int:
    vocab = _load_vocab(args.vocab)
    if args.happy:
        print(write_smiles(decode_string(args.happy, vocab)))
        return 0
    if not (args.input and args.output):
        raise UsageError("decode needs --happy or --input and --output")
    rows = json.loads(Path(args.input).read_text())
    out = []
    for row in rows:
        text = row["happy"] if isinstance(row, dict) else row
        out.append({"happy": text, "smiles": write_smiles(decode_string(text, vocab))})
    atomic_write(args.output, json.dumps(out, indent=2))
    print(f"decoded {len(out)} strings -> {args.output}")
    return 0


def cmd_stats(args) -> int:
    vocab = _load_vocab(args.vocab)
    records = _load_records(args.input)
    happy_lengths, smiles_lengths = [], []
    for r in records:
        g = parse_smiles(r.smiles)
        tokens = [t for t in flatten(encode(g, vocab)) if t not in ("(", ")")]
        happy_lengths.append(len(tokens))
        smiles_lengths.append(len(tokenize_smiles(r.smiles)))
    happy_mean = float(np.mean(happy_lengths))
    smiles_mean = float(np.mean(smiles_lengths))
    payload = {
        "monomers": len(records),
        "vocabulary_size": len(vocab.entries),
        "happy_tokens_mean": happy_mean,
        "happy_tokens_std": float(np.std(happy_lengths)),
        "smiles_tokens_mean": smiles_mean,
        "smiles_tokens_std": float(np.std(smiles_lengths)),
        "compression_ratio": happy_mean / smiles_mean,
    }
    atomic_write(args.output, json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return 0


def cmd_train_oracle(args) -> int:
    records = _load_records(args.input)
    data = [
        (parse_smiles(r.smiles), r.properties[args.property])
        for r in records
        if args.property in r.properties
    ]
    if not data:
        raise DataError(f"no records carry property {args.property!r}")
    oracle = train_oracle(data, args.k, args.ridge_lambda, args.property)
    cv_scores = []
    if args.folds > 1:
        plan = SplitPlan(n_folds=args.folds, seed=args.seed)
        dummies = [DatasetRecord(r.smiles) for r in records if args.property in r.properties]
        for fold in kfold_split(dummies, plan)[0]:
            holdout = set(fold)
            train = [d for i, d in enumerate(data) if i not in holdout]
            test = [d for i, d in enumerate(data) if i in holdout]
            if len(train) < args.k + 2 or len(test) < 2:
                continue
            fold_oracle = train_oracle(train, args.k, args.ridge_lambda, args.property)
            preds = [predict_property(fold_oracle, g) for g, _ in test]
            cv_scores.append(r2_score(preds, [v for _, v in test]))
    payload = _oracle_to_json(oracle)
    payload["cv_r2"] = float(np.mean(cv_scores)) if cv_scores else None
    atomic_write(args.output, json.dumps(payload, indent=2))
    print(
        f"oracle[{args.property}]: train R2 {oracle.train_r2:.4f}"
        + (f", cv R2 {payload['cv_r2']:.4f}" if cv_scores else "")
        + f" -> {args.output}"
    )
    return 0


def cmd_predict(args) -> int:
    oracle = _oracle_from_json(json.loads(Path(args.oracle).read_text()))
    if args.smiles:
        print(f"{predict_property(oracle, parse_smiles(args.smiles)):.6g}")
        return 0
    if not (args.input and args.output):
        raise UsageError("predict needs --smiles or --input and --output")
    records = _load_records(args.input)
    rows = [
        {"smiles": r.smiles, "prediction": predict_property(oracle, parse_smiles(r.smiles))}
        for r in records
    ]
    atomic_write(args.output, json.dumps(rows, indent=2))
    print(f"predicted {len(rows)} values -> {args.output}")
    return 0


def cmd_generate(args) -> int:
    vocab = _load_vocab(args.vocab) if args.vocab else None
    if args.policy:
        policy = _policy_from_json(json.loads(Path(args.policy).read_text()))
    elif args.fit_from:
        rows = json.loads(Path(args.fit_from).read_text())
        sequences = [row["happy"].split() for row in rows]
        tokens = sorted({t for seq in sequences for t in seq})
        policy = fit_ngram(sequences, tokens, args.context_length)
    else:
        raise UsageError("generate needs --policy or --fit-from")
    result = sample_batch(policy, args.n, vocab, args.max_len, args.seed)
    rows = []
    for text, g in zip(result.batch.samples, result.batch.decoded):
        rows.append({"happy": text, "smiles": write_smiles(g) if g is not None else None})
    atomic_write(args.output, json.dumps(rows, indent=2))
    valid = len(result.batch.valid_indices)
    print(f"sampled {args.n} sequences ({valid} valid) -> {args.output}")
    return 0


def cmd_rl_train(args) -> int:
    config = _read_config(args.config)
    vocab = _load_vocab(config["vocab"])
    records = _load_records(config["corpus"])
    graphs = [parse_smiles(r.smiles) for r in records]
    reference = build_reference(graphs)

    targets = []
    for item in config.get("property_targets", []):
        oracle = _oracle_from_json(json.loads(Path(item["oracle"]).read_text()))
        targets.append(
            PropertyTarget(oracle, item["mode"], item["target"], item.get("weight", 1.0))
        )
    weights = config.get("weights", {})
    reward = RewardConfig(
        property_targets=tuple(targets),
        diversity_weight=weights.get("diversity", 1.0),
        similarity_weight=weights.get("similarity", 1.0),
        specificity_weight=weights.get("specificity", 1.0),
        sa_weight=weights.get("sa", 1.0),
        scaffold=config.get("scaffold"),
        scaffold_weight=weights.get("scaffold", 1.0),
        sa_table=EnvironmentTable.fit(graphs),
        batch_size=config.get("batch_size", 512),
    )

    if config.get("policy"):
        policy = _policy_from_json(json.loads(Path(config["policy"]).read_text()))
    else:
        sequences = [flatten(encode(g, vocab)) for g in graphs]
        tokens = sorted({t for seq in sequences for t in seq})
        policy = fit_ngram(sequences, tokens, config.get("context_length", 3))

    result = rl_train(
        policy,
        reward,
        config.get("steps", 100),
        reference,
        vocab,
        learning_rate=config.get("learning_rate", 0.05),
        max_len=config.get("max_len", 64),
        seed=args.seed,
        trajectory_path=args.trajectory,
    )
    atomic_write(args.output, json.dumps(_policy_to_json(result.policy), indent=2))
    last = result.trajectory[-1] if result.trajectory else None
    if last:
        print(
            f"rl-train: {len(result.trajectory)} steps, "
            f"final mean reward {last.mean_reward:.4f} -> {args.output}"
        )
    else:
        print(f"rl-train: 0 steps -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    vocab = _load_vocab(args.vocab) if args.vocab else None
    rows = json.loads(Path(args.input).read_text())
    samples = [row["happy"] if isinstance(row, dict) else row for row in rows]
    batch = GenerationBatch.from_samples(samples, vocab)
    reference = build_reference(
        [parse_smiles(r.smiles) for r in _load_records(args.train)]
    )
    report = evaluate_batch(
        batch, reference, scaffold=args.scaffold, scaffold_mode="token", vocab=vocab
    )
    atomic_write(args.output, report.dumps())
    print(report.dumps())
    return 0


def cmd_attribute(args) -> int:
    vocab = _load_vocab(args.vocab)
    oracle = _oracle_from_json(json.loads(Path(args.oracle).read_text()))
    report = attribute_monomer(parse_smiles(args.smiles), vocab, oracle, args.steps)
    atomic_write(args.output, report.dumps())
    print(report.dumps())
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="polyhappy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("ingest", cmd_ingest, help="validate a CSV dataset into JSON records")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rejects")

    p = add("forge", cmd_forge, help="mine a subgroup vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threshold", type=int, default=100)
    p.add_argument("--max-iterations", type=int, default=50)

    p = add("encode", cmd_encode, help="encode monomers to token strings")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--smiles")

    p = add("decode", cmd_decode, help="decode token strings to SMILES")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--happy")

    p = add("stats", cmd_stats, help="sequence-length and vocabulary report")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = add("train-oracle", cmd_train_oracle, help="fit a ridge property oracle")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--property", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--ridge-lambda", type=float, default=1e-6)
    p.add_argument("--folds", type=int, default=5)

    p = add("predict", cmd_predict, help="predict a property with a saved oracle")
    p.add_argument("--oracle", required=True)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--smiles")

    p = add("generate", cmd_generate, help="sample token strings from a policy")
    p.add_argument("--vocab")
    p.add_argument("--policy")
    p.add_argument("--fit-from", help="encoded corpus JSON to fit an n-gram policy")
    p.add_argument("--context-length", type=int, default=3)
    p.add_argument("-n", type=int, default=512)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--output", required=True)

    p = add("rl-train", cmd_rl_train, help="reward-driven policy training")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--trajectory")

    p = add("evaluate", cmd_evaluate, help="score a generated batch")
    p.add_argument("--vocab")
    p.add_argument("--input", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--scaffold")
    p.add_argument("--output", required=True)

    p = add("attribute", cmd_attribute, help="subgroup/descriptor attribution")
    p.add_argument("--vocab", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--output", required=True)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except DATA_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - anything else is an internal bug
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
