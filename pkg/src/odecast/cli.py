"""Operator entry point: generate data, train, evaluate, predict, serve.

Everything that affects results lives in a config file (``key = value``)
or documented flags; each artifact is written next to a manifest
(command, config hash, seed, version) sufficient to reproduce it.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .data import IcuGenConfig, SpiralConfig, gen_icu, gen_spirals, ingest, normalize_split
from .engine import EngineConfig, ensemble_document, sample_ensemble
from .errors import ContractViolation, OdecastError, ParseError
from .series import load_collection_jsonl, save_collection_jsonl
from .training import TrainConfig, evaluate, parse_config_file, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _config_sha(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(artifact_path: Path, command: str, config: dict, seed: int,
                   outputs: list[str]) -> None:
    manifest = {
        "schema": "odecast.manifest/1",
        "command": command,
        "config": config,
        "config_sha256": _config_sha(config),
        "seed": seed,
        "version": __version__,
        "outputs": outputs,
    }
    path = artifact_path.with_suffix(artifact_path.suffix + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _apply_overrides(config: TrainConfig, overrides: list[str]) -> TrainConfig:
    values = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise _UsageError(f"override must be key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in values:
            raise _UsageError(f"unknown config key {key!r}")
        from .training import _parse_value
        values[key] = _parse_value(raw.strip())
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return TrainConfig(**values)


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "spiral":
        cfg = SpiralConfig(n_series=args.n, points_per_series=args.points,
                           noise_std=args.noise_std, seed=args.seed)
        collection = gen_spirals(cfg)
        config_dict = cfg.__dict__.copy()
    else:
        cfg = IcuGenConfig(n_patients=args.n, death_ratio=args.death_ratio,
                           seed=args.seed)
        collection = gen_icu(cfg)
        config_dict = cfg.__dict__.copy()
    n_test = max(1, int(round(args.test_fraction * len(collection))))
    test, trainset = collection[:n_test], collection[n_test:]
    trainset, test = normalize_split(trainset, test)
    train_path = out_dir / f"{args.kind}_train.jsonl"
    test_path = out_dir / f"{args.kind}_test.jsonl"
    save_collection_jsonl(trainset, train_path)
    save_collection_jsonl(test, test_path)
    config_dict["test_fraction"] = args.test_fraction
    write_manifest(train_path, "gen-data", config_dict, args.seed,
                   [train_path.name, test_path.name])
    print(f"wrote {len(trainset)} train / {len(test)} test series to {out_dir}")
    return 0


def _load_dataset(path: str):
    p = Path(path)
    if p.suffix == ".csv":
        collection, warnings = ingest(p)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        return collection
    return load_collection_jsonl(p)


def cmd_train(args) -> int:
    config = parse_config_file(args.config) if args.config else TrainConfig()
    config = _apply_overrides(config, args.override or [])
    dataset = _load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.jsonl"

    def log(record):
        print(json.dumps(record, sort_keys=True), flush=True)

    params, report = train(dataset, config, log=log if args.verbose else None)
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(params, ckpt_path)
    report_path.write_text(report.to_jsonl(), encoding="utf-8")
    write_manifest(ckpt_path, "train", config.to_dict(), config.seed,
                   [ckpt_path.name, report_path.name])
    print(f"best epoch {report.best_epoch}; checkpoint {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    fractions = tuple(float(f) for f in args.fractions.split(",")) if args.fractions \
        else (0.2, 0.4, 0.6, 0.8, 1.0)
    metrics = evaluate(params, dataset, fractions=fractions)
    metrics["schema"] = "odecast.metrics/1"
    metrics["checkpoint_hash"] = checkpoint_hash(args.checkpoint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "eval", {"fractions": list(fractions)}, 0, [out.name])
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise ContractViolation(f"series index {args.index} out of range "
                                f"(dataset has {len(dataset)})")
    series = dataset[args.index]
    config = EngineConfig(theta_hop=args.theta_hop)
    ensemble = sample_ensemble(series, params, fraction=args.fraction, k=args.k,
                               horizon_mult=args.horizon_mult, seed=args.seed,
                               config=config)
    doc = ensemble_document(ensemble, params, series_id=series.series_id)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "predict",
                   {"fraction": args.fraction, "k": args.k,
                    "horizon_mult": args.horizon_mult, "index": args.index},
                   args.seed, [out.name])
    print(f"wrote ensemble (K={ensemble.k}, hop={ensemble.hop}) to {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    params = load_checkpoint(args.checkpoint)
    config = EngineConfig(k_default=args.k_default, horizon_mult=args.horizon_mult,
                          theta_hop=args.theta_hop, risk_threshold=args.threshold)
    print(f"serving checkpoint {args.checkpoint} on {args.host}:{args.port}")
    serve(params, checkpoint_hash(args.checkpoint), host=args.host, port=args.port,
          config=config)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="odecast", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=["spiral", "icu"], required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n", type=int, default=300, help="number of series/patients")
    g.add_argument("--points", type=int, default=40, help="points per spiral")
    g.add_argument("--noise-std", type=float, default=0.05)
    g.add_argument("--death-ratio", type=float, default=0.35)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True, help="training series (.jsonl or .csv)")
    t.add_argument("--config", help="training config file (key = value lines)")
    t.add_argument("--override", action="append", metavar="KEY=VALUE")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--fractions", help="comma-separated window fractions")
    e.add_argument("--out", required=True, help="metrics document path")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="export a trajectory ensemble for one series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--horizon-mult", type=float, default=2.0)
    p.add_argument("--theta-hop", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    s = sub.add_parser("serve", help="run the HTTP API")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--host", default=os.environ.get("ODECAST_HOST", "127.0.0.1"),
                   help="bind address (env ODECAST_HOST)")
    s.add_argument("--port", type=int, default=int(os.environ.get("ODECAST_PORT", "8350")),
                   help="port (env ODECAST_PORT)")
    s.add_argument("--k-default", type=int, default=30)
    s.add_argument("--horizon-mult", type=float, default=2.0)
    s.add_argument("--theta-hop", type=float, default=1.0)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ContractViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OdecastError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
