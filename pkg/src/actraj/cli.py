"""Command-line entry point: ``actraj {convert,stats,synth,train,eval,predict}``.

Exit codes: 0 success, 2 input/schema error, 3 config error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import ingest, stats, synth
from .models import ModelSpec, SpecError, Task, build_model, default_spec, make_batch, predict_batch
from .nn import checkpoint
from .train import MetricsReport, NumericalError, TrainSpec, cross_validate, evaluate
from .vocab import Vocabulary, VocabularyError, scenario_vocabulary, validate_tracklet

log = logging.getLogger("actraj")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    vocabulary: str = "Scenarios2and3"
    variant: str = "baseline"
    task: str = "TP"
    k: int = 5
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    convert: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        return cls(**raw)

    def vocab(self) -> Vocabulary:
        try:
            return scenario_vocabulary(self.vocabulary)
        except VocabularyError as err:
            raise ConfigError(str(err)) from None

    def model_spec(self) -> ModelSpec:
        try:
            spec = default_spec(self.variant, self.task, self.vocab())
            merged = {**spec.to_dict(), **self.model}
            out = ModelSpec.from_dict(merged)
            out.validate()
            return out
        except (SpecError, ValueError) as err:
            raise ConfigError(str(err)) from None

    def train_spec(self) -> TrainSpec:
        try:
            ts = TrainSpec.from_dict(self.train)
            ts.validate()
            return ts
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for name in ("variant", "task", "k", "vocabulary"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "seed", None) is not None:
        cfg.train["seed"] = args.seed
        cfg.synth["seed"] = args.seed
    for name in ("max_epochs", "batch_size", "lr"):
        value = getattr(args, name, None)
        if value is not None:
            cfg.train[name] = value
    return cfg


def _read_archive(path: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"archive {path} not found")
    try:
        return ingest.read_archive(p)
    except (json.JSONDecodeError, KeyError, VocabularyError, ValueError) as err:
        raise InputError(f"malformed archive {path}: {err}") from None


# commands ------------------------------------------------------------------

def cmd_convert(args, cfg: RunConfig) -> int:
    src = Path(args.input)
    if not src.exists():
        raise InputError(f"input file {src} not found")
    report = ingest.ParseReport()
    opts = cfg.convert
    try:
        trajs = ingest.read_csv(src, column_map=opts.get("column_map"),
                                unit_scale=float(opts.get("unit_scale", 1.0)), report=report)
    except ingest.SchemaError as err:
        raise InputError(str(err)) from None
    tracklets = ingest.build_tracklets(trajs)
    vocab = cfg.vocab()
    bad = [tr for tr in tracklets if validate_tracklet(tr, vocab)]
    if bad and not args.keep_invalid:
        log.warning("%d tracklet(s) violate the %s vocabulary and were dropped", len(bad),
                    cfg.vocabulary)
        tracklets = [tr for tr in tracklets if not validate_tracklet(tr, vocab)]
    out = _out_dir(args)
    n = ingest.write_archive(tracklets, out / "tracklets.jsonl")
    summary = {"trajectories_in": len(trajs), "tracklets_out": n,
               "rows_read": report.rows_read, "rows_dropped": report.rows_dropped,
               "tracklets_dropped": len(bad) if not args.keep_invalid else 0}
    print(json.dumps(summary))
    if n == 0:
        log.warning("no tracklets written")
    return EXIT_OK


def cmd_stats(args, cfg: RunConfig) -> int:
    tracklets = _read_archive(args.archive)
    out = _out_dir(args)
    rows = stats.per_action_kinematics(tracklets, args.distance_mode)
    if tracklets:
        rows.append(stats.global_kinematics(tracklets))
    with open(out / "kinematics.csv", "w", encoding="utf-8") as fh:
        stats.write_report_csv(rows, fh)
    counts = stats.action_distribution(tracklets, cfg.vocab().actions if args.vocab_only
                                       else tuple(stats.ActionClass))
    (out / "distribution.json").write_text(stats.distribution_json(counts) + "\n",
                                           encoding="utf-8")
    for a, n in stats.sorted_distribution(counts):
        print(f"{a:<20}{n:>10}")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    opts = dict(cfg.synth)
    if args.n is not None:
        opts["n_trajectories"] = args.n
    if args.noise is not None:
        opts["noise_std"] = args.noise
    try:
        spec = synth.SynthSpec.from_dict(opts)
        trajs = synth.generate(spec)
    except (synth.SynthSpecError, TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    out = _out_dir(args)
    with open(out / "synth.csv", "w", encoding="utf-8", newline="") as fh:
        ingest.write_csv(trajs, fh, velocities=False)
    print(json.dumps({"trajectories": len(trajs), "path": str(out / "synth.csv")}))
    return EXIT_OK


def _metrics_lines(report: MetricsReport, meta: dict) -> list[str]:
    header = {"record": "header", "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    lines = [json.dumps(header)]
    lines.append(json.dumps({"record": "run", **meta}, sort_keys=True))
    lines += [json.dumps(r, sort_keys=True) for r in report.records()]
    return lines


def cmd_train(args, cfg: RunConfig) -> int:
    tracklets = _read_archive(args.archive)
    vocab = cfg.vocab()
    mspec, tspec = cfg.model_spec(), cfg.train_spec()
    bad = [tr.tracklet_id for tr in tracklets if validate_tracklet(tr, vocab)]
    if bad:
        raise InputError(f"{len(bad)} tracklet(s) fail validation, e.g. {bad[0]}")
    jobs = 1 if args.deterministic else max(1, args.jobs)
    try:
        folds = ingest.assign_folds(tracklets, cfg.k, tspec.seed)
    except ingest.FoldCountError as err:
        raise InputError(str(err)) from None
    report, results = cross_validate(tracklets, mspec, tspec, vocab, folds=folds, jobs=jobs)
    out = _out_dir(args)
    for i, res in enumerate(results):
        val_ids = sorted(t for t, f in folds.folds.items() if f == i)
        checkpoint.save(out / f"fold{i}.ckpt", res.state, {
            "model_spec": mspec.to_dict(), "train_spec": tspec.to_dict(),
            "vocabulary": vocab.to_dict(), "fold": i, "k": folds.k,
            "val_trajectory_ids": val_ids, "metrics": res.metrics,
        })
    meta = {"model_spec": mspec.to_dict(), "train_spec": tspec.to_dict(), "k": folds.k,
            "vocabulary": cfg.vocabulary, "n_tracklets": len(tracklets)}
    (out / "metrics.jsonl").write_text("\n".join(_metrics_lines(report, meta)) + "\n",
                                       encoding="utf-8")
    (out / "folds.json").write_text(json.dumps(folds.folds, sort_keys=True, indent=1) + "\n",
                                    encoding="utf-8")
    print(report.table())
    return EXIT_OK


def _load_model(path: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"checkpoint {path} not found")
    try:
        state, meta = checkpoint.load(p)
        spec = ModelSpec.from_dict(meta["model_spec"])
        vocab = Vocabulary.from_dict(meta["vocabulary"])
        dtype = next(iter(state.values())).dtype
        model = build_model(spec, 0, dtype)
        model.load_state_dict(state)
    except (checkpoint.CheckpointError, KeyError, SpecError, ValueError) as err:
        raise ConfigError(f"checkpoint {path} does not match a model spec: {err}") from None
    return model, vocab, meta


def cmd_eval(args, cfg: RunConfig) -> int:
    tracklets = _read_archive(args.archive)
    per_fold = []
    for i, path in enumerate(args.checkpoints):
        model, vocab, meta = _load_model(path)
        if args.split == "val" and "val_trajectory_ids" in meta:
            ids = set(meta["val_trajectory_ids"])
            subset = [tr for tr in tracklets if tr.source_trajectory_id in ids]
        else:
            subset = list(tracklets)
        if not subset:
            raise InputError(f"no tracklets of {path} found in the archive")
        batch = make_batch(subset, vocab, model.spec.use_actions_in_input, model.dtype)
        f1_avg = meta.get("train_spec", {}).get("f1_average", "macro")
        per_fold.append({"fold": meta.get("fold", i), **evaluate(model, batch, f1_avg)})
    report = MetricsReport.from_folds(per_fold)
    if args.out:
        out = _out_dir(args)
        (out / "eval_metrics.jsonl").write_text(
            "\n".join(_metrics_lines(report, {"checkpoints": list(args.checkpoints)})) + "\n",
            encoding="utf-8")
    print(report.table())
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    tracklets = _read_archive(args.archive)
    model, vocab, _ = _load_model(args.checkpoint)
    match = [tr for tr in tracklets if tr.tracklet_id == args.tracklet_id]
    if not match:
        raise InputError(f"tracklet {args.tracklet_id} not in archive")
    tr = match[0]
    batch = make_batch([tr], vocab, model.spec.use_actions_in_input, model.dtype)
    out = predict_batch(model, batch, vocab)
    truth = tr.positions()[8:]
    rec = {
        "tracklet_id": tr.tracklet_id,
        "agent_class": tr.agent_class.value,
        "observed": [{"t": s.t, "x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy,
                      "action": s.action.value} for s in tr.observed],
        "future_t": [s.t for s in tr.future],
        "true_positions": truth.tolist(),
        "true_actions": [s.action.value for s in tr.future],
    }
    if model.spec.predicts_trajectory:
        rec["predicted_positions"] = out.positions[0].tolist()
        rec["predicted_velocities"] = out.velocities[0].tolist()
        dist = np.linalg.norm(truth - out.positions[0], axis=1)
        rec["ade"], rec["fde"] = float(dist.mean()), float(dist[-1])
    if out.actions is not None:
        rec["predicted_actions"] = [a.value for a in out.actions[0]]
        rec["action_probs"] = out.action_probs[0].tolist()
    text = json.dumps(rec)
    if args.out:
        out_dir = _out_dir(args)
        (out_dir / f"prediction_{tr.tracklet_id.replace('/', '_').replace('#', '_')}.json") \
            .write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1, help="parallel folds")
    common.add_argument("--deterministic", action="store_true", help="force --jobs 1")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="actraj", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", parents=[common], help="raw CSV -> tracklet archive")
    c.add_argument("input")
    c.add_argument("--vocabulary", choices=["Full", "Scenarios2and3"])
    c.add_argument("--keep-invalid", action="store_true",
                   help="keep tracklets with labels outside the vocabulary")
    c.set_defaults(func=cmd_convert, default_out="out")

    s = sub.add_parser("stats", parents=[common], help="dataset statistics report")
    s.add_argument("archive")
    s.add_argument("--distance-mode", choices=["per_action", "per_segment"], default="per_action")
    s.add_argument("--vocabulary", choices=["Full", "Scenarios2and3"])
    s.add_argument("--vocab-only", action="store_true",
                   help="count only labels of the selected vocabulary")
    s.set_defaults(func=cmd_stats, default_out="out")

    g = sub.add_parser("synth", parents=[common], help="write a synthetic raw CSV")
    g.add_argument("--n", type=int)
    g.add_argument("--noise", type=float)
    g.set_defaults(func=cmd_synth, default_out="out")

    t = sub.add_parser("train", parents=[common], help="k-fold cross-validated training")
    t.add_argument("archive")
    t.add_argument("--variant", choices=["baseline", "agent", "actions", "both"])
    t.add_argument("--task", choices=[x.value for x in Task])
    t.add_argument("--vocabulary", choices=["Full", "Scenarios2and3"])
    t.add_argument("--k", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train, default_out="runs")

    e = sub.add_parser("eval", parents=[common], help="evaluate checkpoints")
    e.add_argument("archive")
    e.add_argument("checkpoints", nargs="+")
    e.add_argument("--split", choices=["val", "all"], default="val")
    e.set_defaults(func=cmd_eval, default_out=None)

    r = sub.add_parser("predict", parents=[common], help="predict one tracklet as JSON")
    r.add_argument("archive")
    r.add_argument("checkpoint")
    r.add_argument("--tracklet-id", required=True)
    r.set_defaults(func=cmd_predict, default_out=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.out is None:
        args.out = args.default_out
    try:
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        return args.func(args, cfg)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
