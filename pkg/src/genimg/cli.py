"""Command-line entry point: ``genimg {synth,pretrain,explain,assoc,eval,report}``.

Every command takes ``--config FILE`` (TOML; top-level ``seed``/``out``/
``threads`` plus one table per command), ``--seed``, ``--out`` and
``--threads``. Per-stage flags are named after the config dataclass fields.
Precedence is defaults < config file < flags. Each run writes
``config.resolved.json`` and ``summary.json`` into its output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .association import AssocConfig, covariate_matrix, manhattan_svg, run_association
from .data import FeatureConfig, build_features, read_dataset, write_dataset
from .encoders import load_checkpoint, save_checkpoint
from .errors import ConfigError, GenimgError, DataError, StaleArtifactError
from .explain import (ExplainerConfig, Individual, ReferenceBatch, completeness_gap, global_attribution,
                      modality_attribution_summary)
from .synth import MODALITIES, SynthConfig, synth_generate
from .trainer import TrainConfig, image_embeddings, linear_eval, pretrain, retrieval_accuracy
from .tsvio import config_hash, directory_fingerprint, read_json, read_table, write_json, write_table

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("genimg")

DATA_INPUTS = ("images.tsv", "genotypes.tsv", "positions.tsv", "pgs_weights", "burden_annotation.tsv",
               "covariates.tsv", "presence.tsv")
RETRIEVAL_BATCH = 32


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_fields(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        if f.type in ("bool", bool) or isinstance(default, bool):
            parser.add_argument(_flag(f.name), dest=f.name, type=_parse_bool, default=argparse.SUPPRESS,
                                metavar="BOOL")
        elif f.type in ("list", list) or isinstance(default, list) or f.default_factory is list:
            parser.add_argument(_flag(f.name), dest=f.name, type=_parse_list, default=argparse.SUPPRESS,
                                metavar="A,B,...")
        elif f.name == "missing":
            for m in MODALITIES:
                parser.add_argument(f"--missing-{m}", dest=f"missing_{m}", type=float,
                                    default=argparse.SUPPRESS)
        else:
            kind = type(default) if default is not None else float
            if kind not in (int, float, str):
                kind = str
            parser.add_argument(_flag(f.name), dest=f.name, type=kind, default=argparse.SUPPRESS)


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def _parse_list(text):
    return [t for t in text.split(",") if t]


def _build(cls, values):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: v for k, v in values.items() if k in names}
    if cls is SynthConfig:
        missing = dict(kwargs.get("missing") or {m: 0.0 for m in MODALITIES})
        for m in MODALITIES:
            if f"missing_{m}" in values:
                missing[m] = values[f"missing_{m}"]
        kwargs["missing"] = missing
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(args, command):
    """Merge defaults, config file tables and explicit flags into one dict."""
    values = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
        values.update({k: v for k, v in doc.items() if not isinstance(v, dict)})
        values.update(doc.get(command, {}))
    values.update({k: v for k, v in vars(args).items() if k not in ("func", "config", "verbose")})
    values.setdefault("seed", 42)
    values.setdefault("threads", 1)
    if not values.get("out"):
        raise ConfigError("an output directory is required (--out or 'out' in the config file)")
    return values


def _prepare_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory is not writable: {path}")


UNHASHED = ("out", "threads", "config", "data", "checkpoint", "embeddings", "labels", "run")


def _data_fingerprint(data_dir):
    return directory_fingerprint([os.path.join(data_dir, name) for name in DATA_INPUTS])


def _finish(out, command, values, summary):
    resolved = {k: v for k, v in sorted(values.items())}
    write_json(os.path.join(out, "config.resolved.json"),
               {"command": command, "version": __version__, "config": resolved})
    # paths and worker count do not change what is computed; inputs are identified by fingerprints
    hashed = {k: v for k, v in resolved.items() if k not in UNHASHED}
    summary = {"command": command, "version": __version__, "config_hash": config_hash(hashed), **summary}
    write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


def _require_data(values):
    data_dir = values.get("data")
    if not data_dir:
        raise ConfigError("--data is required")
    if not os.path.isdir(data_dir):
        raise DataError(f"missing dataset directory: expected {data_dir}")
    return data_dir


def _load_model(values, data_dir):
    path = values.get("checkpoint")
    if not path:
        raise ConfigError("--checkpoint is required")
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint: expected {path}")
    model, meta = load_checkpoint(path)
    current = _data_fingerprint(data_dir)
    if meta.get("data_fingerprint") != current:
        raise StaleArtifactError(f"checkpoint {path} was trained on data {meta.get('data_fingerprint')}, "
                                 f"but {data_dir} has fingerprint {current}; re-run pretrain")
    return model, meta


def _features(ds, meta_or_values):
    fields = {f.name for f in dataclasses.fields(FeatureConfig)}
    return build_features(ds, FeatureConfig(**{k: v for k, v in meta_or_values.items() if k in fields}))


def cmd_synth(values):
    cfg = _build(SynthConfig, values)
    out = values["out"]
    _prepare_out(out)
    ds = synth_generate(cfg, seed=values["seed"])
    write_dataset(out, ds, seed=values["seed"], config=dataclasses.asdict(cfg))
    return _finish(out, "synth", values, {
        "n": cfg.n, "n_snps": ds.genotypes.n_snps, "n_pgs": len(ds.pgs_files),
        "causal_snp_ids": ds.truth["causal_snp_ids"], "data_fingerprint": _data_fingerprint(out)})


def _holdout_split(n, frac, seed):
    order = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(frac * n))
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def cmd_pretrain(values):
    data_dir = _require_data(values)
    out = values["out"]
    _prepare_out(out)
    tcfg = _build(TrainConfig, values)
    fcfg = _build(FeatureConfig, values)
    holdout = float(values.get("holdout", 0.1))
    if not 0.0 <= holdout < 1.0:
        raise ConfigError("holdout must lie in [0, 1)")
    ds = read_dataset(data_dir)
    data = build_features(ds, fcfg)
    train_rows, held_rows = _holdout_split(data.n, holdout, tcfg.seed)
    model, trace = pretrain(data.subset(train_rows), tcfg)
    fp = _data_fingerprint(data_dir)
    meta = {"data_fingerprint": fp, "features": dataclasses.asdict(fcfg), "train": dataclasses.asdict(tcfg),
            "holdout_ids": [data.ids[i] for i in held_rows]}
    save_checkpoint(model, os.path.join(out, "checkpoint.json"), meta)
    write_table(os.path.join(out, "loss_trace.tsv"), trace, seed=tcfg.seed, config=meta["train"])
    summary = {"data_fingerprint": fp, "n_train": len(train_rows), "n_holdout": len(held_rows),
               "steps": len(trace), "first_epoch_loss": float(trace[trace.epoch == 0].loss.mean()),
               "last_epoch_loss": float(trace[trace.epoch == trace.epoch.max()].loss.mean()),
               "stage_fingerprint": config_hash({"data": fp, "train": meta["train"], "features": meta["features"]})}
    if len(held_rows) >= RETRIEVAL_BATCH:
        summary["retrieval_top1"] = retrieval_accuracy(model, data, held_rows[:RETRIEVAL_BATCH])
        summary["retrieval_chance"] = 1.0 / RETRIEVAL_BATCH
    return _finish(out, "pretrain", values, summary)


def _explain_rows(data, meta, cfg, n_explain, seed):
    held = set(meta.get("holdout_ids", []))
    pool = [i for i, iid in enumerate(data.ids) if iid in held]
    if len(pool) < cfg.b_ref + 1:
        pool = list(range(data.n))
    pool = list(np.random.default_rng(seed).permutation(pool))
    if len(pool) < cfg.b_ref + 1:
        raise DataError(f"need at least {cfg.b_ref + 1} individuals for b_ref={cfg.b_ref}")
    return sorted(pool[:cfg.b_ref]), pool[cfg.b_ref:cfg.b_ref + n_explain]


def cmd_explain(values):
    data_dir = _require_data(values)
    out = values["out"]
    _prepare_out(out)
    ecfg = _build(ExplainerConfig, values)
    model, meta = _load_model(values, data_dir)
    train = meta.get("train", {})
    ecfg = dataclasses.replace(ecfg, tau=values.get("tau", train.get("tau", ecfg.tau)),
                               lam=values.get("lam", train.get("lam", ecfg.lam)),
                               denominator_mode=values.get("denominator_mode",
                                                           train.get("denominator_mode", ecfg.denominator_mode)))
    n_explain = int(values.get("n_explain", 200))
    n_check = int(values.get("n_completeness", 3))
    data = _features(read_dataset(data_dir), meta.get("features", {}))
    ref_rows, rows = _explain_rows(data, meta, ecfg, n_explain, values["seed"])
    ref = ReferenceBatch(model, data.subset(ref_rows))
    reports = global_attribution(data, rows, ref, model, ecfg)
    for r in reports:
        write_table(os.path.join(out, f"attributions_{r.modality}.tsv"), r.to_frame(), values["seed"],
                    r.metadata())
    gaps = [completeness_gap(Individual.from_data(data, i), ref, model, ecfg) for i in rows[:n_check]]
    top = int(values.get("top", 30))
    write_json(os.path.join(out, "attributions.json"), {
        "reference_fingerprint": ref.fingerprint, "ig_steps": ecfg.ig_steps, "baseline": ecfg.baseline,
        "b_ref": ref.size, "reports": [r.metadata() for r in reports],
        "top": {r.modality: r.top(top) for r in reports}})
    return _finish(out, "explain", values, {
        "reference_fingerprint": ref.fingerprint, "n_explained": len(rows),
        "modality_summary": modality_attribution_summary(reports),
        "completeness_gap_mean": float(np.mean(gaps)) if gaps else None,
        "completeness_gaps": [float(g) for g in gaps]})


def _read_embeddings(path, ids):
    frame = read_table(path, dtype={"#iid": str})
    if list(frame["#iid"]) != list(ids):
        raise DataError(f"{path}: individuals are not aligned with the genotype file")
    return frame.iloc[:, 1:].to_numpy(dtype=np.float64)


def cmd_assoc(values):
    data_dir = _require_data(values)
    out = values["out"]
    _prepare_out(out)
    cfg = _build(AssocConfig, values)
    ds = read_dataset(data_dir)
    if values.get("embeddings"):
        emb = _read_embeddings(values["embeddings"], ds.genotypes.individual_ids)
        source = {"embeddings": values["embeddings"]}
    else:
        model, meta = _load_model(values, data_dir)
        emb = image_embeddings(model, ds.images)
        source = {"checkpoint_data_fingerprint": meta["data_fingerprint"]}
        frame = pd.DataFrame(emb, columns=[f"emb{j}" for j in range(emb.shape[1])])
        frame.insert(0, "#iid", ds.genotypes.individual_ids)
        write_table(os.path.join(out, "embeddings.tsv"), frame, values["seed"], source)
    result = run_association(emb, ds.genotypes, covariate_matrix(ds.covariates, cfg.covariates), cfg)
    provenance = {k: v for k, v in dataclasses.asdict(cfg).items() if k != "threads"}
    write_table(os.path.join(out, "sumstats.tsv"), result.sumstats, values["seed"], provenance)
    write_table(os.path.join(out, "clumps.tsv"), result.clump_frame(), values["seed"], provenance)
    manhattan_svg(result.sumstats, os.path.join(out, "manhattan.svg"), cfg.p_genomewide)
    summary = {"n_snps_tested": len(result.sumstats), "n_clumps": len(result.clumps),
               "index_snps": [c.index_snp for c in result.clumps],
               "n_significant": int((result.sumstats.p_agg <= cfg.clump_p1).sum()),
               "explained_variance": result.pca.explained_variance.tolist(), **source}
    causal = ds.truth.get("causal_snp_ids") if isinstance(ds.truth, dict) else None
    if causal:
        hit = [c for c in result.clumps if set(c.snps) & set(causal)]
        summary["planted_recovered"] = sorted(set(causal) & {s for c in hit for s in c.snps})
        summary["clumps_without_planted"] = len(result.clumps) - len(hit)
    return _finish(out, "assoc", values, summary)


def cmd_eval(values):
    data_dir = _require_data(values)
    out = values["out"]
    _prepare_out(out)
    model, meta = _load_model(values, data_dir)
    ds = read_dataset(data_dir)
    label = values.get("label", "latent0")
    if values.get("labels"):
        frame = read_table(values["labels"], dtype={"#iid": str})
        if list(frame["#iid"]) != ds.genotypes.individual_ids:
            raise DataError(f"{values['labels']}: individuals are not aligned with the dataset")
        if label not in frame.columns:
            raise DataError(f"label column {label!r} not found in {values['labels']}")
        y = frame[label].to_numpy(dtype=np.float64)
    else:
        if not label.startswith("latent") or not label[6:].isdigit() or int(label[6:]) >= ds.latent.shape[1]:
            raise ConfigError(f"label {label!r} is not a latent trait of this dataset; pass --labels FILE")
        y = ds.latent[:, int(label[6:])]
    task = values.get("task", "regression")
    report = linear_eval(model, ds.images, y, task=task, train_frac=float(values.get("train_frac", 0.8)),
                         seed=values["seed"])
    write_json(os.path.join(out, "eval.json"), report)
    return _finish(out, "eval", values, {"label": label, **report})


def cmd_report(values):
    run = values.get("run")
    if not run or not os.path.isdir(run):
        raise DataError(f"missing run directory: expected {run}")
    out = values["out"]
    _prepare_out(out)
    stages = {}
    for root, _, names in sorted(os.walk(run)):
        if "summary.json" in names and os.path.abspath(root) != os.path.abspath(out):
            doc = read_json(os.path.join(root, "summary.json"))
            stages[os.path.relpath(root, run)] = doc
    if not stages:
        raise DataError(f"no stage summaries found under {run}")
    lines = ["# genimg run report", ""]
    for name, doc in sorted(stages.items()):
        lines.append(f"## {name} ({doc.get('command')})")
        for key in sorted(doc):
            if key in ("command", "version"):
                continue
            lines.append(f"- {key}: {json.dumps(doc[key], sort_keys=True, default=str)}")
        lines.append("")
    with open(os.path.join(out, "report.md"), "w") as fh:
        fh.write("\n".join(lines))
    write_json(os.path.join(out, "report.json"), stages)
    return _finish(out, "report", values, {"stages": sorted(stages)})


def build_parser():
    parser = argparse.ArgumentParser(prog="genimg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"genimg {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker cap")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a planted-signal dataset")
    _add_fields(p, SynthConfig)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining")
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--holdout", type=float, default=argparse.SUPPRESS)
    _add_fields(p, TrainConfig, skip=("seed",))
    _add_fields(p, FeatureConfig)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("explain", parents=[common], help="integrated-gradients attributions")
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--n-explain", dest="n_explain", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n-completeness", dest="n_completeness", type=int, default=argparse.SUPPRESS)
    p.add_argument("--top", type=int, default=argparse.SUPPRESS)
    _add_fields(p, ExplainerConfig)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("assoc", parents=[common], help="embedding GWAS")
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--embeddings", default=argparse.SUPPRESS, help="embeddings TSV instead of a checkpoint")
    _add_fields(p, AssocConfig, skip=("threads",))
    p.set_defaults(func=cmd_assoc)

    p = sub.add_parser("eval", parents=[common], help="linear evaluation on frozen embeddings")
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--label", default=argparse.SUPPRESS)
    p.add_argument("--labels", default=argparse.SUPPRESS, help="TSV with #iid and label columns")
    p.add_argument("--task", choices=("regression", "classification"), default=argparse.SUPPRESS)
    p.add_argument("--train-frac", dest="train_frac", type=float, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="collect stage summaries of a run")
    p.add_argument("--run", default=argparse.SUPPRESS, help="directory holding stage outputs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _resolve(args, args.command)
        return args.func(values)
    except GenimgError as exc:
        print(f"genimg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
