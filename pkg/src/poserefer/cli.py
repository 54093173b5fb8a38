"""Command-line pipeline: gen -> embed -> features -> train/eval or matrix.

Stages communicate exclusively through documented files, each stamped with
the hash of the configuration that produced it; a downstream stage refuses
hash mismatches. Every command is idempotent for identical inputs and
seed, and exits 0 on success or 1 with a structured JSON error on stderr.

Flags can also be supplied through POSEREFER_* environment variables
(e.g. POSEREFER_SEED, POSEREFER_OUT, POSEREFER_WORKERS); explicit flags
win over the environment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .affordance import KernelConfig, extract_features, load_features, save_features
from .core import load_dataset, save_dataset, validate_reference
from .embeddings import (
    EmbeddingStore,
    PseudoEmbedderConfig,
    build_pseudo_store,
    ingest_embeddings,
    write_embeddings,
)
from .errors import CliError, ConfigMismatchError, PoseReferError
from .evaluation import (
    build_report,
    build_ttests,
    evaluate_records,
    loro_folds,
    run_matrix,
    write_alphatrace_csv,
    write_report_csv,
    write_report_md,
    write_results_jsonl,
    write_ttests_csv,
)
from .fusion import (
    CONFIG_NAMES,
    FusionModel,
    ModelConfig,
    TrainerConfig,
    build_samples,
    category_index,
    frozen_category_matrix,
    named_config,
    train,
)
from .neural import ScheduleConfig, load_checkpoint, save_checkpoint
from .serialize import config_hash, jsonable
from .synth import SynthConfig, gen_dataset

log = logging.getLogger("poserefer")


def _env(name: str) -> str | None:
    return os.environ.get(f"POSEREFER_{name}")


def _read_json(path: str | Path, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise CliError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _require_path(value: str | None, flag: str) -> Path:
    if not value:
        raise CliError(f"missing required path: {flag} (or POSEREFER_{flag.strip('-').upper()})")
    return Path(value)


def _write_manifest(out_dir: Path, payload: dict) -> None:
    payload = {"tool_version": __version__, **payload}
    (out_dir / "runmanifest.json").write_text(
        json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _dataclass_from(cls, data: dict, what: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise CliError(f"{what}: unknown fields {sorted(unknown)}")
    if cls is SynthConfig and "objects_per_room" in data:
        data = {**data, "objects_per_room": tuple(data["objects_per_room"])}
    return cls(**data)


def _train_hash(model: ModelConfig, schedule: ScheduleConfig, trainer: TrainerConfig,
                kernel: KernelConfig) -> str:
    return config_hash(
        {"model": jsonable(model), "schedule": jsonable(schedule),
         "trainer": jsonable(trainer), "kernel": jsonable(kernel)}
    )


def _load_inputs(args, kernel: KernelConfig):
    data_dir = _require_path(args.data, "--data")
    emb_path = _require_path(args.embeddings, "--embeddings")
    feat_path = _require_path(args.features, "--features")
    if not emb_path.exists():
        raise CliError(f"embeddings file not found: {emb_path}")
    if not feat_path.exists():
        raise CliError(f"features file not found: {feat_path}")
    dataset = load_dataset(data_dir)
    store = ingest_embeddings(emb_path)
    features, _ = load_features(feat_path, expected_config=kernel)
    return dataset, store, features, (str(data_dir), str(emb_path), str(feat_path))


def _runconfig_parts(rc: dict):
    model_overrides = dict(rc.get("model_overrides", {}))
    schedule = _dataclass_from(ScheduleConfig, rc.get("schedule", {}), "runconfig.schedule")
    trainer = _dataclass_from(TrainerConfig, rc.get("trainer", {}), "runconfig.trainer")
    kernel = _dataclass_from(KernelConfig, rc.get("kernel", {}), "runconfig.kernel")
    return model_overrides, schedule, trainer, kernel


# --- commands ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg_data = _read_json(args.config, "synth config") if args.config else {}
    if args.seed is not None:
        cfg_data["seed"] = args.seed
    cfg = _dataclass_from(SynthConfig, cfg_data, "synth config")
    out_dir = _require_path(args.out, "--out")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, manifest = gen_dataset(cfg)
    save_dataset(dataset, out_dir)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(out_dir, {
        "command": "gen",
        "master_seed": cfg.seed,
        "config_paths": {"synth": args.config},
        "out": str(out_dir),
        "config_hashes": {"synth": config_hash(cfg)},
        "synth": jsonable(cfg),
    })
    log.info("generated %d refs across %d rooms -> %s",
             len(dataset.events), len(dataset.scenes), out_dir)
    return 0


def cmd_embed(args) -> int:
    data_dir = _require_path(args.data, "--data")
    out_path = _require_path(args.out, "--out")
    if args.from_file:
        store = ingest_embeddings(args.from_file)
        write_embeddings(out_path, store)
        log.info("ingested %d vectors (dim %d) -> %s", len(store), store.dim, out_path)
        return 0
    if not args.pseudo:
        raise CliError("embed needs either --pseudo or --from FILE")
    cfg_data = _read_json(args.config, "pseudo config") if args.config else {}
    if args.seed is not None:
        cfg_data["seed"] = args.seed
    manifest_path = data_dir / "manifest.json"
    manifest = _read_json(manifest_path, "dataset manifest") if manifest_path.exists() else {}
    dataset = load_dataset(data_dir)
    categories = sorted({o.category for s in dataset.scenes.values() for o in s.objects})
    group_map = {c: c for c in categories}
    group_map.update(manifest.get("group_map", {}))
    base_cfg = _dataclass_from(PseudoEmbedderConfig, cfg_data, "pseudo config")
    cfg = dataclasses.replace(base_cfg, group_map=group_map)
    keys = [ev.utterance_key for ev in dataset.events] + categories
    store = build_pseudo_store(cfg, keys)
    write_embeddings(out_path, store, extra_header={
        "pseudo_config_hash": config_hash(base_cfg),
        "pseudo_seed": base_cfg.seed,
        "within_group_noise": base_cfg.within_group_noise,
    })
    log.info("materialized %d pseudo-embeddings (dim %d) -> %s", len(store), store.dim, out_path)
    return 0


def cmd_features(args) -> int:
    data_dir = _require_path(args.data, "--data")
    out_path = _require_path(args.out, "--out")
    cfg_data = _read_json(args.config, "kernel config") if args.config else {}
    kernel = _dataclass_from(KernelConfig, cfg_data, "kernel config")
    dataset = load_dataset(data_dir)
    features = extract_features(dataset, kernel)
    save_features(out_path, features, kernel)
    log.info("extracted features for %d refs -> %s", len(features), out_path)
    return 0


def cmd_train(args) -> int:
    rc = _read_json(_require_path(args.runconfig, "--runconfig"), "runconfig")
    model_overrides, schedule, trainer, kernel = _runconfig_parts(rc)
    model_spec = dict(rc.get("model", {}))
    name = model_spec.pop("name", None)
    if name is None:
        raise CliError("runconfig.model needs a 'name' (one of %s)" % (CONFIG_NAMES,))
    seed = args.seed if args.seed is not None else int(rc.get("seed", 0))

    dataset, store, features, paths = _load_inputs(args, kernel)
    config = named_config(name, text_emb_dim=store.dim, seed=seed,
                          **{**model_overrides, **model_spec})
    out_dir = _require_path(args.out, "--out")
    out_dir.mkdir(parents=True, exist_ok=True)

    plan = loro_folds(dataset)
    results = train(dataset, store, features, plan, config, schedule, trainer)
    thash = _train_hash(config, schedule, trainer, kernel)
    alpha_traces = {}
    for res in results:
        save_checkpoint(
            out_dir / f"checkpoint_fold{res.fold_index}.jsonl",
            res.model.parameters(), thash, res.model.gate_w,
        )
        alpha_traces[(name, seed, res.fold_index)] = res.alpha_trace
    write_alphatrace_csv(out_dir / "alphatrace.csv", alpha_traces, with_config=False)
    _write_manifest(out_dir, {
        "command": "train",
        "master_seed": seed,
        "config_paths": {"runconfig": str(args.runconfig)},
        "data_paths": dict(zip(("data", "embeddings", "features"), paths)),
        "out": str(out_dir),
        "config_hashes": {"train": thash, "kernel": config_hash(kernel)},
        "config_name": name,
        "model": jsonable(config),
        "schedule": jsonable(schedule),
        "trainer": jsonable(trainer),
        "kernel": jsonable(kernel),
    })
    log.info("trained %d folds of %s -> %s", len(results), name, out_dir)
    return 0


def cmd_eval(args) -> int:
    ckpt_dir = _require_path(args.checkpoints, "--checkpoints")
    manifest = _read_json(ckpt_dir / "runmanifest.json", "checkpoint manifest")
    model_data = dict(manifest["model"])
    config = ModelConfig(**model_data)
    schedule = _dataclass_from(ScheduleConfig, manifest["schedule"], "manifest.schedule")
    trainer = _dataclass_from(TrainerConfig, manifest["trainer"], "manifest.trainer")
    kernel = _dataclass_from(KernelConfig, manifest["kernel"], "manifest.kernel")
    name = manifest["config_name"]
    thash = _train_hash(config, schedule, trainer, kernel)
    if thash != manifest["config_hashes"]["train"]:
        raise ConfigMismatchError("checkpoint manifest hash does not match its configs")

    dataset, store, features, _ = _load_inputs(args, kernel)
    out_dir = _require_path(args.out, "--out")
    out_dir.mkdir(parents=True, exist_ok=True)

    cat_to_id = category_index(dataset)
    categories = sorted(cat_to_id, key=cat_to_id.get)
    frozen = (
        frozen_category_matrix(store, categories) if config.needs_frozen_vectors() else None
    )
    samples = build_samples(dataset, store, features, cat_to_id)
    plan = loro_folds(dataset)

    records = []
    alpha_traces = {}
    for fold_index, fold in enumerate(plan.folds):
        ckpt_path = ckpt_dir / f"checkpoint_fold{fold_index}.jsonl"
        if not ckpt_path.exists():
            raise CliError(f"checkpoint not found: {ckpt_path}")
        tensors, header = load_checkpoint(ckpt_path, expected_config_hash=thash)
        model = FusionModel(config, categories, frozen_category_vectors=frozen)
        model.load_state(tensors)
        test_samples = [s for s in samples if s.room_id == fold.test_room]
        records.extend(
            evaluate_records(model, test_samples, name, config.seed, fold_index)
        )
        if model.gate_w is not None:
            alpha_traces[(name, config.seed, fold_index)] = [model.gate_alpha()]
    report = build_report(records, alpha_traces, [name], [config.seed])
    write_results_jsonl(out_dir / "results.jsonl", records)
    write_report_csv(out_dir / "report.csv", report)
    write_report_md(out_dir / "report.md", report)
    _write_manifest(out_dir, {
        "command": "eval",
        "master_seed": config.seed,
        "config_paths": {"checkpoints": str(ckpt_dir)},
        "out": str(out_dir),
        "config_hashes": manifest["config_hashes"],
        "config_name": name,
    })
    log.info("evaluated %d records -> %s", len(records), out_dir)
    return 0


def cmd_matrix(args) -> int:
    rc = _read_json(_require_path(args.runconfig, "--runconfig"), "runconfig")
    model_overrides, schedule, trainer, kernel = _runconfig_parts(rc)
    config_names = list(rc.get("configs", []))
    if not config_names:
        raise CliError("runconfig.configs must list at least one config name")
    seeds = [args.seed] if args.seed is not None else [int(s) for s in rc.get("seeds", [0])]
    workers = int(args.workers) if args.workers is not None else 1

    dataset, store, features, paths = _load_inputs(args, kernel)
    out_dir = _require_path(args.out, "--out")
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_matrix(
        dataset, store, features, config_names, seeds,
        schedule=schedule, trainer=trainer, model_overrides=model_overrides,
        workers=workers, worker_paths=paths if workers > 1 else None,
        progress=lambda msg: log.info("%s", msg),
    )
    write_results_jsonl(out_dir / "results.jsonl", result.records)
    write_report_csv(out_dir / "report.csv", result.report)
    write_report_md(out_dir / "report.md", result.report)
    write_ttests_csv(out_dir / "ttests.csv", result.ttests)
    write_alphatrace_csv(out_dir / "alphatrace.csv", result.alpha_traces)
    _plot_alpha_traces(out_dir / "alpha_trace.png", result.alpha_traces)
    _plot_tier_bars(out_dir / "tier_top1.png", result.report)
    _write_manifest(out_dir, {
        "command": "matrix",
        "master_seed": seeds[0],
        "seeds": seeds,
        "config_paths": {"runconfig": str(args.runconfig)},
        "data_paths": dict(zip(("data", "embeddings", "features"), paths)),
        "out": str(out_dir),
        "config_hashes": {
            "kernel": config_hash(kernel),
            "runconfig": config_hash(
                {"configs": config_names, "seeds": seeds,
                 "model_overrides": model_overrides, "schedule": jsonable(schedule),
                 "trainer": jsonable(trainer), "kernel": jsonable(kernel)}
            ),
        },
        "configs": config_names,
        "model_overrides": model_overrides,
        "schedule": jsonable(schedule),
        "trainer": jsonable(trainer),
        "kernel": jsonable(kernel),
    })
    log.info("matrix of %d configs x %d seeds -> %s", len(config_names), len(seeds), out_dir)
    return 0


def cmd_validate(args) -> int:
    """Report per-event validation codes for a dataset + embedding store."""
    data_dir = _require_path(args.data, "--data")
    dataset = load_dataset(data_dir)
    store = ingest_embeddings(_require_path(args.embeddings, "--embeddings"))
    rejected = 0
    for ev in dataset.events:
        reason = validate_reference(ev, dataset, store)
        if reason is not None:
            rejected += 1
            print(f"{ev.ref_id}\t{reason}")
    log.info("%d/%d events rejected", rejected, len(dataset.events))
    return 0 if rejected == 0 else 1


# --- plots ------------------------------------------------------------------------

def _plot_alpha_traces(path: Path, alpha_traces) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    configs = sorted({k[0] for k, v in alpha_traces.items() if v})
    colors = plt.cm.tab10(range(max(len(configs), 1)))
    for cfg, color in zip(configs, colors):
        for (c, seed, fold), trace in alpha_traces.items():
            if c == cfg and trace:
                ax.plot(range(len(trace)), trace, color=color, alpha=0.5, linewidth=1)
        ax.plot([], [], color=color, label=cfg)
    ax.set_xlabel("epoch")
    ax.set_ylabel("alpha")
    ax.set_ylim(0.0, 1.0)
    if configs:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_tier_bars(path: Path, report) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    tiers = list(next(iter(report.by_tier.values())).keys()) if report.by_tier else []
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(report.config_names), 1)
    x = np.arange(len(tiers))
    for i, cfg in enumerate(report.config_names):
        means = [report.by_tier[cfg][t]["mean"] or 0.0 for t in tiers]
        stds = [report.by_tier[cfg][t]["std"] or 0.0 for t in tiers]
        ax.bar(x + i * width, means, width=width, yerr=stds, label=cfg)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(tiers)
    ax.set_ylabel("top-1 (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poserefer",
        description="Exocentric reference resolution: data synthesis, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"poserefer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, embeddings=False, features=False, out=True,
               config=False, runconfig=False, workers=False):
        if config:
            p.add_argument("--config", default=_env("CONFIG"), help="JSON config file")
        if runconfig:
            p.add_argument("--runconfig", default=_env("RUNCONFIG"), help="run config JSON")
        if data:
            p.add_argument("--data", default=_env("DATA"), help="dataset directory")
        if embeddings:
            p.add_argument("--embeddings", default=_env("EMBEDDINGS"),
                           help="embeddings.jsonl path")
        if features:
            p.add_argument("--features", default=_env("FEATURES"), help="features.jsonl path")
        if out:
            p.add_argument("--out", default=_env("OUT"), help="output path")
        p.add_argument("--seed", type=int,
                       default=int(_env("SEED")) if _env("SEED") else None)
        if workers:
            p.add_argument("--workers", type=int,
                           default=int(_env("WORKERS")) if _env("WORKERS") else None)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p, config=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("embed", help="materialize or ingest embeddings")
    common(p, data=True, config=True)
    p.add_argument("--pseudo", action="store_true", help="use the pseudo-embedder")
    p.add_argument("--from", dest="from_file", default=None,
                   help="ingest an existing embeddings file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("features", help="extract affordance features")
    common(p, data=True, config=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one configuration over LORO folds")
    common(p, data=True, embeddings=True, features=True, runconfig=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained checkpoints")
    common(p, data=True, embeddings=True, features=True)
    p.add_argument("--checkpoints", default=None, help="train output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the full configuration matrix")
    common(p, data=True, embeddings=True, features=True, runconfig=True, workers=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("validate", help="screen events against dataset and embeddings")
    common(p, data=True, embeddings=True, out=False)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PoseReferError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
