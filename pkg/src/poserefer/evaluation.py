"""Leave-one-room-out evaluation: folds, metrics, significance, reports.

Accuracies are reported in percent, as mean and std over random seeds,
where each seed-level value pools the test records of all folds. Paired
t-tests compare seed-level top-1 values between configurations.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .core import Dataset, REF_TYPES, TIERS
from .errors import DatasetError, TrainingError
from .fusion import (
    FusionModel,
    ModelConfig,
    Sample,
    TrainerConfig,
    build_samples,
    category_index,
    frozen_category_matrix,
    named_config,
    pack,
    train_fold,
)
from .neural import ScheduleConfig


# --- folds -----------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    test_room: str
    train_rooms: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def __iter__(self):
        return iter(self.folds)


def loro_folds(dataset_or_rooms) -> FoldPlan:
    """One fold per room, rooms in lexicographic order."""
    if isinstance(dataset_or_rooms, Dataset):
        rooms = sorted(dataset_or_rooms.scenes)
    else:
        rooms = sorted(dataset_or_rooms)
    if len(rooms) < 2:
        raise DatasetError(f"leave-one-room-out needs >= 2 rooms, got {len(rooms)}")
    folds = tuple(
        Fold(test_room=r, train_rooms=tuple(x for x in rooms if x != r)) for r in rooms
    )
    return FoldPlan(folds=folds)


# --- metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRecord:
    ref_id: str
    config_name: str
    seed: int
    fold: int
    rank_of_target: int
    tier: str
    ref_type: str

    def __post_init__(self):
        if self.rank_of_target < 1:
            raise DatasetError("rank_of_target must be >= 1")


def topk(rank: int, k: int) -> bool:
    if k < 1:
        raise DatasetError("k must be >= 1")
    return rank <= k


def aggregate(records: Iterable[ResultRecord], k: int) -> float:
    records = list(records)
    if not records:
        raise DatasetError("no records to aggregate")
    return sum(topk(r.rank_of_target, k) for r in records) / len(records)


@dataclass(frozen=True)
class StratumStats:
    n: int
    hits: int
    accuracy: float | None  # None marks an empty stratum


def stratify(records: Iterable[ResultRecord], axis: str, k: int = 1) -> dict[str, StratumStats]:
    """Per-stratum accuracy and counts; exact at the integer-count level."""
    if axis == "tier":
        key, strata = (lambda r: r.tier), TIERS
    elif axis == "ref_type":
        key, strata = (lambda r: r.ref_type), REF_TYPES
    else:
        raise DatasetError(f"unknown stratification axis {axis!r}")
    n: dict[str, int] = {s: 0 for s in strata}
    hits: dict[str, int] = {s: 0 for s in strata}
    for r in records:
        s = key(r)
        n[s] += 1
        hits[s] += int(topk(r.rank_of_target, k))
    return {
        s: StratumStats(n=n[s], hits=hits[s], accuracy=(hits[s] / n[s] if n[s] else None))
        for s in strata
    }


def singleton_oracle(acc_a: float, n_a: int, acc_b: float, n_b: int) -> float:
    """Count-weighted accuracy of the better-singleton-per-subset policy."""
    if n_a <= 0 or n_b <= 0:
        raise DatasetError("subset counts must be positive")
    return (n_a * acc_a + n_b * acc_b) / (n_a + n_b)


def uniform_random_topk(
    n_candidates: int, k: int, trials: int, rng: np.random.Generator
) -> float:
    """Monte Carlo top-k accuracy of a uniform random scorer."""
    ranks = rng.integers(1, n_candidates + 1, size=trials)
    return float(np.mean(ranks <= k))


# --- paired t-test ----------------------------------------------------------------

def _student_pdf(x: float, df: int) -> float:
    c = math.exp(math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0)) / math.sqrt(df * math.pi)
    return c * (1.0 + x * x / df) ** (-(df + 1) / 2.0)


def _adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        lmid, rmid = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lmid), f(rmid)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(lo, mid, flo, flm, fmid, left, tol / 2.0, depth - 1) + recurse(
            mid, hi, fmid, frm, fhi, right, tol / 2.0, depth - 1
        )

    mid = 0.5 * (a + b)
    fa, fm, fb = f(a), f(mid), f(b)
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 48)


def student_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability; closed form for df=2, quadrature otherwise."""
    x = abs(t)
    if df == 2:
        return 1.0 - x / math.sqrt(x * x + 2.0)
    if x == 0.0:
        return 1.0
    integral = _adaptive_simpson(lambda u: _student_pdf(u, df), 0.0, x, 1e-8)
    return max(0.0, 1.0 - 2.0 * integral)


def paired_t(a, b) -> tuple[float, float]:
    """Paired t statistic on a-b with df = n-1, plus the two-sided p."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise DatasetError("paired_t needs two equal-length vectors of length >= 2")
    d = a - b
    n = d.shape[0]
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DatasetError("degenerate differences (zero variance)")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return t, student_two_sided_p(t, n - 1)


# --- matrix runs --------------------------------------------------------------------

@dataclass(frozen=True)
class TTestRow:
    config_a: str
    config_b: str
    metric: str
    t: float | None
    p: float | None
    note: str = ""


@dataclass
class ReportTable:
    config_names: list[str]
    seeds: list[int]
    aggregate: dict[str, dict]
    by_tier: dict[str, dict[str, dict]]
    by_ref_type: dict[str, dict[str, dict]]


@dataclass
class MatrixResult:
    records: list[ResultRecord]
    alpha_traces: dict[tuple[str, int, int], list[float]]
    report: ReportTable
    ttests: list[TTestRow]


def evaluate_records(
    model: FusionModel,
    test_samples: list[Sample],
    config_name: str,
    seed: int,
    fold_index: int,
    chunk: int = 256,
) -> list[ResultRecord]:
    """Rank every test sample's target with an eval-mode forward pass."""
    records = []
    for start in range(0, len(test_samples), chunk):
        part = test_samples[start : start + chunk]
        batch = pack(part)
        scores, _ = model.forward_scores(batch, train=False)
        for i, s in enumerate(part):
            lo, hi = batch.offsets[i], batch.offsets[i + 1]
            seg = scores[lo:hi]
            tgt = s.target
            rank = int(np.sum(seg > seg[tgt]) + np.sum(seg[:tgt] == seg[tgt])) + 1
            records.append(
                ResultRecord(
                    ref_id=s.ref_id,
                    config_name=config_name,
                    seed=seed,
                    fold=fold_index,
                    rank_of_target=rank,
                    tier=s.tier,
                    ref_type=s.ref_type,
                )
            )
    return records


def _run_cell(
    samples: list[Sample],
    categories: list[str],
    frozen: np.ndarray | None,
    fold: Fold,
    fold_index: int,
    config: ModelConfig,
    config_name: str,
    seed: int,
    schedule: ScheduleConfig,
    trainer: TrainerConfig,
) -> tuple[list[ResultRecord], list[float]]:
    train_samples = [s for s in samples if s.room_id != fold.test_room]
    test_samples = [s for s in samples if s.room_id == fold.test_room]
    if not test_samples:
        raise TrainingError(f"fold {fold_index}: no test samples in {fold.test_room!r}")
    result = train_fold(
        train_samples, replace(config, seed=seed), schedule, trainer,
        fold_index, fold.test_room, categories,
        frozen if config.needs_frozen_vectors() else None,
    )
    records = evaluate_records(result.model, test_samples, config_name, seed, fold_index)
    return records, result.alpha_trace


# worker-process context for parallel matrix cells
_WORKER_CTX: dict = {}


def _worker_init(data_dir: str, embeddings_path: str, features_path: str) -> None:
    from .affordance import load_features
    from .core import load_dataset
    from .embeddings import ingest_embeddings

    dataset = load_dataset(data_dir)
    store = ingest_embeddings(embeddings_path)
    features, _ = load_features(features_path)
    cat_to_id = category_index(dataset)
    categories = sorted(cat_to_id, key=cat_to_id.get)
    frozen = None
    if all(c in store for c in categories):
        frozen = frozen_category_matrix(store, categories)
    _WORKER_CTX["samples"] = build_samples(dataset, store, features, cat_to_id)
    _WORKER_CTX["categories"] = categories
    _WORKER_CTX["frozen"] = frozen
    _WORKER_CTX["folds"] = loro_folds(dataset)


def _worker_cell(args) -> tuple[tuple[str, int, int], list[dict], list[float]]:
    config, config_name, seed, fold_index, schedule, trainer = args
    plan: FoldPlan = _WORKER_CTX["folds"]
    records, alpha = _run_cell(
        _WORKER_CTX["samples"], _WORKER_CTX["categories"], _WORKER_CTX["frozen"],
        plan.folds[fold_index], fold_index, config, config_name, seed, schedule, trainer,
    )
    return (config_name, seed, fold_index), [r.__dict__ for r in records], alpha


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def build_report(
    records: list[ResultRecord],
    alpha_traces: dict[tuple[str, int, int], list[float]],
    config_names: list[str],
    seeds: list[int],
) -> ReportTable:
    by_cfg_seed: dict[tuple[str, int], list[ResultRecord]] = {}
    for r in records:
        by_cfg_seed.setdefault((r.config_name, r.seed), []).append(r)

    agg: dict[str, dict] = {}
    tier_tbl: dict[str, dict[str, dict]] = {}
    type_tbl: dict[str, dict[str, dict]] = {}
    for cfg in config_names:
        top1s, top5s, alphas = [], [], []
        tier_acc: dict[str, list[float]] = {t: [] for t in TIERS}
        type_acc: dict[str, list[float]] = {t: [] for t in REF_TYPES}
        tier_n: dict[str, int] = {}
        type_n: dict[str, int] = {}
        n_records = None
        for seed in seeds:
            recs = by_cfg_seed.get((cfg, seed), [])
            if not recs:
                raise DatasetError(f"no records for config {cfg!r}, seed {seed}")
            if n_records is None:
                n_records = len(recs)
            top1s.append(100.0 * aggregate(recs, 1))
            top5s.append(100.0 * aggregate(recs, 5))
            finals = [
                alpha_traces[key][-1]
                for key in alpha_traces
                if key[0] == cfg and key[1] == seed and alpha_traces[key]
            ]
            if finals:
                alphas.append(float(np.mean(finals)))
            for axis, table, acc in (("tier", tier_n, tier_acc), ("ref_type", type_n, type_acc)):
                for stratum, stats in stratify(recs, axis).items():
                    prev = table.setdefault(stratum, stats.n)
                    if prev != stats.n:
                        raise DatasetError(
                            f"stratum {stratum!r} size differs across seeds for {cfg!r}"
                        )
                    if stats.accuracy is not None:
                        acc[stratum].append(100.0 * stats.accuracy)
        t1m, t1s = _mean_std(top1s)
        t5m, t5s = _mean_std(top5s)
        row = {
            "n": n_records,
            "top1_mean": t1m, "top1_std": t1s,
            "top5_mean": t5m, "top5_std": t5s,
            "alpha_mean": None, "alpha_std": None,
        }
        if alphas:
            am, asd = _mean_std(alphas)
            row["alpha_mean"], row["alpha_std"] = am, asd
        agg[cfg] = row
        tier_tbl[cfg] = {}
        for stratum in TIERS:
            vals = tier_acc[stratum]
            m, s = _mean_std(vals) if vals else (None, None)
            tier_tbl[cfg][stratum] = {"n": tier_n.get(stratum, 0), "mean": m, "std": s}
        type_tbl[cfg] = {}
        for stratum in REF_TYPES:
            vals = type_acc[stratum]
            m, s = _mean_std(vals) if vals else (None, None)
            type_tbl[cfg][stratum] = {"n": type_n.get(stratum, 0), "mean": m, "std": s}

    return ReportTable(
        config_names=list(config_names),
        seeds=list(seeds),
        aggregate=agg,
        by_tier=tier_tbl,
        by_ref_type=type_tbl,
    )


def build_ttests(
    records: list[ResultRecord], config_names: list[str], seeds: list[int]
) -> list[TTestRow]:
    """Pairwise paired t-tests on seed-level top-1 for every config pair."""
    seed_top1: dict[str, list[float]] = {}
    for cfg in config_names:
        seed_top1[cfg] = [
            100.0 * aggregate([r for r in records if r.config_name == cfg and r.seed == s], 1)
            for s in seeds
        ]
    rows: list[TTestRow] = []
    for i, a in enumerate(config_names):
        for b in config_names[i + 1 :]:
            if len(seeds) < 2:
                rows.append(TTestRow(a, b, "top1", None, None, "insufficient seeds"))
                continue
            try:
                t, p = paired_t(seed_top1[a], seed_top1[b])
                rows.append(TTestRow(a, b, "top1", t, p))
            except DatasetError:
                rows.append(TTestRow(a, b, "top1", None, None, "degenerate differences"))
    return rows


def run_matrix(
    dataset: Dataset | None,
    store,
    features,
    config_names: list[str],
    seeds: list[int],
    schedule: ScheduleConfig | None = None,
    trainer: TrainerConfig | None = None,
    model_overrides: dict | None = None,
    workers: int = 1,
    worker_paths: tuple[str, str, str] | None = None,
    progress: Callable[[str], None] | None = None,
) -> MatrixResult:
    """Train and evaluate every (config, seed, fold) cell.

    Sequential with workers=1 (the deterministic reference mode); with
    workers > 1 the cells run in separate processes that reload the inputs
    from ``worker_paths`` and the merged output is identical.
    """
    schedule = schedule if schedule is not None else ScheduleConfig()
    trainer = trainer if trainer is not None else TrainerConfig()
    overrides = model_overrides or {}
    if len(set(config_names)) != len(config_names):
        raise DatasetError("duplicate config names in matrix")

    configs = {
        name: named_config(name, text_emb_dim=store.dim, **overrides) for name in config_names
    }
    plan = loro_folds(dataset)
    cat_to_id = category_index(dataset)
    categories = sorted(cat_to_id, key=cat_to_id.get)
    frozen = None
    if any(c.needs_frozen_vectors() for c in configs.values()):
        frozen = frozen_category_matrix(store, categories)
    samples = build_samples(dataset, store, features, cat_to_id)

    cells = [
        (name, seed, fold_index)
        for name in config_names
        for seed in seeds
        for fold_index in range(len(plan.folds))
    ]

    records: list[ResultRecord] = []
    alpha_traces: dict[tuple[str, int, int], list[float]] = {}
    if workers <= 1:
        for name, seed, fold_index in cells:
            if progress:
                progress(f"cell config={name} seed={seed} fold={fold_index}")
            recs, alpha = _run_cell(
                samples, categories, frozen, plan.folds[fold_index], fold_index,
                configs[name], name, seed, schedule, trainer,
            )
            records.extend(recs)
            alpha_traces[(name, seed, fold_index)] = alpha
    else:
        if worker_paths is None:
            raise DatasetError("workers > 1 needs worker_paths=(data_dir, embeddings, features)")
        args = [
            (configs[name], name, seed, fold_index, schedule, trainer)
            for name, seed, fold_index in cells
        ]
        done: dict[tuple[str, int, int], tuple[list[dict], list[float]]] = {}
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=worker_paths
        ) as pool:
            for key, rec_dicts, alpha in pool.map(_worker_cell, args):
                if progress:
                    progress(f"cell config={key[0]} seed={key[1]} fold={key[2]} done")
                done[key] = (rec_dicts, alpha)
        for cell in cells:
            rec_dicts, alpha = done[cell]
            records.extend(ResultRecord(**d) for d in rec_dicts)
            alpha_traces[cell] = alpha

    report = build_report(records, alpha_traces, config_names, seeds)
    ttests = build_ttests(records, config_names, seeds)
    return MatrixResult(records=records, alpha_traces=alpha_traces, report=report, ttests=ttests)


# --- writers ---------------------------------------------------------------------

def write_results_jsonl(path: str | Path, records: list[ResultRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.__dict__) + "\n")


def read_results_jsonl(path: str | Path) -> list[ResultRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ResultRecord(**json.loads(line)))
    return records


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_report_csv(path: str | Path, report: ReportTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "config", "stratum", "n",
                    "top1_mean", "top1_std", "top5_mean", "top5_std",
                    "alpha_mean", "alpha_std"])
        for cfg in report.config_names:
            row = report.aggregate[cfg]
            w.writerow(["aggregate", cfg, "", row["n"],
                        _fmt(row["top1_mean"]), _fmt(row["top1_std"]),
                        _fmt(row["top5_mean"]), _fmt(row["top5_std"]),
                        _fmt(row["alpha_mean"]), _fmt(row["alpha_std"])])
        for table_name, table in (("by_tier", report.by_tier),
                                  ("by_ref_type", report.by_ref_type)):
            for cfg in report.config_names:
                for stratum, cell in table[cfg].items():
                    w.writerow([table_name, cfg, stratum, cell["n"],
                                _fmt(cell["mean"]), _fmt(cell["std"]), "", "", "", ""])


def _ms(mean, std) -> str:
    if mean is None:
        return "-"
    return f"{mean:.1f}±{std:.1f}"


def write_report_md(path: str | Path, report: ReportTable) -> None:
    lines = ["# Results", "", f"Seeds: {report.seeds}", "", "## Aggregate", ""]
    lines.append("| Config | n | Top-1 | Top-5 | alpha |")
    lines.append("|---|---|---|---|---|")
    for cfg in report.config_names:
        row = report.aggregate[cfg]
        alpha = (
            "-" if row["alpha_mean"] is None
            else f"{row['alpha_mean']:.3f}±{row['alpha_std']:.3f}"
        )
        lines.append(
            f"| {cfg} | {row['n']} | {_ms(row['top1_mean'], row['top1_std'])} "
            f"| {_ms(row['top5_mean'], row['top5_std'])} | {alpha} |"
        )
    for title, table, strata in (
        ("## Top-1 by gesture tier", report.by_tier, TIERS),
        ("## Top-1 by reference type", report.by_ref_type, REF_TYPES),
    ):
        lines += ["", title, ""]
        lines.append("| Config | " + " | ".join(strata) + " |")
        lines.append("|" + "---|" * (len(strata) + 1))
        counts = [str(table[report.config_names[0]][s]["n"]) for s in strata]
        lines.append("| n | " + " | ".join(counts) + " |")
        for cfg in report.config_names:
            cells = [_ms(table[cfg][s]["mean"], table[cfg][s]["std"]) for s in strata]
            lines.append(f"| {cfg} | " + " | ".join(cells) + " |")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ttests_csv(path: str | Path, rows: list[TTestRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_a", "config_b", "metric", "t", "p", "note"])
        for r in rows:
            w.writerow([r.config_a, r.config_b, r.metric, _fmt(r.t), _fmt(r.p), r.note])


def write_alphatrace_csv(
    path: str | Path,
    alpha_traces: dict[tuple[str, int, int], list[float]],
    with_config: bool = True,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        if with_config:
            w.writerow(["config", "seed", "fold", "epoch", "alpha"])
            for (cfg, seed, fold), trace in alpha_traces.items():
                for epoch, alpha in enumerate(trace):
                    w.writerow([cfg, seed, fold, epoch, _fmt(alpha)])
        else:
            w.writerow(["epoch", "fold", "alpha"])
            for (_, _, fold), trace in alpha_traces.items():
                for epoch, alpha in enumerate(trace):
                    w.writerow([epoch, fold, _fmt(alpha)])
