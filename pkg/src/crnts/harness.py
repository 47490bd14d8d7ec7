"""Sweep runner: CSV sweep in, per-run trace CSVs plus a JSON manifest out.

Layout of an output directory::

    manifest.json              every run with status and timing
    runs/<run_id>.csv          per-evaluation trace (deterministic)
    runs/<run_id>.json         run metadata: config, seed set, warnings (deterministic)

``run_id`` is ``row{row:04d}_{method}_rep{replicate:02d}``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .metrics import DEFAULT_THRESHOLDS, threshold_counts
from .optimizer import METHODS, OptimizationTrace, TsConfig, run_ts
from .sir import PluginHandle, sir_simulator

log = logging.getLogger(__name__)

MASTER_SEED_ENV = "CRNTS_MASTER_SEED"
REQUIRED_COLUMNS = ("Nmax", "n_init", "n_rep", "n_TS", "M")
OPTIONAL_COLUMNS = {
    "method": "all",
    "replicates": "10",
    "beta_true": "0.7",
    "gamma_true": "0.2",
    "seed_true": "50",
}
PARAM_NAMES = ("beta", "gamma")
TRACE_COLUMNS = ("eval_index", "iteration", *PARAM_NAMES, "seed", "discrepancy", "failed")


def fmt(value: float) -> str:
    return f"{float(value):.17g}"


@dataclass
class SweepRow:
    row: int
    method: str
    config: TsConfig
    replicates: int
    replicate_seeds: tuple[int, ...]
    truth: tuple[float, float, int] = (0.7, 0.2, 50)

    def run_id(self, replicate: int) -> str:
        return f"row{self.row:04d}_{self.method}_rep{replicate:02d}"


def derive_seed(master: int, row: int, method: str, replicate: int) -> int:
    """63-bit seed from a BLAKE2b hash of the derivation tuple."""
    h = hashlib.blake2b(f"{master}|{row}|{method}|{replicate}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


def master_seed_from_env(default: int = 0) -> int:
    value = os.environ.get(MASTER_SEED_ENV)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{MASTER_SEED_ENV} must be an integer, got {value!r}") from None


def _methods(value: str) -> list[str]:
    if value.strip().lower() in ("", "all"):
        return list(METHODS)
    names = [v.strip() for v in value.replace(";", "|").replace(" ", "|").split("|") if v.strip()]
    for name in names:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}")
    return names


def parse_sweep(path, master_seed: int | None = None) -> list[SweepRow]:
    """Read a sweep CSV and expand each row across its methods.

    The ``method`` column may name one method, several separated by ``|`` or
    ``;``, or ``all`` (the default when the column is absent).
    """
    master = master_seed_from_env(0 if master_seed is None else master_seed)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing required column(s) {missing}")
        unknown = [c for c in header if c not in REQUIRED_COLUMNS and c not in OPTIONAL_COLUMNS]
        if unknown:
            raise ConfigError(f"{path}: unknown column(s) {unknown}")
        rows: list[SweepRow] = []
        for i, raw in enumerate(reader):
            raw = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            values = {**OPTIONAL_COLUMNS, **{k: v for k, v in raw.items() if v != ""}}
            parsed = {}
            for col, conv in (("Nmax", int), ("n_init", int), ("n_rep", int), ("n_TS", int), ("M", int),
                              ("replicates", int), ("beta_true", float), ("gamma_true", float),
                              ("seed_true", int), ("method", _methods)):
                try:
                    parsed[col] = conv(values[col])
                except (KeyError, ValueError) as exc:
                    raise ConfigError(f"{path}: row {i + 1}, column {col!r}: cannot parse {values.get(col)!r} ({exc})") from None
            if parsed["replicates"] < 1:
                raise ConfigError(f"{path}: row {i + 1}, column 'replicates': must be >= 1")
            for method in parsed["method"]:
                config = TsConfig(method=method, Nmax=parsed["Nmax"], n_init=parsed["n_init"],
                                  n_rep=parsed["n_rep"], J=parsed["n_TS"], M=parsed["M"])
                try:
                    config.validate()
                except ConfigError as exc:
                    raise ConfigError(f"{path}: row {i + 1}: {exc}") from None
                seeds = tuple(derive_seed(master, i, method, k) for k in range(parsed["replicates"]))
                truth = (parsed["beta_true"], parsed["gamma_true"], parsed["seed_true"])
                rows.append(SweepRow(i, method, config, parsed["replicates"], seeds, truth))
    return rows


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_csv(trace: OptimizationTrace) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for r in trace.records:
        lines.append(",".join([
            str(r.index), str(r.iteration), *(fmt(v) for v in r.x), str(r.seed),
            fmt(r.discrepancy), "1" if r.failed else "0",
        ]))
    return "\n".join(lines) + "\n"


def trace_metadata(task: "RunTask", trace: OptimizationTrace) -> str:
    config = asdict(trace.config)
    spec = asdict(trace.spec) if trace.spec is not None else None
    meta = {
        "run_id": task.run_id,
        "row": task.row,
        "method": task.config.method,
        "replicate": task.replicate,
        "master_seed": task.config.master_seed,
        "truth": list(task.truth),
        "config": config,
        "seedset": list(trace.seedset),
        "evaluations": len(trace),
        "exhausted": trace.exhausted,
        "warnings": trace.warnings,
        "final_spec": spec,
    }
    return json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


@dataclass(frozen=True)
class RunTask:
    run_id: str
    row: int
    replicate: int
    config: TsConfig
    truth: tuple[float, float, int]
    out_dir: str
    plugin: str | None = None


def make_simulator(plugin: str | None) -> Callable:
    return PluginHandle(plugin) if plugin else sir_simulator


def execute_run(task: RunTask) -> dict:
    """Run one optimization and write its files; never raises."""
    start = time.perf_counter()
    try:
        simulator = make_simulator(task.plugin)
        beta, gamma, seed = task.truth
        observed = simulator(np.array([beta, gamma]), int(seed))
        trace = run_ts(task.config, simulator, observed)
        runs = Path(task.out_dir) / "runs"
        atomic_write_text(runs / f"{task.run_id}.csv", trace_csv(trace))
        atomic_write_text(runs / f"{task.run_id}.json", trace_metadata(task, trace))
        status, message = "ok", ""
        n_eval, exhausted, n_warn = len(trace), trace.exhausted, len(trace.warnings)
    except Exception as exc:  # recorded in the manifest
        status, message = "failed", f"{type(exc).__name__}: {exc}"
        n_eval, exhausted, n_warn = 0, False, 0
    return {
        "run_id": task.run_id, "row": task.row, "method": task.config.method,
        "replicate": task.replicate, "master_seed": task.config.master_seed,
        "status": status, "message": message, "evaluations": n_eval,
        "exhausted": exhausted, "warnings": n_warn,
        "elapsed_s": round(time.perf_counter() - start, 3),
    }


def build_tasks(rows: Sequence[SweepRow], out_dir, plugin: str | None = None, run_workers: int = 1) -> list[RunTask]:
    tasks = []
    for row in rows:
        for k, seed in enumerate(row.replicate_seeds):
            config = replace(row.config, master_seed=seed, workers=run_workers)
            tasks.append(RunTask(row.run_id(k), row.row, k, config, row.truth, str(out_dir), plugin))
    return tasks


def run_experiments(
    rows: Sequence[SweepRow],
    out_dir,
    parallelism: int | None = None,
    plugin: str | None = None,
    progress: Callable[[dict], None] | None = None,
) -> dict:
    """Execute every (row, method, replicate) and write ``manifest.json``.

    Runs are independent; their files depend only on the task, so the
    worker count never changes the results. Progress events arrive in task
    order.
    """
    if not rows:
        raise ConfigError("sweep is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parallelism = parallelism or os.cpu_count() or 1
    # nested batch parallelism only pays off for external simulators
    run_workers = (os.cpu_count() or 1) if (parallelism == 1 and plugin) else 1
    tasks = build_tasks(rows, out_dir, plugin, run_workers)
    results = []
    if parallelism == 1:
        for task in tasks:
            results.append(execute_run(task))
            if progress:
                progress(results[-1])
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for result in pool.map(execute_run, tasks):
                results.append(result)
                if progress:
                    progress(result)
    manifest = {
        "runs": results,
        "n_runs": len(results),
        "n_failed": sum(r["status"] != "ok" for r in results),
        "plugin": plugin,
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_trace_csv(path: Path) -> dict[str, np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = list(reader)
    cols = {c: [r[c] for r in rows] for c in TRACE_COLUMNS}
    out = {
        "eval_index": np.array(cols["eval_index"], dtype=np.int64),
        "iteration": np.array(cols["iteration"], dtype=np.int64),
        "seed": np.array(cols["seed"], dtype=np.int64),
        "discrepancy": np.array(cols["discrepancy"], dtype=float),
        "failed": np.array(cols["failed"], dtype=np.int64),
    }
    for name in PARAM_NAMES:
        out[name] = np.array(cols[name], dtype=float)
    return out


SUMMARY_COLUMNS = ("run_id", "row", "method", "replicate", "Nmax", "n_init", "n_rep", "n_TS", "M",
                   "threshold", "count_below", "proportion_below", "rauc")
EVALUATION_COLUMNS = ("run_id", "row", "method", "replicate", *TRACE_COLUMNS)


@dataclass
class ReportResult:
    summary_path: Path
    evaluations_path: Path
    n_rows: int
    errors: list[str] = field(default_factory=list)


def emit_report(in_dir, thresholds: Iterable[float] = DEFAULT_THRESHOLDS, out=None) -> ReportResult:
    """Join traces with metrics into a summary CSV and a long evaluations CSV.

    The evaluations file sits next to the summary as ``<stem>_evaluations.csv``.
    Unreadable runs are skipped and listed in ``errors``.
    """
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {in_dir}")
    manifest = json.loads(manifest_path.read_text())
    if not manifest.get("runs"):
        raise ValueError(f"{manifest_path} lists no runs")
    thresholds = tuple(float(t) for t in thresholds)
    out = Path(out) if out else in_dir / "summary.csv"
    eval_path = out.with_name(out.stem + "_evaluations.csv")
    summary = [",".join(SUMMARY_COLUMNS)]
    evals = [",".join(EVALUATION_COLUMNS)]
    errors = []
    for entry in manifest["runs"]:
        run_id = entry["run_id"]
        if entry.get("status") != "ok":
            errors.append(f"{run_id}: run status {entry.get('status')}: {entry.get('message', '')}")
            continue
        try:
            meta = json.loads((in_dir / "runs" / f"{run_id}.json").read_text())
            data = read_trace_csv(in_dir / "runs" / f"{run_id}.csv")
        except (OSError, ValueError, KeyError) as exc:
            errors.append(f"{run_id}: {exc}")
            continue
        cfg = meta["config"]
        report = threshold_counts(data["discrepancy"], thresholds, nmax=cfg["Nmax"])
        for t in thresholds:
            summary.append(",".join([
                run_id, str(meta["row"]), meta["method"], str(meta["replicate"]), str(cfg["Nmax"]),
                str(cfg["n_init"]), str(cfg["n_rep"]), str(cfg["J"]), str(cfg["M"]),
                fmt(t), str(report.counts[t]), fmt(report.proportions[t]), fmt(report.rauc[t]),
            ]))
        for i in range(len(data["eval_index"])):
            evals.append(",".join([
                run_id, str(meta["row"]), meta["method"], str(meta["replicate"]),
                str(data["eval_index"][i]), str(data["iteration"][i]),
                *(fmt(data[n][i]) for n in PARAM_NAMES), str(data["seed"][i]),
                fmt(data["discrepancy"][i]), str(data["failed"][i]),
            ]))
    atomic_write_text(out, "\n".join(summary) + "\n")
    atomic_write_text(eval_path, "\n".join(evals) + "\n")
    return ReportResult(out, eval_path, len(summary) - 1, errors)
