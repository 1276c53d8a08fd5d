"""Benchmark protocol: trials x cases x generations loop cells, per-iteration
totals, mean/std aggregation across trials, plateau detection, and exports.

Every cell seeds its backend with mix64(master_seed, trial, case, generation),
so results are identical for identical configuration regardless of the
parallelism used to execute the cells.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .gateway import (
    HttpBackend,
    ScriptedBackend,
    SyntheticBackend,
    SyntheticParams,
    mix64,
)
from .loop import BackendFailure, BenchmarkCase, LoopConfig, LoopTrace, run_loop
from .schema_store import SchemaStore, builtin_core_schemas, load_schema_dir

__all__ = [
    "BenchmarkConfig",
    "TrialResult",
    "CellFailure",
    "BenchmarkResult",
    "AggregateStats",
    "EmptyDataset",
    "LengthMismatch",
    "load_cases",
    "run_benchmark",
    "aggregate",
    "detect_plateau",
    "export",
    "export_csv",
    "export_json",
    "export_svg",
    "results_to_dict",
    "write_results",
    "read_results",
]


class EmptyDataset(ValueError):
    """The case directory holds no prompt files."""


class LengthMismatch(ValueError):
    """Trial series have unequal lengths."""


@dataclass
class BenchmarkConfig:
    cases_dir: str
    generations_per_case: int = 5
    iterations: int = 10
    trials: int = 6
    master_seed: int = 0
    backend: str = "synthetic"
    parallelism: int = 1
    # synthetic backend
    p_fix: float = 0.55
    p_spawn: float = 0.15
    stubborn_fraction: float = 0.25
    initial_defects_min: int = 6
    initial_defects_max: int = 10
    # scripted backend
    script_dir: Optional[str] = None
    # http backend
    api_base_url: Optional[str] = None
    model: str = "gpt-4o"
    schemas_dir: Optional[str] = None
    traces_dir: Optional[str] = None

    def __post_init__(self) -> None:
        for name in ("generations_per_case", "iterations", "trials", "parallelism"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.backend not in ("synthetic", "scripted", "http"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def to_dict(self) -> dict:
        # parallelism is an execution detail, not an experiment parameter;
        # leaving it out keeps results files byte-identical across schedules.
        return {
            "cases_dir": self.cases_dir,
            "generations_per_case": self.generations_per_case,
            "iterations": self.iterations,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "backend": self.backend,
            "p_fix": self.p_fix,
            "p_spawn": self.p_spawn,
            "stubborn_fraction": self.stubborn_fraction,
            "initial_defects_min": self.initial_defects_min,
            "initial_defects_max": self.initial_defects_max,
            "script_dir": self.script_dir,
            "api_base_url": self.api_base_url,
            "model": self.model,
            "schemas_dir": self.schemas_dir,
        }


@dataclass
class TrialResult:
    trial_index: int
    per_iteration_totals: list[tuple[int, int]]

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "per_iteration_totals": [list(t) for t in self.per_iteration_totals],
        }


@dataclass
class CellFailure:
    trial_index: int
    case_id: str
    generation_index: int
    error: str
    records_completed: int

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "case_id": self.case_id,
            "generation_index": self.generation_index,
            "error": self.error,
            "records_completed": self.records_completed,
        }


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    trials: list[TrialResult]
    traces: list[LoopTrace]
    failures: list[CellFailure] = field(default_factory=list)


@dataclass
class AggregateStats:
    """Per-iteration mean and sample standard deviation (n-1) across trials."""

    mean_errors: list[float]
    std_errors: list[float]
    mean_warnings: list[float]
    std_warnings: list[float]

    def __len__(self) -> int:
        return len(self.mean_errors)

    def to_dict(self) -> dict:
        return {
            "mean_errors": self.mean_errors,
            "std_errors": self.std_errors,
            "mean_warnings": self.mean_warnings,
            "std_warnings": self.std_warnings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AggregateStats":
        return cls(
            mean_errors=list(data["mean_errors"]),
            std_errors=list(data["std_errors"]),
            mean_warnings=list(data["mean_warnings"]),
            std_warnings=list(data["std_warnings"]),
        )


def load_cases(path: str | Path) -> list[BenchmarkCase]:
    """Read one prompt per ``*.txt`` file; the id is the filename stem."""
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"cases directory not found: {directory}")
    cases = [
        BenchmarkCase(id=f.stem, prompt=f.read_text(encoding="utf-8").strip())
        for f in sorted(directory.glob("*.txt"))
    ]
    if not cases:
        raise EmptyDataset(f"no *.txt prompt files under {directory}")
    return cases


def _load_store(cfg: BenchmarkConfig) -> SchemaStore:
    if cfg.schemas_dir:
        store, _ = load_schema_dir(cfg.schemas_dir)
        return store
    return builtin_core_schemas()


def _make_backend(cfg: BenchmarkConfig, cell_seed: int, store: SchemaStore):
    if cfg.backend == "synthetic":
        params = SyntheticParams(
            p_fix=cfg.p_fix,
            p_spawn=cfg.p_spawn,
            stubborn_fraction=cfg.stubborn_fraction,
            seed=cell_seed,
        )
        if cfg.initial_defects_min == cfg.initial_defects_max:
            initial = cfg.initial_defects_min
        else:
            initial = (cfg.initial_defects_min, cfg.initial_defects_max)
        return SyntheticBackend(params, initial_defects=initial, store=store)
    if cfg.backend == "scripted":
        if not cfg.script_dir:
            raise ValueError("scripted backend requires script_dir")
        return ScriptedBackend.from_dir(cfg.script_dir)
    if not cfg.api_base_url:
        raise ValueError("http backend requires api_base_url")
    return HttpBackend(cfg.api_base_url)


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkResult:
    """Execute trials x cases x generations cells and sum counts per iteration.

    Aborted cells (backend failure) are excluded from totals and listed in
    ``failures``.  The reduction is a deterministic serial pass over cells
    ordered by (trial, case, generation), whatever the parallelism.
    """
    cases = load_cases(cfg.cases_dir)
    store = _load_store(cfg)
    loop_cfg = LoopConfig(max_iterations=cfg.iterations, early_stop=False)

    cells = [
        (trial, case_index, generation)
        for trial in range(cfg.trials)
        for case_index in range(len(cases))
        for generation in range(cfg.generations_per_case)
    ]

    def run_cell(cell: tuple[int, int, int]):
        trial, case_index, generation = cell
        seed = mix64(cfg.master_seed, trial, case_index, generation)
        backend = _make_backend(cfg, seed, store)
        case = cases[case_index]
        try:
            return run_loop(case, backend, store, loop_cfg, generation_index=generation)
        except BackendFailure as exc:
            return CellFailure(
                trial_index=trial,
                case_id=case.id,
                generation_index=generation,
                error=str(exc),
                records_completed=len(exc.trace.records),
            )

    if cfg.parallelism == 1:
        outcomes = [run_cell(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(run_cell, cells))

    traces: list[LoopTrace] = []
    failures: list[CellFailure] = []
    totals = [
        [(0, 0)] * (cfg.iterations + 1) for _ in range(cfg.trials)
    ]
    for cell, outcome in zip(cells, outcomes):
        trial = cell[0]
        if isinstance(outcome, CellFailure):
            failures.append(outcome)
            continue
        traces.append(outcome)
        for record in outcome.records:
            errors, warnings = totals[trial][record.index]
            totals[trial][record.index] = (
                errors + record.error_count,
                warnings + record.warning_count,
            )

    trial_results = [
        TrialResult(trial_index=t, per_iteration_totals=totals[t]) for t in range(cfg.trials)
    ]

    if cfg.traces_dir:
        out = Path(cfg.traces_dir)
        out.mkdir(parents=True, exist_ok=True)
        for cell, outcome in zip(cells, outcomes):
            if isinstance(outcome, CellFailure):
                continue
            name = f"trial{cell[0]:02d}_{outcome.case_id}_gen{cell[2]}.json"
            (out / name).write_text(
                json.dumps(outcome.to_dict(), indent=2) + "\n", encoding="utf-8"
            )

    return BenchmarkResult(config=cfg, trials=trial_results, traces=traces, failures=failures)


def aggregate(trials: list[TrialResult]) -> AggregateStats:
    """Per-iteration mean and sample std of the trial totals."""
    if len(trials) < 2:
        raise ValueError("aggregate requires at least 2 trials")
    length = len(trials[0].per_iteration_totals)
    if any(len(t.per_iteration_totals) != length for t in trials):
        raise LengthMismatch("trials have unequal iteration counts")
    n = len(trials)
    stats = AggregateStats([], [], [], [])
    for i in range(length):
        errors = [t.per_iteration_totals[i][0] for t in trials]
        warnings = [t.per_iteration_totals[i][1] for t in trials]
        for values, means, stds in (
            (errors, stats.mean_errors, stats.std_errors),
            (warnings, stats.mean_warnings, stats.std_warnings),
        ):
            mean = sum(values) / n
            variance = sum((v - mean) ** 2 for v in values) / (n - 1)
            means.append(mean)
            stds.append(math.sqrt(variance))
    return stats


def detect_plateau(
    means: list[float], epsilon: float = 0.02, window: int = 2
) -> Optional[int]:
    """Smallest k such that every step in [k, k+window-1] changes by at most
    epsilon relative to max(means[k], 1); None when no such k exists."""
    if len(means) < window + 1:
        raise ValueError("means must have at least window + 1 entries")
    for k in range(len(means) - window):
        threshold = epsilon * max(means[k], 1.0)
        if all(abs(means[j] - means[j + 1]) <= threshold for j in range(k, k + window)):
            return k
    return None


def export_csv(stats: AggregateStats, out_path: str | Path) -> None:
    lines = ["iteration,mean_errors,std_errors,mean_warnings,std_warnings"]
    for i in range(len(stats)):
        lines.append(
            f"{i},{stats.mean_errors[i]:.6f},{stats.std_errors[i]:.6f},"
            f"{stats.mean_warnings[i]:.6f},{stats.std_warnings[i]:.6f}"
        )
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: str | Path) -> AggregateStats:
    """Inverse of export_csv (used by round-trip checks and re-plotting)."""
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    stats = AggregateStats([], [], [], [])
    for line in lines[1:]:
        _, me, se, mw, sw = line.split(",")
        stats.mean_errors.append(float(me))
        stats.std_errors.append(float(se))
        stats.mean_warnings.append(float(mw))
        stats.std_warnings.append(float(sw))
    return stats


def export_json(stats: AggregateStats, out_path: str | Path) -> None:
    Path(out_path).write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")


def export(stats: AggregateStats, format: str, out_path: str | Path) -> None:
    """Write aggregate stats as csv, json, or svg."""
    if format == "csv":
        export_csv(stats, out_path)
    elif format == "json":
        export_json(stats, out_path)
    elif format == "svg":
        export_svg(stats, out_path)
    else:
        raise ValueError(f"unknown export format {format!r}")


_SVG_WIDTH = 800
_SVG_HEIGHT = 500
_MARGIN_LEFT = 70
_MARGIN_RIGHT = 20
_MARGIN_TOP = 20
_MARGIN_BOTTOM = 60


def export_svg(stats: AggregateStats, out_path: str | Path, include_initial: bool = True) -> None:
    """800x500 bar chart of mean errors per iteration with +/-1 std whiskers."""
    start = 0 if include_initial else 1
    indices = list(range(start, len(stats)))
    means = stats.mean_errors[start:]
    stds = stats.std_errors[start:]
    plot_w = _SVG_WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _SVG_HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM
    y_max = max((m + s for m, s in zip(means, stds)), default=0.0)
    if y_max <= 0:
        y_max = 1.0

    def y_for(value: float) -> float:
        return _MARGIN_TOP + plot_h * (1 - value / y_max)

    slot = plot_w / max(len(indices), 1)
    bar_w = slot * 0.7

    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" '
        f'viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">'
    )
    parts.append(f'<rect width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" fill="white"/>')
    # axes
    x0 = _MARGIN_LEFT
    y0 = _MARGIN_TOP + plot_h
    parts.append(
        f'<line x1="{x0}" y1="{_MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>'
    )
    # y ticks
    for tick in range(5):
        value = y_max * tick / 4
        y = y_for(value)
        parts.append(f'<line x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12">{value:.1f}</text>'
        )
    # bars, whiskers, x tick labels
    for slot_index, (iteration, mean, std) in enumerate(zip(indices, means, stds)):
        cx = x0 + slot * (slot_index + 0.5)
        bx = cx - bar_w / 2
        top = y_for(mean)
        parts.append(
            f'<rect class="bar" x="{bx:.2f}" y="{top:.2f}" width="{bar_w:.2f}" '
            f'height="{y0 - top:.2f}" fill="#4878a8"/>'
        )
        if std > 0:
            hi = y_for(min(mean + std, y_max))
            lo = y_for(max(mean - std, 0.0))
            cap = bar_w * 0.3
            parts.append(
                f'<line class="whisker" x1="{cx:.2f}" y1="{hi:.2f}" x2="{cx:.2f}" y2="{lo:.2f}" stroke="black"/>'
            )
            parts.append(
                f'<line class="whisker-cap" x1="{cx - cap:.2f}" y1="{hi:.2f}" x2="{cx + cap:.2f}" y2="{hi:.2f}" stroke="black"/>'
            )
            parts.append(
                f'<line class="whisker-cap" x1="{cx - cap:.2f}" y1="{lo:.2f}" x2="{cx + cap:.2f}" y2="{lo:.2f}" stroke="black"/>'
            )
        parts.append(
            f'<text x="{cx:.2f}" y="{y0 + 16}" text-anchor="middle" font-size="12">{iteration}</text>'
        )
    # axis labels
    parts.append(
        f'<text x="{x0 + plot_w / 2:.2f}" y="{_SVG_HEIGHT - 15}" text-anchor="middle" '
        f'font-size="14">Iteration</text>'
    )
    parts.append(
        f'<text x="18" y="{_MARGIN_TOP + plot_h / 2:.2f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {_MARGIN_TOP + plot_h / 2:.2f})">Total errors</text>'
    )
    parts.append("</svg>")
    Path(out_path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def results_to_dict(
    result: BenchmarkResult,
    stats: Optional[AggregateStats],
    plateau_index: Optional[int],
) -> dict:
    return {
        "config": result.config.to_dict(),
        "trials": [t.to_dict() for t in result.trials],
        "stats": stats.to_dict() if stats is not None else None,
        "plateau_index": plateau_index,
        "failures": [f.to_dict() for f in result.failures],
    }


def write_results(
    result: BenchmarkResult,
    out_path: str | Path,
    stats: Optional[AggregateStats] = None,
    plateau_index: Optional[int] = None,
) -> None:
    payload = results_to_dict(result, stats, plateau_index)
    Path(out_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_results(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
