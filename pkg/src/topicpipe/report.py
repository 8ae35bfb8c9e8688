"""Run reporting: turn history files into plot-ready delimited tables and rendered figures.

Figures are written as PNG next to the table files so a run directory is
self-contained; the tables alone reproduce the plots in any external tool.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evolution import GenerationRecord

HISTORY_COLUMNS = ("generation", "best", "mean", "true_evals", "surrogate_evals")

# 90% two-sided normal interval, matching the confidence band style of the
# aggregate fitness plots
Z_90 = 1.6448536269514722


def write_history_csv(path: str | Path, records: list[GenerationRecord]) -> None:
    """Deterministic history file: wall-clock timings live in timings.csv, not here."""
    lines = [",".join(HISTORY_COLUMNS)]
    for r in records:
        lines.append(f"{r.generation},{r.best!r},{r.mean!r},{r.true_evals},{r.surrogate_evals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_timings_csv(path: str | Path, records: list[GenerationRecord]) -> None:
    lines = ["generation,elapsed_s"]
    for r in records:
        lines.append(f"{r.generation},{r.elapsed_s:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_history_csv(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = text[0].split(",")
    if tuple(header) != HISTORY_COLUMNS:
        raise ValueError(f"unexpected history header {header}")
    rows = []
    for line in text[1:]:
        gen, best, mean, true_evals, surrogate_evals = line.split(",")
        rows.append(
            {
                "generation": int(gen),
                "best": float(best),
                "mean": float(mean),
                "true_evals": int(true_evals),
                "surrogate_evals": int(surrogate_evals),
            }
        )
    return rows


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _plot_fitness(rows: list[dict], out: Path) -> None:
    generations = [r["generation"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(generations, [r["best"] for r in rows], marker="o", label="best (true-evaluated)")
    ax.plot(generations, [r["mean"] for r in rows], marker=".", linestyle="--", label="population mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def _plot_eval_counts(rows: list[dict], out: Path) -> None:
    generations = [r["generation"] for r in rows]
    true_evals = [r["true_evals"] for r in rows]
    surrogate_evals = [r["surrogate_evals"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(generations, true_evals, label="true evaluations", color="#276fbf")
    ax.bar(generations, surrogate_evals, bottom=true_evals, label="surrogate predictions", color="#f18f01")
    ax.set_xlabel("generation")
    ax.set_ylabel("evaluations")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def write_run_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Emit plot-data tables and figures for one run directory containing history.csv."""
    run_dir = Path(run_dir)
    history_path = run_dir / "history.csv"
    if not history_path.is_file():
        raise FileNotFoundError(f"no history.csv under {run_dir}")
    rows = read_history_csv(history_path)
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "fitness_by_generation.tsv"
    _write_tsv(
        path,
        ["generation", "best", "mean"],
        [[r["generation"], r["best"], r["mean"]] for r in rows],
    )
    written.append(path)

    cum_true = np.cumsum([r["true_evals"] for r in rows])
    cum_surrogate = np.cumsum([r["surrogate_evals"] for r in rows])
    path = out / "eval_counts.tsv"
    _write_tsv(
        path,
        ["generation", "true_evals", "surrogate_evals", "cum_true_evals", "cum_surrogate_evals"],
        [
            [r["generation"], r["true_evals"], r["surrogate_evals"], int(ct), int(cs)]
            for r, ct, cs in zip(rows, cum_true, cum_surrogate)
        ],
    )
    written.append(path)

    for name, plot in (("fitness_curve.png", _plot_fitness), ("eval_counts.png", _plot_eval_counts)):
        path = out / name
        plot(rows, path)
        written.append(path)
    return written


def aggregate_runs(histories: list[list[dict]]) -> list[dict]:
    """Per-generation mean best fitness with a 90% normal confidence interval across runs.

    Runs are aligned on generation index and truncated to the shortest history.
    """
    if not histories:
        raise ValueError("need at least one history")
    n_gens = min(len(h) for h in histories)
    n_runs = len(histories)
    rows = []
    for g in range(n_gens):
        best = np.array([h[g]["best"] for h in histories])
        mean_best = float(best.mean())
        if n_runs > 1:
            half = Z_90 * float(best.std(ddof=1)) / np.sqrt(n_runs)
        else:
            half = 0.0
        rows.append(
            {
                "generation": histories[0][g]["generation"],
                "mean_best": mean_best,
                "ci_lo": mean_best - half,
                "ci_hi": mean_best + half,
                "n_runs": n_runs,
            }
        )
    return rows


def write_aggregate_report(run_dirs: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Multi-seed aggregate: mean +- CI table and banded figure over several run dirs."""
    histories = [read_history_csv(Path(d) / "history.csv") for d in run_dirs]
    rows = aggregate_runs(histories)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "aggregate_fitness.tsv"
    _write_tsv(
        path,
        ["generation", "mean_best", "ci_lo", "ci_hi", "n_runs"],
        [[r["generation"], r["mean_best"], r["ci_lo"], r["ci_hi"], r["n_runs"]] for r in rows],
    )
    written.append(path)

    generations = [r["generation"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(generations, [r["mean_best"] for r in rows], marker="o", label="mean best fitness")
    ax.fill_between(
        generations,
        [r["ci_lo"] for r in rows],
        [r["ci_hi"] for r in rows],
        alpha=0.25,
        label="90% CI",
    )
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out / "aggregate_fitness.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
