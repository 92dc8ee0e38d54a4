"""Summaries, CSV tables and SVG charts rebuilt from the run ledger alone."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

import numpy as np  # noqa: E402

from .experiment import RepetitionResult, select_best  # noqa: E402
from .metrics import ConfusionMatrix  # noqa: E402

TEST_METRICS = ("accuracy", "precision", "recall", "f1", "auc", "youden_j")
CHART_METRICS = ("accuracy", "precision", "recall", "f1", "auc")

matplotlib.rcParams.update({
    "svg.hashsalt": "agitrisk",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def mean_sd(values) -> tuple[float, float]:
    if not len(values):
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def pooled(results: list[RepetitionResult], split: str = "test") -> ConfusionMatrix:
    cm = ConfusionMatrix(0, 0, 0, 0)
    for r in results:
        cm = cm + getattr(r, split).cm
    return cm


@dataclass
class ModelSummary:
    label: str
    dataset: str
    combo_id: str
    results: list  # non-degenerate repetitions
    n_degenerate: int

    def stat(self, metric: str, split: str = "test") -> tuple[float, float]:
        return mean_sd([getattr(getattr(r, split), metric) for r in self.results])

    @property
    def cm(self) -> ConfusionMatrix:
        return pooled(self.results)

    @property
    def pooled_recall(self) -> float:
        cm = self.cm
        return cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0


def _summarise(label, dataset, combo_id, results) -> ModelSummary:
    rs = [r for r in results if r.dataset == dataset and r.combo_id == combo_id]
    rs.sort(key=lambda r: r.repetition)
    good = [r for r in rs if not r.degenerate]
    return ModelSummary(label, dataset, combo_id, good, len(rs) - len(good))


_ARCH_LABEL = {"lstm": "LSTM", "bilstm": "B-LSTM"}


@dataclass
class ExperimentReport:
    config_hash: str
    combos: list[ModelSummary]
    models: list[ModelSummary]
    best: dict
    ampm: list[ModelSummary]
    n_results: int
    n_degenerate: int
    warnings: list


def aggregate_report(results: list[RepetitionResult], config_hash: str, warnings=()) -> ExperimentReport:
    """Per-combo statistics, the Youden-selected models and the AM/PM table."""
    full = [r for r in results if r.dataset == "full"]
    if not any(not r.degenerate for r in results):
        raise ValueError("no non-degenerate results to report")

    combo_ids = sorted({(r.dataset, r.combo_index, r.combo_id) for r in results})
    combos = [_summarise(cid, ds, cid, results) for ds, _, cid in combo_ids]

    best, models = {}, []
    archs = sorted({r.model for r in full if r.model != "rf"}, key=lambda a: (a != "lstm", a))
    for arch in archs:
        try:
            best[arch] = select_best(full, architecture=arch)
        except ValueError:
            continue
        for cw in (False, True):
            try:
                cid = select_best(full, architecture=arch, class_weights=cw)
            except ValueError:
                continue
            label = f"{_ARCH_LABEL.get(arch, arch)} {'with' if cw else 'no'} class weights"
            models.append(_summarise(label, "full", cid, results))
    for cid in sorted({r.combo_id for r in full if r.model == "rf"}):
        models.append(_summarise(f"RF ({cid.split('-t')[-1]} trees)", "full", cid, results))

    ampm = []
    ampm_combos = sorted(
        {(r.combo_index, r.combo_id, r.model) for r in results if r.dataset in ("am", "pm")}
    )
    for _, cid, arch in sorted(ampm_combos, key=lambda t: (t[2] != "lstm", t[0])):
        for ds in ("full", "am", "pm"):
            ampm.append(_summarise(f"{_ARCH_LABEL.get(arch, arch)} {ds.upper()}", ds, cid, results))

    return ExperimentReport(
        config_hash=config_hash,
        combos=combos,
        models=models,
        best=best,
        ampm=ampm,
        n_results=len(results),
        n_degenerate=sum(r.degenerate for r in results),
        warnings=list(warnings),
    )


# ---------------------------------------------------------------------------
# rendering

def _f(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.4f}"


def _table(rows: list[ModelSummary], include_val=False) -> tuple[list[str], list[list[str]]]:
    header = ["model", "dataset", "combo_id", "n_runs", "n_degenerate"]
    if include_val:
        header += ["val_youden_j_mean", "val_youden_j_sd", "val_recall_mean"]
    for m in TEST_METRICS:
        header += [f"test_{m}_mean", f"test_{m}_sd"]
    header += ["pooled_tp", "pooled_fp", "pooled_fn", "pooled_tn", "pooled_recall"]
    body = []
    for s in rows:
        row = [s.label, s.dataset, s.combo_id, str(len(s.results)), str(s.n_degenerate)]
        if include_val:
            j_mean, j_sd = s.stat("youden_j", "validation")
            row += [_f(j_mean), _f(j_sd), _f(s.stat("recall", "validation")[0])]
        for m in TEST_METRICS:
            row += [_f(v) for v in s.stat(m)]
        cm = s.cm
        row += [str(cm.tp), str(cm.fp), str(cm.fn), str(cm.tn), _f(s.pooled_recall)]
        body.append(row)
    return header, body


def _write_csv(path: Path, config_hash: str, header, body):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)


def _markdown(header, body) -> str:
    out = io.StringIO()
    out.write("| " + " | ".join(header) + " |\n")
    out.write("|" + "---|" * len(header) + "\n")
    for row in body:
        out.write("| " + " | ".join(row) + " |\n")
    return out.getvalue()


def _pm(s: ModelSummary, metric: str) -> str:
    mean, sd = s.stat(metric)
    return f"{_f(mean)} ± {_f(sd)}"


def render_summary(rep: ExperimentReport) -> str:
    lines = [
        "# Agitation risk experiment summary",
        "",
        f"config_hash: {rep.config_hash}",
        f"repetition results: {rep.n_results} ({rep.n_degenerate} degenerate, excluded from means)",
        f"ledger warnings: {len(rep.warnings)}",
        "",
        "## Selected configurations (highest mean validation Youden's J)",
        "",
    ]
    for arch, cid in rep.best.items():
        lines.append(f"- {_ARCH_LABEL.get(arch, arch)}: {cid}")
    lines += ["", "## Model comparison on held-out test participants", ""]
    header = ["model", "combo", *TEST_METRICS, "pooled recall"]
    body = [[s.label, s.combo_id, *(_pm(s, m) for m in TEST_METRICS), _f(s.pooled_recall)] for s in rep.models]
    lines.append(_markdown(header, body))
    lines += [
        "Per-run means are averaged over repetitions (F1 is averaged per run, not recomputed "
        "from mean precision/recall); pooled recall reads the summed confusion matrix.",
        "",
        "## Pooled test confusion matrices",
        "",
    ]
    header = ["model", "TP", "FP", "FN", "TN"]
    body = [[s.label, str(s.cm.tp), str(s.cm.fp), str(s.cm.fn), str(s.cm.tn)] for s in rep.models]
    lines.append(_markdown(header, body))
    if rep.ampm:
        lines += ["## Time of day: full vs AM vs PM", ""]
        header = ["model", "dataset", *TEST_METRICS, "TP", "FP", "FN", "TN"]
        body = [
            [s.label, s.dataset, *(_pm(s, m) for m in TEST_METRICS),
             str(s.cm.tp), str(s.cm.fp), str(s.cm.fn), str(s.cm.tn)]
            for s in rep.ampm
        ]
        lines.append(_markdown(header, body))
    if rep.warnings:
        lines += ["## Warnings", ""] + [f"- {w}" for w in rep.warnings] + [""]
    return "\n".join(lines)


def _save(fig: Figure, path: Path, config_hash: str):
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})


def bar_chart(summaries: list[ModelSummary], title: str, path: Path, config_hash: str):
    fig = Figure(figsize=(7.5, 3.6))
    ax = fig.add_subplot(1, 1, 1)
    width = 0.8 / max(1, len(summaries))
    x = np.arange(len(CHART_METRICS))
    for k, s in enumerate(summaries):
        means = [s.stat(m)[0] for m in CHART_METRICS]
        sds = [s.stat(m)[1] for m in CHART_METRICS]
        ax.bar(x + (k - (len(summaries) - 1) / 2) * width, means, width, yerr=sds, capsize=2,
               label=f"{s.label}" if s.dataset == "full" or "AM" in s.label or "PM" in s.label else s.label)
    ax.set_xticks(x)
    ax.set_xticklabels([m.upper() if m == "auc" else m.capitalize() for m in CHART_METRICS])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("test score (mean ± sd)")
    ax.set_title(title)
    ax.legend(fontsize=7, ncol=2, frameon=False)
    fig.tight_layout()
    _save(fig, path, config_hash)


def confusion_chart(summaries: list[ModelSummary], path: Path, config_hash: str):
    n = len(summaries)
    fig = Figure(figsize=(2.2 * n, 2.4))
    for k, s in enumerate(summaries):
        ax = fig.add_subplot(1, n, k + 1)
        cm = s.cm
        grid = np.array([[cm.tn, cm.fp], [cm.fn, cm.tp]])
        ax.imshow(grid, cmap="Blues")
        for i in range(2):
            for j in range(2):
                ax.text(j, i, str(grid[i, j]), ha="center", va="center",
                        color="white" if grid[i, j] > grid.max() / 2 else "black")
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["no", "yes"])
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["no", "yes"])
        ax.set_xlabel("predicted")
        if k == 0:
            ax.set_ylabel("actual")
        ax.set_title(s.label, fontsize=7)
    fig.tight_layout()
    _save(fig, path, config_hash)


def write_report(rep: ExperimentReport, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "summary.md"
    path.write_text(render_summary(rep), encoding="utf-8")
    written.append(path)

    for name, rows, include_val in (
        ("combos.csv", rep.combos, True),
        ("models.csv", rep.models, False),
        ("ampm.csv", rep.ampm, False),
    ):
        if name == "ampm.csv" and not rows:
            continue
        header, body = _table(rows, include_val)
        _write_csv(out_dir / name, rep.config_hash, header, body)
        written.append(out_dir / name)

    if rep.models:
        bar_chart(rep.models, "Agitation detection on held-out participants", fig_dir / "models.svg", rep.config_hash)
        confusion_chart(rep.models, fig_dir / "confusion.svg", rep.config_hash)
        written += [fig_dir / "models.svg", fig_dir / "confusion.svg"]
    if rep.ampm:
        bar_chart(rep.ampm, "Full vs AM vs PM datasets", fig_dir / "ampm.svg", rep.config_hash)
        written.append(fig_dir / "ampm.svg")
    return written
