"""Results store, aggregation and ranking.

Run records append to a line-delimited store (one JSON object per line with
manifest hash and code version). Aggregation averages accuracies over seeds,
scores each dataset as the mean over its configurations, weights the three
datasets equally for the overall score, and ranks models by their average
per-dataset placement with ties broken by overall accuracy, then name.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cube import ValidationError
from .training import RunResult

log = logging.getLogger(__name__)


class ResultsStore:
    """Append-only line-delimited record store."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, result: RunResult, manifest_hash: Optional[str] = None,
               code_version: Optional[str] = None, effective: Optional[dict] = None):
        record = result.to_dict()
        record["manifest_hash"] = manifest_hash
        record["code_version"] = code_version
        if effective:
            record["effective"] = effective
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def read(self) -> Tuple[List[RunResult], int]:
        """All parseable records plus the number of malformed lines skipped."""
        results: List[RunResult] = []
        skipped = 0
        if not self.path.exists():
            return results, skipped
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    results.append(RunResult(
                        config_key=d["config"], model_name=d["model"], seed=d["seed"],
                        accuracy=float(d["accuracy"]), best_epoch=int(d["best_epoch"]),
                        wall_time_s=float(d.get("wall_time_s", 0.0)),
                        provenance=d.get("provenance", {}),
                    ))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    log.warning("%s:%d: skipping malformed record", self.path.name, lineno)
                    skipped += 1
        return results, skipped


@dataclass
class Report:
    """Aggregated accuracies and the model ranking."""

    # (model, config) -> (mean accuracy, std over seeds, seed count)
    per_config: Dict[Tuple[str, str], Tuple[float, float, int]]
    dataset_scores: Dict[str, Dict[str, float]]  # model -> dataset -> score
    overall: Dict[str, float]
    average_placement: Dict[str, float]
    ranking: List[str]  # model names, best first
    warnings: List[str] = field(default_factory=list)

    def rank_of(self, model: str) -> int:
        return self.ranking.index(model) + 1

    @property
    def datasets(self) -> List[str]:
        seen = []
        for scores in self.dataset_scores.values():
            for ds in scores:
                if ds not in seen:
                    seen.append(ds)
        return sorted(seen)


def aggregate_and_rank(results: Sequence[RunResult]) -> Report:
    """Fold per-seed run records into per-dataset scores and a ranking."""
    by_cell: Dict[Tuple[str, str], Dict[int, float]] = {}
    for r in results:
        cell = (r.model_name, r.config_key)
        seeds = by_cell.setdefault(cell, {})
        if r.seed in seeds:
            raise ValidationError(
                f"duplicate record for model={r.model_name} config={r.config_key} "
                f"seed={r.seed}"
            )
        seeds[r.seed] = r.accuracy

    warnings: List[str] = []
    all_seeds = sorted({s for seeds in by_cell.values() for s in seeds})
    per_config: Dict[Tuple[str, str], Tuple[float, float, int]] = {}
    for cell, seeds in by_cell.items():
        accs = np.array(list(seeds.values()))
        per_config[cell] = (float(accs.mean()), float(accs.std()), len(accs))
        missing = [s for s in all_seeds if s not in seeds]
        if missing:
            warnings.append(
                f"{cell[0]} on {cell[1]}: missing seeds {missing} "
                f"(averaged over {len(accs)})"
            )

    dataset_scores: Dict[str, Dict[str, float]] = {}
    for (model, config_key), (mean, _, _) in per_config.items():
        dataset = config_key.split("/")[0]
        dataset_scores.setdefault(model, {}).setdefault(dataset, [])
    per_ds_accs: Dict[str, Dict[str, List[float]]] = {
        m: {ds: [] for ds in scores} for m, scores in dataset_scores.items()
    }
    for (model, config_key), (mean, _, _) in per_config.items():
        per_ds_accs[model][config_key.split("/")[0]].append(mean)
    dataset_scores = {
        m: {ds: float(np.mean(v)) for ds, v in scores.items()}
        for m, scores in per_ds_accs.items()
    }
    overall = {m: float(np.mean(list(s.values()))) for m, s in dataset_scores.items()}

    # Average per-dataset placement (1 = best), over the datasets a model has.
    datasets = sorted({ds for s in dataset_scores.values() for ds in s})
    placements: Dict[str, List[int]] = {m: [] for m in dataset_scores}
    for ds in datasets:
        scored = [(m, s[ds]) for m, s in dataset_scores.items() if ds in s]
        scored.sort(key=lambda t: -t[1])
        for place, (m, _) in enumerate(scored, 1):
            placements[m].append(place)
    average_placement = {m: float(np.mean(p)) for m, p in placements.items() if p}
    ranking = sorted(average_placement,
                     key=lambda m: (average_placement[m], -overall[m], m))
    return Report(per_config, dataset_scores, overall, average_placement, ranking, warnings)


# -- emitters ------------------------------------------------------------------


def report_text(report: Report) -> str:
    """Plain-text leaderboard: one row per model, one column per dataset,
    plus overall accuracy and rank."""
    datasets = report.datasets
    header = ["model"] + datasets + ["overall", "avg_place", "rank"]
    rows = []
    for model in report.ranking:
        row = [model]
        for ds in datasets:
            score = report.dataset_scores[model].get(ds)
            row.append(f"{100 * score:.2f} %" if score is not None else "-")
        row.append(f"{100 * report.overall[model]:.2f} %")
        row.append(f"{report.average_placement[model]:.2f}")
        row.append(str(report.rank_of(model)))
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    return "\n".join(lines)


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    datasets = report.datasets
    writer.writerow(["model"] + datasets + ["overall", "average_placement", "rank"])
    for model in report.ranking:
        row = [model]
        for ds in datasets:
            score = report.dataset_scores[model].get(ds)
            row.append(f"{100 * score:.4f}" if score is not None else "")
        row += [f"{100 * report.overall[model]:.4f}",
                f"{report.average_placement[model]:.4f}", report.rank_of(model)]
        writer.writerow(row)
    return buf.getvalue()


def per_config_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["model", "config", "mean_accuracy", "std", "seeds"])
    for (model, config_key), (mean, std, n) in sorted(report.per_config.items()):
        writer.writerow([model, config_key, f"{100 * mean:.4f}", f"{100 * std:.4f}", n])
    return buf.getvalue()


def train_ratio_curve_csv(results: Sequence[RunResult]) -> Optional[str]:
    """Accuracy-versus-train-ratio rows for configurations that differ only
    in their ratio; None when no sweep is present."""
    cells: Dict[Tuple[str, str, float], List[float]] = {}
    for r in results:
        parts = r.config_key.split("/")
        ratio = next((p for p in parts if p.startswith("r") and
                      p[1:].replace(".", "", 1).isdigit()), None)
        if ratio is None:
            continue
        base = "/".join(p for p in parts if p != ratio)
        cells.setdefault((r.model_name, base, float(ratio[1:])), []).append(r.accuracy)
    sweeps = {}
    for (model, base, ratio), accs in cells.items():
        sweeps.setdefault((model, base), set()).add(ratio)
    if not any(len(ratios) > 1 for ratios in sweeps.values()):
        return None
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["model", "config", "train_ratio", "mean_accuracy", "std", "seeds"])
    for (model, base, ratio), accs in sorted(cells.items()):
        if len(sweeps[(model, base)]) < 2:
            continue
        arr = np.array(accs)
        writer.writerow([model, base, ratio, f"{100 * arr.mean():.4f}",
                         f"{100 * arr.std():.4f}", len(accs)])
    return buf.getvalue()
