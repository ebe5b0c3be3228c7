"""Generation-quality metrics: ETR accuracy, baselines, histograms, error maps.

ETR (error tolerance rate) accuracy is computed per cell on dBm values: a
cell counts as correct when |generated - truth| <= etr * max(|truth|, 1 dBm)
(the 1 dBm floor guards the relative error against tiny denominators).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .scenario import Dataset, RadioMap


def _values(m) -> np.ndarray:
    arr = m.values_dbm if isinstance(m, RadioMap) else np.asarray(m)
    return arr.astype(np.float64)


def etr_accuracy(gt, gen, etr: float) -> float:
    """Fraction of cells within the error tolerance rate."""
    if etr <= 0:
        raise ConfigurationError(f"etr must be positive, got {etr}")
    gt_v, gen_v = _values(gt), _values(gen)
    if gt_v.shape != gen_v.shape:
        raise DimensionError(f"map shapes differ: {gt_v.shape} vs {gen_v.shape}")
    threshold = etr * np.maximum(np.abs(gt_v), 1.0)
    return float((np.abs(gen_v - gt_v) <= threshold).mean())


def error_map(gt, gen) -> np.ndarray:
    """Per-cell relative error |gen - gt| / max(|gt|, 1)."""
    gt_v, gen_v = _values(gt), _values(gen)
    if gt_v.shape != gen_v.shape:
        raise DimensionError(f"map shapes differ: {gt_v.shape} vs {gen_v.shape}")
    return np.abs(gen_v - gt_v) / np.maximum(np.abs(gt_v), 1.0)


def baseline_mean_map(dataset) -> RadioMap:
    """Cellwise mean of all maps in a dataset (naive predictor)."""
    maps = dataset.maps() if isinstance(dataset, Dataset) else list(dataset)
    if not maps:
        raise ConfigurationError("cannot average an empty dataset")
    stack = np.stack([_values(m) for m in maps])
    return RadioMap(stack.mean(axis=0).astype(np.float32), scenario_id="baseline-mean")


def rss_histogram(maps, bin_width_db: float) -> tuple:
    """Fixed-width counts over [global min, global max], edges anchored at
    the minimum. Returns (counts, edges); the last bin includes the maximum."""
    if bin_width_db <= 0:
        raise ConfigurationError(f"bin width must be positive, got {bin_width_db}")
    arrays = [_values(m).reshape(-1) for m in maps]
    if not arrays:
        raise ConfigurationError("no maps to histogram")
    flat = np.concatenate(arrays)
    vmin, vmax = float(flat.min()), float(flat.max())
    nbins = max(1, math.ceil((vmax - vmin) / bin_width_db))
    idx = np.clip(((flat - vmin) / bin_width_db).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    edges = vmin + bin_width_db * np.arange(nbins + 1)
    return counts, edges


def modal_fraction(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return float(counts.max() / counts.sum())


@dataclass
class EvalReport:
    """Aggregate quality report for a set of (truth, generated) map pairs."""

    etr: float
    accuracy: float
    per_map_accuracies: list
    histogram_gen: np.ndarray
    histogram_gt: np.ndarray
    mean_abs_error_dbm: float
    extra_etr_accuracies: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"etr {self.etr:.4f}",
            f"accuracy {self.accuracy:.6f}",
            f"mean_abs_error_dbm {self.mean_abs_error_dbm:.6f}",
            f"maps {len(self.per_map_accuracies)}",
        ]
        for etr in sorted(self.extra_etr_accuracies):
            lines.append(f"accuracy@etr={etr:.4f} {self.extra_etr_accuracies[etr]:.6f}")
        lines.append("histogram_gt " + " ".join(str(int(c)) for c in self.histogram_gt))
        lines.append("histogram_gen " + " ".join(str(int(c)) for c in self.histogram_gen))
        return "\n".join(lines) + "\n"

    def write_text(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["map_index", "accuracy"])
            for i, acc in enumerate(self.per_map_accuracies):
                writer.writerow([i, f"{acc:.6f}"])


def evaluate(
    gt_maps: list,
    gen_maps: list,
    etr: float = 0.10,
    bin_width_db: float = 10.0,
    extra_etrs: tuple = (),
) -> EvalReport:
    """Build the aggregate report for paired ground-truth/generated maps."""
    if len(gt_maps) != len(gen_maps) or not gt_maps:
        raise DimensionError("need equally many truth and generated maps (>= 1)")
    per_map = [etr_accuracy(gt, gen, etr) for gt, gen in zip(gt_maps, gen_maps)]
    abs_errors = [
        float(np.abs(_values(gen) - _values(gt)).mean())
        for gt, gen in zip(gt_maps, gen_maps)
    ]
    # shared bin edges so the two histograms are comparable
    all_vals = np.concatenate(
        [_values(m).reshape(-1) for m in list(gt_maps) + list(gen_maps)]
    )
    vmin, vmax = float(all_vals.min()), float(all_vals.max())
    nbins = max(1, math.ceil((vmax - vmin) / bin_width_db))

    def hist(maps):
        flat = np.concatenate([_values(m).reshape(-1) for m in maps])
        idx = np.clip(((flat - vmin) / bin_width_db).astype(np.int64), 0, nbins - 1)
        return np.bincount(idx, minlength=nbins)

    extra = {
        e: float(np.mean([etr_accuracy(gt, gen, e) for gt, gen in zip(gt_maps, gen_maps)]))
        for e in extra_etrs
    }
    return EvalReport(
        etr=etr,
        accuracy=float(np.mean(per_map)),
        per_map_accuracies=per_map,
        histogram_gen=hist(gen_maps),
        histogram_gt=hist(gt_maps),
        mean_abs_error_dbm=float(np.mean(abs_errors)),
        extra_etr_accuracies=extra,
    )
