"""Model JSON files and prediction / CIF CSV exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from scoresurv.model import SurvivalPrediction, model_from_dict


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1), encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_predictions(path, S: np.ndarray, times) -> None:
    """Survival matrix as CSV: one row per subject, one column per time."""
    times = np.asarray(times, dtype=float)
    S = np.asarray(S, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject"] + [repr(float(t)) for t in times])
        for i, row in enumerate(S):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "subject":
        raise ValueError(f"{path}: not a prediction file (first column must be 'subject')")
    times = np.array([float(t) for t in rows[0][1:]])
    S = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(-1, times.size)
    return times, S


def predictions_from_matrix(times, S, interpolation: str = "step") -> list[SurvivalPrediction]:
    """Curves through ``(0, 1)`` and the exported knots."""
    knots = np.concatenate(([0.0], np.asarray(times, dtype=float)))
    return [SurvivalPrediction(knots, np.concatenate(([1.0], row)), interpolation) for row in S]


def write_cif(path, cif: np.ndarray, times) -> None:
    """Long CSV ``subject, cause, time, cif`` from an (n, K, m) array."""
    times = np.asarray(times, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "cause", "time", "cif"])
        for i in range(cif.shape[0]):
            for k in range(cif.shape[1]):
                for t, v in zip(times, cif[i, k]):
                    w.writerow([i, k + 1, repr(float(t)), repr(float(v))])
