"""EER and normalised min t-DCF over genuine/spoof detection scores, plus score files.

Convention: higher score means more likely genuine; a threshold ``t``
accepts an utterance as genuine iff ``score >= t``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


class ScoreFileError(ValueError):
    pass


@dataclass
class ScoreSet:
    ids: list[str]
    scores: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.ids) != self.scores.size:
            raise ValueError("ids and scores differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("utterance ids must be unique")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.scores.shape or not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0/1, one per score")

    def __len__(self) -> int:
        return len(self.ids)

    def with_labels(self, label_map: dict) -> "ScoreSet":
        missing = [u for u in self.ids if u not in label_map]
        if missing:
            raise MetricError(f"no label for {len(missing)} utterances, e.g. {missing[0]}")
        return ScoreSet(list(self.ids), self.scores, np.array([label_map[u] for u in self.ids]))


@dataclass(frozen=True)
class TdcfCosts:
    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise MetricError(f"t-DCF costs must be positive, got C1={self.c1}, C2={self.c2}")


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    genuine, spoof = scores[labels == 1], scores[labels == 0]
    if genuine.size == 0 or spoof.size == 0:
        raise MetricError("need at least one genuine and one spoof score")
    return genuine, spoof


def error_rates(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FRR and FAR at every distinct score used as threshold, plus ``+inf``.

    Returns ``(thresholds, frr, far)`` with thresholds ascending; equal
    scores form one operating point.
    """
    genuine, spoof = _split(scores, labels)
    thresholds = np.unique(np.concatenate([genuine, spoof]))
    g_sorted, s_sorted = np.sort(genuine), np.sort(spoof)
    frr = np.searchsorted(g_sorted, thresholds, side="left") / genuine.size
    far = (spoof.size - np.searchsorted(s_sorted, thresholds, side="left")) / spoof.size
    return (
        np.append(thresholds, np.inf),
        np.append(frr, 1.0),
        np.append(far, 0.0),
    )


def compute_eer(scores, labels=None) -> tuple[float, float]:
    """Equal error rate with linear interpolation at the FAR/FRR crossing.

    Returns ``(eer, threshold)``; the threshold is the operating point
    nearest the crossing (the lower one on a tie).
    """
    if isinstance(scores, ScoreSet):
        scores, labels = scores.scores, scores.labels
    if labels is None:
        raise MetricError("labels required")
    thr, frr, far = error_rates(scores, labels)
    d = far - frr  # non-increasing: +1 .. -1
    j = int(np.argmax(d <= 0))
    if d[j] == 0 or j == 0:
        eer = far[j]
        t = thr[j]
    else:
        lam = d[j - 1] / (d[j - 1] - d[j])
        eer = frr[j - 1] + lam * (frr[j] - frr[j - 1])
        t = thr[j - 1] if (lam <= 0.5 or not math.isfinite(thr[j])) else thr[j]
    return float(eer), float(t)


def tdcf_curve(scores, labels, costs: TdcfCosts) -> tuple[np.ndarray, np.ndarray]:
    """Normalised ``(C1 Pmiss + C2 Pfa) / min(C1, C2)`` at ``-inf``, every score, ``+inf``."""
    thr, pmiss, pfa = error_rates(scores, labels)
    thr = np.concatenate([[-np.inf], thr])
    pmiss = np.concatenate([[0.0], pmiss])
    pfa = np.concatenate([[1.0], pfa])
    return thr, (costs.c1 * pmiss + costs.c2 * pfa) / min(costs.c1, costs.c2)


def compute_min_tdcf(scores, labels=None, costs: TdcfCosts | None = None) -> float:
    if isinstance(scores, ScoreSet):
        if costs is None and isinstance(labels, TdcfCosts):
            costs = labels
        scores, labels = scores.scores, scores.labels
    if labels is None:
        raise MetricError("labels required")
    if costs is None:
        raise MetricError("t-DCF costs C1, C2 must be supplied")
    _, curve = tdcf_curve(scores, labels, costs)
    return float(curve.min())


# ---------------------------------------------------------------------------
# score files and reports
# ---------------------------------------------------------------------------


def write_scores(path, scores: ScoreSet) -> None:
    with Path(path).open("w") as fh:
        for uid, s in zip(scores.ids, scores.scores):
            fh.write(f"{uid} {float(s)!r}\n")


def read_scores(path) -> ScoreSet:
    path = Path(path)
    ids: list[str] = []
    values: list[float] = []
    seen: set[str] = set()
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ScoreFileError(f"{path}: line {lineno}: expected 'utterance_id score', got {line!r}")
            try:
                value = float(fields[1])
            except ValueError:
                raise ScoreFileError(f"{path}: line {lineno}: bad score {fields[1]!r}") from None
            if not math.isfinite(value):
                raise ScoreFileError(f"{path}: line {lineno}: non-finite score")
            if fields[0] in seen:
                raise ScoreFileError(f"{path}: line {lineno}: duplicate utterance id {fields[0]!r}")
            seen.add(fields[0])
            ids.append(fields[0])
            values.append(value)
    return ScoreSet(ids, np.array(values))


@dataclass
class EvalReport:
    scores: ScoreSet
    eer: float | None = None
    threshold: float | None = None
    min_tdcf: float | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float]]:
        out = []
        if self.eer is not None:
            out += [("eer", self.eer), ("eer_threshold", self.threshold)]
        if self.min_tdcf is not None:
            out.append(("min_tdcf", self.min_tdcf))
        out += sorted(self.extra.items())
        return out


def score_report(scores: ScoreSet, costs: TdcfCosts | None = None) -> EvalReport:
    """Compute metrics; a single-class set yields a report carrying the error."""
    report = EvalReport(scores)
    try:
        report.eer, report.threshold = compute_eer(scores)
        if costs is not None:
            report.min_tdcf = compute_min_tdcf(scores.scores, scores.labels, costs)
    except MetricError as exc:
        report.error = str(exc)
    return report


def write_metrics_csv(path, rows: Sequence[tuple[str, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])
