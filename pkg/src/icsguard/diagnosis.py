"""Turn confidence-score series into alarms, zone attribution and attack-class
labels via calibrated score bands."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lstm import ScoreSeries


@dataclass(frozen=True)
class ScoreBand:
    label: str
    center: float
    sigma: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"band {self.label}: need 0 <= lo < hi <= 1")

    @classmethod
    def from_scores(cls, label: str, scores: np.ndarray) -> "ScoreBand":
        center = float(np.mean(scores))
        sigma = float(np.std(scores))
        lo = max(center - 2.0 * sigma, 0.0)
        hi = min(center + 2.0 * sigma, 1.0)
        if hi <= lo:                      # degenerate (constant) scores
            lo = max(center - 1e-6, 0.0)
            hi = min(center + 1e-6, 1.0)
        return cls(label=label, center=center, sigma=sigma, lo=lo, hi=hi)


@dataclass(frozen=True)
class DiagnosisRule:
    normal_floor: float
    bands: tuple                   # of ScoreBand
    dwell: int = 25
    steady_skip: int = 50          # transient points ignored after onset,
                                   # matching the band-calibration skip

    def __post_init__(self):
        if self.dwell < 1:
            raise ValueError("dwell must be >= 1")


@dataclass(frozen=True)
class Verdict:
    verdict: str                   # "Normal" | "Alarm"
    label: Optional[str] = None    # attack class or "Unknown"
    zone: Optional[int] = None
    onset: Optional[int] = None    # estimated attack onset, trace-step index
    steady_mean: Optional[float] = None

    @property
    def is_alarm(self) -> bool:
        return self.verdict == "Alarm"


def steady_scores(series: ScoreSeries, onset_step: int, window: int) -> np.ndarray:
    """Post-onset scores with the first `window` transient points skipped."""
    first = onset_step + window - series.start
    return series.scores[max(first, 0):]


def calibrate_bands(labeled: dict, normal: ScoreSeries,
                    dwell: int = 25, window: int = 50) -> DiagnosisRule:
    """Build the rule from one normal series and steady post-onset scores.

    `labeled` maps class label -> (ScoreSeries, onset_step).
    """
    if len(normal) < 1000:
        raise ValueError("normal series must have >= 1000 points")
    normal_floor = float(np.percentile(normal.scores, 1.0))
    bands = []
    for label, (series, onset_step) in sorted(labeled.items()):
        steady = steady_scores(series, onset_step, window)
        if len(steady) < 200:
            raise ValueError(f"class {label}: need >= 200 post-onset points")
        band = ScoreBand.from_scores(label, steady)
        if band.lo <= normal_floor <= band.hi:
            mass = np.mean((steady >= normal_floor))
            if mass > 0.5:
                raise ValueError(f"class {label} not separable from normal "
                                 f"(band {band.lo:.3f}..{band.hi:.3f} covers "
                                 f"the normal floor {normal_floor:.3f})")
        bands.append(band)
    return DiagnosisRule(normal_floor=normal_floor, bands=tuple(bands),
                         dwell=dwell, steady_skip=window)


def _first_alarm_index(scores: np.ndarray, floor: float, dwell: int):
    run = 0
    for i, s in enumerate(scores):
        run = run + 1 if s < floor else 0
        if run >= dwell:
            return i
    return None


def classify(rule: DiagnosisRule, series: ScoreSeries,
             zone_scores: Optional[dict] = None) -> Verdict:
    """Alarm on `dwell` consecutive sub-floor scores, then label and localize.

    Class = band with center nearest the steady post-onset mean; ties go to
    the band with the larger sigma margin (and then the first label).  Zone =
    the per-zone series with the lowest steady mean, when provided.
    """
    if len(series) < rule.dwell:
        raise ValueError("series shorter than dwell")
    idx = _first_alarm_index(series.scores, rule.normal_floor, rule.dwell)
    if idx is None:
        return Verdict(verdict="Normal")
    onset_series_idx = idx - rule.dwell + 1
    onset = series.step_of(onset_series_idx)
    steady = series.scores[onset_series_idx + rule.steady_skip:]
    if len(steady) == 0:
        steady = series.scores[onset_series_idx:]
    mean = float(np.mean(steady))

    label = "Unknown"
    if rule.bands:
        def tie_key(b: ScoreBand):
            dist = abs(b.center - mean)
            margin = (b.sigma - dist) / b.sigma if b.sigma > 0 else -dist
            return (dist, -margin, b.label)
        best = min(rule.bands, key=tie_key)
        if best.lo <= mean <= best.hi:
            label = best.label

    zone = None
    if zone_scores:
        def zone_mean(z):
            zs = zone_scores[z]
            # align on trace steps; zone series may start at a different index
            first = max(onset + rule.dwell - zs.start, 0)
            return float(np.mean(zs.scores[first:]))
        zone = min(sorted(zone_scores), key=zone_mean)
    return Verdict(verdict="Alarm", label=label, zone=zone, onset=onset,
                   steady_mean=mean)


def save_rule(rule: DiagnosisRule, path) -> None:
    doc = {
        "normal_floor": rule.normal_floor,
        "dwell": rule.dwell,
        "steady_skip": rule.steady_skip,
        "bands": [{"label": b.label, "center": b.center, "sigma": b.sigma,
                   "lo": b.lo, "hi": b.hi} for b in rule.bands],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_rule(path) -> DiagnosisRule:
    with open(path) as fh:
        doc = json.load(fh)
    bands = tuple(ScoreBand(**b) for b in doc["bands"])
    return DiagnosisRule(normal_floor=doc["normal_floor"], bands=bands,
                         dwell=doc["dwell"],
                         steady_skip=doc.get("steady_skip", 50))


def save_verdict(verdict: Verdict, rule: DiagnosisRule, path) -> None:
    doc = {
        "verdict": verdict.verdict,
        "class": verdict.label,
        "zone": verdict.zone,
        "onset": verdict.onset,
        "steady_mean": verdict.steady_mean,
        "bands_used": [b.label for b in rule.bands],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
