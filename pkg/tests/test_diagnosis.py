import json

import numpy as np
import pytest

from icsguard.diagnosis import (DiagnosisRule, ScoreBand, Verdict,
                                calibrate_bands, classify, load_rule,
                                save_rule, save_verdict, steady_scores)
from icsguard.lstm import ScoreSeries


def _series(scores, start=50):
    return ScoreSeries(start=start, scores=np.asarray(scores, dtype=float))


def _rule(**kw):
    bands = (ScoreBand(label="A", center=0.30, sigma=0.02, lo=0.26, hi=0.34),
             ScoreBand(label="B", center=0.10, sigma=0.02, lo=0.06, hi=0.14))
    args = dict(normal_floor=0.8, bands=bands, dwell=5, steady_skip=10)
    args.update(kw)
    return DiagnosisRule(**args)


def test_band_from_scores():
    band = ScoreBand.from_scores("A", np.array([0.3, 0.32, 0.28, 0.30]))
    assert band.center == pytest.approx(0.3)
    assert band.lo == pytest.approx(band.center - 2 * band.sigma)
    assert band.hi == pytest.approx(band.center + 2 * band.sigma)
    degenerate = ScoreBand.from_scores("B", np.full(10, 0.25))
    assert degenerate.lo < 0.25 < degenerate.hi


def test_band_validation():
    with pytest.raises(ValueError):
        ScoreBand(label="x", center=0.5, sigma=0.1, lo=0.6, hi=0.4)
    with pytest.raises(ValueError):
        DiagnosisRule(normal_floor=0.8, bands=(), dwell=0)


def test_steady_scores_skips_transient():
    series = _series(np.arange(100) / 100.0, start=50)
    steady = steady_scores(series, onset_step=60, window=20)
    # first kept point is trace step 80 = series index 30
    assert steady[0] == pytest.approx(0.30)


def test_classify_normal_when_no_sustained_drop():
    rule = _rule()
    scores = np.full(200, 0.95)
    scores[40:44] = 0.5          # shorter than the dwell
    verdict = classify(rule, _series(scores))
    assert verdict.verdict == "Normal" and not verdict.is_alarm


def test_classify_onset_and_label():
    rule = _rule()
    scores = np.full(300, 0.95)
    scores[100:] = 0.30          # class A level, from series index 100
    verdict = classify(rule, _series(scores, start=50))
    assert verdict.is_alarm
    assert verdict.onset == 150  # trace step of the first sub-floor score
    assert verdict.label == "A"
    assert verdict.steady_mean == pytest.approx(0.30)


def test_classify_unknown_outside_all_bands():
    rule = _rule()
    scores = np.full(300, 0.95)
    scores[100:] = 0.60          # sub-floor but far from both bands
    verdict = classify(rule, _series(scores))
    assert verdict.is_alarm and verdict.label == "Unknown"


def test_classify_zone_attribution():
    rule = _rule()
    scores = np.full(300, 0.95)
    scores[100:] = 0.30
    zones = {1: _series(np.full(300, 0.9)), 2: _series(np.full(300, 0.2))}
    verdict = classify(rule, _series(scores), zones)
    assert verdict.zone == 2


def test_classify_tie_breaks_deterministically():
    bands = (ScoreBand(label="A", center=0.2, sigma=0.05, lo=0.1, hi=0.3),
             ScoreBand(label="B", center=0.4, sigma=0.05, lo=0.3, hi=0.5))
    rule = DiagnosisRule(normal_floor=0.8, bands=bands, dwell=5,
                         steady_skip=10)
    scores = np.full(300, 0.95)
    scores[100:] = 0.30          # exactly between the two centers
    verdict = classify(rule, _series(scores))
    assert verdict.label == "A"  # equal distance and sigma: first label wins


def test_classify_rejects_short_series():
    with pytest.raises(ValueError):
        classify(_rule(dwell=50), _series(np.full(10, 0.9)))


def test_calibrate_bands_and_separability():
    normal = _series(np.clip(0.97 + 0.01 * np.sin(np.arange(1200)), 0, 1))
    low = np.full(1000, 0.95)
    low[500:] = 0.30
    labeled = {"A": (_series(low), 550)}
    rule = calibrate_bands(labeled, normal, dwell=7, window=50)
    assert rule.dwell == 7 and rule.steady_skip == 50
    assert rule.bands[0].label == "A"
    assert rule.bands[0].center == pytest.approx(0.30)
    # a class whose scores straddle the normal floor is rejected
    overlapping = np.linspace(0.94, 1.0, 1000)
    with pytest.raises(ValueError):
        calibrate_bands({"A": (_series(overlapping), 100)}, normal)


def test_calibrate_bands_requires_enough_data():
    normal = _series(np.full(500, 0.97))
    with pytest.raises(ValueError):
        calibrate_bands({}, normal)


def test_rule_round_trip(tmp_path):
    rule = _rule()
    path = tmp_path / "rule.json"
    save_rule(rule, path)
    back = load_rule(path)
    assert back == rule


def test_save_verdict_fields(tmp_path):
    rule = _rule()
    verdict = Verdict(verdict="Alarm", label="A", zone=2, onset=533,
                      steady_mean=0.31)
    path = tmp_path / "verdict.json"
    save_verdict(verdict, rule, path)
    doc = json.loads(path.read_text())
    assert doc == {"verdict": "Alarm", "class": "A", "zone": 2,
                   "onset": 533, "steady_mean": 0.31,
                   "bands_used": ["A", "B"]}
