import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsguard import pca
from icsguard.pca import (EigenError, PCAModel, Standardizer, fit_pca,
                          jacobi_eigen, load_pca, pca_statistics, project,
                          project_trace, save_pca, statistics_trace,
                          sustained_alarm_indices)
from icsguard.plant import CHANNELS, DEFAULT_ZONE_MAP


def test_jacobi_on_analytic_2x2():
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    vals, vecs = jacobi_eigen(S)
    assert vals == pytest.approx([3.0, 1.0], abs=1e-12)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, S, atol=1e-12)


def test_jacobi_handles_diagonal_and_repeated():
    vals, vecs = jacobi_eigen(np.diag([5.0, 5.0, 1.0]))
    assert vals == pytest.approx([5.0, 5.0, 1.0])
    assert np.allclose(vecs @ vecs.T, np.eye(3), atol=1e-12)


def test_jacobi_rejects_bad_input():
    with pytest.raises(EigenError):
        jacobi_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))   # not symmetric
    with pytest.raises(EigenError):
        jacobi_eigen(np.ones((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_jacobi_decomposition_properties(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    S = (A + A.T) / 2.0
    vals, vecs = jacobi_eigen(S)
    assert np.all(np.diff(vals) <= 1e-12)                  # descending
    assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-10)
    assert np.allclose(S @ vecs, vecs * vals, atol=1e-9)


def test_standardizer_round_trip_and_constant_channels():
    data = np.column_stack([np.linspace(0, 1, 50), np.full(50, 3.0)])
    with pytest.warns(UserWarning):
        sd = Standardizer.fit(data)
    assert sd.constant.tolist() == [False, True]
    z = sd.transform(data)
    assert np.allclose(sd.inverse(z), data, atol=1e-12)
    assert abs(z[:, 0].mean()) < 1e-12 and z[:, 0].std() == pytest.approx(1.0)


def test_fit_pca_training_alarm_rate_bounded(normal_telemetry):
    model = fit_pca(normal_telemetry, d=3)
    _, _, alarms = statistics_trace(model, normal_telemetry)
    # two 99.5th-percentile thresholds cap the per-frame alarm rate near 1 %
    assert alarms.mean() <= 0.015
    assert model.components.shape == (3, 11)


def test_project_orders_by_variance(normal_telemetry):
    model = fit_pca(normal_telemetry, d=3)
    proj = project_trace(model, normal_telemetry)
    variances = proj.var(axis=0)
    assert variances[0] >= variances[1] >= variances[2]
    assert np.allclose(project(model, normal_telemetry[17]), proj[17])


def test_statistics_trace_matches_per_frame(normal_telemetry):
    model = fit_pca(normal_telemetry[:500], d=3)
    t2s, spes, alarms = statistics_trace(model, normal_telemetry[:50])
    for i in range(50):
        t2, spe, alarm = pca_statistics(model, normal_telemetry[i])
        assert t2 == pytest.approx(t2s[i]) and spe == pytest.approx(spes[i])
        assert alarm == bool(alarms[i])


def test_project_rejects_non_finite(normal_telemetry):
    model = fit_pca(normal_telemetry, d=3)
    bad = normal_telemetry[0].copy()
    bad[3] = float("nan")
    with pytest.raises(ValueError):
        project(model, bad)


def test_channel_subset_model(normal_telemetry):
    channels = DEFAULT_ZONE_MAP.channels(2)
    model = fit_pca(normal_telemetry, d=3, channels=channels)
    assert model.components.shape == (3, len(channels))
    # full 11-channel frames are narrowed automatically
    proj = project(model, normal_telemetry[0])
    assert proj.shape == (3,)


def test_fit_pca_validates_dimensions(normal_telemetry):
    with pytest.raises(ValueError):
        fit_pca(normal_telemetry, d=12)
    with pytest.raises(ValueError):
        fit_pca(normal_telemetry[:5], d=3)


def test_sustained_alarm_indices():
    alarms = np.array([0, 1, 1, 1, 0, 1, 1], dtype=bool)
    assert sustained_alarm_indices(alarms, 3).tolist() == [3]
    assert sustained_alarm_indices(alarms, 2).tolist() == [2, 3, 6]
    assert sustained_alarm_indices(alarms, 5).tolist() == []


def test_save_load_round_trip(tmp_path, normal_telemetry):
    model = fit_pca(normal_telemetry, d=3)
    path = tmp_path / "pca.json"
    save_pca(model, path)
    back = load_pca(path)
    assert back.channel_order == model.channel_order
    t2a, spea, _ = statistics_trace(model, normal_telemetry[:100])
    t2b, speb, _ = statistics_trace(back, normal_telemetry[:100])
    assert np.allclose(t2a, t2b, rtol=1e-12)
    assert np.allclose(spea, speb, rtol=1e-12)


def test_model_validation_rejects_non_orthonormal():
    sd = Standardizer(mean=np.zeros(2), std=np.ones(2),
                      constant=np.zeros(2, dtype=bool))
    with pytest.raises(ValueError):
        PCAModel(standardizer=sd, components=np.array([[1.0, 1.0]]),
                 eigenvalues=np.array([1.0]), t2_threshold=1.0,
                 spe_threshold=1.0, channel_order=("L1", "L2"))
