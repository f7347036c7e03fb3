import numpy as np
import pytest

from icsguard.attack import (AttackConfigError, AttackScenario,
                             apply_overrides, canonical_scenario, conceal,
                             replay_values)
from icsguard.plant import (CHANNEL_INDEX, DEFAULT_INIT, DEFAULT_ZONE_MAP,
                            ControlState, TelemetryFrame, run_episode)


def _scenario(replay, **kw):
    args = dict(start_step=500, zone=2, overrides={"V1": 0, "P": 0},
                concealment="replay", replay_source=replay)
    args.update(kw)
    return AttackScenario(**args)


def test_validation_rejects_bad_scenarios(replay_telemetry):
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, start_step=0)
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, zone=3)
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, overrides={"V2": 0})   # zone-1 actuator
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, overrides={"L2": 0})   # not an actuator
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, overrides={"P": 2})
    with pytest.raises(AttackConfigError):
        _scenario(None)                                    # replay needs data
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry, concealment="mirror")
    with pytest.raises(AttackConfigError):
        _scenario(replay_telemetry[:510])  # tail shorter than one cycle


def test_overrides_apply_only_after_start(replay_telemetry):
    sc = _scenario(replay_telemetry)
    before = apply_overrides(ControlState(V1=1, P=1, V2=1), sc, 499)
    assert before.V1 == 1 and before.P == 1
    after = apply_overrides(ControlState(V1=1, P=1, V2=1), sc, 500)
    assert after.V1 == 0 and after.P == 0
    assert after.V2 == 1        # untouched channels pass through


def test_replay_phase_alignment_and_wrap(replay_telemetry):
    sc = _scenario(replay_telemetry)
    n_loop = sc.replay_len
    assert np.array_equal(replay_values(sc, 500), replay_telemetry[500])
    assert np.array_equal(replay_values(sc, 500 + n_loop),
                          replay_telemetry[500])
    assert np.array_equal(replay_values(sc, 503 + 2 * n_loop),
                          replay_telemetry[503])


def test_conceal_replaces_exactly_the_compromised_zone(replay_telemetry):
    sc = _scenario(replay_telemetry)
    frame = TelemetryFrame(t=600, values=tuple(float(i) for i in range(11)))
    out = conceal(frame, sc, DEFAULT_ZONE_MAP)
    zone2 = DEFAULT_ZONE_MAP.zone2
    for name, i in CHANNEL_INDEX.items():
        if name in zone2:
            assert out.values[i] == replay_telemetry[600, i]
        else:
            assert out.values[i] == frame.values[i]
    # inactive before the start step
    early = TelemetryFrame(t=10, values=frame.values)
    assert conceal(early, sc, DEFAULT_ZONE_MAP) is early


def test_canonical_scenarios(replay_telemetry):
    p0 = canonical_scenario("P0_V10", replay_telemetry)
    assert p0.overrides == {"V1": 0, "P": 0} and p0.zone == 2
    p1 = canonical_scenario("P1_V10", replay_telemetry)
    assert p1.overrides == {"V1": 0, "P": 1}
    with pytest.raises(AttackConfigError):
        canonical_scenario("P2_V11", replay_telemetry)


def test_concealed_telemetry_has_no_visible_splice(plant_params,
                                                   replay_telemetry):
    """The replay is phase-aligned at the attack start, so the switch from
    live to replayed telemetry stays inside the normal per-step jump
    distribution (the loop wrap point lies beyond the run length)."""
    sc = canonical_scenario("P0_V10", replay_telemetry)
    assert 500 + sc.replay_len >= 1500
    ep = run_episode(DEFAULT_INIT, plant_params, 1500, attack=sc,
                     noise_frac=0.005, seed=33)
    tel = ep.telemetry_array()
    normal = run_episode(DEFAULT_INIT, plant_params, 1500,
                         noise_frac=0.005, seed=34).telemetry_array()
    deltas = np.abs(np.diff(tel[:, :7], axis=0))
    normal_deltas = np.abs(np.diff(normal[:, :7], axis=0))
    bound = np.percentile(normal_deltas, 99.9, axis=0) * 1.5 + 1e-9
    for t in (499, 500, 501):
        assert np.all(deltas[t - 1] <= bound), f"splice jump at step {t}"


def test_attack_changes_truth_but_not_reported_zone(plant_params,
                                                    replay_telemetry):
    sc = canonical_scenario("P0_V10", replay_telemetry)
    ep = run_episode(DEFAULT_INIT, plant_params, 1200, attack=sc,
                     noise_frac=0.0, seed=0)
    truth = ep.truth_array()
    tel = ep.telemetry_array()
    # physically everything freezes: levels stop moving after the shutdown
    assert np.all(np.diff(truth[700:, 1]) == 0.0)
    # but the reported compromised-zone level keeps its normal oscillation
    assert np.std(tel[700:, 1]) > 0.01
    # truth records the overridden actuators
    assert np.all(truth[500:, CHANNEL_INDEX["P"]] == 0.0)
    assert np.all(truth[500:, CHANNEL_INDEX["V1"]] == 0.0)
