import dataclasses
import json

import numpy as np
import pytest

from cbrlab.actors import ActorConfig
from cbrlab.core.config import resolve_config, scenario_from_dict, with_values
from cbrlab.core.experiments import (
    AgentSnapshot,
    BatteryResult,
    RunRecord,
    battery_schedule,
    build_reservoir,
    replay_final_battery,
    restore_actor,
    run_test_battery,
    run_training,
    snapshot_actor,
    success_of,
)
from cbrlab.envs import GoalEnvConfig
from cbrlab.neural import ReadoutParams
from cbrlab.numkit import make_stream
from cbrlab.reservoir import ReservoirConfig

ENV = GoalEnvConfig()


def _snapshot(w_out, n_features=16):
    return AgentSnapshot(
        actor=ReadoutParams(np.asarray(w_out, dtype=np.float64), n_features),
        actor_cfg=ActorConfig(kind="random-layer", random_scale=0.0),
        reservoir_cfg=ReservoirConfig(n_units=n_features),
    )


def _battery(steps, reached=None, training_step=0):
    reached = [s < 200 for s in steps] if reached is None else reached
    return BatteryResult(training_step, (15.0, 10.0), list(steps), list(reached))


def _record(batteries, failed=False):
    return RunRecord(seed=0, config={}, batteries=batteries, episodes=[], actor={}, failed=failed)


def test_zero_actor_fails_every_start():
    result = run_test_battery(_snapshot(np.zeros((2, 21))), ENV, make_stream(0))
    assert result.steps == [200] * 16
    assert result.n_reached == 0 and result.mean_steps == 200.0


def test_straight_line_actor_reaches_from_the_middle_start():
    w = np.zeros((2, 21))
    # x/F + (1 - x/F) == 1, so the first action unit saturates toward +1
    w[0, 16:18] = 100.0
    result = run_test_battery(_snapshot(w), ENV, make_stream(0))
    assert result.steps[1] == 12 and result.reached[1]
    assert result.steps[9] == 11 and result.reached[9]
    assert result.n_reached == 2
    assert result.mean_steps == pytest.approx((14 * 200 + 23) / 16)


def test_battery_dumps_trajectories_and_states():
    w = np.zeros((2, 21))
    w[0, 16:18] = 100.0
    result = run_test_battery(
        _snapshot(w), dataclasses.replace(ENV, max_steps=5), make_stream(0), dump_trajectories=True, dump_reservoir=True
    )
    assert len(result.trajectories) == 16 * 5
    assert len(result.reservoir_states) == 16 * 5
    first = result.trajectories[0]
    assert (first["x"], first["y"], first["step"]) == (2.0, 2.0, 1)
    assert {"battery", "training_step", "start", "step", "x0", "x15"} <= set(result.reservoir_states[0])


def test_battery_leaves_actor_untouched(small_scenario):
    reservoir = build_reservoir(small_scenario, 0)
    actor = ReadoutParams(make_stream(4).uniform(-1, 1, (2, 21)), 16)
    before = actor.w_out.copy()
    snapshot = AgentSnapshot(actor, small_scenario.actor, small_scenario.reservoir, reservoir)
    run_test_battery(snapshot, small_scenario.env, make_stream(1))
    np.testing.assert_array_equal(actor.w_out, before)


@pytest.mark.parametrize(
    "total, interval, schedule",
    [(0, 100, [0]), (200, 100, [0, 100, 200]), (250, 100, [0, 100, 200, 250]), (50, 100, [0, 50])],
)
def test_battery_schedule(total, interval, schedule):
    assert battery_schedule(total, interval) == schedule


def test_success_needs_every_final_start():
    assert success_of(_record([_battery([30] * 16)]))
    assert not success_of(_record([_battery([30] * 15 + [200])]))


def test_only_final_battery_counts():
    assert success_of(_record([_battery([200] * 16), _battery([40] * 16, training_step=100)]))
    assert not success_of(_record([_battery([40] * 16), _battery([200] * 16, training_step=100)]))


def test_failed_run_is_never_a_success():
    assert not success_of(_record([_battery([30] * 16)], failed=True))


def test_zero_steps_runs_only_the_initial_battery(small_doc):
    doc = with_values(small_doc, {"run.total_steps": 0})
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    assert [b.training_step for b in record.batteries] == [0]
    assert record.episodes == []


def test_run_record_layout(small_record, small_doc):
    assert [b.training_step for b in small_record.batteries] == [0, 100, 200]
    assert small_record.config == small_doc
    assert not small_record.failed
    assert all(len(b.steps) == 16 for b in small_record.batteries)
    for episode in small_record.episodes:
        assert episode["outcome"] in ("goal", "timeout")
        assert 1 <= episode["length"] <= 25
    summary = small_record.summary()
    assert summary["battery_steps"] == [0, 100, 200]
    assert summary["final_mean_steps"] == small_record.final_battery.mean_steps


def test_run_is_deterministic(small_scenario, small_doc, small_record):
    again = run_training(small_scenario, 0, config=small_doc)
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(small_record.to_dict(), sort_keys=True)
    assert json.dumps(again.step_metrics) == json.dumps(small_record.step_metrics)


def test_step_metrics_cover_every_training_step(small_record):
    rows = list(small_record.step_rows())
    assert [r["step"] for r in rows] == list(range(1, 201))
    # batch_size 16: the first critic update happens at step 16, the first
    # delayed actor update one step later
    assert all(np.isnan(r["critic_loss"]) for r in rows[:15])
    assert all(np.isfinite(r["critic_loss"]) for r in rows[15:])
    assert np.isnan(rows[15]["actor_objective"]) and np.isfinite(rows[16]["actor_objective"])
    assert rows[0]["episode_length"] == 1
    for episode in small_record.episodes:
        row = rows[episode["end_step"] - 1]
        assert row["episode_length"] == episode["length"]
        assert row["episode_return"] == episode["return"]


def test_seeds_differ(small_scenario, small_record):
    other = run_training(small_scenario, 1)
    assert other.actor != small_record.actor


def test_zero_learning_rates_keep_the_initial_policy(small_doc):
    doc = with_values(small_doc, {"td3.actor_lr": 0.0, "td3.critic_lr": 0.0})
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    steps = [b.steps for b in record.batteries]
    assert all(s == steps[0] for s in steps)


@pytest.mark.parametrize("kind", ["mlp-plain", "mlp-noisy", "random-layer"])
def test_other_actor_kinds_train(kind, small_doc):
    doc = with_values(small_doc, {"actor.kind": kind, "actor.hidden_units": 8, "run.total_steps": 100})
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    assert not record.failed
    assert len(record.batteries) == 2
    assert record.actor["type"] == ("readout" if kind == "random-layer" else "mlp")


def test_flicker_scenario_runs():
    doc = resolve_config(
        overrides={
            "scenario": "flicker",
            "run": {"total_steps": 100, "test_interval": 100},
            "reservoir": {"n_units": 16},
            "env": {"max_steps": 20},
            "td3": {"batch_size": 16, "critic_hidden": [8]},
        },
        environ={},
    )
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    assert not record.failed and len(record.batteries) == 2


def test_diverging_exploration_marks_the_run_failed(small_doc):
    doc = with_values(
        small_doc,
        {"actor.exploration": "ou", "actor.ou_theta": 1e200, "actor.ou_dt": 1.0, "run.total_steps": 100},
    )
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    assert record.failed and "diverged" in record.failure
    assert not record.success


def test_actor_snapshot_restores(small_record):
    actor = restore_actor(small_record.actor)
    assert snapshot_actor(actor) == small_record.actor


def test_replay_reproduces_the_final_battery(small_record, small_scenario):
    replayed = replay_final_battery(small_record, small_scenario)
    assert replayed.steps == small_record.final_battery.steps
    assert replayed.training_step == 200


def test_record_dump_flags(small_doc):
    doc = with_values(small_doc, {"run.total_steps": 100, "run.dump_trajectories": True, "run.dump_reservoir": True})
    record = run_training(scenario_from_dict(doc), 0, config=doc)
    assert record.trajectory_rows() and record.reservoir_rows()
    assert record.reservoir is not None
