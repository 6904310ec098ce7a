import numpy as np
import pytest

from cbrlab import td3
from cbrlab.actors import ActorConfig, policy_forward
from cbrlab.exceptions import DimensionError, InsufficientExperience, InvalidConfig
from cbrlab.neural import ReadoutParams, init_adam, mlp_forward
from cbrlab.numkit import derive_stream, make_stream
from cbrlab.td3 import (
    Batch,
    Experience,
    ReplayBuffer,
    Td3Hyper,
    ascend_actor,
    create_learner,
    critic_targets,
    params_digest,
    polyak,
    push,
    sample,
    train_step,
    update_actor,
    update_critics,
)

H = 1e-6


def _experience(r=0.0, features=False, terminal=False, seed=0):
    rng = derive_stream(make_stream(seed), f"exp/{r}")
    x = rng.uniform(-1, 1, 4) if features else None
    return Experience(
        u=rng.uniform(0, 1, 5),
        x=x,
        a=rng.uniform(-1, 1, 2),
        r=r,
        u_next=rng.uniform(0, 1, 5),
        x_next=rng.uniform(-1, 1, 4) if features else None,
        terminal=terminal,
    )


def _filled(n, capacity=10**6, features=False):
    buffer = ReplayBuffer(capacity)
    for i in range(n):
        push(buffer, _experience(float(i), features))
    return buffer


def _learner(kind="mlp-plain", seed=0, n_features=0, **hyper):
    cfg = ActorConfig(kind=kind, hidden_units=8)
    hyper.setdefault("critic_hidden", (8, 8))
    return create_learner(cfg, Td3Hyper(**hyper), 5, 2, n_features, derive_stream(make_stream(seed), "init"))


def _batch(r, terminal, n_features=0):
    n = len(r)
    x = np.full((n, n_features), 0.1) if n_features else None
    return Batch(
        u=np.full((n, 5), 0.5),
        x=x,
        a=np.zeros((n, 2)),
        r=np.asarray(r, dtype=np.float64),
        u_next=np.full((n, 5), 0.4),
        x_next=x,
        terminal=np.asarray(terminal, dtype=bool),
    )


def _random_batch(rng, n=6, n_features=0):
    x = rng.uniform(-1, 1, (n, n_features)) if n_features else None
    return Batch(
        u=rng.uniform(0, 1, (n, 5)),
        x=x,
        a=rng.uniform(-1, 1, (n, 2)),
        r=rng.uniform(-1, 1, n),
        u_next=rng.uniform(0, 1, (n, 5)),
        x_next=x,
        terminal=np.zeros(n, dtype=bool),
    )


def _numeric_grad(f, tensor):
    grad = np.zeros_like(tensor)
    for idx in np.ndindex(tensor.shape):
        old = tensor[idx]
        tensor[idx] = old + H
        up = f()
        tensor[idx] = old - H
        down = f()
        tensor[idx] = old
        grad[idx] = (up - down) / (2 * H)
    return grad


def _record_adam_grads(monkeypatch):
    """Capture the gradients handed to Adam instead of applying them."""
    recorded = []

    def record(state, params, grads):
        recorded.append([np.array(g) for g in grads])
        return params

    monkeypatch.setattr(td3, "adam_step", record)
    return recorded


def _set_constant(net, value):
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases[:-1]:
        b[...] = 0.0
    net.biases[-1][...] = value


def test_buffer_is_fifo():
    buffer = _filled(3, capacity=2)
    assert [e.r for e in buffer.items()] == [1.0, 2.0]
    assert len(buffer) == 2


def test_buffer_growth_keeps_order():
    buffer = _filled(1500, capacity=2000)
    items = buffer.items()
    assert len(items) == 1500
    assert items[0].r == 0.0 and items[-1].r == 1499.0


def test_buffer_wraps_after_growth():
    buffer = _filled(1100, capacity=1030)
    rewards = [e.r for e in buffer.items()]
    assert rewards == [float(i) for i in range(70, 1100)]


def test_buffer_keeps_features():
    buffer = _filled(2, features=True)
    e = buffer.items()[0]
    assert e.x.shape == (4,) and e.x_next.shape == (4,)


def test_buffer_rejects_mixed_features():
    buffer = _filled(1, features=True)
    with pytest.raises(DimensionError):
        push(buffer, _experience(5.0, features=False))


def test_buffer_needs_next_features_with_features():
    e = _experience(0.0, features=True)
    with pytest.raises(DimensionError):
        push(ReplayBuffer(4), Experience(e.u, e.x, e.a, e.r, e.u_next, None, e.terminal))


def test_buffer_rejects_shape_changes():
    buffer = _filled(1, features=True)
    e = _experience(1.0, features=True)
    with pytest.raises(DimensionError):
        push(buffer, Experience(e.u, np.zeros(6), e.a, e.r, e.u_next, np.zeros(6), e.terminal))
    with pytest.raises(DimensionError):
        push(buffer, Experience(e.u, e.x, e.a, e.r, np.zeros(3), e.x_next, e.terminal))
    assert len(buffer) == 1


def test_sample_refuses_small_buffer(stream):
    with pytest.raises(InsufficientExperience):
        sample(_filled(1), 3, stream)


def test_sample_indices_in_range(stream):
    buffer = _filled(64)
    batch = sample(buffer, 64, stream)
    assert len(batch) == 64
    assert batch.u.shape == (64, 5) and batch.x is None
    assert set(batch.r.tolist()) <= set(float(i) for i in range(64))


def test_sample_is_uniform(stream):
    buffer = _filled(100, capacity=100)
    counts = np.zeros(100)
    for _ in range(100):
        batch = sample(buffer, 1000, stream)
        counts += np.bincount(batch.r.astype(int), minlength=100)
    expected = counts.sum() / 100
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 99 degrees of freedom, p = 0.001
    assert chi2 < 148.2


def test_zero_discount_targets_are_rewards(stream):
    learner = _learner(gamma=0.0)
    targets = critic_targets(learner, _batch([1.0, -0.5, 0.0], [False, False, True]), stream)
    np.testing.assert_allclose(targets, [1.0, -0.5, 0.0])


def test_targets_use_smaller_target_critic(stream):
    learner = _learner(gamma=0.95)
    _set_constant(learner.target_critics[0], 2.0)
    _set_constant(learner.target_critics[1], 1.0)
    targets = critic_targets(learner, _batch([0.0, 1.0], [False, True]), stream)
    np.testing.assert_allclose(targets, [0.95, 1.0])


def test_targets_follow_clipped_double_q(stream):
    learner = _learner("cbrl-reservoir", n_features=4, critic_sees_reservoir=True)
    batch = _batch(np.linspace(-1, 1, 8), [False] * 8, n_features=4)
    targets = critic_targets(learner, batch, stream)
    next_actions = policy_forward(learner.target_actor, batch.u_next, batch.x_next)
    q_in = np.concatenate([batch.u_next, batch.x_next, next_actions], axis=1)
    q = [mlp_forward(c, q_in)[0][:, 0] for c in learner.target_critics]
    np.testing.assert_allclose(targets, batch.r + 0.95 * np.minimum(q[0], q[1]))
    assert np.all(targets <= batch.r + 0.95 * q[0] + 1e-12)


def test_critic_update_at_zero_error_keeps_params(stream):
    learner = _learner()
    for critic in learner.critics:
        _set_constant(critic, 0.5)
    before = [t.copy() for c in learner.critics for t in c.tensors()]
    batch = _batch([0.5, 0.5], [False, False])
    assert update_critics(learner, batch, np.array([0.5, 0.5])) == 0.0
    after = [t for c in learner.critics for t in c.tensors()]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


def test_polyak_blend():
    learner = _learner(tau=0.05)
    for t in learner.actor.tensors():
        t[...] = 1.0
    for t in learner.target_actor.tensors():
        t[...] = 0.0
    polyak(learner, 0.05)
    for t in learner.target_actor.tensors():
        np.testing.assert_allclose(t, 0.05)


def test_polyak_full_copy():
    learner = _learner()
    for t in learner.critics[1].tensors():
        t += 1.0
    polyak(learner, 1.0)
    for online, target in zip(learner.critics[1].tensors(), learner.target_critics[1].tensors()):
        np.testing.assert_array_equal(online, target)


def test_polyak_converges_geometrically():
    learner = _learner()
    for t in learner.target_actor.tensors():
        t[...] = 0.0
    for t in learner.actor.tensors():
        t[...] = 1.0
    for _ in range(10):
        polyak(learner, 0.1)
    for t in learner.target_actor.tensors():
        np.testing.assert_allclose(t, 1.0 - 0.9**10)


def test_mlp_actor_cannot_feed_reservoir_to_critic():
    with pytest.raises(InvalidConfig):
        _learner("mlp-plain", critic_sees_reservoir=True)


@pytest.mark.parametrize(
    "kind, exploration, target_std",
    [("cbrl-reservoir", None, 0.0), ("mlp-plain", None, 0.0), ("mlp-noisy", None, 0.2), ("cbrl-reservoir", "gaussian", 0.2)],
)
def test_smoothing_only_with_noise_exploration(kind, exploration, target_std):
    cfg = ActorConfig(kind=kind, exploration=exploration, hidden_units=8)
    learner = create_learner(cfg, Td3Hyper(critic_hidden=(8,)), 5, 2, 4 if cfg.kind.uses_features else 0, make_stream(0))
    assert learner.smoothing.target_std == target_std


@pytest.mark.parametrize("kind, lr", [("cbrl-reservoir", 5e-4), ("mlp-noisy", 1.6e-5)])
def test_default_actor_learning_rate(kind, lr):
    learner = _learner(kind, n_features=4 if kind == "cbrl-reservoir" else 0)
    assert learner.actor_opt.lr == lr


def test_actor_ascends_toward_critic_optimum():
    """Q(s, a) = -(a - 0.3)^2 on a single-unit readout with a constant input."""
    learner = _learner("cbrl-reservoir", n_features=1)
    learner.actor = ReadoutParams(np.zeros((1, 2)), n_features=1)
    learner.actor_opt = init_adam(learner.actor.tensors(), lr=0.01)
    x, u = np.array([[1.0]]), np.array([[0.0]])
    for _ in range(500):
        action = policy_forward(learner.actor, u, x)
        ascend_actor(learner, u, x, -2.0 * (action - 0.3))
    assert policy_forward(learner.actor, u, x)[0, 0] == pytest.approx(0.3, abs=0.02)


def test_train_step_waits_for_a_full_batch():
    learner = _learner(batch_size=4)
    buffer = _filled(3)
    assert train_step(learner, buffer, make_stream(1), make_stream(2)) is None
    assert learner.step == 0


def test_actor_updates_on_delayed_steps_only():
    learner = _learner(batch_size=4, policy_delay=2)
    buffer = _filled(8)
    replay, smoothing = make_stream(1), make_stream(2)
    metrics = [train_step(learner, buffer, replay, smoothing) for _ in range(6)]
    assert [m.step for m in metrics] == [1, 2, 3, 4, 5, 6]
    assert [m.actor_objective is not None for m in metrics] == [False, True] * 3


def test_zero_learning_rates_freeze_everything():
    learner = _learner(batch_size=8, critic_lr=0.0, actor_lr=0.0, tau=1.0)
    buffer = _filled(32)
    digest = params_digest(learner)
    replay, smoothing = make_stream(1), make_stream(2)
    for _ in range(1000):
        train_step(learner, buffer, replay, smoothing)
    assert params_digest(learner) == digest


def test_training_is_deterministic():
    def run():
        learner = _learner(batch_size=8)
        buffer = _filled(32)
        replay, smoothing = make_stream(1), make_stream(2)
        return [train_step(learner, buffer, replay, smoothing) for _ in range(20)], params_digest(learner)

    assert run() == run()


def test_training_changes_parameters():
    learner = _learner(batch_size=8)
    buffer = _filled(32)
    digest = params_digest(learner)
    for _ in range(4):
        train_step(learner, buffer, make_stream(1), make_stream(2))
    assert params_digest(learner) != digest


@pytest.mark.parametrize(
    "kwargs",
    [{"gamma": 1.5}, {"tau": 0.0}, {"policy_delay": 0}, {"batch_size": 0}, {"critic_lr": -1.0}],
)
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(InvalidConfig):
        Td3Hyper(**kwargs)


@pytest.mark.parametrize("seed", range(3))
def test_critic_gradients_match_finite_differences(seed, monkeypatch):
    rng = derive_stream(make_stream(seed), "critic-fd")
    learner = _learner("cbrl-reservoir", seed=seed, n_features=4, critic_sees_reservoir=True)
    batch = _random_batch(rng, n_features=4)
    targets = rng.uniform(-1, 1, len(batch))
    recorded = _record_adam_grads(monkeypatch)
    update_critics(learner, batch, targets)
    q_in = np.concatenate([batch.u, batch.x, batch.a], axis=1)
    for critic, grads in zip(learner.critics, recorded):

        def loss():
            return float(np.mean((mlp_forward(critic, q_in)[0][:, 0] - targets) ** 2))

        for analytic, tensor in zip(grads, critic.tensors()):
            np.testing.assert_allclose(analytic, _numeric_grad(loss, tensor), rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize(
    "kind, n_features, sees_reservoir",
    [("mlp-noisy", 0, False), ("cbrl-reservoir", 4, False), ("cbrl-reservoir", 4, True)],
)
def test_actor_gradient_matches_finite_differences(kind, n_features, sees_reservoir, monkeypatch):
    rng = derive_stream(make_stream(7), "actor-fd")
    learner = _learner(kind, n_features=n_features, critic_sees_reservoir=sees_reservoir)
    batch = _random_batch(rng, n_features=n_features)
    recorded = _record_adam_grads(monkeypatch)
    objective = update_actor(learner, batch)

    def mean_q():
        actions = policy_forward(learner.actor, batch.u, batch.x)
        parts = [batch.u, batch.x, actions] if sees_reservoir else [batch.u, actions]
        return float(np.mean(mlp_forward(learner.critics[0], np.concatenate(parts, axis=1))[0]))

    assert objective == pytest.approx(mean_q())
    (grads,) = recorded
    for ascent, tensor in zip(grads, learner.actor.tensors()):
        np.testing.assert_allclose(-ascent, _numeric_grad(mean_q, tensor), rtol=1e-4, atol=1e-7)


def test_critic_loss_decreases_on_a_fixed_batch():
    rng = derive_stream(make_stream(3), "fixed-batch")
    learner = _learner(critic_lr=1e-2)
    batch = _random_batch(rng, n=16)
    targets = rng.uniform(-1, 1, 16)
    losses = [update_critics(learner, batch, targets) for _ in range(100)]
    assert losses[-1] < losses[0]
    assert all(np.isfinite(losses))
