import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carl_lab import nn
from carl_lab.carl import CarlConfig, save_carl, train_carl
from carl_lab.data import generate_dataset
from carl_lab.envs import make_rooms
from carl_lab.hrl import (
    ConfigurationError,
    CoTrainConfig,
    act,
    awr_weight,
    expectile_loss,
    goal_reward,
    load_agent,
    sample_hrl_batch,
    save_agent,
    train_agent,
    weighted_categorical_nll,
    weighted_gaussian_nll,
)
from oracles import central_difference, relative_error

SMALL = dict(hidden=(16, 16), batch_size=32, carl=CarlConfig(embed_dim=8, phi_hidden=(16,), psi_hidden=(8,), batch_size=32))


@pytest.fixture(scope="module")
def env():
    return make_rooms(2, 5)


@pytest.fixture(scope="module")
def dataset(env):
    return generate_dataset(env, 30, 0.2, seed=0, horizon=40)


def net_bytes(*nets):
    return b"".join(nn.mlp_to_bytes(n) for n in nets)


# -- elementary losses against finite differences -----------------------------------

@pytest.mark.parametrize("case", range(20))
def test_expectile_gradient(case):
    rng = np.random.default_rng(case)
    u = rng.normal(size=int(rng.integers(1, 10)))
    kappa = float(rng.uniform(0.05, 0.95))
    _, g = expectile_loss(u, kappa)
    assert relative_error(g, central_difference(lambda x: expectile_loss(x, kappa)[0], u), floor=1e-6) < 1e-4


def test_expectile_values():
    loss, _ = expectile_loss([2.0, -2.0], 0.7)
    assert abs(loss - (0.7 * 4 + 0.3 * 4) / 2) < 1e-12
    assert expectile_loss([1.0], 0.9)[0] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        expectile_loss([1.0], 1.0)


@pytest.mark.parametrize("case", range(20))
def test_awr_categorical_gradient(case):
    rng = np.random.default_rng(case)
    b, a = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    logits = rng.normal(size=(b, a))
    acts = rng.integers(a, size=b)
    w = awr_weight(rng.normal(size=b), beta=float(rng.uniform(0.5, 3)))
    _, g = weighted_categorical_nll(logits, acts, w)
    ref = central_difference(lambda z: weighted_categorical_nll(z, acts, w)[0], logits)
    assert relative_error(g, ref, floor=1e-6) < 1e-4


@pytest.mark.parametrize("case", range(20))
def test_awr_gaussian_gradient(case):
    rng = np.random.default_rng(case)
    b, d = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    mean, target = rng.normal(size=(b, d)), rng.normal(size=(b, d))
    w = awr_weight(rng.normal(size=b), beta=float(rng.uniform(0.5, 3)))
    _, g = weighted_gaussian_nll(mean, target, w)
    ref = central_difference(lambda m: weighted_gaussian_nll(m, target, w)[0], mean)
    assert relative_error(g, ref, floor=1e-6) < 1e-4


def test_awr_weight_clip_and_errors():
    w = awr_weight([0.0, 3.0, 1000.0], beta=3.0, w_max=100.0)
    assert w[0] == 1.0 and abs(w[1] - np.e) < 1e-12 and w[2] == 100.0
    with pytest.raises(ValueError):
        awr_weight([0.0], beta=0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(0.1, 10))
def test_awr_weight_monotone_and_bounded(adv, beta):
    a = np.sort(np.array(adv))
    w = awr_weight(a, beta)
    assert np.all(np.diff(w) >= 0) and np.all((w > 0) & (w <= 100.0))


def test_goal_reward():
    assert goal_reward([True, False]).tolist() == [0.0, -1.0]


# -- configuration -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        CoTrainConfig(algo="sac")
    with pytest.raises(ValueError):
        CoTrainConfig(lambda_aux=1.5)
    with pytest.raises(ValueError):
        CoTrainConfig(kappa=1.0)
    assert CoTrainConfig(horizon_k=5).carl.horizon_k == 5


def test_pretrain_needs_encoder(dataset):
    with pytest.raises(ConfigurationError):
        train_agent(dataset, CoTrainConfig(mode="pretrain", **SMALL), seed=0, steps=1)


# -- batches ------------------------------------------------------------------------

def test_hrl_batch_indices(dataset, env):
    cfg = CoTrainConfig(horizon_k=3, batch_size=500, **{k: v for k, v in SMALL.items() if k != "batch_size"})
    b = sample_hrl_batch(dataset, cfg, np.random.default_rng(0))
    assert b.s.shape == (500, 2) and b.path.shape == (500, 4, 2)
    assert np.all((b.high_steps >= 0) & (b.high_steps <= 3))
    assert np.array_equal(b.path[:, 0], b.s)
    assert np.array_equal(b.path[np.arange(500), b.high_steps], b.high_target)
    cells = env.cells_from_features
    d = env.distances
    ids = lambda x: env.cell_id[cells(x)[:, 1], cells(x)[:, 0]]  # noqa: E731
    assert np.all(d[ids(b.s), ids(b.s_next)] <= 1)
    assert np.all(d[ids(b.s), ids(b.sub)] <= 3)


# -- lambda degeneracy ----------------------------------------------------------------

def test_lambda_zero_freezes_encoder(dataset):
    cfg = CoTrainConfig(lambda_aux=0.0, **SMALL)
    agent, _ = train_agent(dataset, cfg, seed=4, steps=0)
    before = net_bytes(agent.encoder.phi, agent.encoder.psi)
    agent, _ = train_agent(dataset, cfg, seed=4, steps=15)
    assert net_bytes(agent.encoder.phi, agent.encoder.psi) == before
    fresh, _ = train_agent(dataset, cfg, seed=4, steps=0)
    assert net_bytes(agent.value) != net_bytes(fresh.value)


def test_lambda_one_freezes_agent(dataset):
    cfg = CoTrainConfig(lambda_aux=1.0, **SMALL)
    fresh, _ = train_agent(dataset, cfg, seed=4, steps=0)
    agent, _ = train_agent(dataset, cfg, seed=4, steps=15)
    assert net_bytes(agent.value, agent.high, agent.low) == net_bytes(fresh.value, fresh.high, fresh.low)
    assert net_bytes(agent.encoder.phi) != net_bytes(fresh.encoder.phi)


def test_agent_batches_do_not_depend_on_mode(dataset):
    """The agent draws from its own stream, so 'none' and 'cotrain' see the same transitions."""
    a, ha = train_agent(dataset, CoTrainConfig(mode="none", **SMALL), seed=2, steps=3, log_every=1)
    b, hb = train_agent(dataset, CoTrainConfig(mode="none", **SMALL), seed=2, steps=3, log_every=1)
    assert ha == hb and net_bytes(a.low) == net_bytes(b.low)


# -- algorithms -----------------------------------------------------------------------

def test_hgcbc_uses_unit_weights(dataset):
    _, hist = train_agent(dataset, CoTrainConfig(algo="hgcbc", **SMALL), seed=0, steps=5, log_every=1)
    assert all(r["w_high_mean"] == 1.0 and r["w_low_mean"] == 1.0 for r in hist)
    assert all("value" not in r for r in hist)


def test_hiql_records_losses(dataset):
    _, hist = train_agent(dataset, CoTrainConfig(**SMALL), seed=0, steps=5, log_every=1)
    assert {"aux", "value", "high", "low"} <= set(hist[0])
    assert all(np.isfinite(r["value"]) for r in hist)


def test_encoder_grad_flow_and_target_net(dataset):
    cfg = CoTrainConfig(encoder_grad_flow=True, target_tau=0.05, **SMALL)
    agent, hist = train_agent(dataset, cfg, seed=0, steps=5)
    assert agent.target_value is not None and np.isfinite(hist[-1]["low"])


def test_pretrain_keeps_encoder_frozen(dataset, tmp_path):
    enc = train_carl(dataset, None, SMALL["carl"], 5, seed=0)
    before = net_bytes(enc.phi)
    agent, _ = train_agent(dataset, CoTrainConfig(mode="pretrain", **SMALL), seed=0, steps=5, encoder=enc)
    assert net_bytes(agent.encoder.phi) == before


def test_value_learning_orders_states(env):
    """After training, V is higher next to the goal than far from it."""
    ds = generate_dataset(env, 100, 0.2, seed=1, horizon=60)
    agent, _ = train_agent(ds, CoTrainConfig(mode="none", hidden=(64, 64), batch_size=128, lr=1e-3), seed=0, steps=800)
    f = env.features
    goal = f(np.array([[2, 2]]))
    near, far = f(np.array([[2, 3]])), f(np.array([[0, 0]]))
    v = lambda s: float(agent.value(agent.value_input(s, agent.rep(s, goal)))[0, 0])  # noqa: E731
    assert v(near) > v(far)


# -- acting and checkpoints -------------------------------------------------------------

def test_act_shapes(dataset):
    agent, _ = train_agent(dataset, CoTrainConfig(**SMALL), seed=0, steps=2)
    a = act(agent, dataset.states[:7], dataset.states[7:14])
    assert a.shape == (7,) and a.dtype.kind == "i"
    assert np.ndim(act(agent, dataset.states[0], dataset.states[1])) == 0


def test_checkpoint_round_trip_and_determinism(dataset, tmp_path):
    cfg = CoTrainConfig(**SMALL)
    a, _ = train_agent(dataset, cfg, seed=3, steps=10)
    b, _ = train_agent(dataset, cfg, seed=3, steps=10)
    save_agent(a, tmp_path / "a")
    save_agent(b, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    back = load_agent(tmp_path / "a")
    assert back.config == a.config
    s, g = dataset.states[:20], dataset.states[20:40]
    assert np.array_equal(act(back, s, g), act(a, s, g))
    save_carl(back.encoder, tmp_path / "enc")
