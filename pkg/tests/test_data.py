import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carl_lab.data import (
    Dataset,
    SamplerConfig,
    Trajectory,
    dataset_from_bytes,
    dataset_to_bytes,
    filter_coverage,
    filter_imbalance,
    gather_segments,
    generate_dataset,
    load_dataset,
    region_predicate,
    restrict_to_rooms,
    sample_segments,
    save_dataset,
    truncate_pad,
)
from carl_lab.envs import PointRoomEnv, make_rooms

DOWN = 1


@pytest.fixture(scope="module")
def rooms5():
    return make_rooms(5, 5)


@pytest.fixture(scope="module")
def small_ds(rooms5):
    return generate_dataset(rooms5, 40, 0.2, seed=3, horizon=60)


def cells_of(env, feats):
    return env.cells_from_features(feats)


def test_shapes_and_meta(small_ds, rooms5):
    assert len(small_ds) == 40
    assert small_ds.num_transitions == 40 * 60
    assert small_ds.state_dim == 2 and small_ds.action_dim == 4
    assert small_ds.meta["noise"] == 0.2 and small_ds.meta["seed"] == 3
    assert small_ds.meta["env"] == rooms5.descriptor()
    for tr in small_ds.trajectories:
        assert len(tr.states) == tr.length + 1


def test_trajectories_follow_dynamics(small_ds, rooms5):
    for tr in small_ds.trajectories[:10]:
        cells = cells_of(rooms5, tr.states)
        acts = np.argmax(tr.actions, axis=1)
        assert np.array_equal(rooms5.step(cells[:-1], acts), cells[1:])


def test_rejects_bad_arguments(rooms5):
    with pytest.raises(ValueError):
        generate_dataset(rooms5, 0, 0.2, 0)
    with pytest.raises(ValueError):
        generate_dataset(rooms5, 5, 1.5, 0)


def test_greedy_expert_first_move():
    env = make_rooms(1, 5)
    # with noise 0 every step of every episode is a shortest-path move toward the current goal
    ds = generate_dataset(env, 20, 0.0, seed=0, horizon=30)
    d = env.distances
    for tr in ds.trajectories:
        cells = cells_of(env, tr.states)
        ids = env.cell_id[cells[:, 1], cells[:, 0]]
        steps = d[ids[:-1], ids[1:]]
        assert np.all(steps == 1)  # open room: a greedy move never bumps a wall


def test_uniform_actions_at_full_noise(rooms5):
    ds = generate_dataset(rooms5, 50, 1.0, seed=1, horizon=200)
    freq = np.bincount(np.argmax(ds.actions, axis=1), minlength=4) / ds.num_transitions
    assert np.all(np.abs(freq - 0.25) < 0.02)


def test_default_dataset_covers_every_cell(rooms5):
    ds = generate_dataset(rooms5, 500, 0.2, seed=0, horizon=200)
    seen = {tuple(c) for c in cells_of(rooms5, ds.states)}
    assert seen == {tuple(c) for c in rooms5.cells}


def test_generation_is_deterministic(rooms5):
    a = generate_dataset(rooms5, 10, 0.3, seed=9, horizon=50)
    b = generate_dataset(rooms5, 10, 0.3, seed=9, horizon=50)
    c = generate_dataset(rooms5, 10, 0.3, seed=10, horizon=50)
    assert dataset_to_bytes(a) == dataset_to_bytes(b)
    assert dataset_to_bytes(a) != dataset_to_bytes(c)


def test_point_room_dataset():
    env = PointRoomEnv()
    ds = generate_dataset(env, 5, 0.1, seed=0, horizon=40)
    assert ds.state_dim == 2 and ds.action_dim == 2
    assert ds.states.min() >= 0.0 and ds.states.max() <= 1.0
    assert np.all(np.linalg.norm(ds.actions, axis=1) <= 1.0 + 1e-5)


def test_file_round_trip(tmp_path, small_ds):
    path = tmp_path / "d.carlds"
    save_dataset(small_ds, path)
    raw = path.read_bytes()
    assert raw[:8] == b"CARLDS1\x00"
    assert np.frombuffer(raw[8:24], "<u4").tolist() == [1, 2, 4, 40]
    back = load_dataset(path)
    assert back.meta["seed"] == 3 and back.meta["format"] == "CARLDS1"
    assert np.array_equal(back.states, small_ds.states)
    assert np.array_equal(back.actions, small_ds.actions)
    save_dataset(back, tmp_path / "e.carlds")
    assert (tmp_path / "e.carlds").read_bytes() == raw


def test_file_errors():
    with pytest.raises(ValueError):
        dataset_from_bytes(b"NOTADATA" + bytes(16))
    good = dataset_to_bytes(Dataset([Trajectory(np.zeros((2, 2)), np.zeros((1, 4)))], 2, 4))
    with pytest.raises(ValueError):
        dataset_from_bytes(good + b"\x00")


def test_trajectory_invariant():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 4)))


# -- segments -------------------------------------------------------------------------

def test_surface_mode_fixes_offset(small_ds):
    b = sample_segments(small_ds, SamplerConfig(3, "surface", batch_size=500, seed=0))
    assert np.all(b.offsets[~b.truncated] == 3)
    assert np.array_equal(b.goals, b.final_states)


def test_interior_offsets_uniform(small_ds):
    cfg = SamplerConfig(4, "interior", batch_size=100_000, seed=1)
    b = sample_segments(small_ds, cfg)
    full = ~b.truncated
    freq = np.bincount(b.offsets[full], minlength=5)[1:] / full.sum()
    assert np.all(np.abs(freq - 0.25) < 0.02)
    assert b.offsets.min() >= 1 and b.offsets.max() <= 4


def test_stride_length():
    rng = np.random.default_rng(0)
    tr = Trajectory(rng.random((301, 2)), np.eye(4)[rng.integers(4, size=300)])
    ds = Dataset([tr], 2, 4)
    b = sample_segments(ds, SamplerConfig(100, "interior", action_stride=4, batch_size=8, seed=0))
    assert b.actions.shape == (8, 25, 4)
    assert SamplerConfig(100, action_stride=4).seq_len == 25
    assert np.array_equal(b.actions, b.full_actions[:, ::4])


def test_k_must_be_below_longest_trajectory(small_ds):
    with pytest.raises(ValueError):
        sample_segments(small_ds, SamplerConfig(60, batch_size=4))
    with pytest.raises(ValueError):
        sample_segments(Dataset([], 2, 4), SamplerConfig(1))
    with pytest.raises(ValueError):
        SamplerConfig(0)
    with pytest.raises(ValueError):
        SamplerConfig(3, "edge")


def test_segments_replay_to_final_state(small_ds, rooms5):
    b = sample_segments(small_ds, SamplerConfig(5, "interior", batch_size=300, seed=4))
    for i in np.flatnonzero(~b.truncated)[:100]:
        cell = cells_of(rooms5, b.states[i])
        path = [cell]
        for a in np.argmax(b.full_actions[i], axis=1):
            cell = rooms5.step(cell, a)
            path.append(cell)
        assert np.array_equal(path[-1], cells_of(rooms5, b.final_states[i]))
        assert np.array_equal(path[b.offsets[i]], cells_of(rooms5, b.goals[i]))


def test_truncated_segments_pad_and_clamp():
    states = np.arange(8, dtype=np.float32).reshape(4, 2)
    actions = np.eye(4, dtype=np.float32)[[0, 1, 2]]
    ds = Dataset([Trajectory(states, actions)], 2, 4)
    b = gather_segments(ds, [1], k=5, offsets=[4])
    assert b.truncated[0]
    assert b.offsets[0] == 2  # clamped to the last available state
    assert np.array_equal(b.goals[0], states[3])
    assert np.array_equal(b.final_states[0], states[3])
    assert np.argmax(b.full_actions[0], axis=1).tolist() == [1, 2, 2, 2, 2]


def test_truncate_pad_examples():
    assert truncate_pad(["a"], 3) == ["a", "a", "a"]
    assert truncate_pad(["a1", "a2", "a3"], 3) == ["a1", "a2", "a3"]
    assert truncate_pad(["a1", "a2"], 5) == ["a1", "a2", "a2", "a2", "a2"]
    arr = np.eye(4)[[0, 3]]
    assert np.array_equal(truncate_pad(arr, 4), np.eye(4)[[0, 3, 3, 3]])
    with pytest.raises(ValueError):
        truncate_pad([], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=6), st.integers(6, 10))
def test_truncate_pad_idempotent(seq, k):
    once = truncate_pad(seq, k)
    assert truncate_pad(once, k) == once
    assert len(once) == k and once[: len(seq)] == seq


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_sampling_is_seeded(seed):
    env = make_rooms(1, 5)
    ds = generate_dataset(env, 3, 0.2, seed=0, horizon=20)
    cfg = SamplerConfig(3, batch_size=16, seed=seed)
    a, b = sample_segments(ds, cfg), sample_segments(ds, cfg)
    assert np.array_equal(a.goals, b.goals) and np.array_equal(a.actions, b.actions)


def test_interior_with_k_offsets_is_surface(small_ds):
    """Interior draws that land on j = k have the surface distribution."""
    inner = sample_segments(small_ds, SamplerConfig(3, "interior", batch_size=60_000, seed=2))
    surf = sample_segments(small_ds, SamplerConfig(3, "surface", batch_size=20_000, seed=3))
    sel = (inner.offsets == 3) & ~inner.truncated
    d_in = np.linalg.norm(inner.goals[sel] - inner.states[sel], axis=1).mean()
    full = ~surf.truncated
    d_surf = np.linalg.norm(surf.goals[full] - surf.states[full], axis=1).mean()
    assert abs(d_in - d_surf) < 0.01


# -- filters --------------------------------------------------------------------------------

def test_coverage_keep_all_is_identity(small_ds):
    assert filter_coverage(small_ds, "left", 1.0) is small_ds


def test_coverage_zero_removes_region(rooms5):
    ds = generate_dataset(rooms5, 100, 0.2, seed=0, horizon=100)
    out = filter_coverage(ds, "left", 0.0, seed=0)
    left = region_predicate("left")
    assert not left(out.states).any()
    assert out.num_transitions == int((~left(ds.states[ds.transition_state])
                                       & ~left(ds.states[ds.transition_state + 1])).sum())


def test_coverage_half_keeps_half(rooms5):
    ds = generate_dataset(rooms5, 300, 0.2, seed=0, horizon=200)
    left = region_predicate("left")
    touch = left(ds.states[ds.transition_state]) | left(ds.states[ds.transition_state + 1])
    out = filter_coverage(ds, "left", 0.5, seed=1)
    kept = (left(out.states[out.transition_state]) | left(out.states[out.transition_state + 1])).sum()
    assert abs(kept / touch.sum() - 0.5) < 0.05 * 0.5 * 2  # within 5% of the target count


def test_filters_split_trajectories(rooms5):
    ds = generate_dataset(rooms5, 20, 0.2, seed=0, horizon=100)
    out = filter_coverage(ds, "left", 0.5, seed=0)
    assert len(out) > len(ds)
    for tr in out.trajectories:
        cells = cells_of(rooms5, tr.states)
        assert np.array_equal(rooms5.step(cells[:-1], np.argmax(tr.actions, axis=1)), cells[1:])
    assert out.meta["filters"][0]["keep"] == 0.5


def test_imbalance_examples(rooms5):
    ds = generate_dataset(rooms5, 300, 0.2, seed=0, horizon=200)
    left = region_predicate("left")

    def down_left(d):
        return int((left(d.states[d.transition_state]) & (np.argmax(d.actions, axis=1) == DOWN)).sum())

    assert filter_imbalance(ds, "left", "down", 0.0) is ds
    assert down_left(filter_imbalance(ds, "left", "down", 1.0, seed=0)) == 0
    kept = down_left(filter_imbalance(ds, "left", "down", 0.75, seed=0))
    assert abs(kept / down_left(ds) - 0.25) < 0.05
    with pytest.raises(ValueError):
        filter_imbalance(ds, "left", "sideways", 0.5)
    with pytest.raises(ValueError):
        filter_coverage(ds, "left", 1.5)


def test_restrict_to_rooms(small_ds, rooms5):
    out = restrict_to_rooms(small_ds, rooms5, [0])
    rooms = rooms5.room_of(cells_of(rooms5, out.states))
    assert len(out) > 0 and np.all(rooms == 0)
