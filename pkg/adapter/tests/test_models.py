"""Reference models: the linear predictor's fit and the persistence baseline."""

import struct

import numpy as np
import pytest

from vp_adapter.models import (
    LinearModel,
    PersistenceModel,
    fit_linear,
    load_weights,
    one_step_mse,
    read_dataset,
    save_weights,
)

DATASET_HEADER = struct.Struct("<4sBIIIIII")


def write_synthetic_dataset(path, frames_u8, actions):
    """Minimal VPDS writer for fixtures: frames [N,T,H,W,3] u8, actions
    [N,T-1,A] f32; positions and labels are zero-filled."""
    n, t, h, w, _ = frames_u8.shape
    a = actions.shape[2]
    n_cat = 4
    with open(path, "wb") as f:
        f.write(DATASET_HEADER.pack(b"VPDS", 1, n, t, h, w, a, n_cat))
        for i in range(n):
            f.write(frames_u8[i].tobytes())
            f.write(actions[i].astype("<f4").tobytes())
            f.write(np.zeros((t, n_cat, 2), "<f4").tobytes())
            f.write(np.zeros((t, 2), "<f4").tobytes())
            f.write(np.zeros((t, n_cat), np.uint8).tobytes())


@pytest.fixture()
def static_dataset(tmp_path):
    """Static scenes under zero actions: the identity map is optimal."""
    rng = np.random.default_rng(0)
    frames = np.repeat(
        rng.integers(0, 256, (6, 1, 16, 16, 3), dtype=np.uint8), 8, axis=1
    )
    actions = np.zeros((6, 7, 2), np.float32)
    path = tmp_path / "static.vpds"
    write_synthetic_dataset(path, frames, actions)
    return path


class TestPersistence:
    def test_repeats_last_frame(self):
        rng = np.random.default_rng(1)
        context = rng.random((2, 8, 8, 3)).astype(np.float32)
        actions = rng.uniform(-1, 1, (5, 4, 2)).astype(np.float32)
        frames = PersistenceModel().predict(context, actions, 3)
        assert frames.shape == (5, 3, 8, 8, 3)
        assert np.all(frames == context[-1])


class TestLinear:
    def test_identity_weights_are_persistence(self):
        model = LinearModel(np.array([1.0, 0.0, 0.0, 0.0]))
        rng = np.random.default_rng(2)
        context = rng.random((2, 8, 8, 3)).astype(np.float32)
        actions = rng.uniform(-1, 1, (3, 4, 2)).astype(np.float32)
        frames = model.predict(context, actions, 3)
        assert np.allclose(frames, context[-1], atol=1e-6)

    def test_output_clipped(self):
        model = LinearModel(np.array([2.0, 0.0, 0.0, 0.5]))
        context = np.full((1, 4, 4, 3), 0.9, np.float32)
        actions = np.zeros((1, 2, 2), np.float32)
        frames = model.predict(context, actions, 2)
        assert frames.max() <= 1.0

    def test_fit_on_static_data_learns_identity(self, static_dataset):
        weights = fit_linear(static_dataset, steps=20_000, seed=0)
        assert abs(weights[0] - 1.0) < 0.05
        assert abs(weights[1]) < 0.05
        assert abs(weights[2]) < 0.05
        assert abs(weights[3]) < 0.05

    def test_fit_is_seed_deterministic(self, static_dataset):
        a = fit_linear(static_dataset, steps=5_000, seed=3)
        b = fit_linear(static_dataset, steps=5_000, seed=3)
        assert np.array_equal(a, b)

    def test_empty_dataset_rejected(self, tmp_path):
        path = tmp_path / "empty.vpds"
        write_synthetic_dataset(
            path, np.zeros((0, 4, 8, 8, 3), np.uint8), np.zeros((0, 3, 2), np.float32)
        )
        with pytest.raises(ValueError):
            fit_linear(path)

    def test_weights_file_round_trip(self, tmp_path):
        weights = np.array([0.9, 0.01, -0.02, 0.05])
        path = tmp_path / "w.vplw"
        save_weights(path, weights)
        assert path.read_bytes()[:4] == b"VPLW"
        again = load_weights(path)
        assert np.allclose(again, weights, atol=1e-7)

    def test_beats_persistence_on_moving_data(self, tmp_path):
        # data with a global drift driven by the action: the linear model
        # can exploit it, persistence cannot
        rng = np.random.default_rng(5)
        n, t = 8, 10
        frames = np.empty((n, t, 16, 16, 3), np.uint8)
        actions = rng.uniform(-0.08, 0.08, (n, t - 1, 2)).astype(np.float32)
        for i in range(n):
            value = rng.uniform(0.3, 0.7)
            for step in range(t):
                frames[i, step] = int(np.clip(value, 0, 1) * 255)
                if step < t - 1:
                    value = 0.9 * value + actions[i, step, 0] + 0.05
        path = tmp_path / "drift.vpds"
        write_synthetic_dataset(path, frames, actions)

        train_frames, train_actions = read_dataset(path)
        weights = fit_linear(path, steps=50_000, seed=0)
        linear = LinearModel(weights)
        mse_linear = one_step_mse(linear, train_frames, train_actions)
        mse_persist = one_step_mse(PersistenceModel(), train_frames, train_actions)
        assert mse_linear < mse_persist


class TestStandardPushingDataset:
    """The checked-in pushing dataset is the cross-package benchmark data."""

    def test_linear_beats_persistence_on_heldout(self):
        from pathlib import Path

        path = Path(__file__).parent / "golden" / "pushing.vpds"
        frames, actions = read_dataset(path)
        n_train = frames.shape[0] // 2
        # fit on the first half only; the file has no episode ordering bias
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            train_path = Path(tmp) / "train.vpds"
            write_synthetic_dataset(train_path, frames[:n_train], actions[:n_train])
            weights = fit_linear(train_path, steps=100_000, seed=0)
        linear = LinearModel(weights)
        heldout_frames = frames[n_train:]
        heldout_actions = actions[n_train:]
        mse_linear = one_step_mse(linear, heldout_frames, heldout_actions)
        mse_persist = one_step_mse(PersistenceModel(), heldout_frames, heldout_actions)
        assert mse_linear < mse_persist
