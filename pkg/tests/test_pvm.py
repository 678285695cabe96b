import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avrl.envkit import make_env
from avrl.pvm import (OFF, STACK, STITCH, ObservationPipeline, PvmBuffer, PvmError,
                      pvm_push_stack, pvm_push_stitch, pvm_reset)


def latest_cover_oracle(records, shape, capacity):
    """Per-pixel value of the newest in-window record covering the pixel, else 0."""
    out = np.zeros(shape)
    window = records[-capacity:]
    for i in range(shape[0]):
        for j in range(shape[1]):
            for img, (x, y) in reversed(window):
                h, w = img.shape
                if x <= i < x + h and y <= j < y + w:
                    out[i, j] = img[i - x, j - y]
                    break
    return out


def test_single_push():
    buf = PvmBuffer(3, (84, 84))
    canvas = pvm_push_stitch(buf, np.ones((20, 20)), (0, 0))
    assert np.all(canvas[:20, :20] == 1)
    assert canvas.sum() == 400


def test_overlap_takes_newer():
    buf = PvmBuffer(3, (30, 30))
    pvm_push_stitch(buf, np.full((10, 10), 0.2), (0, 0))
    canvas = pvm_push_stitch(buf, np.full((10, 10), 0.7), (5, 5))
    assert np.all(canvas[5:15, 5:15] == np.float32(0.7))
    assert np.all(canvas[0:5, 0:10] == np.float32(0.2))


def test_four_corners_evicts_first():
    buf = PvmBuffer(3, (40, 40))
    corners = [(0, 0), (0, 30), (30, 0), (30, 30)]
    for k, loc in enumerate(corners):
        canvas = pvm_push_stitch(buf, np.full((10, 10), (k + 1) / 4), loc)
    assert np.all(canvas[:10, :10] == 0)
    for k, (x, y) in enumerate(corners[1:], start=1):
        assert np.all(canvas[x:x + 10, y:y + 10] == np.float32((k + 1) / 4))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 3, 5]), st.integers(1, 9), st.integers(0, 10_000))
def test_stitch_matches_oracle(capacity, n_pushes, seed):
    rng = np.random.default_rng(seed)
    shape = (16, 16)
    buf = PvmBuffer(capacity, shape)
    records = []
    for _ in range(n_pushes):
        h, w = rng.integers(1, 17, size=2)
        x, y = rng.integers(0, 17 - h), rng.integers(0, 17 - w)
        img = rng.random((h, w)).astype(np.float32)
        records.append((img, (x, y)))
        canvas = pvm_push_stitch(buf, img, (x, y))
    assert np.array_equal(canvas, latest_cover_oracle(records, shape, capacity))
    # rebuild is idempotent
    assert np.array_equal(buf.canvas(), canvas)


def test_evicted_record_has_no_influence():
    rng = np.random.default_rng(0)
    buf = PvmBuffer(2, (12, 12))
    first = rng.random((12, 12))
    buf.push(first, (0, 0))
    buf.push(rng.random((4, 4)), (0, 0))
    buf.push(rng.random((4, 4)), (8, 8))
    before = buf.canvas()
    first[:] = 99.0  # the caller mutating an evicted array
    assert np.array_equal(buf.canvas(), before)
    assert before[6, 6] == 0


def test_out_of_bounds_and_size_mismatch():
    buf = PvmBuffer(3, (20, 20))
    with pytest.raises(PvmError):
        buf.push(np.ones((5, 5)), (18, 0))
    with pytest.raises(PvmError):
        buf.push(np.ones((5, 5)), (0, 0), size=(4, 5))
    with pytest.raises(PvmError):
        PvmBuffer(0)


def test_stack_padding_order_eviction():
    buf = PvmBuffer(3, (84, 84))
    o = [np.full((4, 4), v) for v in (0.1, 0.2, 0.3, 0.4)]
    out = pvm_push_stack(buf, o[0])
    assert out.shape == (3, 4, 4)
    assert np.all(out[0] == 0) and np.all(out[1] == 0) and np.allclose(out[2], 0.1)
    pvm_push_stack(buf, o[1])
    out = pvm_push_stack(buf, o[2])
    assert np.allclose(out[:, 0, 0], [0.1, 0.2, 0.3])
    out = pvm_push_stack(buf, o[3])
    assert np.allclose(out[:, 0, 0], [0.2, 0.3, 0.4])
    with pytest.raises(PvmError):
        pvm_push_stack(buf, np.ones((5, 5)))


def test_reset():
    buf = PvmBuffer(3, (10, 10))
    pvm_push_stitch(buf, np.ones((3, 3)), (2, 2))
    pvm_reset(buf)
    pvm_reset(buf)
    assert len(buf) == 0
    assert np.all(buf.canvas() == 0)


def test_peripheral_painted_first():
    buf = PvmBuffer(1, (8, 8))
    buf.peripheral = np.full((4, 4), 0.25)
    canvas = pvm_push_stitch(buf, np.ones((2, 2)), (0, 0))
    assert np.all(canvas[:2, :2] == 1)
    assert np.allclose(canvas[4:, 4:], 0.25)


@pytest.mark.parametrize("kind,channels", [(STITCH, 4), (OFF, 4), (STACK, 3)])
def test_pipeline_shapes(kind, channels):
    env = make_env("catch", seed=0)
    pipe = ObservationPipeline(kind, 3, env.frame_shape, 42, 4)
    obs = pipe.reset(env.reset())
    assert obs.shape == (channels, 42, 42) and obs.dtype == np.uint8
    assert pipe.channels == channels
    obs = pipe.observe(env.step(1, 3)[0])
    assert obs.shape == (channels, 42, 42)


def test_pipeline_episodes_independent():
    def run(pipe, env, actions):
        out = [pipe.reset(env.reset())]
        for a in actions:
            out.append(pipe.observe(env.step(1, a)[0]))
        return out

    rng = np.random.default_rng(0)
    actions = rng.integers(16, size=10)
    env_a = make_env("catch", seed=2)
    pipe = ObservationPipeline(STITCH, 3, (84, 84), 42, 4)
    run(pipe, make_env("catch", seed=9), rng.integers(16, size=25))  # unrelated first episode
    second = run(pipe, env_a, actions)
    fresh = run(ObservationPipeline(STITCH, 3, (84, 84), 42, 4), make_env("catch", seed=2), actions)
    for a, b in zip(second, fresh):
        assert np.array_equal(a, b)


def test_pipeline_off_keeps_only_latest_crop():
    env = make_env("catch", seed=0)
    pipe = ObservationPipeline(OFF, 3, (84, 84), 84, 1)
    pipe.reset(env.reset())
    pipe.observe(env.step(1, 0)[0])
    obs = pipe.observe(env.step(1, 15)[0])
    assert obs[0, :64, :].max() == 0  # only the bottom-right crop survives
