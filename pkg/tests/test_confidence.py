import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satground._seeding import rng_for
from satground.confidence import (ConfidenceDecision, ProgressiveConfidenceNet, StageInput, decide,
                                  similarity_target, train)


def small_net(**kw):
    params = dict(image_dim=5, token_embed_dim=3, n_stages=3, hidden_width=7, n_hidden=2,
                  thresholds=(0.5, 0.4, 0.3), seed=11)
    params.update(kw)
    return ProgressiveConfidenceNet(**params).initialize()


def stage_data(net, n, seed=0):
    rng = rng_for(seed, "stage-data")
    return [rng.normal(size=(n, net.stage_input_dim(i))) for i in range(1, net.n_stages + 1)]


def test_zero_output_layer_gives_zero():
    net = small_net(zero_init_output=True)
    x = np.random.default_rng(0).normal(size=5)
    assert net.estimate(1, StageInput(x)) == 0.0


def test_estimate_deterministic_and_shape_checked():
    net = small_net()
    si = StageInput(np.ones(5), (np.ones(3),))
    assert net.estimate(2, si) == net.estimate(2, si)
    with pytest.raises(ValueError):
        net.estimate(1, si)
    with pytest.raises(ValueError):
        net.estimate(2, StageInput(np.ones(4), (np.ones(3),)))
    with pytest.raises(ValueError):
        net.estimate(4, si)


def test_stage_input_dims():
    net = small_net()
    assert [net.stage_input_dim(i) for i in (1, 2, 3)] == [5, 8, 11]


def test_decide_truth_table():
    taus = (0.5, 0.4)
    assert decide(taus, 1, 0.49) == ConfidenceDecision("offload", 1)
    assert decide(taus, 1, 0.5) == ConfidenceDecision("continue", 1)
    assert decide(taus, 2, 0.39) == ConfidenceDecision("offload", 2)
    assert decide(taus, 2, 0.4) == ConfidenceDecision("accept", 2)
    assert decide(taus, 2, 0.41) == ConfidenceDecision("accept", 2)
    with pytest.raises(ValueError):
        decide(taus, 3, 0.0)


@settings(max_examples=200, deadline=None)
@given(stage=st.integers(1, 3), score=st.floats(-2, 2), taus=st.lists(st.floats(-2, 2),
                                                                         min_size=3, max_size=3))
def test_decide_rule(stage, score, taus):
    d = decide(taus, stage, score)
    if score < taus[stage - 1]:
        assert d.kind == "offload"
    else:
        assert d.kind == ("accept" if stage == 3 else "continue")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_stage_one_ignores_token_blocks(seed):
    net = small_net()
    rng = np.random.default_rng(seed)
    img = rng.normal(size=5)
    blocks = [rng.normal(size=3) for _ in range(2)]
    a = net.estimate(1, StageInput(img))
    assert net.predict(StageInput(img).vector()[None], 1)[0] == a
    # stage-one input has no token part, so shuffling blocks downstream cannot reach it
    assert net.estimate(1, StageInput(img, ())) == a
    assert len(StageInput(img, tuple(blocks[::-1])).vector()) == 11


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    net = small_net(seed=seed)
    xs = stage_data(net, 6, seed)
    y = rng_for(seed, "y").random(6)
    loss, grads = net._loss_grad(xs, y)
    flat = net.get_flat_params()
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = np.empty_like(flat)
    h = 1e-5
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += h
        down[k] -= h
        numeric[k] = (net.set_flat_params(up).loss(xs, y) - net.set_flat_params(down).loss(xs, y)) / (2 * h)
    net.set_flat_params(flat)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    assert rel < 1e-4


def test_zero_epochs_changes_nothing():
    net = small_net()
    before = net.get_flat_params()
    xs = stage_data(net, 10)
    trained, history = train(net, xs, np.zeros(10), epochs=0)
    assert history == []
    assert np.array_equal(trained.get_flat_params(), before)


def test_empty_dataset_rejected():
    net = small_net()
    with pytest.raises(ValueError):
        train(net, [np.zeros((0, d)) for d in (5, 8, 11)], np.zeros(0))


def _linear_task(n=1000, seed=0):
    rng = rng_for(seed, "linear-task")
    x = rng.normal(size=(n, 64))
    tokens = rng.normal(size=(n, 16))
    w = rng.normal(size=64) / 32
    y = np.clip(x @ w + 0.5, 0.0, 1.0)
    return [x, np.hstack([x, tokens])], y


def test_training_is_deterministic_and_smoothed_loss_falls():
    xs, y = _linear_task(300)
    a = ProgressiveConfidenceNet(epochs=40).fit(xs, y)
    b = ProgressiveConfidenceNet(epochs=40).fit(xs, y)
    assert np.array_equal(a.get_flat_params(), b.get_flat_params())
    smooth = np.convolve(a.loss_history_, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth[::10]) <= 0)


def test_shuffled_targets_are_not_learnable():
    # a net this size can memorize 1000 noisy targets, so the bound is checked out of sample
    xs, y = _linear_task()
    shuffled = rng_for(5, "shuffle").permutation(y)
    net = ProgressiveConfidenceNet().fit(xs, shuffled)
    held_x, held_y = _linear_task(seed=1)
    held_y = rng_for(6, "shuffle").permutation(held_y)
    per_stage = net.loss(held_x, held_y) / net.n_stages
    assert per_stage >= 0.8 * held_y.var()


def test_warm_start_continues_history():
    xs, y = _linear_task(200)
    net = ProgressiveConfidenceNet(epochs=3).fit(xs, y)
    more, history = train(net, xs, y, epochs=2)
    assert len(history) == 2 and len(more.loss_history_) == 5
    assert len(net.loss_history_) == 3


def test_save_load_round_trip(tmp_path):
    net = small_net()
    path = tmp_path / "net.pcn"
    net.save(path)
    assert path.read_bytes()[:4] == b"PCN1"
    loaded = ProgressiveConfidenceNet.load(path, thresholds=(0.5, 0.4, 0.3))
    assert np.array_equal(loaded.get_flat_params(), net.get_flat_params())
    x = stage_data(net, 4)[2]
    assert np.array_equal(loaded.predict(x, 3), net.predict(x, 3))
    bad = tmp_path / "bad.pcn"
    bad.write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        ProgressiveConfidenceNet.load(bad)


def test_estimator_protocol():
    net = ProgressiveConfidenceNet(hidden_width=8)
    assert net.get_params()["hidden_width"] == 8
    xs, y = _linear_task(100)
    net.set_params(epochs=5).fit(xs, y)
    assert math.isfinite(net.score(xs, y))


def test_similarity_target():
    assert similarity_target([1, 2], [2, 4]) == pytest.approx(1.0)
    assert similarity_target([1, 0], [-3, 0]) == pytest.approx(-1.0)
    assert similarity_target([1, 0], [1 / math.sqrt(2), 1 / math.sqrt(2)]) == pytest.approx(
        math.sqrt(2) / 2, abs=1e-12)
    with pytest.raises(ValueError):
        similarity_target([0, 0], [1, 0])
