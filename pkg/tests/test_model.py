import numpy as np
import pytest

from footbots import tensor as tn
from footbots.exceptions import ContractError, DataError, DimensionError
from footbots.model import (
    FootBots,
    ModelConfig,
    Role,
    SequenceSample,
    TaskSpec,
    make_batch,
    make_ns_variant,
)
from footbots.tensor import Tensor

TOL32 = 1e-5
SMALL = ModelConfig(d=16, heads=4, d_ff=32)


def scene(rng, m=5, t=6, T=4, scale=3.0):
    positions = rng.normal(scale=scale, size=(m, t + T, 2)).astype(np.float32)
    roles = np.array([Role.BALL] + [Role.OFFENSE, Role.DEFENSE] * ((m - 1) // 2) + [Role.OFFENSE] * ((m - 1) % 2))
    return SequenceSample(positions, roles, t)


def predict(model, sample, task="mp"):
    return model.predict_sample(TaskSpec.from_name(task), sample)


def test_encode_shape():
    model = FootBots(SMALL, rng=0)
    out = model.encode(np.zeros((2, 5, 7, 2), np.float32))
    assert out.shape == (2, 5, 7, 16)
    with pytest.raises(DimensionError):
        model.encode(np.zeros((2, 5, 7, 3), np.float32))


def test_forward_shapes_single_and_batched():
    rng = np.random.default_rng(0)
    model = FootBots(SMALL, rng=1)
    s = scene(rng)
    assert model.forward(s.prior, s.T).shape == (5, 4, 2)
    batch = make_batch([s, scene(rng)], TaskSpec.from_name("mp"), 2)
    assert model.forward_batch(batch).shape == (2, 5, 4, 2)


@pytest.mark.parametrize("task", ["mp", "cmp1", "cmp2", "cmp3", "cmp4"])
def test_agent_permutation_equivariance(task):
    rng = np.random.default_rng(2)
    model = FootBots(SMALL, rng=3)
    s = scene(rng, m=7)
    base = predict(model, s, task)
    worst = 0.0
    for _ in range(20):
        p = rng.permutation(s.M)
        worst = max(worst, np.abs(predict(model, s.permuted(p), task) - base[p]).max())
    assert worst < TOL32


def test_ns_variant_agents_are_independent():
    rng = np.random.default_rng(4)
    model = FootBots(make_ns_variant(SMALL), rng=5)
    s = scene(rng)
    base = predict(model, s)
    changed = s.positions.copy()
    changed[3] += 10.0
    out = predict(model, SequenceSample(changed, s.roles, s.t))
    others = [0, 1, 2, 4]
    np.testing.assert_array_equal(out[others], base[others])
    assert np.abs(out[3] - base[3]).max() > 1.0


def test_social_model_mixes_agents():
    rng = np.random.default_rng(6)
    model = FootBots(SMALL, rng=7)
    s = scene(rng)
    changed = s.positions.copy()
    changed[3, : s.t] += 10.0
    out = predict(model, SequenceSample(changed, s.roles, s.t))
    assert np.abs(out[0] - predict(model, s)[0]).max() > 1e-4


@pytest.mark.parametrize("mode", ["offset", "steps"])
def test_zeroed_head_returns_last_position(mode):
    rng = np.random.default_rng(8)
    model = FootBots(ModelConfig(d=16, heads=4, d_ff=32, output_mode=mode, motion_features=True), rng=9)
    for p in model.out_ffn.parameters():
        p.data[...] = 0
    s = scene(rng)
    out = predict(model, s)
    np.testing.assert_array_equal(out, np.repeat(s.prior[:, -1:, :], s.T, axis=1))


def test_step_head_accumulates_a_constant_step():
    rng = np.random.default_rng(23)
    config = ModelConfig(d=16, heads=4, d_ff=32, output_mode="steps", velocity_scale=0.5)
    model = FootBots(config, rng=24)
    fc2 = model.out_ffn.fc2
    fc2.weight.data[...] = 0
    fc2.bias.data[...] = [2.0, -1.0]  # one step of (1.0, -0.5) per frame
    s = scene(rng)
    out = predict(model, s)
    j = np.arange(1, s.T + 1)[:, None]
    expect = s.prior[:, -1:, :] + j * np.array([1.0, -0.5])
    np.testing.assert_allclose(out, expect, atol=1e-5)


def test_position_scale_is_equivalent_to_rescaling_data():
    rng = np.random.default_rng(10)
    s = scene(rng)
    a = FootBots(SMALL, rng=11)
    b = FootBots(ModelConfig(d=16, heads=4, d_ff=32, position_scale=4.0), rng=11)
    scaled = SequenceSample(s.positions * 4.0, s.roles, s.t)
    np.testing.assert_allclose(predict(b, scaled), predict(a, s) * 4.0, rtol=1e-4, atol=1e-4)


def test_decoder_input_rules():
    rng = np.random.default_rng(12)
    model = FootBots(SMALL, rng=13)
    s = scene(rng)
    task = TaskSpec.from_name("cmp1")
    batch = make_batch([s], task, 2)
    context = model.encode(batch.prior)
    h = model.build_decoder_input(context, s.T, batch.future_features, batch.conditioning).data
    recent = context.data[:, :, s.t - s.T :]
    np.testing.assert_array_equal(h[0, 1:], recent[0, 1:])
    embedded = model.cond_ffn(Tensor(batch.future_features)).data
    np.testing.assert_allclose(h[0, 0], embedded[0, 0], atol=1e-6)
    mp = model.build_decoder_input(context, s.T)
    np.testing.assert_array_equal(mp.data, recent)
    with pytest.raises(ContractError):
        model.build_decoder_input(context, s.t + 1)
    with pytest.raises(DataError):
        model.build_decoder_input(context, s.T, None, batch.conditioning)


def test_conditioning_future_changes_predictions():
    rng = np.random.default_rng(14)
    model = FootBots(SMALL, rng=15)
    s = scene(rng)
    base = predict(model, s, "cmp1")
    changed = s.positions.copy()
    changed[0, s.t :] += 5.0  # ball future, visible only when conditioning on it
    moved = predict(model, SequenceSample(changed, s.roles, s.t), "cmp1")
    assert np.abs(moved[1:] - base[1:]).max() > 1e-4
    mp = predict(model, SequenceSample(changed, s.roles, s.t), "mp")
    np.testing.assert_array_equal(mp, predict(model, s, "mp"))


def test_prediction_longer_than_context_fails():
    rng = np.random.default_rng(16)
    model = FootBots(SMALL, rng=17)
    with pytest.raises(ContractError):
        model.forward(rng.normal(size=(5, 4, 2)), 5)


def test_mp_leaves_conditioning_network_without_gradient():
    rng = np.random.default_rng(18)
    model = FootBots(SMALL, rng=19)
    batch = make_batch([scene(rng), scene(rng)], TaskSpec.from_name("mp"), 2)
    tn.sum(model.forward_batch(batch)).backward()
    for name, p in model.named_parameters().items():
        if name.startswith("cond_ffn"):
            assert p.grad is None or not np.any(p.grad), name
        else:
            assert p.grad is not None and np.any(p.grad), name


def test_state_dict_round_trip_and_mismatch():
    a, b = FootBots(SMALL, rng=20), FootBots(SMALL, rng=21)
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    state = a.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(ContractError):
        b.load_state_dict(state)


def test_role_features_and_sample_validation():
    rng = np.random.default_rng(22)
    s = scene(rng)
    f = s.features(3)
    assert f.shape == (5, 10, 3)
    np.testing.assert_array_equal(f[:, 0, 2], s.roles)
    with pytest.raises(DataError):
        SequenceSample(s.positions, np.full(5, Role.OFFENSE), s.t)
    with pytest.raises(DataError):
        SequenceSample(s.positions, s.roles, 3)  # T=7 > t=3
    with pytest.raises(ContractError):
        TaskSpec.from_name("cmp9")
    with pytest.raises(ContractError):
        ModelConfig(d=10, heads=4)


def test_task_masks():
    roles = np.array([Role.BALL, Role.OFFENSE, Role.DEFENSE])
    expect = {
        "mp": [True, True, True],
        "cmp1": [False, True, True],
        "cmp2": [False, False, True],
        "cmp3": [False, True, False],
        "cmp4": [True, False, False],
    }
    for name, mask in expect.items():
        task = TaskSpec.from_name(name)
        np.testing.assert_array_equal(task.predicted_mask(roles), mask)
        np.testing.assert_array_equal(task.conditioning_mask(roles), ~np.array(mask))
