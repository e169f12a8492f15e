import numpy as np
import pytest

from factorshift import trainer as tr
from factorshift.factor_space import make_support
from factorshift.policies import ClipSpec, init_policy
from factorshift.driving_sim import Controls


def synthetic_dataset(n_traces=4, samples=128, t=1, seed=0, target_map=None):
    """Traces of iid-feature windows with targets from a known linear map."""
    rng = np.random.default_rng(seed)
    if target_map is None:
        target_map = rng.normal(0, 0.2, (2, 29 * t))
    traces = []
    for i in range(n_traces):
        x = rng.normal(0, 1, (samples, t, 29))
        y = x.reshape(samples, -1) @ target_map.T
        traces.append(tr.Trace("RSuDDC", f"RSuDDC/{i}", x, y))
    return tr.DemoDataset(traces=traces, clip=ClipSpec(t, 1)), target_map


# --- demonstrations -----------------------------------------------------

def test_collect_one_trace_yields_horizon_samples():
    data = tr.collect_demos(make_support(["RSuDDC"]), 1, ClipSpec(1, 1), seed=0)
    assert data.trace_count == 1
    assert data.sample_count == 200
    assert data.traces[0].windows.shape == (200, 1, 29)
    assert data.traces[0].targets.shape == (200, 2)


def test_collect_multi_config_tags():
    support = make_support(["RSuDDC", "RSuDNC", "USuDDC"])
    data = tr.collect_demos(support, 5, ClipSpec(1, 1), seed=0)
    assert data.trace_count == 15
    assert data.tags() == {"RSuDDC", "RSuDNC", "USuDDC"}


def test_collect_deterministic():
    support = make_support(["RSuDDC"])
    a = tr.collect_demos(support, 2, ClipSpec(1, 1), seed=9)
    b = tr.collect_demos(support, 2, ClipSpec(1, 1), seed=9)
    for ta, tb in zip(a.traces, b.traces):
        assert np.array_equal(ta.windows, tb.windows)
        assert np.array_equal(ta.targets, tb.targets)


def test_collect_rejects_zero_traces():
    with pytest.raises(ValueError):
        tr.collect_demos(make_support(["RSuDDC"]), 0, ClipSpec(1, 1), seed=0)


# --- loss ---------------------------------------------------------------

def test_loss_zero_for_exact_prediction():
    c = Controls(0.1, 0.5)
    assert tr.loss(c, c, tr.LossWeights()) == 0.0


def test_loss_hand_arithmetic():
    w = tr.LossWeights(1.0, 1.0)
    assert tr.loss(Controls(0.1, 0.0), Controls(0.0, 0.0), w) == pytest.approx(0.01)
    w21 = tr.LossWeights(2.0, 1.0)
    got = tr.loss(Controls(0.1, 0.2), Controls(0.0, 0.0), w21)
    assert got == pytest.approx(0.06)  # 2*0.01 + 0.04


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        tr.LossWeights(0.0, 0.0)
    with pytest.raises(ValueError):
        tr.LossWeights(-1.0, 1.0)


def test_batch_loss_is_mean():
    outputs = np.array([[0.1, 0.0], [0.0, 0.2]])
    targets = np.zeros((2, 2))
    assert tr.batch_loss(outputs, targets, tr.LossWeights()) == pytest.approx(
        (0.01 + 0.04) / 2
    )


# --- training -----------------------------------------------------------

def test_linear_fit_on_linear_targets():
    data, _ = synthetic_dataset(n_traces=5, samples=128, seed=3)
    cfg = tr.TrainConfig(learning_rate=1e-3, max_epochs=300, validation_fraction=0.2,
                         seed=1, val_interval=50)
    policy, report = tr.train(init_policy("linear", seed=1), data, cfg)
    assert report.checks[report.best_check][2] < 1e-6


def test_zero_epoch_budget_returns_init():
    data, _ = synthetic_dataset(seed=4)
    init = init_policy("linear", seed=2)
    policy, report = tr.train(init, data, tr.TrainConfig(max_epochs=0))
    assert policy is init
    assert report.checks == []


def test_training_never_worse_than_init():
    data, _ = synthetic_dataset(seed=5)
    init = init_policy("mlp", seed=2)
    w = tr.LossWeights()
    x, y = data.stacked()
    from factorshift.policies import raw_outputs

    cfg = tr.TrainConfig(max_epochs=20, seed=3, val_interval=50)
    policy, report = tr.train(init, data, cfg, w)
    init_train = report.checks[0][1]
    final_train = tr.batch_loss(raw_outputs(policy, x), y, w)
    assert final_train <= init_train


def test_best_validation_checkpoint_selected():
    data, _ = synthetic_dataset(seed=6)
    cfg = tr.TrainConfig(max_epochs=40, seed=4, val_interval=20)
    policy, report = tr.train(init_policy("linear", seed=4), data, cfg)
    vals = [v for _, _, v in report.checks]
    assert report.best_check == int(np.argmin(vals))


def test_frozen_encoder_untouched_by_training():
    support = make_support(["RSuDDC"])
    data = tr.collect_demos(support, 2, ClipSpec(1, 1), seed=10)
    init = init_policy("frozen_encoder_head", seed=5)
    before = init.encoder.weight.tobytes()
    cfg = tr.TrainConfig(max_epochs=5, seed=5, val_interval=10)
    policy, _ = tr.train(init, data, cfg)
    assert policy.encoder.weight.tobytes() == before
    assert policy.encoder is init.encoder


def test_trace_level_split_disjoint():
    data, _ = synthetic_dataset(n_traces=10, seed=7)
    cfg = tr.TrainConfig(validation_fraction=0.3, seed=6)
    train_idx, val_idx = tr.split_traces(data, cfg)
    assert not (set(train_idx) & set(val_idx))
    assert sorted(train_idx + val_idx) == list(range(10))
    assert len(val_idx) == 3


def test_single_trace_split_has_no_validation():
    data, _ = synthetic_dataset(n_traces=1, seed=8)
    train_idx, val_idx = tr.split_traces(data, tr.TrainConfig(validation_fraction=0.5))
    assert train_idx == [0] and val_idx == []


def test_train_deterministic_in_seed():
    data, _ = synthetic_dataset(seed=9)
    cfg = tr.TrainConfig(max_epochs=10, seed=11, val_interval=20)
    a, _ = tr.train(init_policy("mlp", seed=11), data, cfg)
    b, _ = tr.train(init_policy("mlp", seed=11), data, cfg)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert a.train_digest == b.train_digest


def test_divergence_raises():
    data, _ = synthetic_dataset(seed=12)
    for trace in data.traces:
        trace.targets *= 1e200  # squared error overflows to inf
    init = init_policy("mlp", seed=1)
    with np.errstate(over="ignore"), pytest.raises(tr.TrainingDiverged):
        tr.train(init, data, tr.TrainConfig(max_epochs=2, seed=1))


def test_learning_rate_restricted():
    with pytest.raises(ValueError):
        tr.TrainConfig(learning_rate=5e-3)


# --- gradient checks ----------------------------------------------------

@pytest.mark.parametrize("kind,t", [("linear", 1), ("mlp", 3), ("frozen_encoder_head", 2),
                                    ("recurrent", 4)])
def test_gradient_check_all_kinds(kind, t):
    rng = np.random.default_rng(13)
    clip = ClipSpec(t, 2)
    policy = init_policy(kind, clip, seed=13)
    for name in policy.params:
        policy.params[name] = rng.normal(0, 0.3, policy.params[name].shape)
    frames = rng.normal(0, 1, (16, t, 29))
    targets = rng.normal(0, 0.3, (16, 2))
    worst = tr.gradient_check(policy, frames, targets, tr.LossWeights(1.3, 0.7),
                              probes_per_block=10, seed=13)
    for name, err in worst.items():
        assert err < 1e-4, f"{kind}.{name}: rel error {err}"
