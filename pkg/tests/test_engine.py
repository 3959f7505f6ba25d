import math

import numpy as np
import pytest

from fwl.engine import (STRATEGIES, Session, TrainConfig, alternating_plan, evaluate,
                        fidelity, macro_f1, make_data, make_soft_dataset, preset_config,
                        run_strategy, sampling_probs, soft_pool, step1_pretrain,
                        step2_fit_teacher, step3_finetune)
from fwl.errors import ConfigParse, EmptyDataset, InvalidInput, MissingConfidences, NegativeInput
from fwl.gp import Task
from fwl.numerics import Rng
from fwl.weak import LabeledSet, toy_test_set, toy_weak

# a small toy configuration that trains in well under a second
FAST = dict(hidden=(16, 16), epochs_pretrain=20, epochs_finetune=5, epochs_strong=20)


def fast(preset="toy", **kw):
    return preset_config(preset, **{**FAST, **kw})


def test_fidelity_examples():
    assert fidelity(0.0, 3.0) == 1.0
    assert fidelity(7.0, 0.0) == 1.0
    assert fidelity(math.log(2), 1.0) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(NegativeInput):
        fidelity(-0.1, 1.0)
    with pytest.raises(NegativeInput):
        fidelity(0.1, -1.0)


def test_fidelity_monotone():
    s = np.linspace(0, 5, 50)
    assert np.all(np.diff(fidelity(s, 1.0)) < 0)
    b = np.linspace(0, 5, 50)
    assert np.all(np.diff([fidelity(0.7, x) for x in b]) < 0)
    assert np.all(fidelity(s, 2.0) <= 1.0)


def test_config_validation():
    with pytest.raises(ConfigParse):
        TrainConfig(strategy="FWLX")
    with pytest.raises(ConfigParse):
        TrainConfig(beta=-1)
    with pytest.raises(ConfigParse):
        TrainConfig(omega=1.5)
    with pytest.raises(ConfigParse):
        TrainConfig(cluster_count=0)
    with pytest.raises(ConfigParse):
        preset_config("nope")
    with pytest.raises(ConfigParse):
        TrainConfig.from_dict({"not_a_field": 1})


def test_config_roundtrip_and_digest():
    cfg = fast("toy-star", beta=2.0)
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert cfg.digest() == back.digest()
    assert cfg.digest() == cfg.replace(seed=5, strategy="NN_W").digest()
    assert cfg.digest() != cfg.replace(beta=1.0).digest()


def test_presets():
    assert preset_config("toy-star").n_strong == 5
    assert preset_config("toy-doublestar").weak_fn == "affine"
    assert preset_config("synth-class").task == "classification"


def test_data_depends_on_seed_not_strategy():
    a = make_data(fast(seed=1, strategy="FWL"))
    b = make_data(fast(seed=1, strategy="NN_W"))
    c = make_data(fast(seed=2))
    np.testing.assert_array_equal(a.weak.inputs, b.weak.inputs)
    assert not np.array_equal(a.weak.inputs, c.weak.inputs)


def test_pretrain_zero_epochs_returns_init():
    cfg = fast(epochs_pretrain=0)
    d = make_data(cfg)
    sess = Session(cfg, d)
    r = step1_pretrain(cfg, d.weak)
    np.testing.assert_array_equal(r.net.params, sess.init_net.params)


@pytest.mark.xfail(strict=True, reason="Adam at lr 1e-3 oscillates after a few epochs; "
                   "the per-epoch trace trends down but is not strictly monotone")
def test_pretrain_loss_monotone_over_first_epochs():
    cfg = preset_config("toy", epochs_pretrain=10)
    r = step1_pretrain(cfg, make_data(cfg).weak)
    assert np.all(np.diff(r.losses) < 0)


def test_pretrain_loss_trends_down():
    cfg = preset_config("toy", epochs_pretrain=10)
    r = step1_pretrain(cfg, make_data(cfg).weak)
    assert r.losses[-1] < r.losses[0] / 3
    assert min(r.losses[5:]) < min(r.losses[:5])


def test_pretrain_empty():
    cfg = fast()
    with pytest.raises(EmptyDataset):
        step1_pretrain(cfg, LabeledSet(np.zeros((0, 1)), np.zeros((0, 1)), "weak"))


def test_teacher_interpolates_strong_without_noise():
    # full preset: a briefly trained small net maps strong inputs close together
    # and the Gram matrix becomes too ill-conditioned to interpolate at 1e-4
    cfg = preset_config("toy", kernel="rbf", cluster_count=1)
    d = make_data(cfg)
    net = step1_pretrain(cfg, d.weak).net
    before = net.params.copy()
    teacher = step2_fit_teacher(net, d.strong, cfg)
    np.testing.assert_array_equal(net.params, before)
    soft = make_soft_dataset(teacher, net, d.strong.inputs, cfg)
    np.testing.assert_allclose(soft.labels, d.strong.labels, atol=1e-4)
    assert soft.confidences.max() < 1e-4


def test_soft_set_size_and_anchor_property():
    cfg = fast(epochs_pretrain=100)
    sess = Session(cfg)
    soft = sess.soft()
    d = sess.data
    assert soft.n == d.weak.n + d.strong.n
    sigma_strong = soft.confidences[d.weak.n:]
    xs = d.strong.inputs.ravel()
    far = np.min(np.abs(d.weak.inputs - xs[None, :]), axis=1) > 1.5
    assert far.any()
    assert sigma_strong.mean() < soft.confidences[:d.weak.n][far].mean()


def test_classification_soft_labels_are_distributions():
    cfg = preset_config("synth-class", hidden=(8,), epochs_pretrain=2, n_weak=60, n_test=30)
    soft = Session(cfg).soft()
    np.testing.assert_allclose(soft.labels.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((soft.labels >= 0) & (soft.labels <= 1))


def test_finetune_needs_confidences():
    cfg = fast()
    d = make_data(cfg)
    with pytest.raises(MissingConfidences):
        step3_finetune(Session(cfg, d).init_net, d.strong, cfg)


def test_huge_beta_freezes_finetune():
    cfg = fast(beta=1e9)
    sess = Session(cfg)
    net = sess.pretrained.net
    r = step3_finetune(net, sess.soft(), cfg)
    assert np.max(np.abs(r.net.params - net.params)) <= 1e-9


def test_beta_zero_matches_no_sigma_bitwise():
    sess = Session(fast(seed=3))
    a = sess.run("FWL", beta=0.0)
    b = sess.run("FWL_noSigma")
    np.testing.assert_array_equal(a.model.params, b.model.params)
    assert a.metrics == b.metrics


def test_session_matches_standalone_runs():
    cfg = fast(seed=4)
    sess = Session(cfg)
    for s in ("NN_WtoS", "FWL"):
        alone = run_strategy(cfg.replace(strategy=s))
        np.testing.assert_array_equal(sess.run(s).model.params, alone.model.params)


def test_session_rejects_shared_stage_overrides():
    with pytest.raises(InvalidInput):
        Session(fast()).run("FWL", hidden=(4,))


def test_all_strategies_smoke():
    sess = Session(fast(seed=0))
    reports = [sess.run(s) for s in STRATEGIES]
    assert [r.strategy for r in reports] == list(STRATEGIES)
    assert all(np.isfinite(r.metric) for r in reports)
    unsup = reports[STRATEGIES.index("FWL_unsuprep")]
    assert unsup.notes and "approximation" in unsup.notes[0]
    omega = reports[STRATEGIES.index("NN_WomegaToS")].extra["omega"]
    assert omega == pytest.approx(sess.mean_eta2(1.0))
    assert 0 < omega <= 1


def test_wa_is_closed_form():
    cfg = fast()
    rep = run_strategy(cfg.replace(strategy="WA"))
    x = toy_test_set().inputs
    expected = np.sqrt(np.mean((toy_weak(x) - np.sin(x)) ** 2))
    assert rep.metric == pytest.approx(expected, rel=1e-12)


def test_report_json_and_determinism():
    cfg = fast(seed=2, strategy="FWL")
    a, b = run_strategy(cfg), run_strategy(cfg)
    assert a.metrics == b.metrics
    assert a.to_json(timings=False) == b.to_json(timings=False)
    assert '"rmse"' in a.to_json()


def test_soft_fraction_nested():
    sess = Session(fast())
    small, big = sess.soft(fraction=0.3), sess.soft(fraction=0.6)
    rows = {tuple(r) for r in big.inputs}
    assert all(tuple(r) in rows for r in small.inputs)
    assert small.n == round(0.3 * sess.soft().n)


def test_sampling_probs_frequencies():
    conf = np.array([0.05, 0.3, 0.9, 0.15, 0.5, 0.01, 0.7, 0.2, 0.4, 0.6])
    p = sampling_probs(conf)
    draws = Rng(0).choice(10, size=100_000, replace=True, p=p)
    freq = np.bincount(draws, minlength=10) / draws.size
    assert np.max(np.abs(freq - p)) < 0.01


def test_sampling_probs_all_zero_is_uniform():
    np.testing.assert_array_equal(sampling_probs(np.zeros(4)), np.full(4, 0.25))


def test_alternating_plan():
    batches = alternating_plan(10, 3, 4)(Rng(0), 0)
    weak = np.concatenate(batches[0::2])
    assert sorted(weak.tolist()) == list(range(10))
    for b in batches[1::2]:
        assert len(b) == 4 and np.all((b >= 10) & (b < 13))


def test_macro_f1_single_class_predictor():
    true = np.array([0, 0, 1, 1, 2, 2])
    pred = np.zeros(6, dtype=int)
    # class 0: precision 1/3, recall 1 -> F1 = 0.5; others 0
    assert macro_f1(pred, true, 3) == pytest.approx(0.5 / 3)


def test_evaluate_examples():
    t = toy_test_set()
    assert evaluate(t.labels, t, Task.REGRESSION) == 0.0
    zero = evaluate(np.zeros_like(t.labels), t, Task.REGRESSION)
    # integral of sin^2 over [-10, 10] is 10 - sin(20) / 2
    exact = np.sqrt(0.5 - np.sin(20.0) / 40.0)
    assert zero == pytest.approx(exact, abs=2e-3)
    onehot = LabeledSet(np.zeros((3, 1)), np.eye(3), "strong")
    assert evaluate(np.eye(3), onehot, Task.CLASSIFICATION) == 1.0
    with pytest.raises(EmptyDataset):
        evaluate(np.zeros((0, 1)), LabeledSet(np.zeros((0, 1)), np.zeros((0, 1)), "strong"),
                 Task.REGRESSION)


def test_soft_pool_no_dedup():
    d = make_data(fast())
    pool = soft_pool(d)
    assert pool.shape[0] == d.weak.n + d.strong.n
