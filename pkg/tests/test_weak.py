import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwl.errors import BadClassCount, BothZero, EmptyRange, InvalidInput, NegativeInput
from fwl.numerics import Rng
from fwl.weak import (AnnotatorSpec, LabeledSet, class_centers, gen_classification_task,
                      gen_toy_data, generative_annotator, pairwise_preference,
                      read_csv, toy_test_set, toy_true, toy_weak, write_csv)


def test_toy_weak_known_values():
    assert toy_weak(0.0) == 2.0
    assert toy_weak(np.pi / 2) == pytest.approx(4 / np.pi, abs=1e-14)
    assert abs(toy_weak(np.pi)) < 1e-15
    assert toy_true(np.pi / 2) == 1.0


def test_gen_toy_data_shapes_and_range():
    weak, strong = gen_toy_data(Rng(0), 100, 10)
    assert weak.inputs.shape == (100, 1) and strong.labels.shape == (10, 1)
    assert weak.inputs.min() >= -10 and weak.inputs.max() < 10
    np.testing.assert_array_equal(weak.labels, toy_weak(weak.inputs))
    resid = strong.labels - np.sin(strong.inputs)
    assert np.all(np.abs(resid) < 0.6)


def test_gen_toy_data_deterministic():
    a = gen_toy_data(Rng(3), 20, 5)
    b = gen_toy_data(Rng(3), 20, 5)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.inputs, t.inputs)
        np.testing.assert_array_equal(s.labels, t.labels)


def test_gen_toy_empty_range():
    with pytest.raises(EmptyRange):
        gen_toy_data(Rng(0), x_range=(1.0, 1.0))


def test_strong_noise_statistics():
    _, strong = gen_toy_data(Rng(1), 1, 20000, strong_noise_sd=0.1)
    resid = (strong.labels - np.sin(strong.inputs)).ravel()
    assert abs(resid.mean()) < 0.005
    assert abs(resid.std() - 0.1) < 0.005


def test_toy_test_set_grid():
    t = toy_test_set(n=5)
    np.testing.assert_allclose(t.inputs.ravel(), [-10, -5, 0, 5, 10])


def test_affine_annotator():
    ann = AnnotatorSpec("affine", slope=2.0, intercept=-1.0)
    np.testing.assert_array_equal(ann.annotate(np.array([[0.0], [1.5]])), [[-1.0], [2.0]])


def test_linear_heuristic_is_distribution():
    c = class_centers(4)
    ann = generative_annotator(c, 1.0, noise_rate=0.5)
    x = np.random.default_rng(0).standard_normal((200, 2))
    p = ann.annotate(x, Rng(0))
    assert p.shape == (200, 4)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_generative_annotator_noise_free_is_bayes():
    c = class_centers(3)
    ann = generative_annotator(c, 1.0)
    p = ann.annotate(c, Rng(0))
    np.testing.assert_array_equal(np.argmax(p, axis=1), [0, 1, 2])


def test_bad_annotator():
    with pytest.raises(InvalidInput):
        AnnotatorSpec("oracle")
    with pytest.raises(InvalidInput):
        AnnotatorSpec("affine", noise_rate=1.5)


def test_classification_task():
    weak, strong, test = gen_classification_task(Rng(0), n=300, classes=3, n_strong=20, n_test=50)
    assert weak.labels.shape == (300, 3)
    np.testing.assert_allclose(weak.labels.sum(axis=1), 1.0, atol=1e-12)
    assert set(strong.labels.sum(axis=1)) == {1.0}
    assert test.n == 50


def test_bad_class_count():
    with pytest.raises(BadClassCount):
        gen_classification_task(Rng(0), classes=1)


def test_csv_roundtrip(tmp_path):
    weak, strong = gen_toy_data(Rng(0), 7, 3)
    soft = LabeledSet(strong.inputs, strong.labels, "soft", np.array([0.1, 0.0, 2.5]))
    path = tmp_path / "d.csv"
    write_csv(path, weak, strong, soft)
    back = read_csv(path)
    for s in (weak, strong, soft):
        np.testing.assert_array_equal(back[s.tier].inputs, s.inputs)
        np.testing.assert_array_equal(back[s.tier].labels, s.labels)
    np.testing.assert_array_equal(back["soft"].confidences, soft.confidences)
    raw = path.read_bytes()
    assert raw.startswith(b"x0,y0,tier,sigma\r\n")


def test_labeled_set_validation():
    with pytest.raises(InvalidInput):
        LabeledSet(np.zeros((2, 1)), np.zeros((3, 1)), "weak")
    with pytest.raises(InvalidInput):
        LabeledSet(np.zeros((2, 1)), np.zeros((2, 1)), "soft")
    with pytest.raises(InvalidInput):
        LabeledSet(np.zeros((1, 1)), np.zeros((1, 1)), "soft", np.array([-1.0]))


def test_pairwise_preference_errors():
    with pytest.raises(BothZero):
        pairwise_preference(0.0, 0.0)
    with pytest.raises(NegativeInput):
        pairwise_preference(-1.0, 1.0)
    assert pairwise_preference(3.0, 1.0) == 0.75


@settings(max_examples=200)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_pairwise_preference_complementary(a, b):
    if a == 0 and b == 0:
        return
    assert pairwise_preference(a, b) + pairwise_preference(b, a) == 1.0
