import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tactigrasp.classifiers import (
    ClassifierConfig,
    ConfigurationError,
    OracleProvider,
    ProviderError,
    contact_classify,
    fuse_contact,
    fuse_slip,
    normalize_input,
    oracle_provider,
    parse_score_table,
    slip_detect,
    slip_evaluate,
    synthetic_contact_provider,
)
from tactigrasp.tactile_image import FrameSequence, TactileFrame, brightness, filter_image


class FixedProvider:
    def __init__(self, value, unit="A", task="contact"):
        self.value, self.unit, self.task = value, unit, task

    def score(self, image):
        return self.value


def frame(value=0, unit="A", shape=(8, 8), image_id=None):
    return TactileFrame(np.full(shape + (3,), value, np.uint8), unit=unit, image_id=image_id)


def logistic(x, k=0.5, m0=8.0):
    return 1.0 / (1.0 + math.exp(-k * (x - m0)))


# ---- normalisation ----------------------------------------------------------------


@pytest.mark.parametrize("value,expected", [(255, 1.0), (0, 0.0), (51, 0.2)])
def test_normalize_examples(value, expected):
    out = normalize_input(frame(value))
    assert out.shape == (8, 8, 3)
    assert out[0, 0, 0] == expected


# ---- contact ----------------------------------------------------------------------


@pytest.mark.parametrize("score,label", [(0.9, 1), (0.5, 1), (0.49, 0)])
def test_contact_threshold_is_inclusive(score, label):
    assert contact_classify(frame(), FixedProvider(score), ClassifierConfig()) == label


def test_contact_threshold_per_unit():
    cfg = ClassifierConfig(contact_threshold={"A": 0.3, "B": 0.8})
    assert contact_classify(frame(unit="A"), FixedProvider(0.5, "A"), cfg) == 1
    assert contact_classify(frame(unit="B"), FixedProvider(0.5, "B"), cfg) == 0


def test_contact_provider_failure_is_an_error_not_a_zero():
    provider = OracleProvider({})
    with pytest.raises(ProviderError):
        contact_classify(frame(image_id="x"), provider, ClassifierConfig())


def test_contact_rejects_mismatched_provider():
    with pytest.raises(ConfigurationError):
        contact_classify(frame(unit="A"), FixedProvider(0.9, unit="B"), ClassifierConfig())
    with pytest.raises(ConfigurationError):
        contact_classify(frame(), FixedProvider(0.9, task="slip"), ClassifierConfig())


def test_out_of_range_score_is_a_provider_fault():
    with pytest.raises(ProviderError):
        contact_classify(frame(), FixedProvider(1.5), ClassifierConfig())


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_raising_contact_threshold_never_creates_contact(score, t1, t2):
    lo, hi = sorted((t1, t2))
    a = contact_classify(frame(), FixedProvider(score), ClassifierConfig(contact_threshold=lo))
    b = contact_classify(frame(), FixedProvider(score), ClassifierConfig(contact_threshold=hi))
    assert b <= a


# ---- fusion -----------------------------------------------------------------------


def test_fusion_truth_tables_exhaustive():
    for a, b in itertools.product((0, 1), repeat=2):
        assert fuse_contact(a, b) == (1 if a == 1 and b == 1 else 0)
        assert fuse_slip(a, b) == (1 if a == 1 or b == 1 else 0)


# ---- slip -------------------------------------------------------------------------


def gray_seq(first, last):
    return FrameSequence((first, first, last, last))


def block_image(shape, block):
    img = np.zeros(shape, np.uint8)
    img[: block[0], : block[1]] = 200
    return img


def test_static_sequence_is_stable():
    img = np.full((32, 32), 90, np.uint8)
    assert slip_detect(gray_seq(img, img), "brightness", cfg=ClassifierConfig()) == 0


def test_brightness_twelve_is_slip():
    # 48 white pixels out of 1020 -> 255 * 48 / 1020 = 12.0
    shape = (20, 51)
    seq = gray_seq(np.zeros(shape, np.uint8), block_image(shape, (6, 8)))
    d = slip_evaluate(seq, ClassifierConfig(), "brightness")
    assert d.value == pytest.approx(12.0, abs=1e-12)
    assert d.label == 1


def test_brightness_just_below_ten_is_stable():
    # 40 white pixels out of 1024 -> 9.96
    shape = (32, 32)
    seq = gray_seq(np.zeros(shape, np.uint8), block_image(shape, (5, 8)))
    d = slip_evaluate(seq, ClassifierConfig(), "brightness")
    assert d.value == pytest.approx(255 * 40 / 1024)
    assert d.label == 0


def test_brightness_exactly_at_threshold_is_slip():
    # 40 white pixels out of 1020 -> 10.0
    shape = (20, 51)
    seq = gray_seq(np.zeros(shape, np.uint8), block_image(shape, (5, 8)))
    d = slip_evaluate(seq, ClassifierConfig(), "brightness")
    assert d.value == pytest.approx(10.0, abs=1e-12)
    assert d.label == 1


def test_cnn_method_needs_a_provider():
    img = np.zeros((8, 8), np.uint8)
    with pytest.raises(ConfigurationError):
        slip_detect(gray_seq(img, img), "cnn", None, ClassifierConfig())


def test_cnn_method_thresholds_provider_score_on_filtered_image():
    frames = tuple(TactileFrame(np.zeros((8, 8, 3), np.uint8), timestamp=i, image_id=f"w{i}")
                   for i in range(4))
    seq = FrameSequence(frames)
    provider = oracle_provider({"w3": 0.55}, task="slip")
    assert slip_detect(seq, "cnn", provider, ClassifierConfig()) == 1
    assert slip_detect(seq, "cnn", provider, ClassifierConfig(slip_threshold_cnn=0.6)) == 0


def test_unknown_method_rejected():
    with pytest.raises(ConfigurationError):
        ClassifierConfig(slip_method="optical_flow")


@given(arrays(np.uint8, (4, 12, 10)), st.floats(0, 255))
def test_brightness_method_equals_composed_pipeline(stack, threshold):
    seq = FrameSequence(tuple(stack))
    cfg = ClassifierConfig(slip_threshold_brightness=threshold)
    want = int(brightness(filter_image(seq)) >= threshold)
    assert slip_detect(seq, "brightness", cfg=cfg) == want


@given(arrays(np.uint8, (10, 12)), st.floats(255 / 120, 255))
def test_static_noise_free_never_slips(img, threshold):
    cfg = ClassifierConfig(slip_threshold_brightness=threshold)
    assert slip_detect(FrameSequence((img,) * 4), "brightness", cfg=cfg) == 0


@given(arrays(np.uint8, (4, 12, 10)), st.floats(0, 255), st.floats(0, 255))
def test_raising_slip_threshold_never_creates_slip(stack, t1, t2):
    lo, hi = sorted((t1, t2))
    seq = FrameSequence(tuple(stack))
    a = slip_detect(seq, cfg=ClassifierConfig(slip_threshold_brightness=lo))
    b = slip_detect(seq, cfg=ClassifierConfig(slip_threshold_brightness=hi))
    assert b <= a


# ---- synthetic contact provider -------------------------------------------------------


def test_synthetic_provider_examples(rng):
    ref_px = rng.integers(40, 200, (320, 240, 3), dtype=np.uint8)
    ref = TactileFrame(ref_px)
    p = synthetic_contact_provider(ref)

    same = p.score(ref)
    assert same == pytest.approx(logistic(0.0))
    assert same < 0.05
    assert contact_classify(ref, p, ClassifierConfig()) == 0

    plus30 = TactileFrame(ref_px + np.uint8(30))
    assert p.score(plus30) == pytest.approx(logistic(30.0))
    assert p.score(plus30) > 0.99

    half = ref_px.copy()
    half[:160] += np.uint8(40)
    assert p.mean_abs_diff(half) == pytest.approx(20.0)
    assert p.score(TactileFrame(half)) == pytest.approx(logistic(20.0))
    assert p.score(TactileFrame(half)) > 0.95


def test_synthetic_provider_rejects_other_shapes():
    p = synthetic_contact_provider(frame(shape=(8, 8)))
    with pytest.raises(ValueError):
        p.score(frame(shape=(8, 9)))


@given(st.floats(0, 255), st.floats(0, 255))
def test_synthetic_score_monotone_in_difference(a, b):
    p = synthetic_contact_provider(frame(0, shape=(2, 2)))
    lo, hi = sorted((a, b))
    f = lambda v: p.score(np.full((2, 2, 3), v, np.float64))  # noqa: E731
    assert f(lo) <= f(hi)


def test_provider_shared_across_threads(rng):
    ref = TactileFrame(rng.integers(0, 256, (320, 240, 3), dtype=np.uint8))
    p = synthetic_contact_provider(ref)
    frames = [TactileFrame(rng.integers(0, 256, (320, 240, 3), dtype=np.uint8)) for _ in range(8)]
    serial = [p.score(f) for f in frames]
    with ThreadPoolExecutor(max_workers=2) as pool:
        parallel = list(pool.map(p.score, frames))
    assert parallel == serial


# ---- oracle provider -----------------------------------------------------------------------


def test_oracle_lookup_unknown_and_empty():
    p = oracle_provider(io.StringIO("image_id,score\nf001,0.93\n"))
    assert p.score("f001") == 0.93
    assert p.score(frame(image_id="f001")) == 0.93
    with pytest.raises(ProviderError):
        p.score("f002")
    empty = oracle_provider(io.StringIO("image_id,score\n"))
    assert len(empty) == 0
    with pytest.raises(ProviderError):
        empty.score("f001")


def test_oracle_from_file(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("image_id,score\na,0.1\nb,1\n", encoding="utf-8")
    p = OracleProvider.from_csv(path, unit="B")
    assert (p.score("a"), p.score("b"), p.unit) == (0.1, 1.0, "B")


@pytest.mark.parametrize("text", [
    "image_id,score\na,0.1\na,0.2\n",
    "image_id,score\na\n",
    "image_id,score\na,high\n",
    "image_id,score\na,1.2\n",
    "id,value\na,0.1\n",
    "image_id,score\n,0.3\n",
])
def test_oracle_rejects_bad_tables(text):
    with pytest.raises(ValueError):
        parse_score_table(text)
