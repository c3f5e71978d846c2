import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from avemo.conformer import EncoderConfig
from avemo.data import Sample, Split, Task, make_splits
from avemo.metrics import (
    ccc_eval,
    cosine_distance,
    embedding_analysis,
    evaluate,
    f1_scores,
    welch_t_test,
)
from avemo.model import AVEmotionModel, Condition, ConditionUnavailableError, ModelConfig
from avemo.synth import SynthSpec, generate_synthetic
from avemo.train import TrainConfig, train


def tiny_model_config(**overrides):
    base = dict(
        encoder=EncoderConfig(d_model=16, ffn_hidden=24, num_heads=2,
                              layers_acoustic=1, layers_visual=1, layers_shared=1),
        num_classes=4,
        acoustic_dim=12,
        visual_dim=12,
        head_hidden=(24, 12),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def memorizing_run():
    """A model overfit on an easy noise-free set; perfect on its own train split."""
    spec = SynthSpec(num_samples=48, num_speakers=6, num_classes=4, acoustic_dim=12, visual_dim=12,
                     noise_scale=0.0, acoustic_strength=2.0, visual_strength=2.0)
    ds = generate_synthetic(spec, seed=21)
    splits = make_splits(ds, seed=21)
    config = TrainConfig(epochs=15, lr=3e-3, batch_size=8, seed=21)
    result = train(ds, splits, tiny_model_config(), config)
    return ds, splits, result


# ---------------------------------------------------------------------------
# f1
# ---------------------------------------------------------------------------

def test_f1_perfect():
    scores = f1_scores([0, 1, 2, 3], [0, 1, 2, 3], 4)
    assert scores.macro == 1.0 and scores.micro == 1.0


def test_f1_hand_computed_confusion():
    labels = [0, 0, 0, 1]
    preds = [0, 0, 0, 0]
    scores = f1_scores(preds, labels, 2)
    assert scores.micro == pytest.approx(0.75, abs=1e-9)
    assert scores.macro == pytest.approx(0.42857142857142855, abs=1e-9)
    assert scores.macro <= scores.micro  # errors concentrated on the minority class


def test_f1_single_sample():
    scores = f1_scores([2], [2], 4)
    assert scores.macro == 1.0 and scores.micro == 1.0


def test_f1_excludes_classes_absent_from_labels():
    # class 2 never appears in the labels; predicting it wrongly hurts class 0/1
    scores = f1_scores([0, 2], [0, 1], 3)
    # class 0: tp=1 fp=0 fn=0 -> 1; class 1: tp=0 fp=0 fn=1 -> 0; class 2 excluded
    assert scores.macro == pytest.approx(0.5)


def test_f1_invalid_class_index():
    with pytest.raises(ValueError):
        f1_scores([0, 4], [0, 1], 4)
    with pytest.raises(ValueError):
        f1_scores([0, -1], [0, 1], 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(min_value=2, max_value=6), st.integers(min_value=1, max_value=40))
def test_f1_micro_equals_accuracy(seed, m, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(m, size=n)
    preds = rng.integers(m, size=n)
    scores = f1_scores(preds, labels, m)
    assert scores.micro == pytest.approx(float((preds == labels).mean()), abs=1e-12)
    assert 0.0 <= scores.macro <= 1.0


# ---------------------------------------------------------------------------
# ccc_eval
# ---------------------------------------------------------------------------

def test_ccc_eval_perfect():
    rng = np.random.default_rng(0)
    targets = rng.normal(size=(10, 3))
    assert ccc_eval(targets, targets) == pytest.approx((1.0, 1.0, 1.0))


def test_ccc_eval_negated_attribute():
    rng = np.random.default_rng(1)
    targets = rng.normal(size=(20, 3))
    targets -= targets.mean(axis=0, keepdims=True)  # zero-mean so negation flips sign exactly
    preds = targets.copy()
    preds[:, 0] = -preds[:, 0]
    aro, val, dom = ccc_eval(preds, targets)
    assert aro == pytest.approx(-1.0, abs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-12)
    assert dom == pytest.approx(1.0, abs=1e-12)


def test_ccc_eval_matches_oracle():
    rng = np.random.default_rng(2)
    preds = rng.normal(size=(50, 3))
    targets = rng.normal(size=(50, 3))
    values = ccc_eval(preds, targets)
    for k in range(3):
        x, y = preds[:, k], targets[:, k]
        rho = stats.pearsonr(x, y).statistic
        expected = 2 * rho * x.std() * y.std() / (x.std() ** 2 + y.std() ** 2 + (x.mean() - y.mean()) ** 2)
        assert values[k] == pytest.approx(expected, abs=1e-10)


def test_ccc_eval_needs_two_samples():
    with pytest.raises(ValueError):
        ccc_eval(np.zeros((1, 3)), np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# welch t-test
# ---------------------------------------------------------------------------

def test_t_test_identical_samples():
    a = [0.7, 0.72, 0.69, 0.71]
    result = welch_t_test(a, list(a))
    assert result.p_value == pytest.approx(1.0, abs=1e-12)


def test_t_test_strong_separation_matches_table_oracle():
    a = [1, 1.1, 0.9, 1.05, 0.95]
    b = [2, 2.1, 1.9, 2.05, 1.95]
    result = welch_t_test(a, b)
    assert result.p_value < 0.001
    assert result.p_value == pytest.approx(4.07391832867494e-08, rel=1e-9)
    t_ref, p_ref = stats.ttest_ind(a, b, equal_var=False)
    assert result.statistic == pytest.approx(t_ref, rel=1e-12)
    assert result.p_value == pytest.approx(p_ref, rel=1e-9)


def test_t_test_needs_two_per_side():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])


def test_t_test_degenerate_cases():
    equal = welch_t_test([1.0, 1.0], [1.0, 1.0])
    assert equal.degenerate and equal.p_value == 1.0
    unequal = welch_t_test([1.0, 1.0], [2.0, 2.0])
    assert unequal.degenerate and unequal.p_value == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_t_test_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=5)
    b = rng.normal(loc=0.3, size=6)
    assert welch_t_test(a, b).p_value == pytest.approx(welch_t_test(b, a).p_value, abs=1e-14)


# ---------------------------------------------------------------------------
# cosine distance + embedding analysis
# ---------------------------------------------------------------------------

def test_cosine_distance_reference_points():
    assert cosine_distance([1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0, abs=1e-12)
    assert cosine_distance([2.0, 2.0], [5.0, 5.0]) == pytest.approx(0.0, abs=1e-12)


def test_cosine_distance_zero_norm_rejected():
    with pytest.raises(ValueError):
        cosine_distance([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_cosine_distance_symmetric_in_modality_order(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=6)
    b = rng.normal(size=6)
    assert cosine_distance(a, b) == pytest.approx(cosine_distance(b, a), abs=1e-14)


def test_embedding_analysis_untrained_model_positive(paired_dataset):
    torch.manual_seed(3)
    model = AVEmotionModel(tiny_model_config())
    report = embedding_analysis(model, paired_dataset.samples[:10])
    assert report.mean_distance > 0.0
    assert len(report.distances) == 10
    assert report.skipped == 0


def test_embedding_analysis_permutation_invariant(paired_dataset):
    torch.manual_seed(4)
    model = AVEmotionModel(tiny_model_config())
    samples = paired_dataset.samples[:8]
    fwd = embedding_analysis(model, samples)
    rev = embedding_analysis(model, samples[::-1])
    assert fwd.mean_distance == pytest.approx(rev.mean_distance, abs=1e-12)
    assert sorted(fwd.distances) == pytest.approx(sorted(rev.distances), abs=1e-12)


def test_embedding_analysis_requires_paired(paired_dataset):
    torch.manual_seed(5)
    model = AVEmotionModel(tiny_model_config())
    stripped = [
        Sample(id=s.id, speaker=s.speaker, audio=s.audio, video=None, target=s.target)
        for s in paired_dataset.samples[:4]
    ]
    with pytest.raises(ConditionUnavailableError):
        embedding_analysis(model, stripped)


def test_embedding_analysis_counts_skipped(paired_dataset, monkeypatch):
    torch.manual_seed(6)
    model = AVEmotionModel(tiny_model_config())
    calls = {"n": 0}
    import avemo.metrics as metrics_module

    real = metrics_module.cosine_distance

    def flaky(a, b):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ValueError("zero-norm")
        return real(a, b)

    monkeypatch.setattr(metrics_module, "cosine_distance", flaky)
    report = embedding_analysis(model, paired_dataset.samples[:5])
    assert report.skipped == 1
    assert len(report.distances) == 4


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_three_conditions_on_paired_data(paired_dataset):
    torch.manual_seed(7)
    model = AVEmotionModel(tiny_model_config())
    reports = evaluate(model, paired_dataset.samples, paired_dataset.task, paired_dataset.num_classes)
    assert [r.condition for r in reports] == [Condition.AUDIO_VISUAL, Condition.ACOUSTIC, Condition.VISUAL]
    for r in reports:
        assert r.num_samples == len(paired_dataset)
        assert set(r.metrics) == {"macro_f1", "micro_f1"}


def test_evaluate_av_unavailable_on_unpaired_data():
    spec = SynthSpec(num_samples=20, num_speakers=4, num_classes=4, acoustic_dim=12, visual_dim=12,
                     frac_paired=0.0, frac_audio_only=0.5, frac_video_only=0.5)
    ds = generate_synthetic(spec, seed=8)
    torch.manual_seed(8)
    model = AVEmotionModel(tiny_model_config())
    with pytest.raises(ConditionUnavailableError, match="condition unavailable"):
        evaluate(model, ds.samples, ds.task, ds.num_classes, [Condition.AUDIO_VISUAL])


def test_evaluate_memorizing_model_is_perfect_on_train(memorizing_run):
    ds, splits, result = memorizing_run
    train_samples = ds.subset(splits.ids(Split.TRAIN))
    reports = evaluate(result.model, train_samples, ds.task, ds.num_classes, [Condition.AUDIO_VISUAL])
    assert reports[0].metrics["macro_f1"] == 1.0
    assert reports[0].metrics["micro_f1"] == 1.0


def test_evaluate_regression_metrics(memorizing_run):
    spec = SynthSpec(num_samples=30, num_speakers=5, task=Task.REGRESSION,
                     acoustic_dim=12, visual_dim=12, noise_scale=0.1)
    ds = generate_synthetic(spec, seed=9)
    torch.manual_seed(9)
    model = AVEmotionModel(tiny_model_config(task=Task.REGRESSION))
    reports = evaluate(model, ds.samples, ds.task, None, [Condition.ACOUSTIC])
    metrics = reports[0].metrics
    assert set(metrics) == {"ccc_arousal", "ccc_valence", "ccc_dominance", "mean_ccc"}
    assert all(-1.0 <= v <= 1.0 for v in metrics.values())
