import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinydrift.adapt import (ActiveTinyKNN, CondensingInTimeKNN, HybridTinyKNN, StepOutcome)
from tinydrift.features import SpectrogramFeatureExtractor, stft_magnitude
from tinydrift.stream import (AUDIO, CLASS_CHANGE, NO_DRIFT, NOISE_ADDITION, DriftScenario,
                              RunMetrics, aggregate, aggregate_runs, featurize_stream,
                              gen_audio_stream, gen_audio_training, gen_feature_stream,
                              gen_feature_training, mode_centres, run_test_then_train,
                              smooth_accuracy)


class TestScenario:

    @pytest.mark.parametrize("kw", [dict(drift_kind="swap"), dict(source_kind="video"),
                                    dict(change_step=0), dict(change_step=2000),
                                    dict(n_classes=0), dict(dim=1, n_classes=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DriftScenario(**kw)

    def test_no_drift_ignores_change_step(self):
        DriftScenario(drift_kind=NO_DRIFT, change_step=0)

    def test_audio_tones_below_nyquist(self):
        with pytest.raises(ValueError):
            DriftScenario(source_kind=AUDIO, sample_rate=1000, base_freqs=(300.0, 900.0))


class TestFeatureStream:

    def test_deterministic(self):
        a = gen_feature_stream(DriftScenario(seed=4))
        b = gen_feature_stream(DriftScenario(seed=4))
        assert all(np.array_equal(s.x, r.x) and s.y == r.y for s, r in zip(a, b))
        c = gen_feature_stream(DriftScenario(seed=5))
        assert not np.array_equal(a[0].x, c[0].x)

    def test_timestamps_and_length(self):
        s = gen_feature_stream(DriftScenario(steps_total=30, change_step=10))
        assert [r.t for r in s] == list(range(1, 31))

    def test_class_change_moves_only_last_class(self):
        base = gen_feature_stream(DriftScenario(drift_kind=NO_DRIFT, seed=2))
        moved = gen_feature_stream(DriftScenario(drift_kind=CLASS_CHANGE, seed=2))
        for a, b in zip(base, moved):
            same = np.array_equal(a.x, b.x)
            assert same == (a.t <= 500 or a.y == 0)

    def test_moved_class_keeps_its_distance(self):
        sc = DriftScenario(seed=1)
        centres, moved = mode_centres(sc)
        np.testing.assert_allclose(np.linalg.norm(moved - centres[0], axis=1),
                                   np.linalg.norm(centres[1] - centres[0], axis=1))

    def test_noise_addition_inflates_variance(self):
        base = gen_feature_stream(DriftScenario(drift_kind=NO_DRIFT, seed=3))
        noisy = gen_feature_stream(DriftScenario(drift_kind=NOISE_ADDITION, seed=3))
        diff = np.array([a.x - b.x for a, b in zip(base, noisy)])
        assert np.all(diff[:500] == 0)
        assert diff[500:].std() == pytest.approx(1.5, rel=0.1)

    def test_training_balanced(self):
        X, y = gen_feature_training(DriftScenario(n_classes=3), 40)
        assert X.shape == (120, 8) and np.bincount(y).tolist() == [40, 40, 40]


@pytest.fixture(scope="module")
def audio_scenario():
    return DriftScenario(source_kind=AUDIO, sample_rate=4410, steps_total=120,
                         change_step=60, seed=7)


class TestAudioStream:

    def test_deterministic(self, audio_scenario):
        a = gen_audio_stream(audio_scenario)
        b = gen_audio_stream(audio_scenario)
        assert all(np.array_equal(p.samples, q.samples) and c == d
                   for (p, c), (q, d) in zip(a, b))
        assert len(a[0][0].samples) == 4410

    def test_noise_raises_broadband_energy(self, audio_scenario):
        clean = gen_audio_stream(dataclasses.replace(audio_scenario, drift_kind=NO_DRIFT))
        noisy = gen_audio_stream(dataclasses.replace(audio_scenario, drift_kind=NOISE_ADDITION,
                                                     snr_db=0.0))

        def broadband(clip):
            mag = stft_magnitude(clip, 128, 128)
            # energy outside the strongest bin and its two neighbours
            peak = mag.sum(axis=1).argmax()
            mask = np.ones(mag.shape[0], bool)
            mask[max(peak - 2, 0):peak + 3] = False
            return (mag[mask] ** 2).sum()

        for (a, _), (b, _) in zip(clean[60:], noisy[60:]):
            assert broadband(b) > broadband(a)
        for (a, _), (b, _) in zip(clean[:60], noisy[:60]):
            assert np.array_equal(a.samples, b.samples)

    def test_hybrid_end_to_end_without_drift(self):
        sc = DriftScenario(source_kind=AUDIO, sample_rate=4410, drift_kind=NO_DRIFT,
                           steps_total=200, seed=11)
        clips, y = gen_audio_training(sc, 20)
        ex = SpectrogramFeatureExtractor(n_fft=128, hop=128, random_state=11).fit(clips)
        stream = featurize_stream(gen_audio_stream(sc), ex)
        eng = HybridTinyKNN(max_size=50).fit(ex.transform(clips), y)
        m = run_test_then_train(eng, stream)
        assert np.mean(m.correctness[100:]) > 0.9


class _Perfect:
    n_train_ = 0

    def step(self, x, y=None, t=None):
        return StepOutcome(prediction=int(x[0]))


class _Spy(CondensingInTimeKNN):
    def predict_one(self, x):
        self.log.append(("predict", self.last_t_ + 1))
        return super().predict_one(x)

    def _adapt(self, sample, pred):
        self.log.append(("adapt", sample.t))
        return super()._adapt(sample, pred)


class TestHarness:

    def test_perfect_engine(self):
        from tinydrift.core import LabeledSample
        stream = [LabeledSample([float(c)], c, i + 1) for i, c in enumerate([0, 1, 1, 0])]
        assert run_test_then_train(_Perfect(), stream).correctness == [1, 1, 1, 1]

    def test_prediction_precedes_label(self):
        sc = DriftScenario(steps_total=50, change_step=25)
        X, y = gen_feature_training(sc, 10)
        eng = _Spy().fit(X, y)
        eng.log = []
        run_test_then_train(eng, gen_feature_stream(sc))
        assert eng.log == [e for t in range(21, 71) for e in (("predict", t), ("adapt", t))]

    def test_withheld_supervision_is_neutral(self):
        sc = DriftScenario(steps_total=200, change_step=100)
        X, y = gen_feature_training(sc, 20)
        eng = CondensingInTimeKNN().fit(X, y)
        stream = gen_feature_stream(sc)
        supervised = [i % 2 == 1 for i in range(len(stream))]
        prev = eng.store_.fingerprint()
        for s, sup in zip(stream, supervised):
            eng.step(s.x, s.y if sup else None, t=eng.n_train_ + s.t)
            now = eng.store_.fingerprint()
            if not sup:
                assert now == prev
            prev = now

    def test_uncapped_cit_sizes_non_decreasing(self):
        sc = DriftScenario(seed=8)
        X, y = gen_feature_training(sc, 100)
        m = run_test_then_train(CondensingInTimeKNN().fit(X, y), gen_feature_stream(sc))
        assert np.all(np.diff(m.store_sizes) >= 0)
        assert len(m.store_sizes) == len(m.correctness) == 1000

    def test_reproducible(self):
        sc = DriftScenario(seed=9)
        X, y = gen_feature_training(sc, 100)
        runs = [run_test_then_train(HybridTinyKNN().fit(X, y), gen_feature_stream(sc))
                for _ in range(2)]
        assert runs[0] == runs[1]


class TestSmoothing:

    def test_constant(self):
        assert np.all(smooth_accuracy([1] * 250) == 1.0)
        assert np.all(smooth_accuracy([0] * 250) == 0.0)

    def test_step_function(self):
        out = smooth_accuracy([1] * 100 + [0] * 100)
        assert len(out) == 200
        # the window ending at index 149 holds 50 ones; at 150 it holds 49
        assert out[149] == 0.5
        assert out[150] == pytest.approx(0.49)

    def test_partial_window_renormalised(self):
        assert smooth_accuracy([1, 0, 1, 1]).tolist() == [1.0, 0.5, 2 / 3, 0.75]

    def test_empty(self):
        with pytest.raises(ValueError):
            smooth_accuracy([])

    @settings(max_examples=40, deadline=None)
    @given(bits=st.lists(st.integers(0, 1), min_size=1, max_size=300),
           window=st.integers(1, 120))
    def test_matches_loop(self, bits, window):
        ref = [np.mean(bits[max(0, i - window + 1):i + 1]) for i in range(len(bits))]
        np.testing.assert_allclose(smooth_accuracy(bits, window), ref, atol=1e-12)


class TestAggregation:

    def test_single_run_zero_std(self):
        agg = aggregate([[0.1, 0.5, 0.9]])
        assert np.all(agg.std == 0) and agg.n_runs == 1

    def test_symmetric_pair(self, rng):
        c = rng.random(50)
        assert np.allclose(aggregate([c, 1 - c]).mean, 0.5)

    def test_unequal_lengths(self):
        with pytest.raises(ValueError):
            aggregate_runs([RunMetrics([1, 0]), RunMetrics([1])])

    def test_matches_two_pass(self):
        runs = []
        for seed in range(20):
            sc = DriftScenario(seed=seed, steps_total=300, change_step=150)
            X, y = gen_feature_training(sc, 50)
            runs.append(run_test_then_train(HybridTinyKNN(max_size=60).fit(X, y),
                                            gen_feature_stream(sc)))
        acc, sizes = aggregate_runs(runs)
        curves = [r.accuracy_curve for r in runs]
        for i in (0, 57, 299):
            vals = [c[i] for c in curves]
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            assert acc.mean[i] == pytest.approx(mean, abs=1e-12)
            assert acc.std[i] == pytest.approx(var ** 0.5, abs=1e-12)
        assert sizes.mean[-1] == pytest.approx(np.mean([r.store_sizes[-1] for r in runs]))


@pytest.fixture(scope="module")
def window_means():
    engines = {"hybrid": lambda: HybridTinyKNN(max_size=200),
               "active": lambda: ActiveTinyKNN(window_size=200),
               "cit": lambda: CondensingInTimeKNN(max_size=200)}
    means = {k: [] for k in engines}
    for seed in range(20):
        sc = DriftScenario(seed=seed)
        X, y = gen_feature_training(sc, 100)
        stream = gen_feature_stream(sc)
        for name, make in engines.items():
            curve = run_test_then_train(make().fit(X, y), stream).accuracy_curve
            # steps t*+200 .. t*+400, 1-based
            means[name].append(curve[699:900].mean())
    return {k: float(np.mean(v)) for k, v in means.items()}


@pytest.mark.slow
class TestRecoveryOrdering:
    """Hybrid recovers at least as well as the other engines after a class change."""

    def test_hybrid_not_below_active(self, window_means):
        assert window_means["hybrid"] >= window_means["active"], window_means

    def test_hybrid_not_below_capped_cit(self, window_means):
        assert window_means["hybrid"] >= window_means["cit"], window_means
