import numpy as np
import pytest
from sklearn.base import clone

from conftest import blobs
from tinydrift.adapt import (ACTIVE, CIT, HYBRID, ActiveTinyKNN, CondensingInTimeKNN,
                             EngineConfig, HybridTinyKNN, make_engine)
from tinydrift.cdt import FULL, CusumConfig
from tinydrift.core import ProtocolError


@pytest.fixture
def two_blobs(rng):
    return blobs(rng, 2, 100, dim=4, spread=3.0)


def noisy_label_stream(rng, n_pre=600, n_post=600, acc_pre=0.9, acc_post=0.4):
    """Well separated blobs whose labels are flipped to set the attainable accuracy."""
    centres = np.array([[5.0, 0, 0, 0], [-5.0, 0, 0, 0]])
    out = []
    for i in range(n_pre + n_post):
        c = int(rng.integers(2))
        x = centres[c] + rng.standard_normal(4)
        keep = rng.random() < (acc_pre if i < n_pre else acc_post)
        out.append((x, c if keep else 1 - c))
    return out


class TestCondensingInTime:

    def test_inserts_only_on_error(self, two_blobs, rng):
        X, y = two_blobs
        eng = CondensingInTimeKNN().fit(X, y)
        n0 = len(eng.store_)
        for i in range(200):
            x, lab = X[i % len(y)] + 0.1 * rng.standard_normal(4), int(rng.integers(2))
            before = len(eng.store_)
            res = eng.step(x, lab)
            assert len(eng.store_) == before + (res.prediction != lab)
            assert res.knowledge_changed == (res.prediction != lab)
        assert len(eng.store_) >= n0

    def test_cap_holds(self, two_blobs, rng):
        X, y = two_blobs
        eng = CondensingInTimeKNN(max_size=10).fit(X, y)
        for _ in range(300):
            eng.step(rng.standard_normal(4) * 3, int(rng.integers(2)))
            assert len(eng.store_) <= 10

    def test_initial_set_truncated_to_newest(self, two_blobs):
        X, y = two_blobs
        eng = CondensingInTimeKNN(max_size=3, condense_on_init=False).fit(X, y)
        assert [s.t for s in eng.store_] == [198, 199, 200]

    def test_unsupervised_step_is_neutral(self, two_blobs, rng):
        X, y = two_blobs
        eng = CondensingInTimeKNN().fit(X, y)
        fp = eng.store_.fingerprint()
        for _ in range(50):
            eng.step(rng.standard_normal(4) * 5)
        assert eng.store_.fingerprint() == fp and eng.last_t_ == len(y)

    def test_timestamps_must_increase(self, two_blobs):
        X, y = two_blobs
        eng = CondensingInTimeKNN(condense_on_init=False).fit(X, y)
        with pytest.raises(ProtocolError):
            eng.step(X[0], 1 - y[0], t=len(y))

    def test_sklearn_api(self, two_blobs):
        X, y = two_blobs
        eng = clone(CondensingInTimeKNN(max_size=5))
        assert eng.get_params() == {"max_size": 5, "condense_on_init": True}
        eng.fit(X, y).partial_fit(X[:20], y[:20])
        assert eng.predict(X[:5]).shape == (5,)
        assert 0.0 <= eng.score(X, y) <= 1.0


class TestActive:

    def test_memory_bound_and_adaptation(self, rng):
        stream = noisy_label_stream(rng)
        X0 = np.array([x for x, _ in stream[:200]])
        y0 = np.array([c for _, c in stream[:200]])
        eng = ActiveTinyKNN(window_size=100).fit(X0, y0)
        fired = []
        for i, (x, lab) in enumerate(stream[200:], start=201):
            res = eng.step(x, lab, t=i)
            assert len(eng.store_) + len(eng.window_) <= 200
            if res.detection is not None and res.detection.detected:
                fired.append(i)
                assert all(s.t >= res.detection.t_r for s in eng.store_)
        assert any(i > 600 for i in fired)
        assert eng.detections_ and eng.detections_[0][1] <= eng.detections_[0][0]

    def test_empty_rebuild_keeps_current_sample(self, two_blobs):
        X, y = two_blobs
        eng = ActiveTinyKNN(window_size=10, condense_on_init=False).fit(X, y)
        sample = type(eng.store_[0])(X[0], 1, 10_000)
        eng._rebuild([], sample)
        assert [s.t for s in eng.store_] == [10_000]

    def test_memory_bytes(self, two_blobs):
        X, y = two_blobs
        eng = ActiveTinyKNN(window_size=50).fit(X, y)
        for i in range(30):
            eng.step(X[i], y[i])
        assert eng.memory_bytes() == (len(eng.store_) + 30) * (4 * 4 + 8)


class TestHybrid:

    def test_requires_below_only(self, two_blobs):
        X, y = two_blobs
        with pytest.raises(ValueError, match="below_only"):
            HybridTinyKNN(cusum=CusumConfig(grid_mode=FULL)).fit(X, y)

    def test_improving_stream_no_detection(self, rng):
        # a small initial set that the passive updates keep improving
        stream = noisy_label_stream(rng, 1000, 0, acc_pre=1.0)
        X0 = np.array([x for x, _ in stream[:4]])
        y0 = np.array([c for _, c in stream[:4]])
        eng = HybridTinyKNN(max_size=50).fit(X0, y0)
        for i, (x, lab) in enumerate(stream, start=5):
            res = eng.step(x, lab, t=i)
            assert not (res.detection and res.detection.detected)
            assert len(eng.store_) <= 50

    def test_detection_prunes_old_samples(self, rng):
        stream = noisy_label_stream(rng)
        X0 = np.array([x for x, _ in stream[:200]])
        y0 = np.array([c for _, c in stream[:200]])
        eng = HybridTinyKNN(max_size=100).fit(X0, y0)
        hit = None
        for i, (x, lab) in enumerate(stream[200:], start=201):
            res = eng.step(x, lab, t=i)
            assert len(eng.store_) <= 100
            if res.detection is not None and res.detection.detected:
                hit = res.detection
                assert all(s.t >= hit.t_r for s in eng.store_)
        assert hit is not None


class TestEngineConfig:

    @pytest.mark.parametrize("kind,cls", [(CIT, CondensingInTimeKNN), (ACTIVE, ActiveTinyKNN),
                                          (HYBRID, HybridTinyKNN)])
    def test_make_engine(self, kind, cls):
        eng = make_engine(EngineConfig(kind, capacity=20))
        assert isinstance(eng, cls)

    def test_validation(self):
        with pytest.raises(ValueError):
            EngineConfig("passive")
        with pytest.raises(ValueError):
            EngineConfig(ACTIVE)
        with pytest.raises(ValueError):
            EngineConfig(CIT, cusum=CusumConfig())
        assert EngineConfig(HYBRID, 5, name="h5").label == "h5"
