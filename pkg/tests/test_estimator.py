import numpy as np
import numpy.testing as npt
import pytest

from cxrtriage import CxrClassifier
from cxrtriage.data import synthesize_dataset
from cxrtriage.errors import ConfigError, DomainError, ShapeError


@pytest.fixture(scope="module")
def arrays():
    archive = synthesize_dataset(12, seed=4)
    return archive.to_float(), archive.labels.astype(np.int64)


@pytest.fixture(scope="module")
def fitted(arrays):
    x, y = arrays
    clf = CxrClassifier(width_mult=0.125, epochs=4, batch_size=12, seed=1)
    return clf.fit(x, y)


class TestEstimatorProtocol:
    def test_get_params_returns_constructor_args(self):
        clf = CxrClassifier(lr=0.01, epochs=3)
        params = clf.get_params()
        assert params["lr"] == 0.01
        assert params["epochs"] == 3
        assert params["arch"] == "custom_cnn"
        assert set(params) == set(CxrClassifier._PARAM_NAMES)

    def test_set_params_roundtrip(self):
        clf = CxrClassifier()
        clf.set_params(lr=0.05, width_mult=0.5)
        assert clf.get_params()["lr"] == 0.05
        assert clf.get_params()["width_mult"] == 0.5

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ConfigError, match="unknown parameter"):
            CxrClassifier().set_params(learning_rate=0.1)

    def test_sklearn_clone_compatible(self):
        sklearn_base = pytest.importorskip("sklearn.base")
        clf = CxrClassifier(lr=0.02, epochs=7)
        cloned = sklearn_base.clone(clf)
        assert cloned.get_params() == clf.get_params()
        assert cloned is not clf

    def test_repr_shows_params(self):
        text = repr(CxrClassifier(epochs=5))
        assert text.startswith("CxrClassifier(")
        assert "epochs=5" in text


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self, fitted):
        assert hasattr(fitted, "network_")
        assert hasattr(fitted, "history_")
        npt.assert_array_equal(fitted.classes_, [0, 1, 2])
        assert fitted.class_names_ == ("Normal", "Pneumonia", "Tuberculosis")
        assert len(fitted.history_) == 4

    def test_predict_proba_rows_normalized(self, fitted, arrays):
        x, _ = arrays
        probs = fitted.predict_proba(x[:7])
        assert probs.shape == (7, 3)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_predict_matches_argmax(self, fitted, arrays):
        x, _ = arrays
        npt.assert_array_equal(fitted.predict(x[:7]),
                               np.argmax(fitted.predict_proba(x[:7]), axis=1))

    def test_score_on_training_data(self, fitted, arrays):
        x, y = arrays
        assert fitted.score(x, y) >= 0.9  # easy synthetic task, overfit

    def test_accepts_3d_grayscale_input(self, fitted, arrays):
        x, _ = arrays
        squeezed = x[:4, 0]
        probs = fitted.predict_proba(squeezed)
        npt.assert_array_equal(probs, fitted.predict_proba(x[:4]))

    def test_unfitted_predict_rejected(self, arrays):
        x, _ = arrays
        with pytest.raises(ConfigError, match="not been fitted"):
            CxrClassifier().predict(x[:2])

    def test_deterministic_fit(self, arrays):
        x, y = arrays
        a = CxrClassifier(width_mult=0.125, epochs=2, batch_size=12,
                          seed=9).fit(x, y)
        b = CxrClassifier(width_mult=0.125, epochs=2, batch_size=12,
                          seed=9).fit(x, y)
        npt.assert_array_equal(a.predict_proba(x[:5]),
                               b.predict_proba(x[:5]))


class TestInputValidation:
    def test_wrong_spatial_size(self):
        with pytest.raises(ShapeError, match="90x90"):
            CxrClassifier().fit(np.zeros((4, 1, 64, 64), np.float32),
                                np.zeros(4, np.int64))

    def test_out_of_range_pixels(self):
        x = np.full((4, 1, 90, 90), 2.0, np.float32)
        with pytest.raises(DomainError, match=r"\[0,1\]"):
            CxrClassifier().fit(x, np.zeros(4, np.int64))

    def test_non_finite_pixels(self):
        x = np.zeros((4, 1, 90, 90), np.float32)
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(DomainError, match="finite"):
            CxrClassifier().fit(x, np.zeros(4, np.int64))

    def test_bad_labels(self):
        x = np.zeros((4, 1, 90, 90), np.float32)
        with pytest.raises(DomainError):
            CxrClassifier().fit(x, np.array([0, 1, 2, 5]))
        with pytest.raises(ShapeError):
            CxrClassifier().fit(x, np.array([0, 1]))

    def test_channel_mismatch(self):
        x = np.zeros((4, 3, 90, 90), np.float32)
        with pytest.raises(ShapeError, match="channel"):
            CxrClassifier(channels=1).fit(x, np.zeros(4, np.int64))
