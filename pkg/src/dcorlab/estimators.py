"""scikit-learn compatible wrappers.

These let the measures and models drop into pipelines, ``clone`` and
``GridSearchCV``. Constructor arguments are stored verbatim; all work happens
in ``fit``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from ._validation import check_batch
from .core import dcor
from .experiments import Dataset, PairTrainConfig, init_pair, train_independent_pair
from .nn import SGD, backward, cross_entropy_grad, forward, init_mlp, log_softmax
from .pdc import bias_corrected_dcor2, pdcor


class DistanceCorrelation(BaseEstimator):
    """Distance correlation between ``X`` and a second sample ``Y``.

    ``fit(X, Y)`` stores the full report; ``score(X, Y)`` returns the
    statistic for new data. With ``bias_corrected=True`` the U-statistic
    version of the squared correlation is used instead.
    """

    def __init__(self, bias_corrected=False):
        self.bias_corrected = bias_corrected

    def _stat(self, X, Y):
        if self.bias_corrected:
            return float(bias_corrected_dcor2(X, Y))
        return dcor(X, Y).dcor

    def fit(self, X, Y):
        X = check_batch(X, "X")
        Y = check_batch(Y, "Y")
        self.n_features_in_ = X.shape[1]
        if self.bias_corrected:
            self.report_ = None
            self.dcor_ = self._stat(X, Y)
        else:
            self.report_ = dcor(X, Y)
            self.dcor_ = self.report_.dcor
        return self

    def score(self, X, Y):
        check_is_fitted(self, "dcor_")
        return self._stat(X, Y)


class PartialDistanceCorrelation(BaseEstimator):
    """Partial distance correlation of ``X`` and ``Y`` controlling for ``Z``."""

    def fit(self, X, Y, Z):
        self.report_ = pdcor(X, Y, Z)
        self.pdcor2_ = self.report_.pdcor2
        return self

    def score(self, X, Y, Z):
        check_is_fitted(self, "pdcor2_")
        return pdcor(X, Y, Z).pdcor2


class MLPClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """ReLU network trained with momentum SGD on cross-entropy.

    ``transform`` returns the tap-layer features (the layer before the
    output by default), which is what the distance-correlation losses act on.
    """

    def __init__(self, hidden=(64, 512), lr=0.05, momentum=0.9, epochs=20,
                 batch_size=32, feature_tap=-2, random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.feature_tap = feature_tap
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        validate_data(self, X, reset=True, skip_check_array=True)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        ss = np.random.SeedSequence(self.random_state).spawn(2)
        sizes = [X.shape[1], *self.hidden, len(self.classes_)]
        params = init_mlp(sizes, np.random.Generator(np.random.Philox(ss[0])), self.feature_tap)
        rng = np.random.Generator(np.random.Philox(ss[1]))
        opt = SGD(self.lr, self.momentum)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(X.shape[0])
            losses = []
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                logits, _, cache = forward(params, X[idx], return_cache=True)
                value, g = cross_entropy_grad(logits, y_idx[idx])
                params = opt.step(params, backward(params, cache, grad_logits=g))
                losses.append(value)
            self.loss_curve_.append(float(np.mean(losses)))
        self.params_ = params
        return self

    def _check(self, X):
        check_is_fitted(self, "params_")
        return validate_data(self, X, reset=False, dtype=np.float64)

    def predict_proba(self, X):
        logits, _ = forward(self.params_, self._check(X))
        return np.exp(log_softmax(logits))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        _, feats = forward(self.params_, self._check(X))
        return feats


class IndependentPairClassifier(ClassifierMixin, BaseEstimator):
    """Pair of networks where the second is pushed toward features independent of the first.

    After ``fit``, ``reference_`` holds the plain cross-entropy model and
    ``params_`` the distance-correlation regularized one used by ``predict``.
    Training metrics are in ``metrics_``.
    """

    def __init__(self, alpha=0.05, epochs=20, lr=0.05, momentum=0.9, batch_size=32,
                 hidden=(64, 512), random_state=0):
        self.alpha = alpha
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.hidden = hidden
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        validate_data(self, X, reset=True, skip_check_array=True)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        cfg = PairTrainConfig(alpha=self.alpha, epochs=self.epochs, lr=self.lr,
                              momentum=self.momentum, batch_size=self.batch_size,
                              hidden=self.hidden, seed=self.random_state)
        # Training metrics are reported on the training data itself.
        ds = Dataset(X, y_idx, X, y_idx, len(self.classes_))
        f1, f2 = init_pair(ds, cfg)
        res = train_independent_pair(f1, f2, ds, cfg)
        self.reference_ = res.f1
        self.params_ = res.f2
        self.metrics_ = res.metrics
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        logits, _ = forward(self.params_, X)
        return self.classes_[np.argmax(logits, axis=1)]
