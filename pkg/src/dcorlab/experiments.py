"""Training and evaluation recipes built on the distance-correlation primitives.

* independent-feature training of a model pair and transfer-attack evaluation
* minibatch estimators of (partial) distance correlation against label
  embeddings, layer-similarity heatmaps, and a PDC finetuning loss
* loss terms for semi-supervised disentanglement
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_batch, check_labels, check_same_n
from .core import _report_from_centered, dcor, double_center, make_rng, pairwise_distances
from .exceptions import DcorError, DegenerateError, DimensionError, InvalidInputError
from .grad import dcor_value_grad, pdcor_value_grad
from .nn import (
    SGD,
    accuracy,
    attack,
    backward,
    cross_entropy,
    cross_entropy_grad,
    forward,
    init_mlp,
    log_softmax,
)
from .pdc import MIN_SAMPLES, pdcor
from .storage import FeatureDump


class DivergenceError(DcorError):
    """Training produced a non-finite loss or overflowing features."""

    exit_code = 3


# --- desk-scale data ------------------------------------------------------


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int


def make_blobs_task(seed=0, n_train=5000, n_test=1000, n_classes=10, dim=64,
                    spread=0.15, noise=0.07):
    """Gaussian-blob classification with inputs clipped to [0, 1].

    Class centers are uniform in ``[0.5 - spread, 0.5 + spread]^dim``; each
    sample adds isotropic noise with standard deviation ``noise``.
    """
    rng = make_rng(seed)
    centers = rng.uniform(0.5 - spread, 0.5 + spread, size=(n_classes, dim))

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        x = centers[y] + noise * rng.standard_normal((n, dim))
        return np.clip(x, 0.0, 1.0), y

    x_train, y_train = draw(n_train)
    x_test, y_test = draw(n_test)
    return Dataset(x_train, y_train, x_test, y_test, n_classes)


def class_embeddings(n_classes, dim=32, seed=0):
    """Fixed random label embeddings standing in for language-model vectors."""
    return make_rng(seed).standard_normal((n_classes, dim))


# --- independent features -------------------------------------------------


def independence_loss(logits2, labels, g1, g2, alpha):
    """Cross-entropy of the second model plus ``alpha`` times dcor(g1, g2)."""
    ce = cross_entropy(logits2, labels)
    if alpha == 0:
        return ce
    rep = dcor(g1, g2)
    if rep.degenerate:
        warnings.warn("degenerate features: distance-correlation term set to 0", RuntimeWarning)
    return ce + alpha * rep.dcor


@dataclass
class PairTrainConfig:
    alpha: float = 0.05
    epochs: int = 20
    schedule: str = "alternating_epochs"
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    hidden: tuple = (64, 512)
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InvalidInputError("alpha must be finite and non-negative")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if self.schedule != "alternating_epochs":
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be at least 2")
        self.hidden = tuple(self.hidden)


@dataclass
class PairTrainResult:
    f1: object
    f2: object
    metrics: dict = field(default_factory=dict)


def init_pair(dataset, cfg):
    """Two identically shaped networks with distinct seeded initializations."""
    sizes = [dataset.x_train.shape[1], *cfg.hidden, dataset.n_classes]
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    return init_mlp(sizes, make_rng(ss[0])), init_mlp(sizes, make_rng(ss[1]))


def _check_finite(value, who, epoch):
    if not np.isfinite(value):
        raise DivergenceError(f"{who}: non-finite loss {value} in epoch {epoch}")


def _ce_epoch(model, opt, x, y, order, batch_size, who, epoch):
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        logits, _, cache = forward(model, x[idx], return_cache=True)
        value, g = cross_entropy_grad(logits, y[idx])
        _check_finite(value, who, epoch)
        model = opt.step(model, backward(model, cache, grad_logits=g))
        losses.append(value)
    return model, float(np.mean(losses))


def _dc_epoch(model, opt, ref, x, y, order, batch_size, alpha, epoch):
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        logits, g2, cache = forward(model, x[idx], return_cache=True)
        value, g_logits = cross_entropy_grad(logits, y[idx])
        _check_finite(value, "f2", epoch)
        g_feat = None
        if alpha != 0 and len(idx) >= 2:
            _, g1 = forward(ref, x[idx])
            _check_finite(float(np.sum(g2)) + float(np.sum(g1)), "features", epoch)
            try:
                dc = dcor_value_grad(g2, g1, wrt="X")
            except DegenerateError:
                warnings.warn("degenerate features: distance-correlation term set to 0",
                              RuntimeWarning)
            except InvalidInputError as exc:
                # Finite features whose distances overflow.
                raise DivergenceError(f"f2: feature distances overflow in epoch {epoch}") from exc
            else:
                value += alpha * dc.value
                g_feat = alpha * dc.grad
        _check_finite(value, "f2", epoch)
        grads = backward(model, cache, grad_logits=g_logits, grad_features=g_feat)
        model = opt.step(model, grads)
        losses.append(value)
    return model, float(np.mean(losses))


def train_independent_pair(f1, f2, dataset, cfg):
    """Train ``f1`` on cross-entropy and ``f2`` on cross-entropy plus a dcor penalty.

    Epochs alternate: one epoch of ``f1``, then one epoch of ``f2`` against
    the features of the current (frozen) ``f1``. With ``alpha=0`` this is
    exactly two independently trained baselines.
    """
    x, y = dataset.x_train, dataset.y_train
    ss = np.random.SeedSequence([cfg.seed, 1]).spawn(2)
    rng1, rng2 = make_rng(ss[0]), make_rng(ss[1])
    opt1 = SGD(cfg.lr, cfg.momentum)
    opt2 = SGD(cfg.lr, cfg.momentum)
    trace1, trace2 = [], []
    for epoch in range(cfg.epochs):
        f1, l1 = _ce_epoch(f1, opt1, x, y, rng1.permutation(len(x)), cfg.batch_size, "f1", epoch)
        f2, l2 = _dc_epoch(f2, opt2, f1, x, y, rng2.permutation(len(x)), cfg.batch_size,
                           cfg.alpha, epoch)
        trace1.append(l1)
        trace2.append(l2)
    _, g1 = forward(f1, dataset.x_test)
    _, g2 = forward(f2, dataset.x_test)
    metrics = {
        "alpha": cfg.alpha,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "clean_acc_f1": accuracy(f1, dataset.x_test, dataset.y_test),
        "clean_acc_f2": accuracy(f2, dataset.x_test, dataset.y_test),
        "feature_dcor": dcor(g1, g2).dcor,
        "loss_trace_f1": trace1,
        "loss_trace_f2": trace2,
    }
    return PairTrainResult(f1, f2, metrics)


def transfer_attack_eval(f1, f2, x_test, y_test, attacks):
    """Accuracy of ``f2`` on adversarial examples crafted against ``f1``.

    Returns an ordered dict-like mapping: ``"clean"`` first, then one entry
    per attack config keyed by its label (e.g. ``"PGD_eps0.05"``).
    """
    table = {"clean": accuracy(f2, x_test, y_test)}
    for cfg in attacks:
        x_adv = attack(f1, x_test, y_test, cfg)
        table[cfg.label] = accuracy(f2, x_adv, y_test)
    return table


# --- network comparison ---------------------------------------------------


def _as_batches(stream, m, name):
    if isinstance(stream, np.ndarray):
        arr = check_batch(stream, name)
        if arr.shape[0] % m:
            raise InvalidInputError(
                f"{name}: {arr.shape[0]} samples do not split into minibatches of {m}"
            )
        return [arr[i:i + m] for i in range(0, arr.shape[0], m)]
    batches = [check_batch(b, name) for b in stream]
    for i, b in enumerate(batches):
        if b.shape[0] != m:
            raise InvalidInputError(f"{name}: minibatch {i} has {b.shape[0]} samples, expected {m}")
    return batches


def _aligned(m, **streams):
    out = {k: _as_batches(v, m, k) for k, v in streams.items()}
    counts = {len(v) for v in out.values()}
    if len(counts) != 1:
        raise DimensionError("streams have different numbers of minibatches")
    if counts.pop() == 0:
        raise InvalidInputError("empty stream")
    return out


def stochastic_dc_estimate(features, embeddings, m):
    """Mean of per-minibatch dcor(features_t, embeddings_t).

    Either argument may be an (n, p) array, split into consecutive
    minibatches of ``m`` rows, or an iterable of (m, p) batches.
    """
    s = _aligned(m, features=features, embeddings=embeddings)
    vals = [dcor(x, g).dcor for x, g in zip(s["features"], s["embeddings"])]
    return float(np.mean(vals))


def stochastic_pdc_estimate(feat_x, feat_y, embeddings, m):
    """Mean of per-minibatch pdcor(x_t, gt_t; y_t)."""
    if m < MIN_SAMPLES:
        raise InvalidInputError(f"minibatch size must be at least {MIN_SAMPLES}")
    s = _aligned(m, feat_x=feat_x, feat_y=feat_y, embeddings=embeddings)
    vals = [pdcor(x, g, y).pdcor2 for x, y, g in zip(s["feat_x"], s["feat_y"], s["embeddings"])]
    return float(np.mean(vals))


def pdc_finetune_loss(logits1, labels, g1, g2, gt, alpha=1.0):
    """Cross-entropy minus ``alpha`` times pdcor(g1, gt; g2).

    The partial term is maximized, hence the minus sign.
    """
    ce = cross_entropy(logits1, labels)
    if alpha == 0:
        return ce
    rep = pdcor(g1, gt, g2)
    if rep.degenerate:
        warnings.warn("degenerate projection: partial distance-correlation term set to 0",
                      RuntimeWarning)
    return ce - alpha * rep.pdcor2


def pdc_finetune(f1, f2, x, labels, gt, alpha=1.0, lr=1e-5, epochs=1, batch_size=64,
                 momentum=0.0, seed=0):
    """Finetune ``f1`` on :func:`pdc_finetune_loss` with ``f2`` frozen.

    ``gt`` holds one embedding row per sample. Returns the new ``f1`` and the
    per-epoch mean loss.
    """
    x = check_batch(x, "x")
    gt = check_batch(gt, "gt")
    labels = check_labels(labels, f1.weights[-1].shape[1], x.shape[0])
    check_same_n(x, gt, names=["x", "gt"])
    rng = make_rng(seed)
    opt = SGD(lr, momentum)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < MIN_SAMPLES:
                continue
            logits, g1, cache = forward(f1, x[idx], return_cache=True)
            value, g_logits = cross_entropy_grad(logits, labels[idx])
            g_feat = None
            if alpha != 0:
                _, g2 = forward(f2, x[idx])
                try:
                    res = pdcor_value_grad(g1, gt[idx], g2)
                except DegenerateError:
                    warnings.warn("degenerate projection: partial term set to 0", RuntimeWarning)
                else:
                    value -= alpha * res.value
                    g_feat = -alpha * res.grad
            _check_finite(value, "f1", epoch)
            f1 = opt.step(f1, backward(f1, cache, grad_logits=g_logits, grad_features=g_feat))
            losses.append(value)
        trace.append(float(np.mean(losses)))
    return f1, trace


@dataclass
class HeatmapResult:
    values: np.ndarray
    row_labels: list
    col_labels: list
    n_samples: int


def _check_ids(dump_a, dump_b, n):
    if dump_a.n < n or dump_b.n < n:
        raise DimensionError(f"dumps hold {dump_a.n} and {dump_b.n} samples, need {n}")
    if list(dump_a.sample_ids[:n]) != list(dump_b.sample_ids[:n]):
        raise InvalidInputError("dumps disagree on sample ids")


def layer_similarity_heatmap(dump_a, dump_b=None, n_samples=256, parallel=1):
    """dcor between every layer of ``dump_a`` and every layer of ``dump_b``.

    Without ``dump_b`` the within-model matrix is computed; it is exactly
    symmetric. ``parallel`` bounds the worker count and does not change the
    result.
    """
    within = dump_b is None or dump_b is dump_a
    dump_b = dump_a if within else dump_b
    n = min(n_samples, dump_a.n, dump_b.n) if n_samples is None else n_samples
    _check_ids(dump_a, dump_b, n)

    def centered(dump):
        return [double_center(pairwise_distances(dump.layer(k)[:n])) for k in dump.layer_names]

    cen_a = centered(dump_a)
    cen_b = cen_a if within else centered(dump_b)
    la, lb = len(cen_a), len(cen_b)
    cells = [(i, j) for i in range(la) for j in range(lb) if not within or j >= i]

    def cell(ij):
        i, j = ij
        return _report_from_centered(cen_a[i], cen_b[j]).dcor

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            vals = list(pool.map(cell, cells))
    else:
        vals = [cell(c) for c in cells]
    out = np.zeros((la, lb))
    for (i, j), v in zip(cells, vals):
        out[i, j] = v
        if within:
            out[j, i] = v
    return HeatmapResult(out, dump_a.layer_names, dump_b.layer_names, n)


def dump_activations(params, x, model_name="mlp", sample_ids=None):
    """Feature dump of every layer's output (post-activation, logits last)."""
    _, _, cache = forward(params, x, return_cache=True)
    last = params.n_layers - 1
    layers = {}
    for i, z in enumerate(cache.pre):
        layers[f"layer{i + 1}"] = z if i == last else np.maximum(z, 0.0)
    ids = list(range(len(x))) if sample_ids is None else list(sample_ids)
    return FeatureDump(model_name, layers, ids)


# --- disentanglement ------------------------------------------------------


def residual_independence_loss(factors, residual):
    """dcor between the column-concatenated factors and the residual code."""
    if len(factors) < 1:
        raise InvalidInputError("need at least one factor batch")
    fs = [check_batch(f, f"factor{i}") for i, f in enumerate(factors)]
    r = check_batch(residual, "residual")
    check_same_n(*fs, r)
    return dcor(np.hstack(fs), r).dcor


@dataclass
class DisentangleWeights:
    lambda_cls: float = 0.1
    lambda_ent: float = 0.01
    lambda_res: float = 1e-5

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_ent, self.lambda_res) < 0:
            raise InvalidInputError("loss weights must be non-negative")


@dataclass(frozen=True)
class DisentangleLosses:
    cls: float
    ent: float
    res: float
    total: float


def disentangle_losses(classifier_logits, labels, label_mask, factors, residual, weights=None):
    """Classification, entropy and residual terms for semi-supervised disentanglement.

    ``classifier_logits[j]`` is (n, m_j) for attribute ``j``; ``labels[j]``
    holds class indices (ignored where unlabeled); ``label_mask`` is (n, k)
    with 1 where attribute ``j`` of sample ``i`` is labeled. Both sums run
    over samples and attributes. ``total`` excludes any reconstruction term.
    """
    weights = weights or DisentangleWeights()
    mask = np.asarray(label_mask)
    k = len(classifier_logits)
    if len(labels) != k:
        raise DimensionError("need one label vector per attribute classifier")
    if mask.ndim != 2 or mask.shape[1] != k:
        raise DimensionError(f"label mask must be (n, {k}), got {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise InvalidInputError("label mask entries must be 0 or 1")
    n = mask.shape[0]
    l_cls = []
    l_ent = []
    for j, (logits, lab) in enumerate(zip(classifier_logits, labels)):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape[0] != n:
            raise DimensionError(f"attribute {j}: {logits.shape[0]} rows for {n} samples")
        lp = log_softmax(logits)
        labeled = mask[:, j] == 1
        if labeled.any():
            lab = np.asarray(lab)
            y = check_labels(lab[labeled], logits.shape[1])
            l_cls.extend(-lp[labeled][np.arange(y.size), y])
        p = np.exp(lp[~labeled])
        l_ent.extend(-(p * lp[~labeled]).sum(axis=1))
    cls = float(np.sum(l_cls)) if l_cls else 0.0
    ent = float(np.sum(l_ent)) if l_ent else 0.0
    res = residual_independence_loss(factors, residual)
    total = weights.lambda_cls * cls + weights.lambda_ent * ent + weights.lambda_res * res
    return DisentangleLosses(cls, ent, res, total)
