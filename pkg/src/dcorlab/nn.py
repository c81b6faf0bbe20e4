"""Small ReLU feed-forward classifiers, SGD, block stochastic gradient and L-inf attacks.

Parameters are plain numpy arrays; backpropagation is written out by hand.
Weights are stored as (fan_in, fan_out) so a layer computes ``h @ W + b``.
"""

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from ._validation import check_batch, check_labels
from .core import double_center, make_rng, pairwise_distances
from .exceptions import DegenerateError, DimensionError, InvalidInputError
from .grad import dcor_value_grad, distance_backward


@dataclass
class MLPParams:
    """Weights and biases of a ReLU network with a designated feature layer.

    ``feature_tap`` indexes the layer whose output is exposed as features:
    post-activation for hidden layers, raw logits for the last layer.
    """

    weights: list
    biases: list
    activation: str = "relu"
    feature_tap: int = -1

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        if self.activation != "relu":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input size {w.shape[0]} does not chain")
        n = len(self.weights)
        if not -n <= self.feature_tap < n:
            raise InvalidInputError(f"feature_tap {self.feature_tap} out of range for {n} layers")
        self.feature_tap %= n

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return self.like([a.copy() for a in self.arrays()])

    def like(self, arrays):
        """New params with this structure and the given (W0, b0, W1, b1, ...)."""
        arrays = list(arrays)
        return MLPParams(arrays[0::2], arrays[1::2], self.activation, self.feature_tap)

    def zeros_like(self):
        return self.like([np.zeros_like(a) for a in self.arrays()])

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        arrays = self.arrays()
        need = sum(a.size for a in arrays)
        if vec.size != need:
            raise DimensionError(f"vector has {vec.size} entries, params need {need}")
        out, pos = [], 0
        for a in arrays:
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return self.like(out)


def init_mlp(sizes, seed=0, feature_tap=-2):
    """He-initialized network with layer widths ``sizes`` (input first).

    ``feature_tap=-2`` exposes the layer before the final linear map.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    n = len(weights)
    tap = feature_tap if -n <= feature_tap < n else n - 1
    return MLPParams(weights, biases, feature_tap=tap)


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer


def forward(params, x, return_cache=False):
    """Return ``(logits, features)``, plus the backprop cache if requested."""
    x = check_batch(x, "x")
    if x.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(
            f"input has {x.shape[1]} features, first layer expects {params.weights[0].shape[0]}"
        )
    h = x
    inputs, pre = [], []
    features = None
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        if i == params.feature_tap:
            features = h
    if return_cache:
        return h, features, ForwardCache(inputs, pre)
    return h, features


def backward(params, cache, grad_logits=None, grad_features=None, input_grad=False):
    """Backpropagate gradients on logits and/or tap features.

    Returns the parameter gradients as an :class:`MLPParams`, or
    ``(grads, dx)`` when ``input_grad`` is set.
    """
    last = params.n_layers - 1
    n = cache.inputs[0].shape[0]
    dh = np.zeros((n, params.weights[-1].shape[1])) if grad_logits is None else grad_logits
    grads = [None] * (2 * params.n_layers)
    for i in range(last, -1, -1):
        if i == params.feature_tap and grad_features is not None:
            dh = dh + grad_features
        dz = dh * (cache.pre[i] > 0) if i < last else dh
        grads[2 * i] = cache.inputs[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0 or input_grad:
            dh = dz @ params.weights[i].T
    g = params.like(grads)
    return (g, dh) if input_grad else g


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of the true class under softmax."""
    return cross_entropy_grad(logits, labels)[0]


def cross_entropy_grad(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    y = check_labels(labels, logits.shape[1], logits.shape[0])
    lp = log_softmax(logits)
    n = logits.shape[0]
    value = -float(lp[np.arange(n), y].mean())
    g = np.exp(lp)
    g[np.arange(n), y] -= 1.0
    return value, g / n


def accuracy(params, x, labels):
    logits, _ = forward(params, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """One (momentum) SGD update; returns new params.

    ``velocity`` (an :class:`MLPParams` of buffers) is updated in place when
    given, using ``v <- momentum * v + g`` and ``p <- p - lr * v``.
    """
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if [a.shape for a in p_arrays] != [a.shape for a in g_arrays]:
        raise DimensionError("gradient shapes do not match parameter shapes")
    if velocity is None:
        if momentum:
            raise InvalidInputError("momentum needs a velocity buffer")
        return params.like([p - lr * g for p, g in zip(p_arrays, g_arrays)])
    out = []
    for p, g, v in zip(p_arrays, g_arrays, velocity.arrays()):
        v *= momentum
        v += g
        out.append(p - lr * v)
    return params.like(out)


class SGD:
    """Momentum SGD holding its own velocity buffers."""

    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def step(self, params, grads):
        if self.momentum == 0.0:
            return sgd_step(params, grads, self.lr)
        if self.velocity is None:
            self.velocity = params.zeros_like()
        return sgd_step(params, grads, self.lr, self.momentum, self.velocity)


# --- block stochastic gradient --------------------------------------------


def constraint_subgrad(features, m):
    """Subgradient of ``max(0, <A, A> - m)`` with respect to ``features``.

    ``A`` is the double-centered distance matrix of the batch and ``<., .>``
    the plain entrywise sum of products.
    """
    features = check_batch(features, "features")
    d = pairwise_distances(features)
    a = double_center(d)
    if float(np.sum(a * a)) <= m:
        return np.zeros_like(features)
    # d<A,A>/dd = centering adjoint of 2A, and A is already centered.
    return distance_backward(features, d, 2.0 * a)


def constraint_penalty(features, m):
    a = double_center(pairwise_distances(features))
    return max(0.0, float(np.sum(a * a)) - m)


def dcor_pair_loss(fx, fy):
    """Default block objective: distance correlation of the two feature batches."""
    gx = dcor_value_grad(fx, fy, wrt="X")
    gy = dcor_value_grad(fx, fy, wrt="Y")
    return gx.value, gx.grad, gy.grad


@dataclass
class BSGConfig:
    """Settings for :func:`bsg_train`.

    With ``schedule="sqrt_T"`` both blocks use step ``eta / sqrt(T)``;
    ``"constant"`` uses ``eta`` directly. The penalty keeps ``<A, A>`` below
    ``constraint_bound``, which defaults to the batch size ``m``.
    """

    eta: float
    T: int
    m: int
    constraint_mode: str = "penalty"
    penalty_weight: float = 1.0
    schedule: str = "sqrt_T"
    trace_every: int = 1
    keep_iterates: bool = False
    constraint_bound: Optional[float] = None

    def __post_init__(self):
        if self.constraint_bound is None:
            self.constraint_bound = float(self.m)
        if not self.eta > 0:
            raise InvalidInputError("eta must be positive")
        if self.T < 1:
            raise InvalidInputError("T must be at least 1")
        if self.m < 2:
            raise InvalidInputError("batch size m must be at least 2")
        if self.constraint_mode not in ("penalty", "none"):
            raise InvalidInputError(f"unknown constraint_mode {self.constraint_mode!r}")
        if self.penalty_weight < 0:
            raise InvalidInputError("penalty_weight must be non-negative")
        if self.schedule not in ("sqrt_T", "constant"):
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")

    @property
    def step_size(self):
        return self.eta / np.sqrt(self.T) if self.schedule == "sqrt_T" else self.eta


@dataclass
class BSGTrace:
    steps: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm_x: list = field(default_factory=list)
    grad_norm_y: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    iterates_x: list = field(default_factory=list)
    iterates_y: list = field(default_factory=list)


@dataclass
class BSGResult:
    fx_avg: MLPParams
    fy_avg: MLPParams
    fx: MLPParams
    fy: MLPParams
    trace: BSGTrace


def _block_grad(params, cache, grad_feat, cfg):
    if cfg.constraint_mode == "penalty" and cfg.penalty_weight > 0:
        feats = cache_features(params, cache)
        grad_feat = grad_feat + cfg.penalty_weight * constraint_subgrad(feats, cfg.constraint_bound)
    return backward(params, cache, grad_features=grad_feat)


def cache_features(params, cache):
    i = params.feature_tap
    z = cache.pre[i]
    return z if i == params.n_layers - 1 else np.maximum(z, 0.0)


def _norm(g):
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in g.arrays())))


def bsg_train(fx, fy, stream: Iterable, cfg: BSGConfig, loss: Optional[Callable] = None):
    """Alternating block stochastic gradient on two networks.

    Each step draws ``(x_t, y_t)`` from ``stream``, updates ``fx`` from the
    gradient at the current pair, then updates ``fy`` from the gradient
    evaluated at the *new* ``fx``. ``loss(FX, FY)`` maps the two tap-feature
    batches to ``(value, dvalue/dFX, dvalue/dFY)`` and defaults to distance
    correlation.

    Returns the averages of the iterates 1..T together with the final
    iterates and a trace. Steps whose loss is degenerate leave the parameters
    unchanged and are listed in ``trace.skipped``.
    """
    loss = loss or dcor_pair_loss
    step = cfg.step_size
    trace = BSGTrace()
    sum_x = np.zeros_like(fx.to_vector())
    sum_y = np.zeros_like(fy.to_vector())
    it = iter(stream)
    for t in range(cfg.T):
        try:
            x_t, y_t = next(it)
        except StopIteration:
            raise InvalidInputError(f"stream exhausted after {t} of {cfg.T} steps") from None
        vx, vy = fx.to_vector(), fy.to_vector()
        sum_x += vx
        sum_y += vy
        if cfg.keep_iterates:
            trace.iterates_x.append(vx)
            trace.iterates_y.append(vy)
        try:
            _, feat_x, cache_x = forward(fx, x_t, return_cache=True)
            _, feat_y, cache_y = forward(fy, y_t, return_cache=True)
            value, g_fx, _ = loss(feat_x, feat_y)
            gx = _block_grad(fx, cache_x, g_fx, cfg)
            fx_next = sgd_step(fx, gx, step)
            _, feat_x, _ = forward(fx_next, x_t, return_cache=True)
            _, _, g_fy = loss(feat_x, feat_y)
            gy = _block_grad(fy, cache_y, g_fy, cfg)
            fy_next = sgd_step(fy, gy, step)
        except DegenerateError as exc:
            trace.skipped.append((t, str(exc)))
            continue
        if t % cfg.trace_every == 0:
            trace.steps.append(t)
            trace.objective.append(float(value))
            trace.grad_norm_x.append(_norm(gx))
            trace.grad_norm_y.append(_norm(gy))
        fx, fy = fx_next, fy_next
    return BSGResult(fx.from_vector(sum_x / cfg.T), fy.from_vector(sum_y / cfg.T), fx, fy, trace)


# --- adversarial attacks --------------------------------------------------


@dataclass
class AttackConfig:
    """L-inf attack settings. ``pgd_step`` defaults to ``epsilon / 10``."""

    kind: str
    epsilon: float
    pgd_iters: int = 40
    pgd_step: Optional[float] = None
    domain: Optional[tuple] = (0.0, 1.0)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("FGM", "PGD"):
            raise InvalidInputError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise InvalidInputError("epsilon must be non-negative")
        if self.pgd_iters < 1:
            raise InvalidInputError("pgd_iters must be at least 1")
        if self.pgd_step is None:
            self.pgd_step = self.epsilon / 10.0

    @property
    def label(self):
        return f"{self.kind}_eps{self.epsilon:g}"


def input_gradient(params, x, labels):
    """Gradient of the mean cross-entropy with respect to the inputs."""
    logits, _, cache = forward(params, x, return_cache=True)
    _, g = cross_entropy_grad(logits, labels)
    _, dx = backward(params, cache, grad_logits=g, input_grad=True)
    return dx


def _clip_domain(x, domain):
    return x if domain is None else np.clip(x, domain[0], domain[1])


def fgm_attack(model, x, labels, cfg):
    """Fast gradient sign attack: one step of size epsilon along sign(grad)."""
    if cfg.kind != "FGM":
        raise InvalidInputError("fgm_attack needs an FGM config")
    x = check_batch(x, "x")
    g = input_gradient(model, x, labels)
    return _clip_domain(x + cfg.epsilon * np.sign(g), cfg.domain)


def pgd_attack(model, x, labels, cfg):
    """Projected gradient attack without random start."""
    if cfg.kind != "PGD":
        raise InvalidInputError("pgd_attack needs a PGD config")
    x = check_batch(x, "x")
    lo, hi = x - cfg.epsilon, x + cfg.epsilon
    x_adv = x.copy()
    for _ in range(cfg.pgd_iters):
        g = input_gradient(model, x_adv, labels)
        x_adv = np.clip(x_adv + cfg.pgd_step * np.sign(g), lo, hi)
        x_adv = _clip_domain(x_adv, cfg.domain)
    return x_adv


def attack(model, x, labels, cfg):
    return fgm_attack(model, x, labels, cfg) if cfg.kind == "FGM" else pgd_attack(model, x, labels, cfg)
