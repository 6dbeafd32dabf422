"""Small differentiable models with exact loss/gradient/Hessian evaluation.

Two analytic testbeds (closed-form derivatives) and a multilayer perceptron
with polynomial activations, so the gradient field is an exact polynomial in
the parameters. Loss is mean squared error against one-hot targets:

    L(theta) = (1 / 2S) * sum_s || f(x_s; theta) - y_s ||^2

Hessian-vector products for the MLP use the exact forward-over-reverse
(Pearlmutter) recursion, not finite differences.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InputError, NumericOverflowError, ParseError

ANALYTIC_KINDS = ("diag_quadratic", "scalar_cubic")
MODEL_KINDS = ANALYTIC_KINDS + ("mlp",)
ACTIVATIONS = ("identity", "quadratic_poly")


@dataclass
class Dataset:
    """Feature matrix plus integer class labels; one-hot targets derived."""

    features: np.ndarray
    labels: np.ndarray
    one_hot: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise InputError("features must be a 2-d array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InputError(
                f"row mismatch: {self.features.shape[0]} feature rows vs "
                f"{self.labels.shape[0]} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise InputError("labels must be non-negative")
        classes = int(self.labels.max()) + 1 if self.labels.size else 0
        self.one_hot = np.zeros((self.labels.shape[0], classes))
        self.one_hot[np.arange(self.labels.shape[0]), self.labels] = 1.0

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_classes(self):
        return self.one_hot.shape[1]

    def subset(self, indices):
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class ModelSpec:
    """Which model to evaluate.

    kind: 'diag_quadratic' (L = 1/2 sum c_i theta_i^2),
          'scalar_cubic'   (L = c0 theta^2/2 + c1 theta^4/4),
          'mlp'            (dense layers, polynomial activation, MSE loss).
    layer_widths: input, hidden..., output widths (mlp only).
    activation: 'identity' or 'quadratic_poly' (sigma(x) = x + alpha x^2),
        applied to hidden layers; the output layer is linear.
    coefficients: analytic-testbed coefficients c.
    """

    kind: str
    layer_widths: tuple = ()
    activation: str = "identity"
    alpha: float = 0.1
    loss_kind: str = "mse"
    coefficients: tuple = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.loss_kind != "mse":
            raise InputError(f"unsupported loss {self.loss_kind!r}")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.kind == "mlp":
            if self.activation not in ACTIVATIONS:
                raise InputError(f"unknown activation {self.activation!r}")
            if len(self.layer_widths) < 2:
                raise InputError("mlp needs at least input and output widths")
            if any(w <= 0 for w in self.layer_widths):
                raise InputError("layer widths must be positive")
        elif self.kind == "diag_quadratic":
            if not self.coefficients:
                raise InputError("diag_quadratic needs coefficients")
        elif self.kind == "scalar_cubic":
            if not self.coefficients:
                object.__setattr__(self, "coefficients", (1.0, 1.0))
            if len(self.coefficients) != 2:
                raise InputError("scalar_cubic takes two coefficients (c0, c1)")

    @property
    def n(self):
        if self.kind == "diag_quadratic":
            return len(self.coefficients)
        if self.kind == "scalar_cubic":
            return 1
        w = self.layer_widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))

    def grad_degree(self):
        """Polynomial degree of grad L in theta."""
        if self.kind == "diag_quadratic":
            return 1
        if self.kind == "scalar_cubic":
            return 3
        p = 2 if (self.activation == "quadratic_poly" and self.alpha != 0.0) else 1
        deg = 1  # first pre-activation
        for _ in self.layer_widths[2:]:
            deg = p * deg + 1
        return 2 * deg - 1

    def split(self, theta):
        """Unpack a flat parameter vector into [(W, b), ...] views."""
        w = self.layer_widths
        out, pos = [], 0
        for i in range(len(w) - 1):
            d_in, d_out = w[i], w[i + 1]
            W = theta[pos:pos + d_in * d_out].reshape(d_in, d_out)
            pos += d_in * d_out
            b = theta[pos:pos + d_out]
            pos += d_out
            out.append((W, b))
        return out


@dataclass
class ParamVector:
    """Flat trainable weights; `mask` marks coordinates kept by pruning
    (masked-out entries must be exactly zero)."""

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).ravel()
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool).ravel()
            if self.mask.shape != self.values.shape:
                raise InputError("mask length does not match values")
            if np.any(self.values[~self.mask] != 0.0):
                raise InputError("masked-out entries must be exactly zero")

    @property
    def n(self):
        return self.values.size

    def free_indices(self):
        if self.mask is None:
            return np.arange(self.n)
        return np.flatnonzero(self.mask)


def _check_inputs(spec, theta, data):
    if theta.size != spec.n:
        raise InputError(f"parameter length {theta.size} does not match model n={spec.n}")
    if spec.kind == "mlp":
        if data is None or data.n_samples == 0:
            raise InputError("mlp evaluation needs a nonempty dataset")
        if data.features.shape[1] != spec.layer_widths[0]:
            raise InputError(
                f"dataset has {data.features.shape[1]} features, model expects "
                f"{spec.layer_widths[0]}"
            )
        if data.n_classes > spec.layer_widths[-1]:
            raise InputError("more classes than output units")


def _act(spec, A):
    if spec.activation == "quadratic_poly":
        return A + spec.alpha * A * A
    return A


def _act_d1(spec, A):
    if spec.activation == "quadratic_poly":
        return 1.0 + 2.0 * spec.alpha * A
    return np.ones_like(A)


def _mlp_forward(spec, theta, X):
    """Forward pass; returns pre-activations and activations per layer."""
    layers = spec.split(theta)
    A_list, H_list = [], [X]
    H = X
    for li, (W, b) in enumerate(layers):
        A = H @ W + b
        A_list.append(A)
        H = _act(spec, A) if li < len(layers) - 1 else A
        H_list.append(H)
    return A_list, H_list


def _loss_value(spec, theta, data):
    if spec.kind == "diag_quadratic":
        c = np.asarray(spec.coefficients)
        return 0.5 * float(np.dot(c, theta * theta))
    if spec.kind == "scalar_cubic":
        c0, c1 = spec.coefficients
        t = theta[0]
        return 0.5 * c0 * t * t + 0.25 * c1 * t ** 4
    _, H_list = _mlp_forward(spec, theta, data.features)
    R = H_list[-1] - data.one_hot
    return 0.5 * float(np.sum(R * R)) / data.n_samples


def _grad_values(spec, theta, data):
    if spec.kind == "diag_quadratic":
        return np.asarray(spec.coefficients) * theta
    if spec.kind == "scalar_cubic":
        c0, c1 = spec.coefficients
        t = theta[0]
        return np.array([c0 * t + c1 * t ** 3])
    layers = spec.split(theta)
    A_list, H_list = _mlp_forward(spec, theta, data.features)
    S = data.n_samples
    G = (H_list[-1] - data.one_hot) / S
    grads = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW = H_list[li].T @ G
        gb = G.sum(axis=0)
        grads[li] = (gW, gb)
        if li > 0:
            G = (G @ W.T) * _act_d1(spec, A_list[li - 1])
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def _hvp_values(spec, theta, data, v):
    if spec.kind == "diag_quadratic":
        return np.asarray(spec.coefficients) * v
    if spec.kind == "scalar_cubic":
        c0, c1 = spec.coefficients
        t = theta[0]
        return np.array([(c0 + 3.0 * c1 * t * t) * v[0]])
    # Pearlmutter forward-over-reverse: exact H @ v for the MLP.
    layers = spec.split(theta)
    dirs = spec.split(v)
    A_list, H_list = _mlp_forward(spec, theta, data.features)
    S = data.n_samples
    n_layers = len(layers)

    RA_list, RH_list = [], [np.zeros_like(data.features)]
    RH = RH_list[0]
    for li, ((W, _), (V, c)) in enumerate(zip(layers, dirs)):
        RA = RH @ W + H_list[li] @ V + c
        RA_list.append(RA)
        if li < n_layers - 1:
            RH = _act_d1(spec, A_list[li]) * RA
        else:
            RH = RA
        RH_list.append(RH)

    G = (H_list[-1] - data.one_hot) / S
    RG = RH_list[-1] / S
    out = [None] * n_layers
    for li in range(n_layers - 1, -1, -1):
        W, _ = layers[li]
        V, _ = dirs[li]
        rW = RH_list[li].T @ G + H_list[li].T @ RG
        rb = RG.sum(axis=0)
        out[li] = (rW, rb)
        if li > 0:
            sprime = _act_d1(spec, A_list[li - 1])
            back = G @ W.T
            RG = (RG @ W.T + G @ V.T) * sprime
            if spec.activation == "quadratic_poly":
                RG = RG + back * (2.0 * spec.alpha * RA_list[li - 1])
            G = back * sprime
    return np.concatenate([np.concatenate([rW.ravel(), rb]) for rW, rb in out])


def loss(spec, params, data=None):
    """Evaluate L(theta); raises NumericOverflowError on non-finite values."""
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
    _check_inputs(spec, theta, data)
    value = _loss_value(spec, theta, data)
    if not np.isfinite(value):
        raise NumericOverflowError("loss evaluated to a non-finite value")
    return value


def grad(spec, params, data=None):
    """Exact gradient of the loss (closed form or backpropagation)."""
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
    _check_inputs(spec, theta, data)
    g = _grad_values(spec, theta, data)
    if not np.all(np.isfinite(g)):
        raise NumericOverflowError("gradient evaluated to a non-finite value")
    return g


def hvp(spec, params, data, v):
    """Exact Hessian-vector product H(theta) @ v."""
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != spec.n:
        raise InputError(f"direction length {v.size} does not match model n={spec.n}")
    _check_inputs(spec, theta, data)
    return _hvp_values(spec, theta, data, v)


def hessian(spec, params, data=None, dense_limit=4096):
    """Dense Hessian, assembled column-by-column from exact products.

    Rejected above `dense_limit` parameters; use hvp / a Lanczos estimate
    instead at that scale.
    """
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
    _check_inputs(spec, theta, data)
    n = theta.size
    if n > dense_limit:
        raise InputError(
            f"dense Hessian rejected for n={n} > limit {dense_limit}; use hvp"
        )
    if spec.kind == "diag_quadratic":
        return np.diag(np.asarray(spec.coefficients, dtype=float))
    if spec.kind == "scalar_cubic":
        c0, c1 = spec.coefficients
        return np.array([[c0 + 3.0 * c1 * theta[0] ** 2]])
    H = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        H[:, j] = _hvp_values(spec, theta, data, e)
        e[j] = 0.0
    return H


def sgd_reference(spec, params0, data=None, eta=0.1, steps=1, batch=None,
                  noise_seed=None, noise_scale=0.0, divergence_bound=1e8,
                  raise_on_divergence=True):
    """Classical (stochastic) gradient-descent reference trajectory.

    theta(t+1) = theta(t) - eta * grad L(theta(t)) [+ noise], with the
    gradient taken over the full set or a seeded minibatch of `batch`
    samples per step. Masked coordinates stay exactly zero. Returns an
    array of shape (steps+1, n); with raise_on_divergence=False a diverged
    run returns the trajectory up to the last in-bounds step instead.
    """
    if eta < 0:
        raise InputError("eta must be >= 0")
    pv = params0 if isinstance(params0, ParamVector) else ParamVector(np.asarray(params0, float))
    theta = pv.values.copy()
    _check_inputs(spec, theta, data)
    mask = pv.mask
    stochastic = batch is not None and data is not None and batch < data.n_samples
    if batch is not None and data is not None and batch > data.n_samples:
        raise InputError(f"batch {batch} exceeds {data.n_samples} samples")
    rng = None
    if stochastic or noise_scale:
        rng = np.random.default_rng(noise_seed)
    traj = np.empty((steps + 1, theta.size))
    traj[0] = theta
    for t in range(1, steps + 1):
        d = data
        if stochastic:
            idx = rng.choice(data.n_samples, size=batch, replace=False)
            d = data.subset(idx)
        g = _grad_values(spec, theta, d)
        theta = theta - eta * g
        if noise_scale:
            theta = theta + noise_scale * rng.standard_normal(theta.size)
        if mask is not None:
            theta[~mask] = 0.0
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > divergence_bound:
            if raise_on_divergence:
                raise DivergenceError(f"trajectory diverged at step {t}", step=t)
            return traj[:t]
        traj[t] = theta
    return traj


def predict(spec, params, data):
    if spec.kind != "mlp":
        raise InputError("predict is only defined for mlp models")
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, float)
    _, H_list = _mlp_forward(spec, theta, data.features)
    return np.argmax(H_list[-1], axis=1)


def accuracy(spec, params, data):
    """Fraction of samples whose argmax output matches the label."""
    return float(np.mean(predict(spec, params, data) == data.labels))


def load_iris(path):
    """Load an Iris-style CSV: four float columns then a class-name string.

    A header row is auto-detected (first row non-numeric). Features are
    standardized to zero mean / unit variance per column; labels are class
    names mapped to 0..K-1 in sorted order.
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except (ValueError, IndexError):
                    continue  # header
            if len(row) != 5:
                raise ParseError(f"line {lineno}: expected 5 columns, got {len(row)}")
            try:
                feats = [float(c) for c in row[:4]]
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric feature value")
            rows.append((feats, row[4].strip()))
    if not rows:
        raise ParseError("no data rows found")
    features = np.array([r[0] for r in rows])
    names = sorted({r[1] for r in rows})
    name_to_id = {name: i for i, name in enumerate(names)}
    labels = np.array([name_to_id[r[1]] for r in rows])
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd[sd == 0] = 1.0
    return Dataset((features - mu) / sd, labels)


def init_params(spec, seed):
    """Seeded Gaussian initialization; MLP weights scaled by 1/sqrt(fan_in),
    biases zero. Analytic testbeds get standard normal entries."""
    rng = np.random.default_rng(seed)
    if spec.kind != "mlp":
        return ParamVector(rng.standard_normal(spec.n))
    w = spec.layer_widths
    parts = []
    for i in range(len(w) - 1):
        d_in, d_out = w[i], w[i + 1]
        parts.append(rng.standard_normal(d_in * d_out) / np.sqrt(d_in))
        parts.append(np.zeros(d_out))
    return ParamVector(np.concatenate(parts))
