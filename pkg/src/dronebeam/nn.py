"""Small deterministic neural toolkit in plain numpy.

Covers exactly what the models here need: a two-hidden-layer ReLU classifier,
a stacked GRU classifier with parallel softmax heads, a frozen Gaussian
embedding table, softmax cross-entropy, Adam, a step-decay schedule and a
central-difference gradient checker.  All randomness flows through explicit
numpy Generators, so identical seeds give identical training runs.

The GRU cell follows the usual gating equations

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_c x + U_c (r * h) + b_c)
    h' = (1 - z) * h + z * c

with the hidden state zeroed at the start of every sequence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _classifier_init(rng, shape):
    return rng.standard_normal(shape) * 0.01


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The max is subtracted before exponentiation so large logits cannot
    overflow.  The per-row gradient is softmax(logits) - onehot(label),
    scaled by 1/batch to match the mean loss.
    """
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise ValueError("labels must match the batch dimension")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels must index the logit columns")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(b), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, dlogits


class StepDecay:
    """Learning rate multiplied by factor at each decay epoch, boundary inclusive."""

    def __init__(self, base_lr, decay_epochs=(), factor=0.1):
        self.base_lr = float(base_lr)
        self.decay_epochs = tuple(decay_epochs)
        self.factor = float(factor)

    def at_epoch(self, epoch):
        drops = sum(1 for d in self.decay_epochs if epoch >= d)
        return self.base_lr * self.factor**drops


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class EmbeddingTable:
    """Frozen lookup of standard-normal vectors, one row per beam index."""

    def __init__(self, num_entries=32, dim=20, seed=0):
        rng = np.random.default_rng(seed)
        self.table = rng.standard_normal((num_entries, dim))
        self.table.flags.writeable = False

    def lookup(self, indices):
        return self.table[np.asarray(indices, dtype=int)]


class MlpClassifier:
    """ReLU MLP: logits = W2 relu(W1 relu(W0 x + b0) + b1) + b2."""

    def __init__(self, input_dim, hidden=(512, 512), classes=32, seed=0):
        rng = np.random.default_rng(seed)
        sizes = [input_dim, *hidden, classes]
        self.params = []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            W = _classifier_init(rng, (a, b)) if last else _uniform_init(rng, a, (a, b))
            self.params += [W, np.zeros(b)]
        self.input_dim = input_dim
        self.classes = classes

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {X.shape[1]}")
        W0, b0, W1, b1, W2, b2 = self.params
        h0 = np.maximum(X @ W0 + b0, 0.0)
        h1 = np.maximum(h0 @ W1 + b1, 0.0)
        logits = h1 @ W2 + b2
        return logits, (X, h0, h1)

    def backward(self, cache, dlogits):
        X, h0, h1 = cache
        W0, b0, W1, b1, W2, b2 = self.params
        dW2 = h1.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dh1 = (dlogits @ W2.T) * (h1 > 0)
        dW1 = h0.T @ dh1
        db1 = dh1.sum(axis=0)
        dh0 = (dh1 @ W1.T) * (h0 > 0)
        dW0 = X.T @ dh0
        db0 = dh0.sum(axis=0)
        return [dW0, db0, dW1, db1, dW2, db2]

    def predict_proba(self, X):
        logits, _ = self.forward(X)
        return softmax(logits)


class _GruLayer:
    """One GRU layer; gates are packed [z | r | c] along the last axis."""

    def __init__(self, rng, input_dim, hidden):
        self.hidden = hidden
        self.W = _uniform_init(rng, input_dim, (input_dim, 3 * hidden))
        self.U_zr = _uniform_init(rng, hidden, (hidden, 2 * hidden))
        self.U_c = _uniform_init(rng, hidden, (hidden, hidden))
        self.b = np.zeros(3 * hidden)

    @property
    def params(self):
        return [self.W, self.U_zr, self.U_c, self.b]

    def step(self, x, h):
        """One update h -> h' for a batch of inputs x [B, in], state h [B, H]."""
        H = self.hidden
        ax = x @ self.W + self.b
        ah = h @ self.U_zr
        z = expit(ax[:, :H] + ah[:, :H])
        r = expit(ax[:, H : 2 * H] + ah[:, H:])
        c = np.tanh(ax[:, 2 * H :] + (r * h) @ self.U_c)
        return (1.0 - z) * h + z * c

    def run(self, X):
        """Forward over a [B, T, in] tensor; returns outputs and step caches."""
        B, T, _ = X.shape
        H = self.hidden
        ax = X.reshape(B * T, -1) @ self.W
        ax = ax.reshape(B, T, 3 * H) + self.b
        h = np.zeros((B, H))
        outs = np.empty((B, T, H))
        caches = []
        for t in range(T):
            ah = h @ self.U_zr
            z = expit(ax[:, t, :H] + ah[:, :H])
            r = expit(ax[:, t, H : 2 * H] + ah[:, H:])
            rh = r * h
            c = np.tanh(ax[:, t, 2 * H :] + rh @ self.U_c)
            h_new = (1.0 - z) * h + z * c
            caches.append((h, z, r, rh, c))
            h = h_new
            outs[:, t] = h
        return outs, (X, caches)

    def backward(self, cache, dout):
        """BPTT given per-step output gradients dout [B, T, H]; returns grads."""
        X, caches = cache
        B, T, _ = X.shape
        H = self.hidden
        dax = np.empty((B, T, 3 * H))
        dU_zr = np.zeros_like(self.U_zr)
        dU_c = np.zeros_like(self.U_c)
        carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            h_prev, z, r, rh, c = caches[t]
            dh = carry + dout[:, t]
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            dac = dc * (1.0 - c * c)
            drh = dac @ self.U_c.T
            dU_c += rh.T @ dac
            dr = drh * h_prev
            dh_prev += drh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            dax[:, t, :H] = daz
            dax[:, t, H : 2 * H] = dar
            dax[:, t, 2 * H :] = dac
            dzr = np.concatenate([daz, dar], axis=1)
            dU_zr += h_prev.T @ dzr
            dh_prev += dzr @ self.U_zr.T
            carry = dh_prev
        flat = dax.reshape(B * T, 3 * H)
        dW = X.reshape(B * T, -1).T @ flat
        db = flat.sum(axis=0)
        dX = flat @ self.W.T
        return [dW, dU_zr, dU_c, db], dX.reshape(B, T, -1)


class GruClassifier:
    """Stacked GRU with dropout between layers and before the parallel heads.

    Each head reads the final hidden state of the top layer and scores every
    class; head i predicts the label i+1 steps ahead.
    """

    def __init__(self, input_dim, hidden=128, layers=2, classes=32, heads=3,
                 dropout=0.5, seed=0):
        rng = np.random.default_rng(seed)
        self.layers = []
        dim = input_dim
        for _ in range(layers):
            self.layers.append(_GruLayer(rng, dim, hidden))
            dim = hidden
        self.heads = [
            (_classifier_init(rng, (hidden, classes)), np.zeros(classes))
            for _ in range(heads)
        ]
        self.input_dim = input_dim
        self.hidden = hidden
        self.classes = classes
        self.dropout = float(dropout)

    @property
    def params(self):
        out = []
        for layer in self.layers:
            out += layer.params
        for W, b in self.heads:
            out += [W, b]
        return out

    def _masks(self, shapes, train, rng, fixed):
        if fixed is not None:
            return list(fixed)
        if not train or self.dropout == 0.0:
            return [None] * len(shapes)
        keep = 1.0 - self.dropout
        return [(rng.random(s) < keep) / keep for s in shapes]

    def forward(self, X, train=False, dropout_rng=None, fixed_masks=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.input_dim:
            raise ValueError(f"expected input of shape (B, T, {self.input_dim})")
        B, T, _ = X.shape
        shapes = [(B, T, self.hidden)] * (len(self.layers) - 1) + [(B, self.hidden)]
        masks = self._masks(shapes, train, dropout_rng, fixed_masks)
        layer_caches = []
        cur = X
        for i, layer in enumerate(self.layers):
            outs, cache = layer.run(cur)
            layer_caches.append(cache)
            if i < len(self.layers) - 1:
                cur = outs * masks[i] if masks[i] is not None else outs
            else:
                final = outs[:, -1]
        hd = final * masks[-1] if masks[-1] is not None else final
        logits = [hd @ W + b for W, b in self.heads]
        return logits, (layer_caches, masks, hd, (B, T))

    def backward(self, cache, dlogits_list):
        layer_caches, masks, hd, (B, T) = cache
        head_grads = []
        dhd = np.zeros_like(hd)
        for (W, b), dlog in zip(self.heads, dlogits_list):
            head_grads += [hd.T @ dlog, dlog.sum(axis=0)]
            dhd += dlog @ W.T
        dfinal = dhd * masks[-1] if masks[-1] is not None else dhd
        grads = []
        dout = np.zeros((B, T, self.hidden))
        dout[:, -1] = dfinal
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads, dX = self.layers[i].backward(layer_caches[i], dout)
            grads = layer_grads + grads
            if i > 0:
                dout = dX * masks[i - 1] if masks[i - 1] is not None else dX
        return grads + head_grads

    def predict_proba(self, X):
        logits, _ = self.forward(X, train=False)
        return [softmax(l) for l in logits]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    num_coords: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def grad_check(params, loss_fn, rng, num_coords=200, eps=1e-5, tolerance=1e-4,
               floor=1e-5):
    """Central-difference check of analytic gradients at sampled coordinates.

    loss_fn() must recompute (loss, grads) from the live parameter arrays and
    be deterministic.  Each sampled coordinate is perturbed by +-eps in place.

    The per-coordinate error is |analytic - numeric| / max(|analytic|,
    |numeric|, floor).  The floor matters: the difference quotient carries
    roundoff of order |loss| * 1e-11 / eps, so coordinates with gradients
    below ~1e-5 cannot be resolved relatively by any correct implementation
    and are held to an absolute standard instead.  A scaled-gradient fault
    still shows up near 1.0 at ordinary coordinates.
    """
    _, grads = loss_fn()
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    n = min(num_coords, total)
    picks = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)
    rels = np.empty(n)
    for i, flat_idx in enumerate(np.sort(picks)):
        pi = int(np.searchsorted(bounds, flat_idx, side="right"))
        off = int(flat_idx - (bounds[pi - 1] if pi > 0 else 0))
        param = params[pi]
        orig = param.flat[off]
        param.flat[off] = orig + eps
        lp = loss_fn()[0]
        param.flat[off] = orig - eps
        lm = loss_fn()[0]
        param.flat[off] = orig
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grads[pi].flat[off]
        diff = abs(numeric - analytic)
        if diff <= 1e-12:
            rels[i] = 0.0
        else:
            rels[i] = diff / max(abs(numeric), abs(analytic), floor)
    return GradCheckReport(
        max_rel_error=float(rels.max()),
        mean_rel_error=float(rels.mean()),
        num_coords=n,
        tolerance=tolerance,
    )
