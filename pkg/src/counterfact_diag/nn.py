"""Fixed-topology feed-forward networks with hand-written backprop and Adam.

Three shapes are supported:

* ``classifier`` -- softmax head over classes (bootstrap diagnosers, SL/CD).
* ``multi_class_classifier`` -- independent per-output Bernoulli logits
  (propensity network, generative sampler).
* ``dueling_q`` -- shared trunk with a scalar value head and an advantage head.

Hidden layers use leaky ReLU with negative slope 0.1; output layers are linear.

A model may be *stacked*: every parameter then carries a leading axis of
size ``stack`` and inputs are shaped ``(stack, batch, in)``. This runs an
ensemble of independently initialised networks through one set of matmuls;
Adam is elementwise, so a stacked update equals independent updates.
"""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

LEAK = 0.1
TOPOLOGIES = ("classifier", "multi_class_classifier", "dueling_q")
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def leaky_relu(z):
    # valid because 0 < LEAK < 1
    return np.maximum(z, LEAK * z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(z):
    top = z.max(axis=-1)
    return top + np.log(np.exp(z - top[..., None]).sum(axis=-1))


def _glorot(rng, fan_in, fan_out, stack):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if stack is None else (stack, fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


class Mlp:
    """Parameters, Adam moments and forward/backward passes for one network.

    ``params`` is a flat list ``[W1, b1, W2, b2, ...]``. For ``dueling_q`` the
    last four entries are the value head ``(Wv, bv)`` followed by the
    advantage head ``(Wa, ba)``, both reading the last hidden layer.
    """

    def __init__(self, topology, n_in, n_out, hidden, params, stack=None, seed=None):
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        self.topology = topology
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.hidden = tuple(int(h) for h in hidden)
        self.stack = stack
        self.seed = seed
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self._check_shapes()

    @classmethod
    def init(cls, topology, n_in, n_out, rng=None, hidden=(64, 64), stack=None, seed=None):
        if rng is None:
            rng = np.random.default_rng(seed)
        dims = [n_in, *hidden]
        params = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            params += [_glorot(rng, fan_in, fan_out, stack), _zero_bias(fan_out, stack)]
        last = dims[-1]
        if topology == "dueling_q":
            params += [_glorot(rng, last, 1, stack), _zero_bias(1, stack)]
        params += [_glorot(rng, last, n_out, stack), _zero_bias(n_out, stack)]
        return cls(topology, n_in, n_out, hidden, params, stack=stack, seed=seed)

    def _check_shapes(self):
        dims = [self.n_in, *self.hidden]
        expected = []
        for a, b in zip(dims[:-1], dims[1:]):
            expected += [(a, b), (1, b) if self.stack else (b,)]
        if self.topology == "dueling_q":
            expected += [(dims[-1], 1), (1, 1) if self.stack else (1,)]
        expected += [(dims[-1], self.n_out), (1, self.n_out) if self.stack else (self.n_out,)]
        if len(expected) != len(self.params):
            raise ValueError("parameter count does not match topology")
        for p, shape in zip(self.params, expected):
            full = shape if self.stack is None else (self.stack, *shape)
            if p.shape != full:
                raise ValueError(f"parameter shape {p.shape} != {full}")

    @property
    def n_hidden_layers(self):
        return len(self.hidden)

    def copy(self):
        return copy.deepcopy(self)

    # -- forward / backward -------------------------------------------------

    def forward(self, x):
        """Return ``(output, cache)``; output is logits or Q values."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input width {x.shape[-1]} != {self.n_in}")
        pre, acts = [], [x]
        h = x
        for i in range(self.n_hidden_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = leaky_relu(z)
            pre.append(z)
            acts.append(h)
        k = 2 * self.n_hidden_layers
        if self.topology == "dueling_q":
            value = h @ self.params[k] + self.params[k + 1]
            adv = h @ self.params[k + 2] + self.params[k + 3]
            out = value + adv
        else:
            out = h @ self.params[k] + self.params[k + 1]
        cache = (pre, acts, single)
        return (out[0] if single else out), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def hidden_output(self, x):
        """Activation of the last hidden layer (second-to-last FC output)."""
        _, (_, acts, single) = self.forward(x)
        return acts[-1][0] if single else acts[-1]

    def value_advantage(self, x):
        if self.topology != "dueling_q":
            raise ValueError("value_advantage needs a dueling_q model")
        h = np.asarray(self.hidden_output(x))
        k = 2 * self.n_hidden_layers
        value = h @ self.params[k] + self.params[k + 1]
        adv = h @ self.params[k + 2] + self.params[k + 3]
        return value, adv

    def backward(self, cache, dout):
        """Gradients of a scalar loss w.r.t. every parameter given dLoss/dOutput."""
        pre, acts, single = cache
        dout = np.asarray(dout, dtype=np.float64)
        if single:
            dout = dout[None, :]
        grads = [None] * len(self.params)
        h = acts[-1]
        hT = np.swapaxes(h, -1, -2)
        k = 2 * self.n_hidden_layers
        if self.topology == "dueling_q":
            dvalue = dout.sum(axis=-1, keepdims=True)
            grads[k] = hT @ dvalue
            grads[k + 1] = dvalue.sum(axis=-2).reshape(self.params[k + 1].shape)
            grads[k + 2] = hT @ dout
            grads[k + 3] = dout.sum(axis=-2).reshape(self.params[k + 3].shape)
            dh = dvalue @ np.swapaxes(self.params[k], -1, -2) + dout @ np.swapaxes(self.params[k + 2], -1, -2)
        else:
            grads[k] = hT @ dout
            grads[k + 1] = dout.sum(axis=-2).reshape(self.params[k + 1].shape)
            dh = dout @ np.swapaxes(self.params[k], -1, -2)
        for i in reversed(range(self.n_hidden_layers)):
            dz = np.where(pre[i] > 0, dh, LEAK * dh)
            grads[2 * i] = np.swapaxes(acts[i], -1, -2) @ dz
            grads[2 * i + 1] = dz.sum(axis=-2).reshape(self.params[2 * i + 1].shape)
            if i:
                dh = dz @ np.swapaxes(self.params[2 * i], -1, -2)
        return grads

    # -- persistence --------------------------------------------------------

    def flat_params(self):
        return np.concatenate([p.ravel() for p in self.params])

    def save(self, path):
        path = Path(path)
        np.savez(
            path,
            topology=self.topology,
            dims=np.array([self.n_in, self.n_out, -1 if self.stack is None else self.stack]),
            hidden=np.array(self.hidden),
            flat=self.flat_params(),
            adam_m=np.concatenate([p.ravel() for p in self.m]),
            adam_v=np.concatenate([p.ravel() for p in self.v]),
            adam_t=np.array(self.t),
            seed=np.array(-1 if self.seed is None else self.seed),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            n_in, n_out, stack = (int(v) for v in z["dims"])
            stack = None if stack < 0 else stack
            seed = int(z["seed"])
            model = cls.init(str(z["topology"]), n_in, n_out, np.random.default_rng(0),
                             hidden=tuple(int(h) for h in z["hidden"]), stack=stack,
                             seed=None if seed < 0 else seed)
            model.params = _unflatten(z["flat"], model.params)
            model.m = _unflatten(z["adam_m"], model.m)
            model.v = _unflatten(z["adam_v"], model.v)
            model.t = int(z["adam_t"])
        return model


def _zero_bias(width, stack):
    return np.zeros(width) if stack is None else np.zeros((stack, 1, width))


def _unflatten(flat, like):
    out, i = [], 0
    for p in like:
        out.append(flat[i:i + p.size].reshape(p.shape).copy())
        i += p.size
    if i != flat.size:
        raise ValueError("flat parameter array has the wrong length")
    return out


# -- losses -------------------------------------------------------------------

def masked_bce_loss(logits, targets, valid):
    """Mean binary cross-entropy over entries where ``valid`` is nonzero.

    Returns ``(loss, dloss/dlogits)``; the gradient is zero on invalid entries.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    valid = np.asarray(valid, dtype=np.float64)
    if logits.shape != targets.shape or logits.shape != valid.shape:
        raise ValueError("logits, targets and mask must share a shape")
    count = valid.sum()
    if count == 0:
        raise ValueError("no valid entries in mask")
    per_entry = np.logaddexp(0.0, logits) - targets * logits
    loss = float((per_entry * valid).sum() / count)
    grad = (sigmoid(logits) - targets) * valid / count
    return loss, grad


def softmax_ce_loss(logits, classes):
    """Cross-entropy of softmax(logits) against integer class labels.

    A 1-D ``logits`` with a scalar class gives the plain per-example loss.
    For ``(..., batch, m)`` logits the loss is the batch mean, summed over any
    leading stack axes so that stacked networks receive independent gradients.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        cls = int(classes)
        if not 0 <= cls < logits.shape[0]:
            raise ValueError("class index out of range")
        probs = softmax(logits)
        onehot = np.zeros_like(probs)
        onehot[cls] = 1.0
        loss = float(logsumexp(logits) - logits[cls])
        return loss, probs - onehot
    classes = np.asarray(classes, dtype=np.int64)
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, classes[..., None], 1.0, axis=-1)
    lse = logsumexp(logits)
    picked = np.take_along_axis(logits, classes[..., None], axis=-1)[..., 0]
    batch = logits.shape[-2]
    loss = float((lse - picked).sum() / batch)
    return loss, (probs - onehot) / batch


# -- optimiser ----------------------------------------------------------------

def adam_step(model, grads, lr):
    """One in-place Adam update (beta1=0.9, beta2=0.999, eps=1e-8)."""
    if len(grads) != len(model.params):
        raise ValueError("gradient list does not match parameters")
    for g, p in zip(grads, model.params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    model.t += 1
    c1 = 1.0 - BETA1 ** model.t
    c2 = 1.0 - BETA2 ** model.t
    for p, g, m, v in zip(model.params, grads, model.m, model.v):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += ADAM_EPS
        p -= (lr / c1) * m / denom
    return model


def dueling_q(model, x):
    if model.topology != "dueling_q":
        raise ValueError("dueling_q needs a dueling_q model")
    return model(x)
