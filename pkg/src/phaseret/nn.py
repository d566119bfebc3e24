"""Minimal trainable dense-network stack with hand-written gradients.

Layers keep their parameters and accumulated gradients in plain dicts, the
network is an ordered layer list, and reverse-mode differentiation is spelled
out per layer.  A hidden block is dense -> batchnorm -> ReLU -> dropout; the
output block is dense -> sigmoid, so predictions always land in (0, 1).

Training arithmetic defaults to float32; gradient checking builds float64
networks and compares against central finite differences.
"""

import numpy as np

MSE = "mse"
MAE = "mae"
LOSS_KINDS = (MSE, MAE)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    """Base class: parameterless layers only need forward/backward."""

    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train, rng=None, update_stats=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a matching "
                "train-mode forward (stale or missing cache)"
            )
        cache, self._cache = self._cache, None
        return cache


class Dense(Layer):
    """Affine map x @ W + b.

    Weights start uniform with scale sqrt(6 / fan_in) when the layer feeds a
    ReLU, and sqrt(6 / (fan_in + fan_out)) for the sigmoid output layer.
    A dense layer that feeds a batchnorm is built without a bias: the mean
    subtraction cancels it exactly, leaving a dead parameter.
    """

    def __init__(self, d_in, d_out, rng, output_layer=False, bias=True, dtype=np.float32):
        super().__init__()
        fan = d_in + d_out if output_layer else d_in
        scale = np.sqrt(6.0 / fan)
        self.params = {
            "weight": rng.uniform(-scale, scale, size=(d_in, d_out)).astype(dtype)
        }
        if bias:
            self.params["bias"] = np.zeros(d_out, dtype=dtype)
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x, train, rng=None, update_stats=True):
        if x.shape[1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got {x.shape[1]}")
        if train:
            self._cache = x
        out = x @ self.params["weight"]
        if "bias" in self.params:
            out += self.params["bias"]
        return out

    def backward(self, dout):
        x = self._take_cache()
        self.grads["weight"] = x.T @ dout
        if "bias" in self.params:
            self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


class BatchNorm(Layer):
    """Per-feature normalization; batch statistics in train mode, running
    statistics at inference.  Running stats update as
    ``r <- (1 - momentum) * r + momentum * batch``."""

    def __init__(self, dim, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.params = {
            "gamma": np.ones(dim, dtype=dtype),
            "beta": np.zeros(dim, dtype=dtype),
        }
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, train, rng=None, update_stats=True):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            if update_stats:
                m = self.momentum
                self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(
                    self.running_mean.dtype
                )
                self.running_var = ((1 - m) * self.running_var + m * var).astype(
                    self.running_var.dtype
                )
            self._cache = (xhat, inv_std)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv_std = self._take_cache()
        n = dout.shape[0]
        self.grads["gamma"] = (dout * xhat).sum(axis=0)
        self.grads["beta"] = dout.sum(axis=0)
        dxhat = dout * self.params["gamma"]
        return (
            inv_std
            / n
            * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        )


class ReLU(Layer):
    def forward(self, x, train, rng=None, update_stats=True):
        mask = x > 0
        if train:
            self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) so inference
    needs no rescaling.  Train-mode forward requires an rng when rate > 0."""

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train, rng=None, update_stats=True):
        if not train or self.rate == 0.0:
            if train:
                self._cache = 1.0
            return x
        if rng is None:
            raise ValueError("train-mode forward through dropout needs an rng")
        scale = 1.0 / (1.0 - self.rate)
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) * x.dtype.type(scale)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Sigmoid(Layer):
    def forward(self, x, train, rng=None, update_stats=True):
        y = _sigmoid(x)
        if train:
            self._cache = y
        return y

    def backward(self, dout):
        y = self._take_cache()
        return dout * y * (1.0 - y)


class DenseNet:
    """Ordered layer chain with cached-intermediate backprop.

    ``forward(x, train=True, rng=...)`` caches what ``backward`` needs; a
    backward call consumes those caches, so calling it twice (or after an
    inference forward) raises.
    """

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None, update_stats=True):
        out = x
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng, update_stats=update_stats)
        return out

    def backward(self, grad_output):
        """Backpropagate, filling every layer's ``grads``; returns the
        gradient with respect to the network input."""
        grad = grad_output
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def param_items(self):
        """Stable (key, array) ordering used by the optimizer and
        checkpointing; keys look like ``"3.weight"``."""
        items = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                items.append((f"{i}.{name}", layer.params[name]))
        return items

    def grad_items(self):
        items = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                items.append((f"{i}.{name}", layer.grads[name]))
        return items

    def state_items(self):
        """Non-trainable arrays that belong in a checkpoint."""
        items = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                items.append((f"{i}.running_mean", layer.running_mean))
                items.append((f"{i}.running_var", layer.running_var))
        return items


def make_mlp(d_in, width, d_out, hidden_layers=3, dropout_rate=0.2, rng=None, dtype=np.float32):
    """Stack ``hidden_layers`` hidden blocks plus the sigmoid output block."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    layers = []
    prev = d_in
    for _ in range(hidden_layers):
        layers.append(Dense(prev, width, rng, bias=False, dtype=dtype))
        layers.append(BatchNorm(width, dtype=dtype))
        layers.append(ReLU())
        layers.append(Dropout(dropout_rate))
        prev = width
    layers.append(Dense(prev, d_out, rng, output_layer=True, dtype=dtype))
    layers.append(Sigmoid())
    return DenseNet(layers)


def loss_and_grad(kind, pred, target):
    """Scalar loss and its gradient with respect to ``pred``.

    Both losses are normalized by batch size times feature count.  The MAE
    subgradient at exact ties is 0.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    scale = 1.0 / pred.size
    if kind == MSE:
        return float((diff * diff).sum() * scale), (2.0 * scale) * diff
    return float(np.abs(diff).sum() * scale), np.sign(diff) * scale


class AdamState:
    """Bias-corrected Adam over a network's parameter items.

    Moment buffers are keyed like ``param_items`` and created lazily with the
    parameter's dtype; ``t`` counts completed steps.
    """

    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, param_items, grad_items):
        """Update parameters in place from aligned (key, array) lists."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**self.t
        correction2 = 1.0 - b2**self.t
        for (key, p), (gkey, g) in zip(param_items, grad_items):
            if key != gkey:
                raise ValueError(f"misaligned params/grads: {key} vs {gkey}")
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {key}")
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m = self.m[key]
            v = self.v[key]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            mhat = m / correction1
            vhat = v / correction2
            p -= (self.learning_rate * mhat / (np.sqrt(vhat) + self.epsilon)).astype(
                p.dtype
            )


def adam_step(net, state):
    """One optimizer step over every parameter of ``net``."""
    state.step(net.param_items(), net.grad_items())


def gradient_check(net, x, target, loss_kind, h=1e-5, dropout_seed=0):
    """Max relative error between backprop and central finite differences.

    The same dropout stream is replayed for every forward, and batchnorm
    running statistics are frozen, so the loss is a deterministic function of
    the parameters.  Relative error per entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """

    def run():
        return net.forward(
            x, train=True, rng=np.random.default_rng(dropout_seed), update_stats=False
        )

    loss, grad = loss_and_grad(loss_kind, run(), target)
    net.backward(grad)
    analytic = {key: g.copy() for key, g in net.grad_items()}

    worst = 0.0
    for key, param in net.param_items():
        flat = param.reshape(-1)
        a_flat = analytic[key].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus, _ = loss_and_grad(loss_kind, run(), target)
            flat[idx] = orig - h
            minus, _ = loss_and_grad(loss_kind, run(), target)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            denom = max(abs(a_flat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[idx] - numeric) / denom)
    return worst
