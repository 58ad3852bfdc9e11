"""Minimal differentiable layer engine on numpy arrays.

Activations flow between layers as plain float64 ndarrays; learnable state
lives in :class:`Tensor` objects (a data array plus a same-shape gradient
slot). Every layer implements ``forward(x, train)`` and ``backward(dout)``,
where backward consumes the upstream gradient, accumulates into its
parameters' ``.grad`` and returns the gradient with respect to its input.
``out_shape`` propagates shapes without allocating activations, so deep
stacks can be shape-checked symbolically.

Layers cache what backward needs during forward; a second backward without
an intervening forward raises. There is no graph tracing: containers call
their children in a fixed order, which keeps evaluation deterministic and
bitwise reproducible for a fixed seed.

Batch normalization follows the mini-batch recipe exactly: biased variance
(divisor m), per-channel statistics over batch and spatial axes in train
mode, running statistics in eval mode, with gamma/beta learned like any
other parameter. Adam uses the canonical constants (0.9, 0.999, 1e-8) with
bias correction; L2 regularization is added to the gradient before the
moment updates (coupled weight decay).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import (
    BatchTooSmall,
    InvalidLabel,
    NoForwardCache,
    ShapeMismatch,
)


class Tensor:
    """Learnable array with a gradient slot of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=np.float64):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor{self.data.shape}"


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


class Layer:
    """Base interface; stateless layers only override forward/backward."""

    def params(self) -> list[Tensor]:
        return []

    def named_params(self, prefix: str = ""):
        return []

    def named_buffers(self, prefix: str = ""):
        """Non-learnable state that checkpoints must carry (e.g. BN stats)."""
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


class Conv2d(Layer):
    """Cross-correlation (no kernel flip), zero padding, no bias.

    Input (N, C, H, W), kernels (K, C, kh, kw), output (N, K, H', W') with
    H' = (H + 2*ph - kh) // sh + 1 and likewise for W'.
    """

    def __init__(self, weight: np.ndarray, stride=1, padding=0):
        w = np.asarray(weight, dtype=np.float64)
        if w.ndim != 4:
            raise ShapeMismatch(f"kernels must be 4-D (K,C,kh,kw), got {w.shape}")
        self.weight = Tensor(w)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self._cache = None

    def params(self):
        return [self.weight]

    def named_params(self, prefix=""):
        return [(prefix + "weight", self.weight)]

    def out_shape(self, shape):
        n, c, h, w = shape
        k, kc, kh, kw = self.weight.shape
        if c != kc:
            raise ShapeMismatch(f"input has {c} channels, kernels expect {kc}")
        sh, sw = self.stride
        ph, pw = self.padding
        if h + 2 * ph < kh or w + 2 * pw < kw:
            raise ShapeMismatch(
                f"spatial dims {(h, w)} too small for kernel "
                f"{(kh, kw)} with padding {(ph, pw)}")
        return (n, k, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)

    def forward(self, x, train=False):
        n, k, out_h, out_w = self.out_shape(x.shape)
        _, c, kh, kw = self.weight.shape
        sh, sw = self.stride
        ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) \
            else np.ascontiguousarray(x)
        sn, sc, srow, scol = xp.strides
        windows = as_strided(
            xp, (n, out_h, out_w, c, kh, kw),
            (sn, srow * sh, scol * sw, sc, srow, scol), writeable=False)
        # One im2col gather, then a single GEMM in the input's dtype.
        cols = windows.reshape(n * out_h * out_w, c * kh * kw)
        w2d = self.weight.data.reshape(k, -1).astype(cols.dtype, copy=False)
        out = cols @ w2d.T
        self._cache = (cols, x.shape, xp.shape, out_h, out_w)
        return np.ascontiguousarray(
            out.reshape(n, out_h, out_w, k).transpose(0, 3, 1, 2))

    def backward(self, dout):
        if self._cache is None:
            raise NoForwardCache("Conv2d.backward before forward")
        cols, x_shape, xp_shape, out_h, out_w = self._cache
        self._cache = None
        n = x_shape[0]
        k, c, kh, kw = self.weight.shape
        sh, sw = self.stride
        ph, pw = self.padding
        dmat = np.ascontiguousarray(
            dout.transpose(0, 2, 3, 1)).reshape(n * out_h * out_w, k)
        self.weight.grad += (dmat.T @ cols).reshape(self.weight.shape)
        w2d = self.weight.data.reshape(k, -1).astype(dmat.dtype, copy=False)
        dcols = dmat @ w2d  # (N*H'*W', C*kh*kw)
        # (N, C, kh, kw, H', W') so each kernel tap is a contiguous plane.
        dtap = np.ascontiguousarray(
            dcols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2))
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw] += \
                    dtap[:, :, i, j]
        if ph or pw:
            dxp = dxp[:, :, ph:ph + x_shape[2], pw:pw + x_shape[3]]
        return dxp


class BatchNorm(Layer):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs.

    Train mode normalizes with the batch mean and biased variance
    (divisor m = N or N*H*W) and folds them into the running statistics;
    eval mode normalizes with the running statistics. Train mode requires
    at least two samples in the batch.
    """

    def __init__(self, channels: int, eps: float = 1e-8, momentum: float = 0.9):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def named_params(self, prefix=""):
        return [(prefix + "gamma", self.gamma), (prefix + "beta", self.beta)]

    def named_buffers(self, prefix=""):
        return [(prefix + "running_mean", self.running_mean),
                (prefix + "running_var", self.running_var)]

    @staticmethod
    def _axes(x):
        if x.ndim == 2:
            return (0,)
        if x.ndim == 4:
            return (0, 2, 3)
        raise ShapeMismatch(f"BatchNorm expects 2-D or 4-D input, got {x.ndim}-D")

    def _expand(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train=False):
        axes = self._axes(x)
        if x.shape[1] != self.gamma.data.size:
            raise ShapeMismatch(
                f"input has {x.shape[1]} channels, layer has "
                f"{self.gamma.data.size}")
        if train:
            if x.shape[0] < 2:
                raise BatchTooSmall("train-mode batch must hold >= 2 samples")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)  # biased: divisor m
            # In-place so checkpoint buffers keep their identity.
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv_std, x.ndim)
        self._cache = (xhat, inv_std, train, axes,
                       int(np.prod([x.shape[a] for a in axes])))
        return self._expand(self.gamma.data, x.ndim) * xhat \
            + self._expand(self.beta.data, x.ndim)

    def backward(self, dout):
        if self._cache is None:
            raise NoForwardCache("BatchNorm.backward before forward")
        xhat, inv_std, train, axes, m = self._cache
        self._cache = None
        self.beta.grad += dout.sum(axis=axes)
        self.gamma.grad += (dout * xhat).sum(axis=axes)
        dxhat = dout * self._expand(self.gamma.data, dout.ndim)
        if not train:
            # Running statistics are constants in eval mode.
            return dxhat * self._expand(inv_std, dout.ndim)
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return self._expand(inv_std, dout.ndim) / m * (
            m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        if self._mask is None:
            raise NoForwardCache("ReLU.backward before forward")
        mask, self._mask = self._mask, None
        return np.where(mask, dout, 0.0)


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean; the parameter-free classifier neck."""

    def __init__(self):
        self._hw = None

    def out_shape(self, shape):
        n, c, h, w = shape
        return (n, c)

    def forward(self, x, train=False):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        if self._hw is None:
            raise NoForwardCache("GlobalAvgPool.backward before forward")
        h, w = self._hw
        self._hw = None
        return np.broadcast_to(
            dout[:, :, None, None] / (h * w),
            dout.shape + (h, w)).copy()


class Linear(Layer):
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = Tensor(weight)  # (in, out)
        self.bias = Tensor(bias)      # (out,)
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def named_params(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]

    def out_shape(self, shape):
        n, d = shape
        if d != self.weight.shape[0]:
            raise ShapeMismatch(
                f"input width {d} != weight rows {self.weight.shape[0]}")
        return (n, self.weight.shape[1])

    def forward(self, x, train=False):
        self.out_shape(x.shape)
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dout):
        if self._x is None:
            raise NoForwardCache("Linear.backward before forward")
        x, self._x = self._x, None
        self.weight.grad += x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.data.T


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}{i}."))
        return out

    def named_buffers(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_buffers(f"{prefix}{i}."))
        return out

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy over the batch.

    Returns (loss, probs, dlogits) with dlogits = (probs - onehot) / N,
    the exact gradient of the mean loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} != ({n},)")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= c:
        raise InvalidLabel(f"labels must be integers in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()
    probs = np.exp(log_probs)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, probs, dlogits / n


class Adam:
    """Adam with bias correction and coupled L2 weight decay.

    The regularization term lamda*theta is added to each gradient before
    the moment updates, matching an L2 factor applied by the training
    routine rather than decoupled decay.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        state = {"t": self.t, "lr": self.lr, "beta1": self.beta1,
                 "beta2": self.beta2, "eps": self.eps,
                 "weight_decay": self.weight_decay}
        arrays = {}
        for i in range(len(self.params)):
            arrays[f"m{i}"] = self.m[i]
            arrays[f"v{i}"] = self.v[i]
        return {"scalars": state, "arrays": arrays}

    def load_state_dict(self, state: dict):
        s = state["scalars"]
        self.t = int(s["t"])
        self.lr = float(s["lr"])
        self.beta1, self.beta2 = float(s["beta1"]), float(s["beta2"])
        self.eps = float(s["eps"])
        self.weight_decay = float(s["weight_decay"])
        for i in range(len(self.params)):
            self.m[i] = np.array(state["arrays"][f"m{i}"])
            self.v[i] = np.array(state["arrays"][f"v{i}"])


def kaiming_uniform(rng: np.random.Generator, shape: tuple,
                    fan_in: int) -> np.ndarray:
    """He initialization, uniform flavor: bound = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def grad_check(model: Layer, x: np.ndarray, h: float = 1e-3,
               check_input: bool = True, train: bool = True) -> float:
    """Max relative error between analytic and central-difference gradients.

    The probe loss is 0.5 * sum(out^2), whose upstream gradient is the
    output itself; it exercises every path without needing labels. Each
    parameter element is perturbed by +-h. The relative error per tensor is
    ||a - n|| / max(||a|| + ||n||, 1e-12); the max over tensors (and the
    input, when checked) is returned. Intended for small instances only:
    cost is two forwards per parameter element.
    """
    x = np.array(x, dtype=np.float64)

    def loss_at() -> float:
        out = model.forward(x, train=train)
        return 0.5 * float((out * out).sum())

    model.zero_grad()
    out = model.forward(x, train=train)
    dx = model.backward(out)
    analytic = [(p, p.grad.copy()) for p in model.params()]

    worst = 0.0

    def compare(a: np.ndarray, n: np.ndarray) -> float:
        denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
        return float(np.linalg.norm(a - n) / denom)

    for p, a_grad in analytic:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_at()
            flat[i] = orig - h
            minus = loss_at()
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2.0 * h)
        worst = max(worst, compare(a_grad, numeric))

    if check_input:
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_at()
            flat[i] = orig - h
            minus = loss_at()
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2.0 * h)
        worst = max(worst, compare(dx, numeric))
    return worst
