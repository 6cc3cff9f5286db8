"""Minimal reverse-mode autodiff on numpy arrays.

Exactly the operators the classifier needs: 2-D convolution, max
pooling, batch normalization, PReLU, affine maps, the mean/std pooling
reduction, an elementwise add for residual shortcuts, axis means, and
softmax cross-entropy. Each op records a backward closure on the output
tensor; ``Tensor.backward()`` topologically sorts the graph and
accumulates gradients into ``.grad`` buffers.

Spatial tensors are channels-last, (N, H, W, C): convolutions run as
im2col + BLAS matmul, and with channels last the patch matrix is built
from contiguous block copies, the GEMM result is already in output
layout, and per-channel ops broadcast along the contiguous axis. Kernel
weights keep the conventional (C_out, C_in, kh, kw) shape. Everything
is deterministic for fixed shapes; training uses float32, while
gradient-check tests build float64 tensors (ops preserve input dtype).

With ``set_debug_checks(True)`` every op output is checked for NaN/Inf
and a NumericError is raised naming the op that produced it.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Verify finiteness of every op output (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _check(data: np.ndarray, op: str) -> None:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """n-d array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor (default seed: ones)."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.accumulate_grad(
            np.ones_like(self.data) if seed is None else np.asarray(seed, self.dtype)
        )
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _result(data, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    """Wrap an op output; record the closure only if grads can flow."""
    _check(data, op)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise same-shape add (residual shortcuts)."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_holder: list[Tensor] = []

    def backward():
        g = out_holder[0].grad
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    out = _result(a.data + b.data, (a, b), backward, "add")
    out_holder.append(out)
    return out


# ---------------------------------------------------------------------------
# Convolution and pooling


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """Cross-correlation of (N,H,W,C) input with (Cout,C,kh,kw) kernels.

    Output spatial dims are floor((size + 2p - k)/s) + 1.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, h, w, c = x.data.shape
    c_out, c_in, kh, kw = weight.data.shape
    if c_in != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernels expect {c_in}")
    out_h = _out_size(h, kh, sh, ph)
    out_w = _out_size(w, kw, sw, pw)
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}"
        )

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    else:
        xp = x.data
    m = n * out_h * out_w
    col = np.empty((m, kh * kw * c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            k = i * kw + j
            patch = xp[:, i : i + sh * out_h : sh, j : j + sw * out_w : sw, :]
            col[:, k * c : (k + 1) * c] = patch.reshape(m, c)
    # row index (i, j, c_in) of w_mat matches the col block layout above
    w_mat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, c_out))
    out_flat = col @ w_mat
    if bias is not None:
        out_flat += bias.data
    out_data = out_flat.reshape(n, out_h, out_w, c_out)

    out_holder: list[Tensor] = []

    def backward():
        g_flat = out_holder[0].grad.reshape(m, c_out)
        if weight.requires_grad:
            dw_mat = col.T @ g_flat
            weight.accumulate_grad(
                dw_mat.reshape(kh, kw, c, c_out).transpose(3, 2, 0, 1)
            )
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g_flat.sum(axis=0))
        if x.requires_grad:
            dcol = (g_flat @ w_mat.T).reshape(n, out_h, out_w, kh * kw, c)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + sh * out_h : sh, j : j + sw * out_w : sw, :] += (
                        dcol[:, :, :, i * kw + j, :]
                    )
            if ph or pw:
                x.accumulate_grad(dxp[:, ph : ph + h, pw : pw + w, :])
            else:
                x.accumulate_grad(dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _result(out_data, parents, backward, "conv2d")
    out_holder.append(out)
    return out


def max_pool2d(x: Tensor, kernel=3, stride=2, padding=1) -> Tensor:
    """Max pooling over (N,H,W,C); padding is -inf so it never wins.

    Forward accumulates a running maximum over the kernel offsets;
    backward routes each output's gradient to the first offset (in row
    scan order) that attains the maximum, which makes tie-breaking
    deterministic.
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, h, w, c = x.data.shape
    out_h = _out_size(h, kh, sh, ph)
    out_w = _out_size(w, kw, sw, pw)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"max_pool2d output would be empty for input {h}x{w}")

    if ph or pw:
        xp = np.pad(
            x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)), constant_values=-np.inf
        )
    else:
        xp = x.data

    def offset_slice(arr, i, j):
        return arr[:, i : i + sh * out_h : sh, j : j + sw * out_w : sw, :]

    out_data = np.full((n, out_h, out_w, c), -np.inf, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            np.maximum(out_data, offset_slice(xp, i, j), out=out_data)

    out_holder: list[Tensor] = []

    def backward():
        if not x.requires_grad:
            return
        g = out_holder[0].grad
        dxp = np.zeros_like(xp)
        claimed = np.zeros(out_data.shape, dtype=bool)
        for i in range(kh):
            for j in range(kw):
                winner = (offset_slice(xp, i, j) == out_data) & ~claimed
                offset_slice(dxp, i, j)[...] += g * winner
                claimed |= winner
        if ph or pw:
            x.accumulate_grad(dxp[:, ph : ph + h, pw : pw + w, :])
        else:
            x.accumulate_grad(dxp)

    out = _result(out_data, (x,), backward, "max_pool2d")
    out_holder.append(out)
    return out


# ---------------------------------------------------------------------------
# Normalization and activations


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N,H,W,C).

    Train mode normalizes by batch statistics (population variance) and
    updates the running buffers in place with the given momentum; eval
    mode is a pure function of the running buffers.
    """
    n, h, w, c = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("batch_norm parameter shape mismatch")
    axes = (0, 1, 2)
    count = n * h * w

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    scale = gamma.data * inv_std
    shift = beta.data - mean * scale
    out_data = x.data * scale
    out_data += shift

    out_holder: list[Tensor] = []

    def backward():
        g = out_holder[0].grad
        sum_g = g.sum(axis=axes)
        # sum over batch of g * x_hat, without materializing x_hat
        sum_gx = np.einsum("nhwc,nhwc->c", g, x.data, optimize=True)
        sum_ghat = (sum_gx - mean * sum_g) * inv_std
        if gamma.requires_grad:
            gamma.accumulate_grad(sum_ghat)
        if beta.requires_grad:
            beta.accumulate_grad(sum_g)
        if x.requires_grad:
            a = gamma.data * inv_std
            if training:
                # dx = a*g + d*x + e with per-channel d, e from the
                # batch-statistics terms of the chain rule
                d = -a * inv_std * sum_ghat / count
                e = -a * sum_g / count - d * mean
                dx = g * a
                dx += x.data * d
                dx += e
            else:
                dx = g * a
            x.accumulate_grad(dx)

    out = _result(out_data, (x, gamma, beta), backward, "batch_norm")
    out_holder.append(out)
    return out


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """x if x > 0 else a*x, one learned slope per channel (last axis)."""
    if x.data.ndim not in (2, 4) or slope.data.shape != (x.data.shape[-1],):
        raise ValueError(
            f"prelu expects (N,H,W,C) or (N,C) input with one slope per "
            f"channel, got {x.data.shape} and {slope.data.shape}"
        )
    reduce_axes = tuple(range(x.data.ndim - 1))
    pos = x.data > 0
    out_data = np.where(pos, x.data, slope.data * x.data)

    out_holder: list[Tensor] = []

    def backward():
        g = out_holder[0].grad
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, slope.data * g))
        if slope.requires_grad:
            slope.accumulate_grad(np.where(pos, 0.0, g * x.data).sum(axis=reduce_axes))

    out = _result(out_data, (x, slope), backward, "prelu")
    out_holder.append(out)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: (N,in) @ (in,out) + (out,)."""
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValueError(
            f"linear shape mismatch: input {x.data.shape} vs weight {weight.data.shape}"
        )
    out_data = x.data @ weight.data
    if bias is not None:
        out_data = out_data + bias.data

    out_holder: list[Tensor] = []

    def backward():
        g = out_holder[0].grad
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate_grad(x.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _result(out_data, parents, backward, "linear")
    out_holder.append(out)
    return out


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    """Mean along one axis (collapses the frequency or time axis)."""
    out_data = x.data.mean(axis=axis)
    size = x.data.shape[axis]

    out_holder: list[Tensor] = []

    def backward():
        if x.requires_grad:
            g = np.expand_dims(out_holder[0].grad, axis)
            x.accumulate_grad(np.broadcast_to(g / size, x.data.shape).copy())

    out = _result(out_data, (x,), backward, "mean_over_axis")
    out_holder.append(out)
    return out


def swap_last_two(x: Tensor) -> Tensor:
    """Transpose the final two axes, e.g. (N,T,C) -> (N,C,T)."""
    out_data = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))

    out_holder: list[Tensor] = []

    def backward():
        if x.requires_grad:
            x.accumulate_grad(np.swapaxes(out_holder[0].grad, -1, -2))

    out = _result(out_data, (x,), backward, "swap_last_two")
    out_holder.append(out)
    return out


# ---------------------------------------------------------------------------
# Statistics pooling


def mean_std_over_time(x: Tensor, eps_std: float = 1e-9) -> Tensor:
    """Pool (N,C,T) [or (C,T)] to (N,2C) [or (2C,)]: per-channel mean
    over frames, then per-channel sqrt(population variance + eps_std).

    The time reduction accumulates sequentially (vectorized over
    channels) so results are bit-identical to a naive reference loop.
    """
    squeeze = x.data.ndim == 2
    data = x.data[None] if squeeze else x.data
    if data.ndim != 3:
        raise ValueError(f"mean_std_over_time expects (N,C,T) or (C,T), got {x.data.shape}")
    n, c, t = data.shape
    if t < 1:
        raise ValueError("mean_std_over_time needs at least one frame")

    acc = np.zeros((n, c), dtype=data.dtype)
    for i in range(t):
        acc += data[:, :, i]
    mean = acc / t
    vacc = np.zeros((n, c), dtype=data.dtype)
    for i in range(t):
        dev = data[:, :, i] - mean
        vacc += dev * dev
    var = vacc / t
    std = np.sqrt(var + eps_std)
    out_data = np.concatenate([mean, std], axis=1)
    if squeeze:
        out_data = out_data[0]

    out_holder: list[Tensor] = []

    def backward():
        if not x.requires_grad:
            return
        g = out_holder[0].grad
        g2 = g[None] if squeeze else g
        g_mean = g2[:, :c]
        g_std = g2[:, c:]
        # d var / d x_t = 2 (x_t - mean) / T exactly (mean term cancels)
        dx = g_mean[:, :, None] / t + g_std[:, :, None] * (
            data - mean[:, :, None]
        ) / (t * std[:, :, None])
        x.accumulate_grad(dx[0] if squeeze else dx)

    out = _result(out_data, (x,), backward, "mean_std_over_time")
    out_holder.append(out)
    return out


# ---------------------------------------------------------------------------
# Loss


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] with max-subtraction.

    ``logits`` is (N,K) or (K,); ``labels`` an int array (N,) or a
    scalar. Returns a scalar tensor.
    """
    squeeze = logits.data.ndim == 1
    z = logits.data[None] if squeeze else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = z.shape
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"label out of range [0, {k})")

    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sum_exp)
    losses = -log_probs[np.arange(n), y]
    out_data = np.asarray(losses.mean(), dtype=z.dtype)

    out_holder: list[Tensor] = []

    def backward():
        if not logits.requires_grad:
            return
        g = out_holder[0].grad
        probs = exp / sum_exp
        probs[np.arange(n), y] -= 1.0
        dlogits = probs * (g / n)
        logits.accumulate_grad(dlogits[0] if squeeze else dlogits)

    out = _result(out_data, (logits,), backward, "softmax_cross_entropy")
    out_holder.append(out)
    return out


def softmax_probabilities(logits: np.ndarray) -> np.ndarray:
    """Plain softmax on raw arrays (reporting only, no grads)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
