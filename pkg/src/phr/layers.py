"""Neural layers on top of the tensor tape.

Forward kernels are vectorized numpy (strided windows + tensordot); each
layer op records a single fused node with an analytic backward rule. The
test suite checks every rule against naive loop oracles and central finite
differences.

Convolution uses the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, record, relu


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def out_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of a conv layer: (channels, kernel, stride, padding)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        for field in ("in_channels", "out_channels"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be positive")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"bad ConvSpec geometry {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = out_extent(h, self.kernel[0], self.stride[0], self.padding[0])
        ow = out_extent(w, self.kernel[1], self.stride[1], self.padding[1])
        if oh < 1 or ow < 1:
            raise ValueError(f"nonpositive output extent {oh}x{ow} for input {h}x{w} with {self}")
        return oh, ow


@dataclass(frozen=True)
class BottleneckSpec:
    """1x1 reduce -> 3x3 -> 1x1 expand residual block."""

    mid_channels: int
    out_channels: int
    projection: bool = False
    preactivation: bool = False

    def __post_init__(self):
        if self.mid_channels < 1 or self.out_channels < 1:
            raise ValueError("bottleneck channels must be positive")


def _windows(xp: np.ndarray, kh, kw, sh, sw) -> np.ndarray:
    """Read-only sliding windows [B, C, kh, kw, OH, OW] over a padded map."""
    B, C, H, W = xp.shape
    oh = (H - kh) // sh + 1
    ow = (W - kw) // sw + 1
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (B, C, kh, kw, oh, ow), (s0, s1, s2, s3, s2 * sh, s3 * sw), writeable=False)


def _pad_hw(x: np.ndarray, ph, pw, value=0.0) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of x [B,C,H,W] with weight [O,C,kh,kw]."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    B, C, H, W = x.shape
    O, CI, kh, kw = weight.shape
    if C != CI:
        raise ValueError(f"conv2d: input has {C} channels but weight expects {CI}")
    oh = out_extent(H, kh, sh, ph)
    ow = out_extent(W, kw, sw, pw)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: nonpositive output extent {oh}x{ow} "
                         f"(input {H}x{W}, kernel {kh}x{kw}, stride {sh}x{sw}, pad {ph}x{pw})")

    xp = _pad_hw(x.data, ph, pw)
    win = _windows(xp, kh, kw, sh, sw)
    out = np.tensordot(win, weight.data, axes=((1, 2, 3), (1, 2, 3)))  # [B,OH,OW,O]
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    if bias is not None:
        out += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        dw = np.tensordot(g, win, axes=((0, 2, 3), (0, 4, 5)))  # [O,C,kh,kw]
        cg = np.tensordot(g, weight.data, axes=(1, 0))          # [B,OH,OW,C,kh,kw]
        cg = np.moveaxis(cg, (3, 4, 5), (1, 2, 3))              # [B,C,kh,kw,OH,OW]
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dxp[:, :, di:di + sh * oh:sh, dj:dj + sw * ow:sw] += cg[:, :, di, dj]
        dx = dxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return record(Tensor(out), inputs, bw, "conv2d")


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
             stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Transposed convolution of x [B,I,H,W] with weight [I,O,kh,kw].

    Output extent is (in-1)*stride - 2*pad + kernel; the map is the adjoint
    of conv2d with the same geometry.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    B, C, H, W = x.shape
    CI, O, kh, kw = weight.shape
    if C != CI:
        raise ValueError(f"deconv2d: input has {C} channels but weight expects {CI}")
    oh = (H - 1) * sh - 2 * ph + kh
    ow = (W - 1) * sw - 2 * pw + kw
    if oh < 1 or ow < 1:
        raise ValueError(f"deconv2d: nonpositive output extent {oh}x{ow}")

    cg = np.tensordot(x.data, weight.data, axes=(1, 0))  # [B,H,W,O,kh,kw]
    cg = np.moveaxis(cg, (3, 4, 5), (1, 2, 3))           # [B,O,kh,kw,H,W]
    full = np.zeros((B, O, (H - 1) * sh + kh, (W - 1) * sw + kw), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            full[:, :, di:di + sh * (H - 1) + 1:sh, dj:dj + sw * (W - 1) + 1:sw] += cg[:, :, di, dj]
    out = full[:, :, ph:ph + oh, pw:pw + ow] if (ph or pw) else full
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gp = _pad_hw(g, ph, pw)
        win_g = _windows(gp, kh, kw, sh, sw)  # [B,O,kh,kw,H,W]
        dx = np.tensordot(win_g, weight.data, axes=((1, 2, 3), (1, 2, 3)))  # [B,H,W,I]
        dx = np.ascontiguousarray(np.moveaxis(dx, 3, 1))
        dw = np.tensordot(x.data, win_g, axes=((0, 2, 3), (0, 4, 5)))  # [I,O,kh,kw]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return record(Tensor(out), inputs, bw, "deconv2d")


# -- pooling and resampling -----------------------------------------------------


def maxpool2d(x: Tensor, kernel, stride, padding=(0, 0)) -> Tensor:
    """Max pooling; gradient routes to the first (row-major) argmax of each window."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    B, C, H, W = x.shape
    oh = out_extent(H, kh, sh, ph)
    ow = out_extent(W, kw, sw, pw)
    if oh < 1 or ow < 1:
        raise ValueError(f"maxpool2d: nonpositive output extent {oh}x{ow}")

    neg = np.finfo(x.data.dtype).min
    xp = _pad_hw(x.data, ph, pw, value=neg)
    win = _windows(xp, kh, kw, sh, sw)                    # [B,C,kh,kw,OH,OW]
    flat = win.reshape(B, C, kh * kw, oh, ow)             # copies; window cells row-major
    arg = flat.argmax(axis=2)                             # first max on ties
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]
    out = np.ascontiguousarray(out)

    def bw(g):
        dxp = np.zeros_like(xp)
        b_i, c_i, oh_i, ow_i = np.indices(arg.shape)
        rows = oh_i * sh + arg // kw
        cols = ow_i * sw + arg % kw
        np.add.at(dxp, (b_i, c_i, rows, cols), g)
        return (dxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else dxp,)

    return record(Tensor(out), (x,), bw, "maxpool2d")


def _interp_axis(n_in: int, factor: int):
    """Source indices and weights for 1-d bilinear upsampling by an integer
    factor (half-pixel-center convention, edge clamped)."""
    o = np.arange(n_in * factor, dtype=np.float64)
    u = np.clip((o + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(u).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = u - i0
    return i0, i1, 1.0 - w1, w1


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Upsample [B,C,H,W] by an integer factor with bilinear interpolation."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return record(Tensor(x.data.copy()), (x,), lambda g: (g,), "bilinear_upsample")
    B, C, H, W = x.shape
    r0, r1, wr0, wr1 = _interp_axis(H, factor)
    c0, c1, wc0, wc1 = _interp_axis(W, factor)
    dt = x.data.dtype
    wr0, wr1, wc0, wc1 = (w.astype(dt) for w in (wr0, wr1, wc0, wc1))

    xd = x.data
    top = xd[:, :, r0][:, :, :, c0] * (wr0[:, None] * wc0[None, :]) \
        + xd[:, :, r0][:, :, :, c1] * (wr0[:, None] * wc1[None, :])
    bot = xd[:, :, r1][:, :, :, c0] * (wr1[:, None] * wc0[None, :]) \
        + xd[:, :, r1][:, :, :, c1] * (wr1[:, None] * wc1[None, :])
    out = top + bot

    def bw(g):
        dx = np.zeros_like(xd)
        for ri, wrow in ((r0, wr0), (r1, wr1)):
            for ci, wcol in ((c0, wc0), (c1, wc1)):
                contrib = g * (wrow[:, None] * wcol[None, :])
                # scatter-add along W then H (np.add.at on both axes at once
                # would need full index grids; two passes stay vectorized)
                tmp = np.zeros((B, C, g.shape[2], W), dtype=g.dtype)
                np.add.at(tmp, (slice(None), slice(None), slice(None), ci), contrib)
                np.add.at(dx, (slice(None), slice(None), ri), tmp)
        return (dx,)

    return record(Tensor(np.ascontiguousarray(out)), (x,), bw, "bilinear_upsample")


# -- batch normalization --------------------------------------------------------


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (B,H,W).

    Train mode normalizes by batch statistics and updates the running
    buffers in place (momentum 0.1, unbiased running variance); eval mode
    normalizes by the running buffers. Zero-variance channels are guarded
    by eps, so a batch of one never faults.
    """
    B, C, H, W = x.shape
    xd = x.data
    m = B * H * W
    if train:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if m > 1:
            unbiased = var * (m / (m - 1))
        else:
            unbiased = var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if not train:
            dx = dxhat * inv_std[None, :, None, None]
            return dx, dgamma, dbeta
        xc = xd - mu[None, :, None, None]
        dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv_std ** 3
        dmu = -(dxhat.sum(axis=(0, 2, 3))) * inv_std + dvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3))
        dx = dxhat * inv_std[None, :, None, None] \
            + dvar[None, :, None, None] * 2.0 * xc / m \
            + dmu[None, :, None, None] / m
        return dx, dgamma, dbeta

    return record(Tensor(np.ascontiguousarray(out)), (x, gamma, beta), bw, "batchnorm2d")


# -- parameter initializers ------------------------------------------------------


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def gaussian_init(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


def bilinear_filter(size: int, stride: int) -> np.ndarray:
    """2-d upsampling filter for a deconv of the given kernel/stride.

    When size == stride the taps never overlap, so the partition-of-unity
    filter is the box kernel (each output pixel gets full weight); constant
    maps then pass through unchanged. Larger kernels get the classic
    triangular bilinear profile.
    """
    if size == stride:
        w = np.ones(size, dtype=np.float64)
    else:
        factor = (size + 1) // 2
        center = factor - 1.0 if size % 2 == 1 else factor - 0.5
        w = 1.0 - np.abs(np.arange(size) - center) / factor
    return np.outer(w, w)


def bilinear_deconv_weight(in_channels: int, out_channels: int,
                           size: int, stride: int, dtype) -> np.ndarray:
    w = np.zeros((in_channels, out_channels, size, size), dtype=dtype)
    filt = bilinear_filter(size, stride).astype(dtype)
    for c in range(min(in_channels, out_channels)):
        w[c, c] = filt
    return w


# -- module system ----------------------------------------------------------------


class Module:
    """Minimal parameter container with recursive named access."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name: str, t: Tensor) -> Tensor:
        t.requires_grad = True
        self._params[name] = t
        return t

    def add_buffer(self, name: str, arr: np.ndarray) -> np.ndarray:
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def named_params(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_params(prefix + cname + ".")

    def params(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as one flat name -> ndarray map."""
        state = {name: p.data for name, p in self.named_params()}
        state.update(self.named_buffers())
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_arrays()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in self.named_params():
            src = state[name]
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = np.ascontiguousarray(src.astype(p.data.dtype, copy=True))
            p.grad = None
        for name, buf in self.named_buffers():
            src = state[name]
            if src.shape != buf.shape:
                raise ValueError(f"shape mismatch for buffer {name}: {src.shape} vs {buf.shape}")
            buf[...] = src

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.forward(x, train=train)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 bias=True, init="he", std=0.01, rng=None, dtype=None):
        super().__init__()
        from .tensor import DEFAULT_DTYPE
        dtype = dtype or DEFAULT_DTYPE
        self.spec = ConvSpec(in_channels, out_channels, _pair(kernel),
                             _pair(stride), _pair(padding))
        kh, kw = self.spec.kernel
        shape = (out_channels, in_channels, kh, kw)
        if init in ("gauss", "he") and rng is None:
            raise ValueError(f"conv init {init!r} needs an rng")
        if init == "zero":
            w = np.zeros(shape, dtype=dtype)
        elif init == "gauss":
            w = gaussian_init(rng, shape, std, dtype)
        elif init == "he":
            w = he_normal(rng, shape, in_channels * kh * kw, dtype)
        else:
            raise ValueError(f"unknown conv init {init!r}")
        self.weight = self.add_param("weight", Tensor(w))
        self.bias = self.add_param("bias", Tensor(np.zeros(out_channels, dtype=dtype))) if bias else None

    def forward(self, x, train=False):
        return conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class Deconv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, padding=0,
                 bias=True, init="bilinear", rng=None, dtype=None):
        super().__init__()
        from .tensor import DEFAULT_DTYPE
        dtype = dtype or DEFAULT_DTYPE
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        if self.kernel[0] != self.kernel[1] or self.stride[0] != self.stride[1]:
            raise ValueError("deconv layers here are square-kernel only")
        shape = (in_channels, out_channels, *self.kernel)
        if init == "bilinear":
            w = bilinear_deconv_weight(in_channels, out_channels,
                                       self.kernel[0], self.stride[0], dtype)
        elif init == "zero":
            w = np.zeros(shape, dtype=dtype)
        elif init == "he":
            w = he_normal(rng, shape, in_channels * self.kernel[0] * self.kernel[1], dtype)
        else:
            raise ValueError(f"unknown deconv init {init!r}")
        self.weight = self.add_param("weight", Tensor(w))
        self.bias = self.add_param("bias", Tensor(np.zeros(out_channels, dtype=dtype))) if bias else None

    def forward(self, x, train=False):
        return deconv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=None):
        super().__init__()
        from .tensor import DEFAULT_DTYPE
        dtype = dtype or DEFAULT_DTYPE
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", Tensor(np.ones(channels, dtype=dtype)))
        self.beta = self.add_param("beta", Tensor(np.zeros(channels, dtype=dtype)))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=np.float64))

    def forward(self, x, train=False):
        return batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, train, self.momentum, self.eps)


class Bottleneck(Module):
    """Residual 1x1 -> 3x3 -> 1x1 block, post- or pre-activation.

    The block ends at the residual sum (no activation after it), so zeroing
    the branch weights makes it an exact identity or, with a projection
    shortcut, an exact 1x1 projection.
    """

    def __init__(self, in_channels, spec: BottleneckSpec, rng=None, dtype=None):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        if in_channels != spec.out_channels and not spec.projection:
            raise ValueError(
                f"bottleneck shortcut/branch channel mismatch: in {in_channels} "
                f"vs out {spec.out_channels} without projection")
        mid, out = spec.mid_channels, spec.out_channels
        self.conv1 = self.add_child("conv1", Conv2d(in_channels, mid, 1, bias=False, rng=rng, dtype=dtype))
        self.conv2 = self.add_child("conv2", Conv2d(mid, mid, 3, padding=1, bias=False, rng=rng, dtype=dtype))
        self.conv3 = self.add_child("conv3", Conv2d(mid, out, 1, bias=False, rng=rng, dtype=dtype))
        if spec.preactivation:
            self.bn1 = self.add_child("bn1", BatchNorm2d(in_channels, dtype=dtype))
            self.bn2 = self.add_child("bn2", BatchNorm2d(mid, dtype=dtype))
            self.bn3 = self.add_child("bn3", BatchNorm2d(mid, dtype=dtype))
        else:
            self.bn1 = self.add_child("bn1", BatchNorm2d(mid, dtype=dtype))
            self.bn2 = self.add_child("bn2", BatchNorm2d(mid, dtype=dtype))
            self.bn3 = self.add_child("bn3", BatchNorm2d(out, dtype=dtype))
        if spec.projection:
            self.shortcut = self.add_child(
                "shortcut", Conv2d(in_channels, out, 1, bias=False, rng=rng, dtype=dtype))
        else:
            self.shortcut = None

    def forward(self, x, train=False):
        if self.spec.preactivation:
            h = self.conv1(relu(self.bn1(x, train)), train)
            h = self.conv2(relu(self.bn2(h, train)), train)
            h = self.conv3(relu(self.bn3(h, train)), train)
        else:
            h = relu(self.bn1(self.conv1(x, train), train))
            h = relu(self.bn2(self.conv2(h, train), train))
            h = self.bn3(self.conv3(h, train), train)
        sc = self.shortcut(x, train) if self.shortcut is not None else x
        return sc + h


class Sequential(Module):
    def __init__(self, named_modules):
        super().__init__()
        self.order = []
        for name, m in named_modules:
            self.add_child(name, m)
            self.order.append(m)

    def forward(self, x, train=False):
        for m in self.order:
            x = m(x, train=train)
        return x
