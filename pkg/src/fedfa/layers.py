"""Network layers and the small conv net used throughout the simulator.

The feature extractor is a sequence of conv stages (conv, relu, optional
2x2 max-pool). After each stage an optional per-stage hook runs, which is
where stochastic feature augmentation plugs in. The classifier head is a
single linear layer on the flattened final feature map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor


# ---- functional ops ---------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    # xp is already padded; returns [B*Ho*Wo, C*kh*kw]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), (ho, wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D convolution. x: [B,Cin,H,W]; weight: [Cout,Cin,kh,kw]; bias: [Cout]."""
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d: input has {cin} channels, weight expects {cin_w}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, (ho, wo) = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(cout, -1)
    out_flat = cols @ wmat.T + bias.data
    out = Tensor(
        out_flat.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2),
        (x, weight, bias),
    )

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        weight._accumulate((gm.T @ cols).reshape(weight.shape))
        bias._accumulate(gm.sum(axis=0))
        gcols = gm @ wmat
        g6 = gcols.reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride,
                    j:j + stride * wo:stride] += g6[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding:padding + h, padding:padding + w]
        x._accumulate(gxp)

    out._backward = back
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Requires even spatial dims."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2: spatial dims must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    xr = x.data.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(b, c, ho, wo, 4)
    idx = xr.argmax(axis=-1)
    out = Tensor(np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0], (x,))

    def back(g):
        gr = np.zeros((b, c, ho, wo, 4))
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        gx = gr.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x._accumulate(gx.reshape(b, c, h, w))

    out._backward = back
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per sample per channel: [B,C,H,W] -> [B,C]."""
    return x.mean(axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: [B,D]; weight: [D,K]; bias: [K]."""
    if x.shape[1] != weight.shape[0]:
        raise ValueError(
            f"linear: input dim {x.shape[1]} != weight rows {weight.shape[0]}"
        )
    return x @ weight + bias


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross entropy over the batch. labels: int array [B]."""
    z = logits.data
    b = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    loss = (lse - z[np.arange(b), labels]).mean()
    out = Tensor(loss, (logits,))

    def back(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        logits._accumulate(g * p / b)

    out._backward = back
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def channel_mean_std(x: Tensor, eps_var: float = 1e-6) -> tuple[Tensor, Tensor]:
    """Differentiable per-sample per-channel spatial statistics.

    Returns (mu, sigma), both shaped [B,C,1,1]. sigma is the square root of
    the population spatial variance plus eps_var, which keeps the node
    differentiable on constant channels.
    """
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(2, 3), keepdims=True)
    sigma = (var + eps_var).sqrt()
    return mu, sigma


# ---- the conv net -----------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    in_ch: int
    out_ch: int
    ksize: int = 3
    stride: int = 1
    padding: int = 1
    relu: bool = True
    pool: bool = True


@dataclass(frozen=True)
class NetSpec:
    """Architecture of the desk-scale classifier."""

    stages: tuple[StageSpec, ...]
    image_size: int
    classes: int

    @property
    def feature_dims(self) -> tuple[int, int]:
        size = self.image_size
        for s in self.stages:
            size = (size + 2 * s.padding - s.ksize) // s.stride + 1
            if s.pool:
                size //= 2
        return self.stages[-1].out_ch, size

    @property
    def stage_channels(self) -> tuple[int, ...]:
        """Channel count at each hook site (one site per stage)."""
        return tuple(s.out_ch for s in self.stages)


def default_net_spec(channels: int = 3, image_size: int = 8,
                     classes: int = 6) -> NetSpec:
    return NetSpec(
        stages=(
            StageSpec(in_ch=channels, out_ch=8),
            StageSpec(in_ch=8, out_ch=16),
        ),
        image_size=image_size,
        classes=classes,
    )


@dataclass
class Tape:
    """Forward record: activations at each hook site plus the logits."""

    inputs: Tensor
    stage_outputs: list[Tensor] = field(default_factory=list)
    hooked_outputs: list[Tensor] = field(default_factory=list)
    logits: Tensor | None = None


def init_params(spec: NetSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    """Kaiming-uniform fan-in init; biases zero. Ordered by layer."""
    params: dict[str, Tensor] = {}
    for i, s in enumerate(spec.stages):
        fan_in = s.in_ch * s.ksize * s.ksize
        bound = np.sqrt(6.0 / fan_in)
        params[f"conv{i}.weight"] = Tensor(
            rng.uniform(-bound, bound, size=(s.out_ch, s.in_ch, s.ksize, s.ksize))
        )
        params[f"conv{i}.bias"] = Tensor(np.zeros(s.out_ch))
    feat_ch, feat_size = spec.feature_dims
    d = feat_ch * feat_size * feat_size
    bound = np.sqrt(6.0 / d)
    params["head.weight"] = Tensor(rng.uniform(-bound, bound, size=(d, spec.classes)))
    params["head.bias"] = Tensor(np.zeros(spec.classes))
    return params


class ConvNet:
    """Conv stages with per-stage hooks, then a linear head."""

    def __init__(self, spec: NetSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.params = params

    @classmethod
    def create(cls, spec: NetSpec, rng: np.random.Generator) -> "ConvNet":
        return cls(spec, init_params(spec, rng))

    def forward(self, x: Tensor, hooks=None) -> tuple[Tensor, Tape]:
        """Run the network. hooks is a list of callables (one per stage,
        entries may be None); each takes and returns the stage activation."""
        if x.data.ndim != 4:
            raise ValueError(f"expected input [B,C,H,W], got shape {x.shape}")
        if hooks is not None and len(hooks) > len(self.spec.stages):
            raise ValueError(
                f"{len(hooks)} hooks for {len(self.spec.stages)} stages"
            )
        tape = Tape(inputs=x)
        out = x
        for i, s in enumerate(self.spec.stages):
            out = conv2d(
                out,
                self.params[f"conv{i}.weight"],
                self.params[f"conv{i}.bias"],
                stride=s.stride,
                padding=s.padding,
            )
            if s.relu:
                out = out.relu()
            if s.pool:
                out = maxpool2x2(out)
            tape.stage_outputs.append(out)
            if hooks is not None and i < len(hooks) and hooks[i] is not None:
                out = hooks[i](out)
            tape.hooked_outputs.append(out)
        b = out.shape[0]
        flat = out.reshape(b, -1)
        logits = linear(flat, self.params["head.weight"], self.params["head.bias"])
        tape.logits = logits
        return logits, tape

    def predict(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(Tensor(x))
        return logits.data.argmax(axis=1)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
