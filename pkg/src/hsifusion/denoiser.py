"""Conditional noise-prediction network.

The network sees the noisy target, the high-resolution few-band image, and a
bicubic blow-up of the low-resolution many-band image, concatenated along
channels, plus the timestep through a sinusoidal embedding. Architecture:
stem conv, a down path of residual blocks (time bias injected after the first
conv of each block, optional attention, strided-conv downsample), a
bottleneck of residual/attention/residual, a mirrored up path consuming skip
concatenations, and a zero-initialized output conv.

Parameters live in a flat name -> Tensor map so checkpoints are plain named
tensors; the forward pass asserts that every name is consumed exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, default_dtype
from .ops import (
    add_channel_bias,
    bicubic_upsample,
    concat_channels,
    conv2d,
    dense,
    group_norm,
    self_attention,
    silu,
    upsample_nearest,
)


@dataclass(frozen=True)
class DenoiserConfig:
    bands: int
    msi_bands: int
    scale: int
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    attention_levels: tuple[int, ...] = (2,)
    time_embed_dim: int = 128
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))
        object.__setattr__(self, "attention_levels", tuple(sorted(set(self.attention_levels))))
        if self.levels < 1:
            raise ValueError("need at least one resolution level")
        if self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.base_channels % self.groups != 0:
            raise ValueError(
                f"base_channels {self.base_channels} not divisible by groups {self.groups}"
            )
        if any(lv < 0 or lv >= self.levels for lv in self.attention_levels):
            raise ValueError(f"attention levels {self.attention_levels} out of range")

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def in_channels(self) -> int:
        return 2 * self.bands + self.msi_bands

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    def to_dict(self) -> dict:
        return {
            "bands": self.bands,
            "msi_bands": self.msi_bands,
            "scale": self.scale,
            "base_channels": self.base_channels,
            "channel_multipliers": list(self.channel_multipliers),
            "attention_levels": list(self.attention_levels),
            "time_embed_dim": self.time_embed_dim,
            "groups": self.groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def time_embedding(t: int, dim: int, T: int | None = None) -> np.ndarray:
    """Sinusoidal timestep embedding: e[2i] = sin(t / 10000^(2i/dim)),
    e[2i+1] = cos of the same argument. t = 0 is allowed as a probe value."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if t < 0 or (T is not None and t > T):
        raise ValueError(f"timestep {t} outside [0, {T}]")
    i = np.arange(dim // 2, dtype=np.float64)
    angles = t / np.power(10000.0, 2.0 * i / dim)
    e = np.empty(dim, dtype=np.float64)
    e[0::2] = np.sin(angles)
    e[1::2] = np.cos(angles)
    return e.astype(default_dtype())


def assemble_condition(xt, y, z) -> Tensor:
    """Stack [x_t, z, bicubic_upsample(y)] along channels.

    x_t is (L, H, W), y is (L, h, w) with H = h*S and W = w*S, z is (l, H, W).
    """
    xt, y, z = as_tensor(xt), as_tensor(y), as_tensor(z)
    L, H, W = xt.shape
    if y.shape[0] != L:
        raise ValueError(f"band mismatch: x_t has {L} bands, y has {y.shape[0]}")
    if z.shape[1:] != (H, W):
        raise ValueError(f"z spatial size {z.shape[1:]} != x_t spatial size {(H, W)}")
    h, w = y.shape[1], y.shape[2]
    if H % h != 0 or W % w != 0 or H // h != W // w:
        raise ValueError(
            f"y size {(h, w)} does not divide x_t size {(H, W)} by a common factor"
        )
    y_up = bicubic_upsample(y, H // h)
    return concat_channels([xt, z, y_up])


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _ParamBuilder:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def _put(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(arr, requires_grad=True, dtype=self.dtype)

    def conv(self, name: str, c_in: int, c_out: int, k: int, zero: bool = False) -> None:
        if zero:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = _kaiming_uniform(self.rng, (c_out, c_in, k, k), c_in * k * k)
        self._put(name + ".w", w)
        self._put(name + ".b", np.zeros(c_out))

    def linear(self, name: str, n_in: int, n_out: int) -> None:
        self._put(name + ".w", _kaiming_uniform(self.rng, (n_out, n_in), n_in))
        self._put(name + ".b", np.zeros(n_out))

    def norm(self, name: str, c: int) -> None:
        self._put(name + ".g", np.ones(c))
        self._put(name + ".b", np.zeros(c))

    def res_block(self, name: str, c_in: int, c_out: int, temb_dim: int) -> None:
        self.norm(name + ".norm1", c_in)
        self.conv(name + ".conv1", c_in, c_out, 3)
        self.linear(name + ".tproj", temb_dim, c_out)
        self.norm(name + ".norm2", c_out)
        self.conv(name + ".conv2", c_out, c_out, 3)
        if c_in != c_out:
            self._put(name + ".skip.w", _kaiming_uniform(self.rng, (c_out, c_in, 1, 1), c_in))

    def attention(self, name: str, c: int) -> None:
        for proj in ("wq", "wk", "wv"):
            self._put(f"{name}.{proj}", _kaiming_uniform(self.rng, (c, c), c))
        # zero output projection: attention starts as an identity branch
        self._put(name + ".wo", np.zeros((c, c)))


def init_params(cfg: DenoiserConfig, rng: np.random.Generator, dtype=None) -> dict[str, Tensor]:
    """Freshly initialized parameter map for ``cfg``.

    Convolutions are Kaiming-uniform except the output head, which starts at
    zero so the initial prediction is exactly zero.
    """
    b = _ParamBuilder(rng, dtype or default_dtype())
    chans = cfg.level_channels
    td = cfg.time_embed_dim

    b.linear("temb.fc1", td, td)
    b.linear("temb.fc2", td, td)
    b.conv("stem", cfg.in_channels, chans[0], 3)

    for i, c in enumerate(chans):
        c_prev = chans[i - 1] if i > 0 else chans[0]
        b.res_block(f"down{i}.res", c_prev, c, td)
        if i in cfg.attention_levels:
            b.attention(f"down{i}.attn", c)
        if i < cfg.levels - 1:
            b.conv(f"down{i}.pool", c, c, 3)

    c_mid = chans[-1]
    b.res_block("mid.res1", c_mid, c_mid, td)
    b.attention("mid.attn", c_mid)
    b.res_block("mid.res2", c_mid, c_mid, td)

    for i in reversed(range(cfg.levels)):
        c = chans[i]
        b.res_block(f"up{i}.res", 2 * c, c, td)
        if i in cfg.attention_levels:
            b.attention(f"up{i}.attn", c)
        if i > 0:
            b.conv(f"up{i}.up", c, chans[i - 1], 3)

    b.norm("head.norm", chans[0])
    b.conv("head.conv", chans[0], cfg.bands, 3, zero=True)
    return b.params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(int(p.size) for p in params.values())


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


class _ParamView:
    """Marks parameters as consumed so config/weight mismatches surface."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = params
        self.used: set[str] = set()

    def take(self, name: str) -> Tensor:
        if name not in self.params:
            raise ValueError(f"denoiser weights are missing parameter '{name}'")
        if name in self.used:
            raise ValueError(f"parameter '{name}' consumed twice in one forward pass")
        self.used.add(name)
        return self.params[name]

    def finish(self) -> None:
        leftover = set(self.params) - self.used
        if leftover:
            raise ValueError(
                f"weights contain parameters the config never uses: {sorted(leftover)[:5]}"
            )


def _conv_bias(p: _ParamView, name: str, x, stride=1, padding=1) -> Tensor:
    h = conv2d(x, p.take(name + ".w"), stride=stride, padding=padding)
    return add_channel_bias(h, p.take(name + ".b"))


def _res_block(p: _ParamView, name: str, x: Tensor, temb: Tensor, groups: int) -> Tensor:
    h = group_norm(x, groups, p.take(name + ".norm1.g"), p.take(name + ".norm1.b"))
    h = _conv_bias(p, name + ".conv1", silu(h))
    t_bias = dense(silu(temb), p.take(name + ".tproj.w"), p.take(name + ".tproj.b"))
    h = add_channel_bias(h, t_bias)
    h = group_norm(h, groups, p.take(name + ".norm2.g"), p.take(name + ".norm2.b"))
    h = _conv_bias(p, name + ".conv2", silu(h))
    if name + ".skip.w" in p.params:
        x = conv2d(x, p.take(name + ".skip.w"))
    return h + x


def _attention(p: _ParamView, name: str, x: Tensor) -> Tensor:
    return self_attention(
        x, p.take(name + ".wq"), p.take(name + ".wk"), p.take(name + ".wv"), p.take(name + ".wo")
    )


def predict_noise(params: dict[str, Tensor], cfg: DenoiserConfig, x_in, t: int) -> Tensor:
    """Run the network on an assembled (2L+l, H, W) input at timestep t."""
    x_in = as_tensor(x_in)
    if x_in.shape[0] != cfg.in_channels:
        raise ValueError(
            f"input has {x_in.shape[0]} channels, config expects {cfg.in_channels}"
        )
    down = 2 ** (cfg.levels - 1)
    if x_in.shape[1] % down or x_in.shape[2] % down:
        raise ValueError(
            f"spatial size {x_in.shape[1:]} not divisible by 2^(levels-1) = {down}"
        )

    p = _ParamView(params)
    emb = as_tensor(time_embedding(t, cfg.time_embed_dim), dtype=x_in.dtype)
    temb = dense(emb, p.take("temb.fc1.w"), p.take("temb.fc1.b"))
    temb = dense(silu(temb), p.take("temb.fc2.w"), p.take("temb.fc2.b"))

    h = _conv_bias(p, "stem", x_in)
    skips = []
    for i in range(cfg.levels):
        h = _res_block(p, f"down{i}.res", h, temb, cfg.groups)
        if i in cfg.attention_levels:
            h = _attention(p, f"down{i}.attn", h)
        skips.append(h)
        if i < cfg.levels - 1:
            h = _conv_bias(p, f"down{i}.pool", h, stride=2)

    h = _res_block(p, "mid.res1", h, temb, cfg.groups)
    h = _attention(p, "mid.attn", h)
    h = _res_block(p, "mid.res2", h, temb, cfg.groups)

    for i in reversed(range(cfg.levels)):
        skip = skips.pop()
        if skip.shape[1:] != h.shape[1:]:
            raise AssertionError(
                f"skip connection size {skip.shape[1:]} != feature size {h.shape[1:]}"
            )
        h = _res_block(p, f"up{i}.res", concat_channels([h, skip]), temb, cfg.groups)
        if i in cfg.attention_levels:
            h = _attention(p, f"up{i}.attn", h)
        if i > 0:
            h = _conv_bias(p, f"up{i}.up", upsample_nearest(h, 2))

    h = group_norm(h, cfg.groups, p.take("head.norm.g"), p.take("head.norm.b"))
    out = _conv_bias(p, "head.conv", silu(h))
    p.finish()
    return out
