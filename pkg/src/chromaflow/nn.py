"""Conditional velocity network, low-rank adapters, and the Adam optimizer.

The network predicts the flow velocity for a video state given a structural
condition video and a color/light reference image. Frames pass through
per-frame convolutions (channels-last internally), a 1-D temporal convolution
mixes information across frames, and a zero-initialized head maps back to
RGB, so a freshly initialized network predicts exactly zero velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as ct
from .tensor import Tensor


@dataclass
class TimeEmbedding:
    """Sinusoidal features of a scalar time in [0, 1]."""

    dim: int = 32

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"embedding dim must be even and >= 2, got {self.dim}")
        half = self.dim // 2
        # Geometric frequency ladder from 1 to ~1000 cycles over the unit interval.
        self.freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))

    def __call__(self, ts: np.ndarray) -> np.ndarray:
        """ts (B,) -> (B, dim) float features."""
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        ang = ts[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class NetConfig:
    hidden: int = 16
    depth: int = 2
    temb_dim: int = 32
    temporal_kernel: int = 3
    groups: int = 4
    seed: int = 0


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class VelocityNet:
    """v(x_t, t, structural video, reference image) -> velocity field.

    Parameters live in a name -> Tensor store; conv kernels are stored in
    (k, k, Cin, Cout) layout, temporal kernels in (k, Cin, Cout).
    """

    IN_CHANNELS = 9  # x_t frame + structural frame + broadcast reference

    def __init__(self, cfg: NetConfig = None, dtype=None):
        self.cfg = cfg or NetConfig()
        self.temb = TimeEmbedding(self.cfg.temb_dim)
        self.params: dict[str, Tensor] = {}
        self.adapters: dict[str, LoraAdapter] = {}
        self._init_params(dtype or np.float32)

    def _add(self, name, arr, dtype):
        self.params[name] = Tensor(np.asarray(arr), requires_grad=True, dtype=dtype)

    def _init_params(self, dtype):
        c = self.cfg
        rng = np.random.Generator(np.random.PCG64(c.seed))

        def conv_w(cin, cout, k=3):
            return _kaiming_uniform(rng, (k, k, cin, cout), fan_in=k * k * cin)

        # Convs feeding straight into a group norm carry no bias: the norm
        # would cancel it (making the parameter unreachable by gradients);
        # the norm's beta plays that role instead.
        self._add("stem.w", conv_w(self.IN_CHANNELS, c.hidden), dtype)
        self._add("stem.b", np.zeros(c.hidden), dtype)
        for i in range(c.depth):
            p = f"block{i}."
            self._add(p + "conv1.w", conv_w(c.hidden, c.hidden), dtype)
            self._add(p + "temb.w", _kaiming_uniform(rng, (c.temb_dim, c.hidden), c.temb_dim), dtype)
            self._add(p + "norm1.g", np.ones(c.hidden), dtype)
            self._add(p + "norm1.b", np.zeros(c.hidden), dtype)
            self._add(p + "conv2.w", conv_w(c.hidden, c.hidden), dtype)
            self._add(p + "norm2.g", np.ones(c.hidden), dtype)
            self._add(p + "norm2.b", np.zeros(c.hidden), dtype)
        k = c.temporal_kernel
        self._add("temporal.w", _kaiming_uniform(rng, (k, c.hidden, c.hidden), k * c.hidden), dtype)
        self._add("temporal_norm.g", np.ones(c.hidden), dtype)
        self._add("temporal_norm.b", np.zeros(c.hidden), dtype)
        self._add("dec.w", conv_w(c.hidden, c.hidden), dtype)
        self._add("dec_norm.g", np.ones(c.hidden), dtype)
        self._add("dec_norm.b", np.zeros(c.hidden), dtype)
        # Zero-initialized head: the untrained network is the zero velocity field.
        self._add("head.w", np.zeros((3, 3, c.hidden, 3)), dtype)
        self._add("head.b", np.zeros(3), dtype)

    # ---- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        """Trainable tensors: adapter factors replace adapted base weights."""
        out = {}
        for name, p in self.params.items():
            if name in self.adapters:
                ad = self.adapters[name]
                out[name + ".lora.a"] = ad.a
                out[name + ".lora.b"] = ad.b
                if not ad.base_frozen:
                    out[name] = p
            else:
                out[name] = p
        return out

    def _weight(self, name: str) -> Tensor:
        w = self.params[name]
        ad = self.adapters.get(name)
        if ad is None:
            return w
        return ad.effective(w)

    def apply_lora(self, adapters: dict[str, "LoraAdapter"]) -> "VelocityNet":
        """Attach adapters keyed by parameter name; returns self."""
        for name, ad in adapters.items():
            w = self.params[name]
            flat_in = int(np.prod(w.shape[:-1]))
            out_dim = w.shape[-1]
            if ad.a.shape != (ad.rank, flat_in) or ad.b.shape != (out_dim, ad.rank):
                raise ct.ShapeError(
                    f"adapter for '{name}' expects A({ad.rank},{flat_in}) / "
                    f"B({out_dim},{ad.rank}), got {ad.a.shape} / {ad.b.shape}")
            if ad.base_frozen:
                w.requires_grad = False
        self.adapters.update(adapters)
        return self

    def clone(self) -> "VelocityNet":
        other = VelocityNet.__new__(VelocityNet)
        other.cfg = self.cfg
        other.temb = self.temb
        other.adapters = {}
        other.params = {n: Tensor(p.data.copy(), requires_grad=p.requires_grad)
                        for n, p in self.params.items()}
        return other

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if tuple(arrays[name].shape) != p.shape:
                raise ct.ShapeError(
                    f"parameter '{name}': checkpoint shape {arrays[name].shape} != {p.shape}")
            p.data = arrays[name].astype(p.data.dtype)

    # ---- forward --------------------------------------------------------------

    def forward(self, x_t: Tensor, t: float, structural: Tensor, reference: Tensor) -> Tensor:
        """Single-video forward.

        x_t and structural are (T, 3, H, W); reference is (3, H, W);
        t is a scalar in [0, 1]. Returns a (T, 3, H, W) velocity field.
        """
        if not 0.0 <= float(t) <= 1.0 + 1e-9:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        xb = ct.reshape(x_t, (1,) + x_t.shape)
        sb = ct.reshape(structural, (1,) + structural.shape)
        rb = ct.reshape(reference, (1,) + reference.shape)
        out = self.forward_batch(xb, np.array([float(t)]), sb, rb)
        return ct.reshape(out, out.shape[1:])

    def forward_batch(self, x_t: Tensor, ts: np.ndarray, structural: Tensor,
                      reference: Tensor) -> Tensor:
        """Batched forward: x_t, structural (B, T, 3, H, W); reference (B, 3, H, W)."""
        if x_t.shape != structural.shape:
            raise ct.ShapeError(f"state {x_t.shape} vs structural {structural.shape}")
        b, t_frames, ch, h, w = x_t.shape
        if ch != 3:
            raise ct.ShapeError(f"expected 3 channels, got {ch}")
        if reference.shape != (b, 3, h, w):
            raise ct.ShapeError(f"reference {reference.shape} != ({b}, 3, {h}, {w})")
        cfg = self.cfg
        n = b * t_frames

        # Assemble (N, H, W, 9) input: channels-last throughout the trunk.
        xs = ct.permute(ct.reshape(x_t, (n, 3, h, w)), (0, 2, 3, 1))
        ss = ct.permute(ct.reshape(structural, (n, 3, h, w)), (0, 2, 3, 1))
        rs = ct.permute(reference, (0, 2, 3, 1))
        rr = ct.reshape(ct.tile_time(rs, t_frames), (n, h, w, 3))
        feat = ct.concat_last([xs, ss, rr])

        feat = ct.silu(ct.conv2d_nhwc(feat, self._weight("stem.w"),
                                      self.params["stem.b"], pad=1))

        temb_np = self.temb(ts).astype(x_t.data.dtype)
        temb_in = Tensor(temb_np, dtype=x_t.data.dtype)
        for i in range(cfg.depth):
            p = f"block{i}."
            hbias = ct.tile_rows(temb_in @ self._weight(p + "temb.w"), t_frames)
            hh = ct.conv2d_nhwc(feat, self._weight(p + "conv1.w"), pad=1)
            hh = ct.add_rowwise_bias(hh, hbias)
            hh = ct.silu(ct.group_norm_nhwc(hh, cfg.groups,
                                            self.params[p + "norm1.g"],
                                            self.params[p + "norm1.b"]))
            hh = ct.conv2d_nhwc(hh, self._weight(p + "conv2.w"), pad=1)
            hh = ct.group_norm_nhwc(hh, cfg.groups,
                                    self.params[p + "norm2.g"],
                                    self.params[p + "norm2.b"])
            feat = ct.silu(ct.add(feat, hh))

        # Temporal mixing with a residual connection.
        vid = ct.reshape(feat, (b, t_frames, h, w, cfg.hidden))
        mixed = ct.temporal_conv(vid, self._weight("temporal.w"))
        mixed = ct.reshape(mixed, (n, h, w, cfg.hidden))
        mixed = ct.silu(ct.group_norm_nhwc(mixed, cfg.groups,
                                           self.params["temporal_norm.g"],
                                           self.params["temporal_norm.b"]))
        feat = ct.add(feat, mixed)

        feat = ct.silu(ct.group_norm_nhwc(
            ct.conv2d_nhwc(feat, self._weight("dec.w"), pad=1),
            cfg.groups, self.params["dec_norm.g"], self.params["dec_norm.b"]))
        out = ct.conv2d_nhwc(feat, self._weight("head.w"), self.params["head.b"], pad=1)

        out = ct.permute(out, (0, 3, 1, 2))
        return ct.reshape(out, (b, t_frames, 3, h, w))


@dataclass
class LoraAdapter:
    """Low-rank additive reparameterization: effective W = W + scale * B @ A.

    The base weight is viewed as a 2-D matrix (out = last axis of the stored
    kernel, in = everything else flattened). B starts at zero so an adapted
    network is exactly the base network until training moves B.
    """

    a: Tensor
    b: Tensor
    rank: int
    scale: float = 1.0
    base_frozen: bool = True

    @classmethod
    def create(cls, weight: Tensor, rank: int = 4, scale: float = 1.0,
               seed: int = 0, base_frozen: bool = True) -> "LoraAdapter":
        flat_in = int(np.prod(weight.shape[:-1]))
        out_dim = weight.shape[-1]
        if not 1 <= rank <= min(out_dim, flat_in):
            raise ValueError(f"rank {rank} out of range for weight {weight.shape}")
        rng = np.random.Generator(np.random.PCG64(seed))
        a = Tensor(_kaiming_uniform(rng, (rank, flat_in), flat_in),
                   requires_grad=True, dtype=weight.data.dtype)
        b = Tensor(np.zeros((out_dim, rank)), requires_grad=True, dtype=weight.data.dtype)
        return cls(a=a, b=b, rank=rank, scale=scale, base_frozen=base_frozen)

    def effective(self, weight: Tensor) -> Tensor:
        flat_in = int(np.prod(weight.shape[:-1]))
        out_dim = weight.shape[-1]
        delta = ct.permute(self.b @ self.a, (1, 0))  # (in, out), matching kernel layout
        if self.scale != 1.0:
            delta = ct.mul(delta, float(self.scale))
        flat = ct.add(ct.reshape(weight, (flat_in, out_dim)), delta)
        return ct.reshape(flat, weight.shape)


def lora_adapters_for(net: VelocityNet, rank: int = 4, scale: float = 1.0,
                      seed: int = 0, base_frozen: bool = True) -> dict[str, LoraAdapter]:
    """Adapters for every conv / linear weight (norm and bias terms excluded)."""
    out = {}
    for i, (name, p) in enumerate(sorted(net.params.items())):
        if name.endswith(".w") and p.data.ndim >= 2:
            r = min(rank, min(int(np.prod(p.shape[:-1])), p.shape[-1]))
            out[name] = LoraAdapter.create(p, rank=r, scale=scale,
                                           seed=seed + i, base_frozen=base_frozen)
    return out


class Adam:
    """Adam with bias correction; state is per-parameter first/second moments."""

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - p.data.dtype.type(self.lr) * update.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array([float(self.step_count)], dtype=np.float32)}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["opt.step"][0])
        for name in self.params:
            self.m[name] = arrays[f"opt.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = arrays[f"opt.v.{name}"].astype(self.v[name].dtype)
