"""Noise-level-conditioned graph transformer for real-valued MIMO detection.

Tokenization mirrors the detection factor graph: one constraint token per
real observation row (features y_j, h_j, log sigma_j^2) and one symbol
token per real transmit dimension (current estimate z_i plus a learned
position embedding). Each of L layers runs constraint self-attention,
symbol self-attention, then symbol->constraint cross-attention; every
block is modulated by AdaLN parameters generated from the noise level t,
with the residual gains alpha zero-initialized so the whole network starts
as the identity. A zero-initialized head maps symbol tokens to per-bit
logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import AttentionParams, Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    time_embed_dim: int = 64

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be even")


@dataclass
class BlockMods:
    """Per-block AdaLN modulation vectors, each broadcastable over tokens."""

    g1: Tensor
    b1: Tensor
    a1: Tensor
    g2: Tensor
    b2: Tensor
    a2: Tensor


@dataclass
class BlockParams:
    attn: AttentionParams
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    mod_w: Parameter
    mod_b: Parameter


def noise_level_features(t: np.ndarray, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal features of the noise level, shape (B, dim).

    Log-spaced frequencies from 1 to 1000 over t in [0,1); layout
    [sin(w_0 t) .. sin(w_{h-1} t), cos(w_0 t) .. cos(w_{h-1} t)].
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = 1000.0 ** (np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


def adaln_block(
    u: Tensor,
    mods: BlockMods,
    p: BlockParams,
    heads: int,
    kv: Tensor | None = None,
) -> Tensor:
    """h = u + a1 * Attn(g1 * LN(u) + b1); out = h + a2 * FFN(g2 * LN(h) + b2).

    Self-attention when kv is None, otherwise cross-attention with queries
    from u and keys/values from (layer-normed) kv.
    """
    pre = nn.add(nn.mul(mods.g1, nn.layer_norm(u)), mods.b1)
    context = pre if kv is None else nn.layer_norm(kv)
    attn = nn.multi_head_attention(pre, context, p.attn, heads)
    h = nn.add(u, nn.mul(mods.a1, attn))
    pre2 = nn.add(nn.mul(mods.g2, nn.layer_norm(h)), mods.b2)
    ffn = nn.mlp_2layer(pre2, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2)
    return nn.add(h, nn.mul(mods.a2, ffn))


def _xavier(rng: np.random.Generator, out_dim: int, in_dim: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)


class TransformerDetector:
    """Parameter container plus forward pass for a fixed (n_t, n_r)."""

    BLOCK_NAMES = ("cself", "sself", "cross")

    def __init__(
        self,
        cfg: ModelConfig,
        n_t: int,
        n_r: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        self.cfg = cfg
        self.n_t = n_t
        self.n_r = n_r
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self._init_params(rng if rng is not None else np.random.default_rng(0))

    # -- parameters ----------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = Parameter(np.ascontiguousarray(data, dtype=self.dtype), name)
        self.params[name] = p
        return p

    def _init_params(self, rng: np.random.Generator):
        cfg = self.cfg
        d = cfg.d_model
        ted = cfg.time_embed_dim
        dt = self.dtype
        add, xav = self._add, _xavier

        feat_c = 2 * self.n_t + 2
        add("embed.constraint.w", xav(rng, d, feat_c, dt))
        add("embed.constraint.b", np.zeros(d, dt))
        add("embed.symbol.w", xav(rng, d, 1, dt))
        add("embed.symbol.b", np.zeros(d, dt))
        add("embed.position", (0.02 * rng.standard_normal((2 * self.n_t, d))).astype(dt))

        add("time.w1", xav(rng, ted, ted, dt))
        add("time.b1", np.zeros(ted, dt))
        add("time.w2", xav(rng, ted, ted, dt))
        add("time.b2", np.zeros(ted, dt))

        self.blocks: list[BlockParams] = []
        hidden = d * cfg.mlp_ratio
        for layer in range(cfg.layers):
            for kind in self.BLOCK_NAMES:
                pfx = f"layer{layer}.{kind}"
                attn = AttentionParams(
                    wq=add(f"{pfx}.attn.wq", xav(rng, d, d, dt)),
                    bq=add(f"{pfx}.attn.bq", np.zeros(d, dt)),
                    wk=add(f"{pfx}.attn.wk", xav(rng, d, d, dt)),
                    bk=add(f"{pfx}.attn.bk", np.zeros(d, dt)),
                    wv=add(f"{pfx}.attn.wv", xav(rng, d, d, dt)),
                    bv=add(f"{pfx}.attn.bv", np.zeros(d, dt)),
                    wo=add(f"{pfx}.attn.wo", xav(rng, d, d, dt)),
                    bo=add(f"{pfx}.attn.bo", np.zeros(d, dt)),
                )
                # Modulation head layout [g1 b1 a1 g2 b2 a2]; alpha slices are
                # zero-initialized (identity blocks), gammas start at 1.
                mod_w = 0.02 * rng.standard_normal((6 * d, ted))
                mod_w[2 * d : 3 * d] = 0.0
                mod_w[5 * d : 6 * d] = 0.0
                mod_b = np.zeros(6 * d)
                mod_b[:d] = 1.0
                mod_b[3 * d : 4 * d] = 1.0
                self.blocks.append(
                    BlockParams(
                        attn=attn,
                        ffn_w1=add(f"{pfx}.ffn.w1", xav(rng, hidden, d, dt)),
                        ffn_b1=add(f"{pfx}.ffn.b1", np.zeros(hidden, dt)),
                        ffn_w2=add(f"{pfx}.ffn.w2", xav(rng, d, hidden, dt)),
                        ffn_b2=add(f"{pfx}.ffn.b2", np.zeros(d, dt)),
                        mod_w=add(f"{pfx}.mod.w", mod_w.astype(dt)),
                        mod_b=add(f"{pfx}.mod.b", mod_b.astype(dt)),
                    )
                )

        add("head.w", np.zeros((1, d), dt))
        add("head.b", np.zeros(1, dt))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, p in self.params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    # -- forward ---------------------------------------------------------

    def embed_noise_level(self, t: np.ndarray) -> list[BlockMods]:
        """AdaLN modulation parameters for every block, from noise level t."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t < 0.0) or np.any(t >= 1.0):
            raise ValueError(f"noise level t must lie in [0, 1), got {t}")
        d = self.cfg.d_model
        feats = Tensor(noise_level_features(t, self.cfg.time_embed_dim, self.dtype))
        g = self.params
        h = nn.linear(feats, g["time.w1"], g["time.b1"])
        h = nn.linear(nn.silu(h), g["time.w2"], g["time.b2"])
        mods = []
        B = t.shape[0]
        for bp in self.blocks:
            m = nn.linear(h, bp.mod_w, bp.mod_b)  # (B, 6 d)
            m = nn.reshape(m, (B, 1, 6 * d))      # broadcast over tokens
            mods.append(
                BlockMods(
                    g1=nn.narrow(m, 0, d),
                    b1=nn.narrow(m, d, d),
                    a1=nn.narrow(m, 2 * d, d),
                    g2=nn.narrow(m, 3 * d, d),
                    b2=nn.narrow(m, 4 * d, d),
                    a2=nn.narrow(m, 5 * d, d),
                )
            )
        return mods

    def forward(
        self,
        z: np.ndarray,
        t: np.ndarray,
        y: np.ndarray,
        H: np.ndarray,
        sigma2: np.ndarray,
    ) -> Tensor:
        """Batched forward to per-bit logits, shape (B, 2 n_t).

        z: (B, 2 n_t) current estimates; t: (B,) noise levels in [0, 1);
        y: (B, 2 n_r); H: (B, 2 n_r, 2 n_t); sigma2: (B,) noise variances.
        """
        dt = self.dtype
        z = np.atleast_2d(np.asarray(z, dtype=dt))
        y = np.atleast_2d(np.asarray(y, dtype=dt))
        H = np.asarray(H, dtype=dt)
        if H.ndim == 2:
            H = H[None, :, :]
        B = z.shape[0]
        m, n = 2 * self.n_r, 2 * self.n_t
        if z.shape != (B, n) or y.shape != (B, m) or H.shape != (B, m, n):
            raise ValueError(
                f"shape mismatch: z{z.shape} y{y.shape} H{H.shape} "
                f"for n_t={self.n_t}, n_r={self.n_r}, batch={B}"
            )
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (B,))
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (B,))

        log_s2 = np.log(sigma2).astype(dt)
        feat_c = np.concatenate(
            [y[:, :, None], H, np.broadcast_to(log_s2[:, None, None], (B, m, 1))], axis=-1
        )
        g = self.params
        c = nn.linear(Tensor(feat_c), g["embed.constraint.w"], g["embed.constraint.b"])
        s = nn.linear(Tensor(z[:, :, None]), g["embed.symbol.w"], g["embed.symbol.b"])
        s = nn.add(s, g["embed.position"])

        mods = self.embed_noise_level(t)
        heads = self.cfg.heads
        for layer in range(self.cfg.layers):
            i = 3 * layer
            c = adaln_block(c, mods[i], self.blocks[i], heads)
            s = adaln_block(s, mods[i + 1], self.blocks[i + 1], heads)
            s = adaln_block(s, mods[i + 2], self.blocks[i + 2], heads, kv=c)

        logits = nn.linear(s, g["head.w"], g["head.b"])
        return nn.reshape(logits, (B, n))

    def predict_logits(
        self,
        z: np.ndarray,
        t: float | np.ndarray,
        y: np.ndarray,
        H: np.ndarray,
        sigma2: float | np.ndarray,
    ) -> np.ndarray:
        """Forward without tape construction; numpy in, numpy out."""
        with nn.no_grad():
            return self.forward(z, t, y, H, sigma2).data
