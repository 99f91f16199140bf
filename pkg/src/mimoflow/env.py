"""Channel environment: symbol/channel sampling and the complex-to-real split.

QPSK over an n_r x n_t complex channel y_c = H_c x_c + n_c, handled everywhere
downstream in the equivalent real form y = H x + n with

    H = [[Re H_c, -Im H_c],
         [Im H_c,  Re H_c]],  n ~ N(0, (sigma_c^2 / 2) I).

Each real dimension carries one bit: x_i = a * s_i with s_i in {-1,+1}.
All sampling takes an explicit numpy Generator, so trials are reproducible
and can be fanned out over split generators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Unit-energy QPSK: E|x_c|^2 = 2 a^2 = 1 per complex symbol.
DEFAULT_SYMBOL_SCALE = 1.0 / np.sqrt(2.0)

# Bits per complex QPSK symbol, used by the E_b/N_0 conversion.
QPSK_BITS_PER_SYMBOL = 2


@dataclass(frozen=True)
class SystemConfig:
    """Antenna counts, modulation, channel family, and symbol amplitude."""

    n_t: int
    n_r: int
    modulation: str = "qpsk"
    channel_kind: str = "iid_rayleigh"  # or "kronecker"
    rho_t: float = 0.0
    rho_r: float = 0.0
    symbol_scale: float = DEFAULT_SYMBOL_SCALE

    def __post_init__(self):
        if self.n_t < 1:
            raise ConfigError(f"n_t must be >= 1, got {self.n_t}")
        if self.n_r < self.n_t:
            raise ConfigError(f"n_r must be >= n_t, got n_r={self.n_r}, n_t={self.n_t}")
        if self.modulation.lower() != "qpsk":
            raise ConfigError(f"only QPSK is supported, got {self.modulation!r}")
        if self.channel_kind not in ("iid_rayleigh", "kronecker"):
            raise ConfigError(f"unknown channel_kind {self.channel_kind!r}")
        if not (0.0 <= self.rho_t < 1.0 and 0.0 <= self.rho_r < 1.0):
            raise ConfigError("correlation coefficients must lie in [0, 1)")
        if self.symbol_scale <= 0.0:
            raise ConfigError("symbol_scale must be positive")

    @property
    def n_real_tx(self) -> int:
        return 2 * self.n_t

    @property
    def n_real_rx(self) -> int:
        return 2 * self.n_r


@dataclass
class ComplexSystem:
    """One complex channel use: y_c = H_c x_c + n_c."""

    H_c: np.ndarray
    y_c: np.ndarray | None = None
    x_c: np.ndarray | None = None
    sigma_c2: float | None = None


@dataclass
class RealSystem:
    """Real-valued observation a detector consumes: (y, H, noise variance)."""

    y: np.ndarray
    H: np.ndarray
    sigma2: float

    @property
    def Sigma(self) -> np.ndarray:
        """Diagonal of the real noise covariance (all entries equal here)."""
        return np.full(self.H.shape[0], self.sigma2)


@dataclass(frozen=True)
class SymbolFrame:
    """Transmitted bits, their 0/1 labels, and the real symbol vector."""

    bits: np.ndarray    # {0,1}^{2 n_t}
    labels: np.ndarray  # identical to bits under the per-dimension QPSK map
    x: np.ndarray       # {-a,+a}^{2 n_t}

    @property
    def s(self) -> np.ndarray:
        """Scaled binary form x / a in {-1,+1}^{2 n_t}."""
        return 2.0 * self.labels.astype(np.float64) - 1.0


def ebn0_db_to_sigma_c2(ebn0_db: float) -> float:
    """Complex noise variance for a given E_b/N_0.

    Convention: E_s = 1 per complex symbol, 2 bits/symbol, channel entry
    variance 1/n_r, so sigma_c^2 = 1 / (2 * 10^(ebn0_db/10)).
    """
    return 1.0 / (QPSK_BITS_PER_SYMBOL * 10.0 ** (ebn0_db / 10.0))


@dataclass(frozen=True)
class SnrSpec:
    """E_b/N_0 operating point with its derived complex noise variance."""

    ebn0_db: float
    sigma_c2: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma_c2", ebn0_db_to_sigma_c2(self.ebn0_db))


def _exp_correlation_sqrt(n: int, rho: float) -> np.ndarray:
    """Symmetric square root of the exponential correlation matrix rho^|i-j|."""
    if rho == 0.0 or n == 1:
        return np.eye(n)
    idx = np.arange(n)
    R = rho ** np.abs(idx[:, None] - idx[None, :])
    w, V = np.linalg.eigh(R)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def sample_channels(cfg: SystemConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` channel matrices, shape (count, n_r, n_t) complex.

    iid entries are CN(0, 1/n_r); the Kronecker variant colors the same
    white draw with exponential-correlation square roots, so rho = 0
    reproduces the iid samples bit for bit.
    """
    scale = np.sqrt(0.5 / cfg.n_r)
    H_w = scale * (
        rng.standard_normal((count, cfg.n_r, cfg.n_t))
        + 1j * rng.standard_normal((count, cfg.n_r, cfg.n_t))
    )
    if cfg.channel_kind == "iid_rayleigh":
        return H_w
    R_r = _exp_correlation_sqrt(cfg.n_r, cfg.rho_r)
    R_t = _exp_correlation_sqrt(cfg.n_t, cfg.rho_t)
    return R_r @ H_w @ R_t


def sample_channel(cfg: SystemConfig, rng: np.random.Generator) -> ComplexSystem:
    """Draw one channel matrix (no signal attached yet)."""
    return ComplexSystem(H_c=sample_channels(cfg, rng, 1)[0])


def realify_matrix(H_c: np.ndarray) -> np.ndarray:
    """Complex (m, n) matrix -> real (2m, 2n) block matrix."""
    re, im = H_c.real, H_c.imag
    return np.block([[re, -im], [im, re]])


def realify_vector(v_c: np.ndarray) -> np.ndarray:
    """Complex length-n vector -> real length-2n stack (Re, Im)."""
    return np.concatenate([v_c.real, v_c.imag])


def real_decompose(sys: ComplexSystem) -> RealSystem:
    """Equivalent real form of a complex system (noise variance halves)."""
    if sys.y_c is None or sys.sigma_c2 is None:
        raise ValueError("real_decompose needs y_c and sigma_c2 filled in")
    if sys.y_c.shape[0] != sys.H_c.shape[0]:
        raise ValueError("y_c length does not match H_c rows")
    return RealSystem(
        y=realify_vector(sys.y_c),
        H=realify_matrix(sys.H_c),
        sigma2=sys.sigma_c2 / 2.0,
    )


def sample_frame(cfg: SystemConfig, rng: np.random.Generator) -> SymbolFrame:
    """Uniform bits, one per real dimension; x = a * (2b - 1)."""
    bits = rng.integers(0, 2, size=cfg.n_real_tx).astype(np.uint8)
    x = cfg.symbol_scale * (2.0 * bits - 1.0)
    return SymbolFrame(bits=bits, labels=bits.copy(), x=x)


def sample_frames(cfg: SystemConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Bit matrix of shape (count, 2 n_t), dtype uint8."""
    return rng.integers(0, 2, size=(count, cfg.n_real_tx)).astype(np.uint8)


def transmit(
    H_c: np.ndarray,
    frame: SymbolFrame,
    snr: SnrSpec,
    rng: np.random.Generator,
) -> RealSystem:
    """Push one frame through the (realified) channel with AWGN."""
    H = realify_matrix(H_c)
    noise = np.sqrt(snr.sigma_c2 / 2.0) * rng.standard_normal(H.shape[0])
    return RealSystem(y=H @ frame.x + noise, H=H, sigma2=snr.sigma_c2 / 2.0)


def sample_realized_batch(
    cfg: SystemConfig,
    ebn0_db: float | np.ndarray,
    rng: np.random.Generator,
    count: int,
) -> dict:
    """Vectorized (channel, frame, noise) draw for Monte-Carlo and training.

    Returns arrays: H (count, 2n_r, 2n_t), y (count, 2n_r), bits, s, x,
    sigma2 (count,). `ebn0_db` may be a scalar or a per-frame array.
    """
    H_c = sample_channels(cfg, rng, count)
    bits = sample_frames(cfg, rng, count)
    s = 2.0 * bits - 1.0
    x = cfg.symbol_scale * s
    sigma_c2 = np.broadcast_to(
        1.0 / (QPSK_BITS_PER_SYMBOL * 10.0 ** (np.asarray(ebn0_db, dtype=np.float64) / 10.0)),
        (count,),
    )
    re, im = H_c.real, H_c.imag
    H = np.empty((count, cfg.n_real_rx, cfg.n_real_tx))
    H[:, : cfg.n_r, : cfg.n_t] = re
    H[:, : cfg.n_r, cfg.n_t :] = -im
    H[:, cfg.n_r :, : cfg.n_t] = im
    H[:, cfg.n_r :, cfg.n_t :] = re
    sigma2 = sigma_c2 / 2.0
    noise = np.sqrt(sigma2)[:, None] * rng.standard_normal((count, cfg.n_real_rx))
    y = np.einsum("fij,fj->fi", H, x) + noise
    return {"H": H, "y": y, "bits": bits, "s": s, "x": x, "sigma2": sigma2}
