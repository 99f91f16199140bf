"""Flow-matching machinery: trajectory, losses, and the K-step Euler sampler.

The forward trajectory interpolates noise toward the clean sign vector,
z_t = t s + (1 - t) eps. The network predicts in signal space (logits per
bit); the denoising velocity is derived as (x_hat - z_t) / (1 - t). Four
training losses cover the prediction/loss ablation grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nn
from .detectors import DetectionResult, hard_decide
from .env import DEFAULT_SYMBOL_SCALE, RealSystem
from .nn import Tensor

T_CLIP = 0.99  # training-time cap on the noise level


class LossVariant(str, enum.Enum):
    SIGNAL_BCE = "signal_bce"
    SIGNAL_MSE = "signal_mse"
    SIGNAL_VELOCITY_MSE = "signal_velocity_mse"
    VELOCITY_MSE = "velocity_mse"

    @property
    def predicts_velocity(self) -> bool:
        return self is LossVariant.VELOCITY_MSE


@dataclass(frozen=True)
class InferenceConfig:
    K: int = 2
    t_clip: float = T_CLIP

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class FlowState:
    z: np.ndarray    # interpolated latent, shape (..., 2 n_t)
    t: np.ndarray    # noise level per sample
    eps: np.ndarray  # the Gaussian draw used to build z


def corrupt(
    s: np.ndarray,
    t: float | np.ndarray,
    rng: np.random.Generator,
    terminal_ok: bool = False,
) -> FlowState:
    """z_t = t s + (1 - t) eps with eps ~ N(0, I); eps is retained.

    Training paths must keep t <= 0.99; `terminal_ok` lifts the cap to 1
    for endpoint checks only.
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    cap = 1.0 if terminal_ok else T_CLIP
    if np.any(t < 0.0) or np.any(t > cap):
        raise ValueError(f"noise level t must lie in [0, {cap}], got {t}")
    tb = t[..., None] if t.ndim == s.ndim - 1 else t
    eps = rng.standard_normal(s.shape)
    return FlowState(z=tb * s + (1.0 - tb) * eps, t=t, eps=eps)


def logits_to_signal(logits: np.ndarray) -> np.ndarray:
    """Posterior-mean signal estimate tanh(l / 2) = 2 sigmoid(l) - 1."""
    return np.tanh(np.asarray(logits) / 2.0)


def velocity(x_hat: np.ndarray, z: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Denoising direction (x_hat - z) / (1 - t); requires t <= 0.99."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > T_CLIP):
        raise ValueError(f"velocity needs t in [0, {T_CLIP}], got {t}")
    x_hat = np.asarray(x_hat)
    tb = t[..., None] if t.ndim == x_hat.ndim - 1 else t
    return (x_hat - z) / (1.0 - tb)


def flow_loss(
    variant: LossVariant,
    model_out: Tensor,
    s: np.ndarray,
    state: FlowState,
) -> Tensor:
    """Scalar training loss (summed per sample, averaged over the batch).

    `model_out` carries logits for the signal-space variants and the raw
    velocity estimate for VELOCITY_MSE.
    """
    variant = LossVariant(variant)
    dt = model_out.data.dtype
    s = np.asarray(s, dtype=dt)
    if model_out.data.shape != s.shape:
        raise ValueError(f"output shape {model_out.data.shape} != target shape {s.shape}")
    batch = s.shape[0] if s.ndim > 1 else 1
    inv_b = 1.0 / batch

    if variant is LossVariant.SIGNAL_BCE:
        # sum_i b*softplus(-l) + (1-b)*softplus(l), the stable logit-space form
        b = (s + 1.0) / 2.0
        pos = nn.mul(nn.softplus(nn.scale(model_out, -1.0)), b)
        neg = nn.mul(nn.softplus(model_out), 1.0 - b)
        return nn.scale(nn.sum_all(nn.add(pos, neg)), inv_b)

    if variant is LossVariant.SIGNAL_MSE:
        diff = nn.add(nn.tanh(nn.scale(model_out, 0.5)), -s)
        return nn.scale(nn.sum_all(nn.mul(diff, diff)), inv_b)

    if variant is LossVariant.SIGNAL_VELOCITY_MSE:
        x_hat = nn.tanh(nn.scale(model_out, 0.5))
        t = np.asarray(state.t, dtype=np.float64)
        inv_one_minus_t = (1.0 / (1.0 - t))[..., None] if t.ndim == s.ndim - 1 else 1.0 / (1.0 - t)
        v = nn.mul(nn.add(x_hat, -state.z.astype(dt)), inv_one_minus_t.astype(dt))
        diff = nn.add(v, -(s - state.eps).astype(dt))
        return nn.scale(nn.sum_all(nn.mul(diff, diff)), inv_b)

    if variant is LossVariant.VELOCITY_MSE:
        diff = nn.add(model_out, -(s - state.eps).astype(dt))
        return nn.scale(nn.sum_all(nn.mul(diff, diff)), inv_b)

    raise ValueError(f"unknown loss variant {variant!r}")


def euler_trajectory(
    predict,
    z0: np.ndarray,
    K: int,
    t_clip: float = T_CLIP,
    velocity_mode: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate K uniform Euler steps from z0; returns (z_final, last_output).

    `predict(z, t)` returns logits (signal mode) or velocity estimates.
    Signal-mode steps use z <- (1 - rho) z + rho x_hat with rho = 1/(K - k),
    which equals dt/(1 - t_k) exactly and makes the final step land on the
    last x_hat bit for bit.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    z = np.array(z0, dtype=np.float64)
    out = None
    for k in range(K):
        t_k = min(k / K, t_clip)
        out = predict(z, t_k)
        if velocity_mode:
            z = z + out / K
        else:
            x_hat = logits_to_signal(out)
            rho = 1.0 / (K - k)
            z = (1.0 - rho) * z + rho * x_hat
    return z, out


class NeuralDetector:
    """Detector-interface wrapper around a trained network.

    Bundles the network with an InferenceConfig so it can sit next to the
    classical detectors in sweeps; batched across frames.
    """

    def __init__(
        self,
        model,
        cfg: InferenceConfig = InferenceConfig(),
        a: float = DEFAULT_SYMBOL_SCALE,
        velocity_mode: bool = False,
    ):
        self.model = model
        self.cfg = cfg
        self.a = a
        self.velocity_mode = velocity_mode

    def detect_batch(self, batch: dict, rng: np.random.Generator) -> np.ndarray:
        """Hard decisions (F, 2 n_t) for a sample_realized_batch dict."""
        F = batch["y"].shape[0]
        n = batch["H"].shape[2]
        z0 = rng.standard_normal((F, n))

        def predict(z, t):
            return self.model.predict_logits(
                z, np.full(F, t), batch["y"], batch["H"], batch["sigma2"]
            )

        z, out = euler_trajectory(predict, z0, self.cfg.K, self.cfg.t_clip, self.velocity_mode)
        return hard_decide(z if self.velocity_mode else out)

    def detect(self, sys: RealSystem, rng: np.random.Generator) -> DetectionResult:
        def predict(z, t):
            return self.model.predict_logits(
                z[None, :], np.array([t]), sys.y[None, :], sys.H[None, :, :], np.array([sys.sigma2])
            )[0]

        return euler_sample(predict, sys, self.cfg, rng, self.a, self.velocity_mode)


def euler_sample(
    predict,
    sys: RealSystem,
    cfg: InferenceConfig,
    rng: np.random.Generator,
    a: float = DEFAULT_SYMBOL_SCALE,
    velocity_mode: bool = False,
) -> DetectionResult:
    """Run the denoiser from a Gaussian start on one system.

    `predict(z, t)` must close over (y, H, sigma2); see
    TransformerDetector.predict_logits for the network-backed version.
    Hard decisions come from the final logits (they carry the LLR
    semantics); in velocity mode they come from the final latent.
    """
    n = sys.H.shape[1]
    z0 = rng.standard_normal(n)
    z, out = euler_trajectory(predict, z0, cfg.K, cfg.t_clip, velocity_mode)
    if velocity_mode:
        return DetectionResult(x_hat=a * z, hard=hard_decide(z), llr=None)
    return DetectionResult(
        x_hat=a * logits_to_signal(out), hard=hard_decide(out), llr=np.asarray(out)
    )
