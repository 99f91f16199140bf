"""Classical baseline detectors: LMMSE, OAMP, and exhaustive ML.

All three are pure functions of (system, config) and return a
DetectionResult with the soft estimate in x-space (amplitude a), hard
decisions in s-space {-1,+1} (ties to +1), and LLRs where defined.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .env import DEFAULT_SYMBOL_SCALE, RealSystem
from .errors import BudgetExceededError

log = logging.getLogger(__name__)

ML_CANDIDATE_BUDGET = 65536  # 4^8 QPSK candidates


@dataclass
class DetectionResult:
    x_hat: np.ndarray            # soft estimate, x-space
    hard: np.ndarray             # {-1,+1}^{2 n_t} decisions, s-space
    llr: np.ndarray | None = None


@dataclass(frozen=True)
class OampConfig:
    iterations: int = 10
    a: float = DEFAULT_SYMBOL_SCALE
    damping: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 <= self.damping <= 1.0):
            raise ValueError("damping must lie in [0, 1]")


def hard_decide(soft: np.ndarray) -> np.ndarray:
    """Sign decisions with ties broken to +1."""
    return np.where(soft >= 0.0, 1.0, -1.0)


def lmmse(sys: RealSystem, a: float = DEFAULT_SYMBOL_SCALE) -> DetectionResult:
    """MMSE estimate x_hat = a^2 H^T (a^2 H H^T + sigma2 I)^{-1} y."""
    assert sys.sigma2 > 0.0, "lmmse needs sigma2 > 0"
    H, y = sys.H, sys.y
    m = H.shape[0]
    Es = a * a
    G = Es * (H @ H.T) + sys.sigma2 * np.eye(m)
    HtGinv = Es * (H.T @ np.linalg.inv(G))
    x_hat = HtGinv @ y
    # Gaussian post-equalization model: posterior variance diag, llr = 2 a r / tau^2.
    post_var = Es - Es * np.einsum("ij,ji->i", HtGinv, H)
    tau2 = np.maximum(post_var, kernels.VAR_FLOOR)
    llr = 2.0 * a * x_hat / tau2
    return DetectionResult(x_hat=x_hat, hard=hard_decide(x_hat), llr=llr)


def lmmse_batch(Y: np.ndarray, H: np.ndarray, sigma2: np.ndarray, a: float) -> np.ndarray:
    """Hard decisions for a stack of frames, shape (F, 2 n_t)."""
    return hard_decide(kernels.lmmse_batch(Y, H, a, sigma2))


def ml_exhaustive(
    sys: RealSystem,
    a: float = DEFAULT_SYMBOL_SCALE,
    budget: int = ML_CANDIDATE_BUDGET,
) -> DetectionResult:
    """argmin over s in {-1,+1}^{2 n_t} of ||y - a H s||^2.

    Lexicographically smallest s wins ties. Raises BudgetExceededError when
    the 4^{n_t} candidate count exceeds `budget`.
    """
    n = sys.H.shape[1]
    check_ml_budget(n, budget)
    hard = kernels.ml_search_batch(sys.y[None, :], sys.H[None, :, :], a)[0]
    return DetectionResult(x_hat=a * hard, hard=hard, llr=None)


def check_ml_budget(n_real_tx: int, budget: int = ML_CANDIDATE_BUDGET) -> None:
    ncand = 1 << n_real_tx
    if ncand > budget:
        raise BudgetExceededError(
            f"ML search needs {ncand} candidates (2 n_t = {n_real_tx}), budget {budget}"
        )


def ml_batch(
    Y: np.ndarray, H: np.ndarray, a: float, budget: int = ML_CANDIDATE_BUDGET
) -> np.ndarray:
    check_ml_budget(H.shape[2], budget)
    return kernels.ml_search_batch(Y, H, a)


def oamp(
    sys: RealSystem, cfg: OampConfig = OampConfig(), return_trace: bool = False
) -> DetectionResult | tuple[DetectionResult, dict]:
    """De-correlated LMMSE + tanh posterior-mean loop.

    Per iteration: trace-normalized LMMSE estimate r with error variance
    tau^2, then x_hat = a tanh(a r / tau^2). Final soft output is the
    posterior mean; llr = 2 a r / tau^2 from the unbiased estimate.
    """
    assert sys.sigma2 > 0.0, "oamp needs sigma2 > 0"
    xh_tr, r_tr, tau_tr, clamps = kernels.oamp_batch(
        sys.y[None, :],
        sys.H[None, :, :],
        np.array([sys.sigma2]),
        cfg.a,
        cfg.iterations,
        cfg.damping,
    )
    if clamps:
        log.warning("oamp clamped %d variance estimates at %.0e", clamps, kernels.VAR_FLOOR)
    x_hat = xh_tr[-1, 0]
    llr = 2.0 * cfg.a * r_tr[-1, 0] / tau_tr[-1, 0]
    result = DetectionResult(x_hat=x_hat, hard=hard_decide(x_hat), llr=llr)
    if return_trace:
        return result, {"x_hat": xh_tr[:, 0], "r": r_tr[:, 0], "tau2": tau_tr[:, 0]}
    return result


def oamp_batch(
    Y: np.ndarray, H: np.ndarray, sigma2: np.ndarray, cfg: OampConfig
) -> np.ndarray:
    """Hard decisions for a stack of frames, shape (F, 2 n_t)."""
    xh_tr, _, _, clamps = kernels.oamp_batch(
        Y, H, np.asarray(sigma2, dtype=np.float64), cfg.a, cfg.iterations, cfg.damping
    )
    if clamps:
        log.warning("oamp clamped %d variance estimates at %.0e", clamps, kernels.VAR_FLOOR)
    return hard_decide(xh_tr[-1])
