"""Training loop: on-the-fly data, loss variants, Adam, checkpoints.

Each step draws a fresh batch of (channel, frame, SNR, noise), corrupts the
sign vector at a per-sample noise level t = min(U(0,1), 0.99), runs the
network, and applies one clipped Adam update. Fully deterministic given
(config, seed) at worker count 1.

Checkpoint container: magic "FDCK", u32 format version, then per-parameter
records {u32 name length, UTF-8 name, u32 rank, u32 dims..., little-endian
float32 payload}. A structured-text (JSON) sidecar carries the model and
system dimensions needed to rebuild the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import flow, nn
from .env import SystemConfig, sample_realized_batch
from .errors import CheckpointVersionError, CorruptCheckpointError, NumericalAbortError
from .flow import LossVariant, T_CLIP
from .model import ModelConfig, TransformerDetector

log = logging.getLogger(__name__)

CKPT_MAGIC = b"FDCK"
CKPT_VERSION = 1

TRAIN_LOG_HEADER = "step,loss,grad_norm,wall_ms"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch: int = 128
    lr: float = 3e-4
    warmup_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    snr_lo_db: float = 0.0
    snr_hi_db: float = 12.0
    variant: LossVariant = LossVariant.SIGNAL_BCE
    seed: int = 0
    checkpoint_interval: int = 0  # 0: final checkpoint only
    eval_interval: int = 0        # 0: no eval snapshots
    eval_frames: int = 5000
    eval_ebn0_db: float = 8.0
    debug_checks: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.snr_lo_db > self.snr_hi_db:
            raise ValueError("snr_lo_db must be <= snr_hi_db")


@dataclass
class TrainResult:
    model: TransformerDetector
    losses: list[float]
    grad_norms: list[float]
    first_batch_sha: str
    checkpoint_path: Path | None = None
    eval_rows: list[tuple[int, float]] = field(default_factory=list)


def _hash_batch(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def train(
    sys_cfg: SystemConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: Path | str | None = None,
    model: TransformerDetector | None = None,
) -> TrainResult:
    """Run the training loop; returns the model plus per-step logs.

    `model` may be passed in to continue training; otherwise a fresh
    float32 network is initialized from the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = TransformerDetector(model_cfg, sys_cfg.n_t, sys_cfg.n_r, rng=rng)
    params = model.parameters()
    opt = nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    velocity_mode = LossVariant(cfg.variant).predicts_velocity

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = (out_path / "train_log.csv").open("w")
        log_file.write(TRAIN_LOG_HEADER + "\n")

    losses: list[float] = []
    grad_norms: list[float] = []
    eval_rows: list[tuple[int, float]] = []
    first_batch_sha = ""
    ckpt_path = None
    try:
        for step in range(cfg.steps):
            t_start = time.perf_counter()
            ebn0 = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db, size=cfg.batch)
            batch = sample_realized_batch(sys_cfg, ebn0, rng, cfg.batch)
            t_noise = np.minimum(rng.uniform(0.0, 1.0, size=cfg.batch), T_CLIP)
            state = flow.corrupt(batch["s"], t_noise, rng)
            if step == 0:
                first_batch_sha = _hash_batch(
                    batch["H"], batch["y"], batch["bits"], t_noise, state.eps
                )
            out = model.forward(state.z, t_noise, batch["y"], batch["H"], batch["sigma2"])
            loss = flow.flow_loss(cfg.variant, out, batch["s"], state)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalAbortError(step, cfg.seed, loss_val)
            loss.backward()
            grad_norm = nn.clip_grad_norm(params, cfg.grad_clip)
            lr_t = cfg.lr * min(1.0, (step + 1) / max(cfg.warmup_steps, 1))
            nn.adam_step(opt, params, lr=lr_t)
            if cfg.debug_checks:
                for p in params:
                    if not np.all(np.isfinite(p.data)):
                        raise NumericalAbortError(step, cfg.seed, float("nan"))

            wall_ms = (time.perf_counter() - t_start) * 1e3
            losses.append(loss_val)
            grad_norms.append(grad_norm)
            if log_file is not None:
                log_file.write(f"{step},{loss_val:.8g},{grad_norm:.8g},{wall_ms:.3f}\n")

            if cfg.eval_interval and (step + 1) % cfg.eval_interval == 0:
                ber = _quick_ber(model, sys_cfg, cfg)
                eval_rows.append((step + 1, ber))
                log.info("step %d loss %.4f eval BER %.3e", step + 1, loss_val, ber)
            if (
                cfg.checkpoint_interval
                and out_path is not None
                and (step + 1) % cfg.checkpoint_interval == 0
            ):
                save_checkpoint(model, out_path / f"checkpoint_{step + 1:06d}.ckpt")
    finally:
        if log_file is not None:
            log_file.close()

    if out_path is not None:
        ckpt_path = out_path / "checkpoint_final.ckpt"
        save_checkpoint(model, ckpt_path)
        if eval_rows:
            with (out_path / "eval_log.csv").open("w") as f:
                f.write("step,ber\n")
                for s, b in eval_rows:
                    f.write(f"{s},{b:.8g}\n")
    return TrainResult(
        model=model,
        losses=losses,
        grad_norms=grad_norms,
        first_batch_sha=first_batch_sha,
        checkpoint_path=ckpt_path,
        eval_rows=eval_rows,
    )


def _quick_ber(model: TransformerDetector, sys_cfg: SystemConfig, cfg: TrainConfig) -> float:
    """Small fixed-seed BER snapshot used for progress logging."""
    rng = np.random.default_rng(10_000 + cfg.seed)
    batch = sample_realized_batch(sys_cfg, cfg.eval_ebn0_db, rng, cfg.eval_frames)
    det = flow.NeuralDetector(model, flow.InferenceConfig(), a=sys_cfg.symbol_scale,
                              velocity_mode=LossVariant(cfg.variant).predicts_velocity)
    hard = det.detect_batch(batch, rng)
    return float(np.mean(hard != batch["s"]))


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(model: TransformerDetector, path: Path | str) -> Path:
    """Write parameters (float32 payload) plus a JSON sidecar of the configs."""
    path = Path(path)
    with path.open("wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        for name, p in model.params.items():
            data = np.ascontiguousarray(p.data, dtype="<f4")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    sidecar = {
        "model": asdict(model.cfg),
        "n_t": model.n_t,
        "n_r": model.n_r,
        "format_version": CKPT_VERSION,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_checkpoint(path: Path | str) -> dict[str, np.ndarray]:
    """Parse the binary container back into {name: float32 array}."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8 or blob[:4] != CKPT_MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointVersionError(version, CKPT_VERSION)
    state: dict[str, np.ndarray] = {}
    off = 8
    record = "<header>"
    try:
        while off < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise CorruptCheckpointError(f"{path}: truncated name after record {record!r}")
            record = name
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = off + 4 * count
            if end > len(blob):
                raise CorruptCheckpointError(f"{path}: truncated payload in record {record!r}")
            arr = np.frombuffer(blob[off:end], dtype="<f4").reshape(shape)
            state[name] = arr.copy()
            off = end
    except struct.error as exc:
        raise CorruptCheckpointError(f"{path}: truncated record after {record!r}: {exc}") from exc
    return state


def load_model(path: Path | str) -> TransformerDetector:
    """Rebuild a detector from a checkpoint plus its JSON sidecar."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise CorruptCheckpointError(f"missing sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    model = TransformerDetector(
        ModelConfig(**meta["model"]), meta["n_t"], meta["n_r"], rng=np.random.default_rng(0)
    )
    model.load_state(load_checkpoint(path))
    return model
