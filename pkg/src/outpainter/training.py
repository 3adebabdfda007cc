"""Losses, masking policy, synthetic data, and the optimization loop.

The objective is the noise-prediction MSE plus, for late denoising steps
only (small t), a weighted per-frame statistics alignment term computed on
the clean-latent estimate. The gate is sharp: at or above the threshold
timestep the total is bit-identical to the MSE alone.
"""

from dataclasses import dataclass, field

import numpy as np

from .codec import downsample_mask, encode, make_masked_video
from .diffusion import Schedule, make_schedule, predict_z0, q_sample
from .errors import NumericalError
from .model import OutpaintingModel
from .tensor import Tensor, reduce_stats
from .util import round_half_away


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.02
    t_latent: int = 200

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.t_latent < 0:
            raise ValueError(f"t_latent must be >= 0, got {self.t_latent}")


@dataclass
class TrainSample:
    video: np.ndarray  # (H, W, S, 3) in [0,1]
    mask: np.ndarray  # (H, W, S, 1) binary
    t: int
    eps: np.ndarray  # latent-shaped noise
    drop_text: bool = False


def diffusion_loss(eps: np.ndarray, eps_hat) -> Tensor:
    """Mean squared error over all elements."""
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch {eps_hat.shape} vs {eps.shape}")
    d = eps_hat - eps
    return (d * d).mean()


def latent_alignment_loss(z0_hat, z0) -> Tensor:
    """Mean over frames of |mean error| + |variance error|.

    Per frame, mean and population variance are taken over every latent
    element of that frame (all sites and channels).
    """
    if z0_hat.shape != z0.shape:
        raise ValueError(f"shape mismatch {z0_hat.shape} vs {z0.shape}")
    axes = (0, 1, 3)
    mu_hat, var_hat = reduce_stats(z0_hat, axes)
    mu, var = reduce_stats(z0 if isinstance(z0, Tensor) else Tensor(z0), axes)
    return ((mu_hat - mu).abs() + (var_hat - var).abs()).mean()


def total_loss(l_eps: Tensor, l_latent, t: int, cfg: LossConfig) -> Tensor:
    """Gated sum: l_eps alone at t >= t_latent, bit-identical."""
    if t < cfg.t_latent and l_latent is not None:
        return l_eps + l_latent * cfg.beta
    return l_eps


def sample_training_mask(H: int, W: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """Frame-constant side-band mask with random ratio, axis, and split.

    Ratio r ~ U[0.1, 0.8] of one axis is masked out, split between the two
    sides by u ~ U[0, 1]: the left/top side gets round(u*r*extent), the
    remainder goes to the right/bottom.
    """
    r = rng.uniform(0.1, 0.8)
    horizontal = rng.random() < 0.5
    u = rng.random()
    extent = W if horizontal else H
    total = round_half_away(r * extent)
    first = min(round_half_away(u * r * extent), total)
    second = total - first
    plane = np.ones((H, W))
    if horizontal:
        if first:
            plane[:, :first] = 0.0
        if second:
            plane[:, W - second:] = 0.0
    else:
        if first:
            plane[:first, :] = 0.0
        if second:
            plane[H - second:, :] = 0.0
    return np.repeat(plane[:, :, None, None], S, axis=2)


def synth_video(rng: np.random.Generator, H: int, W: int, S: int,
                velocity: tuple | None = None) -> np.ndarray:
    """Uniform background plus 1-3 rectangles sharing one integer velocity;
    frame k is frame 0 rolled k steps (wrap-around at borders)."""
    frame0 = np.empty((H, W, 3))
    frame0[:, :] = rng.uniform(0.0, 1.0, size=3)
    for _ in range(rng.integers(1, 4)):
        rh = int(rng.integers(max(1, H // 8), max(2, H // 2)))
        rw = int(rng.integers(max(1, W // 8), max(2, W // 2)))
        r0 = int(rng.integers(0, H - rh + 1))
        c0 = int(rng.integers(0, W - rw + 1))
        frame0[r0:r0 + rh, c0:c0 + rw] = rng.uniform(0.0, 1.0, size=3)
    if velocity is None:
        vx, vy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
    else:
        vx, vy = velocity
    video = np.empty((H, W, S, 3))
    for k in range(S):
        video[:, :, k] = np.roll(frame0, shift=(k * vy, k * vx), axis=(0, 1))
    return video


def synth_dataset(n: int, shape: tuple, rng: np.random.Generator):
    """Yield n procedurally generated videos of (H, W, S)."""
    H, W, S = shape
    for _ in range(n):
        yield synth_video(rng, H, W, S)


class SGD:
    """Gradient descent with classical momentum; consumes and clears .grad."""

    def __init__(self, params, lr: float = 1e-3, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def training_losses(model: OutpaintingModel, sample: TrainSample, loss_cfg: LossConfig,
                    sched: Schedule, patch: int = 4):
    """Forward pass and the (total, mse, latent) loss tensors for one sample."""
    z0 = encode(sample.video, patch)
    x_masked = np.where(sample.mask == 1.0, sample.video, 0.5)
    z_masked = encode(x_masked, patch)
    m = downsample_mask(sample.mask, patch)
    z_t = q_sample(z0, sample.t, sample.eps, sched)

    text = None if sample.drop_text else model.text_vector()
    eps_hat = model.eps_tensor(z_t, sample.t, z_masked, m, text)
    l_eps = diffusion_loss(sample.eps, eps_hat)
    l_latent = None
    if sample.t < loss_cfg.t_latent and loss_cfg.beta > 0:
        z0_hat = predict_z0(z_t, sample.t, eps_hat, sched)
        l_latent = latent_alignment_loss(z0_hat, z0)
    return total_loss(l_eps, l_latent, sample.t, loss_cfg), l_eps, l_latent


def train_step(model: OutpaintingModel, sample: TrainSample, loss_cfg: LossConfig,
               opt: SGD, sched: Schedule, patch: int = 4) -> dict:
    """One optimization step; aborts on non-finite losses."""
    total, l_eps, l_latent = training_losses(model, sample, loss_cfg, sched, patch)
    for name, val in (("total_loss", total), ("diffusion_loss", l_eps),
                      ("latent_alignment_loss", l_latent)):
        if val is not None and not np.isfinite(val.data).all():
            raise NumericalError(f"{name} is non-finite at t={sample.t}")
    total.backward()
    opt.step()
    return {
        "total": total.item(),
        "eps": l_eps.item(),
        "latent": 0.0 if l_latent is None else l_latent.item(),
    }


@dataclass
class TrainConfig:
    shape: tuple = (16, 16, 8)
    steps: int = 500
    lr: float = 1e-3
    beta: float = 0.02
    t_latent: int = 200
    gamma: float = 0.5
    seed: int = 0
    # optional model-size knobs
    n_blocks: int = 4
    d_model: int = 64
    n_heads: int = 4
    control_hidden: int = 16
    text_drop: float = 0.1
    momentum: float = 0.9
    restricted: bool = False
    log_lines: list = field(default_factory=list)


def parse_train_config(text: str) -> TrainConfig:
    """key=value lines; '#' starts a comment; unknown keys rejected."""
    cfg = TrainConfig()
    ints = {"steps", "t_latent", "seed", "n_blocks", "d_model", "n_heads", "control_hidden"}
    floats = {"lr", "beta", "gamma", "text_drop", "momentum"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key == "shape":
            dims = tuple(int(v) for v in val.lower().split("x"))
            if len(dims) != 3:
                raise ValueError(f"line {lineno}: shape must be HxWxS")
            cfg.shape = dims
        elif key in ints:
            setattr(cfg, key, int(val))
        elif key in floats:
            setattr(cfg, key, float(val))
        elif key == "restricted":
            cfg.restricted = val.lower() in ("1", "true", "yes")
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return cfg


def train(model: OutpaintingModel, cfg: TrainConfig, sched: Schedule | None = None,
          videos=None, log=None) -> list:
    """Run the loop; returns per-step loss dicts. Deterministic under seed.

    videos: optional fixed list cycled through instead of fresh synthetic
    draws (used for overfitting runs).
    """
    if sched is None:
        sched = make_schedule()
    rng = np.random.default_rng(cfg.seed)
    H, W, S = cfg.shape
    opt = SGD(model.trainable_params(cfg.restricted), lr=cfg.lr, momentum=cfg.momentum)
    loss_cfg = LossConfig(beta=cfg.beta, t_latent=cfg.t_latent)
    history = []
    for step in range(cfg.steps):
        if videos is None:
            video = synth_video(rng, H, W, S)
        else:
            video = videos[step % len(videos)]
        mask = sample_training_mask(H, W, S, rng)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal((H // 4, W // 4, S, 48))
        drop = rng.random() < cfg.text_drop
        losses = train_step(model, TrainSample(video, mask, t, eps, drop), loss_cfg, opt, sched)
        losses["step"] = step
        losses["t"] = t
        history.append(losses)
        if log is not None:
            log.write(f"{step}, {t}, {losses['eps']:.6f}, {losses['latent']:.6f}, "
                      f"{losses['total']:.6f}\n")
    return history
