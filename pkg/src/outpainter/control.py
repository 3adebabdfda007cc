"""Lightweight condition branch: convolutional features from the masked
latents plus mask, aligned to the denoiser's running statistics before
being added after the first block.

The conv stack is spatial-only and per-frame; temporal structure reaches
the denoiser through the token layout, not through this branch.
"""

import numpy as np

from .nn import Linear, Module, Tensor, param


def _patch_indices(h: int, w: int, s: int, c: int) -> np.ndarray:
    """Flat gather indices for 3x3 same-padding patches per frame.

    Input is zero-padded to (h+2, w+2, s, c); row i of the result lists
    the 9*c source elements of token i (frame-major site order), patch
    element order (dy, dx, channel).
    """
    hp, wp = h + 2, w + 2
    sites = []
    for f in range(s):
        for i in range(h):
            for j in range(w):
                sites.append((i, j, f))
    sites = np.array(sites)  # (L, 3)
    dy, dx = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()  # 9 offsets
    ch = np.arange(c)
    # flat index into (hp, wp, s, c)
    ii = sites[:, 0:1] + dy[None, :]  # (L, 9)
    jj = sites[:, 1:2] + dx[None, :]
    ff = sites[:, 2:3]
    flat = ((ii * wp + jj) * s + ff)[:, :, None] * c + ch[None, None, :]
    return flat.reshape(len(sites), 9 * c)


class Conv3x3(Module):
    """3x3, stride 1, zero same-padding, applied independently per frame."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.W = param(rng, (9 * c_in, c_out), scale=1.0 / np.sqrt(9 * c_in))
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.c_in = c_in
        self.c_out = c_out

    def __call__(self, x: Tensor) -> Tensor:
        """(h, w, s, c_in) -> (h, w, s, c_out)."""
        h, w, s, c = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {c}")
        xp = x.pad(((1, 1), (1, 1), (0, 0), (0, 0)))
        cols = xp.take(_patch_indices(h, w, s, c))  # (h*w*s frame-major, 9c)
        out = cols @ self.W + self.b
        # frame-major rows -> (s, h, w, c_out) -> (h, w, s, c_out)
        return out.reshape((s, h, w, self.c_out)).transpose((1, 2, 0, 3))


class ControlBranch(Module):
    """Three bounded conv layers over (Z_masked, m), projected to tokens."""

    def __init__(self, rng, d_latent: int = 48, d_model: int = 64, hidden: int = 16):
        self.conv1 = Conv3x3(rng, d_latent + 1, hidden)
        self.conv2 = Conv3x3(rng, hidden, hidden)
        self.conv3 = Conv3x3(rng, hidden, hidden)
        self.proj = Linear(rng, hidden, d_model)

    def extract(self, z_masked: np.ndarray, m: np.ndarray) -> Tensor:
        """(h, w, s, d), (h, w, s, 1) -> (h*w*s, d_model) in token order."""
        if z_masked.shape[:3] != m.shape[:3] or m.shape[3] != 1:
            raise ValueError(f"latents {z_masked.shape} and mask {m.shape} disagree")
        x = Tensor(np.concatenate([z_masked, m], axis=3))
        x = self.conv1(x).tanh()
        x = self.conv2(x).tanh()
        x = self.conv3(x)
        h, w, s, c = x.shape
        tok = x.transpose((2, 0, 1, 3)).reshape((h * w * s, c))
        return self.proj(tok)

    def extract_advanced(self, z_masked: np.ndarray, m: np.ndarray, k: int) -> Tensor:
        """Same computation; enforces that the K condition frames are fully
        given (the iterative long-video scheme constructs them that way)."""
        if k < 0 or k > m.shape[2]:
            raise ValueError(f"condition frame count {k} outside [0, {m.shape[2]}]")
        if k and not (m[:, :, :k] == 1.0).all():
            raise ValueError(f"first {k} frames must carry all-ones masks")
        return self.extract(z_masked, m)


def feature_stats(features: Tensor, flow_gradient: bool = False):
    """Per-channel mean/std of a token sequence, as plain arrays by default.

    The alignment target comes from the live block-1 output; blocking its
    gradient keeps the conditioning branch from steering the denoiser
    through the normalization constants. flow_gradient=True keeps the
    path differentiable end to end.
    """
    if flow_gradient:
        mu = features.mean(axes=0)
        d = features - mu
        # variance floor keeps sqrt differentiable on degenerate channels
        sigma = (d * d).mean(axes=0).clamp(lo=1e-12) ** 0.5
        return mu, sigma
    data = features.data if isinstance(features, Tensor) else np.asarray(features)
    return Tensor(data.mean(axis=0)), Tensor(data.std(axis=0))


def align(features: Tensor, mu_m, sigma_m, eps_std: float = 1e-6) -> Tensor:
    """Renormalize each channel to the target mean/std.

    out = (x - mean(x)) / max(std(x), eps_std) * sigma_m + mu_m, computed
    over tokens. Constant channels hit the eps_std guard and land exactly
    on mu_m.
    """
    mu = features.mean(axes=0)
    d = features - mu
    var = (d * d).mean(axes=0)
    # max(std, eps) computed as sqrt(max(var, eps^2)): same values, and the
    # sqrt stays differentiable when a channel is constant
    std = var.clamp(lo=eps_std * eps_std) ** 0.5
    return d / std * sigma_m + mu_m


def inject(block1_out: Tensor, aligned: Tensor) -> Tensor:
    """Elementwise sum; the sole condition entry point."""
    if block1_out.shape != aligned.shape:
        raise ValueError(f"shape mismatch {block1_out.shape} vs {aligned.shape}")
    return block1_out + aligned
