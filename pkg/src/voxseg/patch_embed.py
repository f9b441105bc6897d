"""Patch embedding: volume -> token feature map.

Two routes with identical output shape (H, W, D, C) = (H̄/p_h, W̄/p_w,
D̄/p_d, C):

  * pseudo3d — a 2D p_h x p_w convolutional embedding applied per depth
    slice, followed by a per-channel depth aggregation with kernel and
    stride p_d. The composition realizes exactly the separable 3D
    kernels K3[i,j,k,n,c] = K2[i,j,n,c] * kd[k,c], which quantifies what
    the slice-wise approximation can and cannot represent.
  * true3d — one dense 3D convolution with kernel = stride = patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor


@dataclass(frozen=True)
class PatchConfig:
    patch: tuple[int, int, int]
    embed_dim: int
    mode: str  # 'pseudo3d' | 'true3d'

    def validate(self):
        if self.mode not in ("pseudo3d", "true3d"):
            raise ValueError(f"unknown patch mode {self.mode!r}")
        if any(p < 1 for p in self.patch):
            raise ValueError(f"patch sizes must be positive, got {self.patch}")
        if self.embed_dim < 8:
            raise ValueError(f"embed_dim must be >= 8, got {self.embed_dim}")
        return self


@dataclass
class FeatureMap:
    """Tensor with semantic axes (H, W, D, C)."""

    dims: tuple[int, int, int]
    channels: int
    data: Tensor

    @classmethod
    def wrap(cls, t: Tensor):
        if t.data.ndim != 4:
            raise ShapeMismatchError(f"feature map must be rank 4, got {t.data.ndim}")
        return cls(dims=t.shape[:3], channels=t.shape[3], data=t)

    def tokens(self) -> Tensor:
        """(H*W*D, C) view of the grid."""
        h, w, d = self.dims
        return ad.reshape(self.data, (h * w * d, self.channels))

    def with_tokens(self, t: Tensor) -> "FeatureMap":
        return FeatureMap.wrap(ad.reshape(t, self.dims + (self.channels,)))

    @property
    def token_count(self):
        h, w, d = self.dims
        return h * w * d


def _check_divisible(vol_dims, patch):
    for n, p in zip(vol_dims, patch):
        if n % p != 0:
            raise ShapeMismatchError(
                f"volume dims {vol_dims} not divisible by patch {patch}"
            )
    return tuple(n // p for n, p in zip(vol_dims, patch))


def pseudo3d_patch_embed(x: Tensor, w2d: Tensor, b2d: Tensor, wdepth: Tensor,
                         patch) -> FeatureMap:
    """Slice-wise 2D embedding then depth aggregation.

    x: (H̄, W̄, D̄, N); w2d: (p_h, p_w, 1, N, C); b2d: (C,);
    wdepth: (p_d, C) per-channel depth weights.
    """
    ph, pw, pd = patch
    grid = _check_divisible(x.shape[:3], patch)
    planar = ad.conv3d(x, w2d, stride=(ph, pw, 1), padding=0)  # (H, W, D̄, C)
    planar = ad.add(planar, b2d)
    h, w, d = grid
    c = planar.shape[3]
    stacked = ad.reshape(planar, (h, w, d, pd, c))
    weighted = ad.mul(stacked, wdepth)  # broadcast over (H, W, D)
    return FeatureMap.wrap(ad.reduce_sum(weighted, axis=3))


def true3d_patch_embed(x: Tensor, w3d: Tensor, b3d: Tensor, patch) -> FeatureMap:
    """Single dense 3D convolution with kernel = stride = patch."""
    _check_divisible(x.shape[:3], patch)
    out = ad.conv3d(x, w3d, stride=patch, padding=0)
    return FeatureMap.wrap(ad.add(out, b3d))


def add_positional(fm: FeatureMap, pos: Tensor) -> FeatureMap:
    """Learned additive positional embedding, shape (H, W, D, C)."""
    if pos.shape != fm.data.shape:
        raise ShapeMismatchError(
            f"positional embedding {pos.shape} does not match feature map {fm.data.shape}"
        )
    return FeatureMap.wrap(ad.add(fm.data, pos))


# -- helpers for relating the two routes -------------------------------------


def separable_to_true3d(w2d: np.ndarray, wdepth: np.ndarray) -> np.ndarray:
    """Assemble the dense 3D kernel a given pseudo3d parameterization equals."""
    w2 = np.asarray(w2d)[:, :, 0]  # (p_h, p_w, N, C)
    kd = np.asarray(wdepth)  # (p_d, C)
    return np.einsum("ijnc,kc->ijknc", w2, kd)


def best_separable_factors(w3d: np.ndarray):
    """Per-channel rank-1 (in-plane x depth) approximation of a 3D kernel.

    Returns (w2d, wdepth) shaped for pseudo3d_patch_embed. For genuinely
    non-separable kernels the reconstruction error is the representation
    gap of the slice-wise route.
    """
    w3 = np.asarray(w3d, dtype=np.float64)
    ph, pw, pd, n, c = w3.shape
    w2d = np.zeros((ph, pw, 1, n, c))
    wdepth = np.zeros((pd, c))
    for ch in range(c):
        flat = w3[..., ch].transpose(0, 1, 3, 2).reshape(ph * pw * n, pd)
        u, s, vt = np.linalg.svd(flat, full_matrices=False)
        w2d[:, :, 0, :, ch] = (u[:, 0] * s[0]).reshape(ph, pw, n)
        wdepth[:, ch] = vt[0]
    return w2d, wdepth
