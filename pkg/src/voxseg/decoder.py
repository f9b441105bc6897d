"""Feature-enhanced decoding: four enhancers fuse encoder taps with
features convolved straight off the original volume, and a prediction
head emits a full-resolution probability map.

Per enhancer:  E = ConvBlock(Concat(Upsample(Z_tap), ConvPyramid(I))),
all branches meeting at (2H, 2W, 2D). The prediction head concatenates
the four enhancer outputs, applies a conv block, upsamples to the input
resolution, smooths with one 3x3x3 conv, projects to a single channel
and applies a sigmoid.

A conv block is (conv3x3x3 -> instance norm -> relu) twice; pyramid
stages use stride 2 on their first conv. ``no_image_branch`` replaces
the image features with zeros (identical shapes, decoder trains on taps
alone).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .patch_embed import FeatureMap


@dataclass
class ConvBlockParams:
    conv1_w: Tensor
    conv1_b: Tensor
    in1_g: Tensor
    in1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    in2_g: Tensor
    in2_b: Tensor
    stride1: int = 1

    _FIELDS = ("conv1_w", "conv1_b", "in1_g", "in1_b",
               "conv2_w", "conv2_b", "in2_g", "in2_b")

    @classmethod
    def from_store(cls, store, prefix, stride1=1):
        return cls(**{f: store[f"{prefix}.{f}"] for f in cls._FIELDS}, stride1=stride1)


def conv_block(x: Tensor, p: ConvBlockParams) -> Tensor:
    h = ad.conv3d(x, p.conv1_w, stride=p.stride1, padding=1)
    h = ad.add(h, p.conv1_b)
    h = ad.relu(ad.add(ad.mul(ad.instance_norm(h), p.in1_g), p.in1_b))
    h = ad.conv3d(h, p.conv2_w, stride=1, padding=1)
    h = ad.add(h, p.conv2_b)
    return ad.relu(ad.add(ad.mul(ad.instance_norm(h), p.in2_g), p.in2_b))


@dataclass
class EnhancerParams:
    image_stages: list  # ConvBlockParams, first conv of each stage strided
    fuse: ConvBlockParams
    target_dims: tuple[int, int, int]  # (2H, 2W, 2D)
    no_image_branch: bool = False


@dataclass
class PredictParams:
    head: ConvBlockParams
    upsample_factor: tuple[int, int, int]
    smooth_w: Tensor
    smooth_b: Tensor
    proj_w: Tensor  # 1x1x1 -> 1 channel
    proj_b: Tensor


def pyramid_stages(vol_dims, target_dims):
    """Stride-2 stage count taking vol_dims down to target_dims.

    The ratio must be the same power of two on every axis; ratio 1 means
    a single non-strided stage (channel lift only).
    """
    ratios = [v // t for v, t in zip(vol_dims, target_dims)]
    if any(v % t for v, t in zip(vol_dims, target_dims)) or len(set(ratios)) != 1:
        raise ShapeMismatchError(
            f"volume dims {vol_dims} not reducible to {target_dims} by stride-2 stages"
        )
    r = ratios[0]
    if r < 1 or (r & (r - 1)) != 0:
        raise ShapeMismatchError(
            f"volume/feature ratio {r} must be a power of two"
        )
    return max(1, r.bit_length() - 1)  # log2(r) stages, min 1


def original_feature_enhancer(z: FeatureMap, image: Tensor, p: EnhancerParams) -> FeatureMap:
    """Upsample one tap to (2H, 2W, 2D), fuse with image-branch features."""
    up = ad.trilinear_upsample(z.data, 2)  # (2H, 2W, 2D, C)
    if tuple(up.shape[:3]) != tuple(p.target_dims):
        raise ShapeMismatchError(
            f"enhancer target {p.target_dims} != upsampled tap {up.shape[:3]}"
        )
    if p.no_image_branch:
        cout = p.image_stages[-1].conv2_w.shape[4]
        img_feat = ad.tensor(
            np.zeros(tuple(p.target_dims) + (cout,)), dtype=up.data.dtype
        )
    else:
        img_feat = image
        for stage in p.image_stages:
            img_feat = conv_block(img_feat, stage)
        if tuple(img_feat.shape[:3]) != tuple(p.target_dims):
            raise ShapeMismatchError(
                f"image branch produced {img_feat.shape[:3]}, expected {p.target_dims}"
            )
    fused = conv_block(ad.concat([up, img_feat], axis=3), p.fuse)
    return FeatureMap.wrap(fused)


def predict(enhanced: list[FeatureMap], p: PredictParams) -> Tensor:
    """Concatenate enhancer outputs and emit an (H̄, W̄, D̄) probability map."""
    shapes = {tuple(e.data.shape) for e in enhanced}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"enhancer outputs disagree in shape: {shapes}")
    cat = ad.concat([e.data for e in enhanced], axis=3)
    h = conv_block(cat, p.head)
    h = ad.trilinear_upsample(h, p.upsample_factor)
    h = ad.relu(ad.add(ad.conv3d(h, p.smooth_w, stride=1, padding=1), p.smooth_b))
    logits = ad.add(ad.conv3d(h, p.proj_w, stride=1, padding=0), p.proj_b)
    prob = ad.sigmoid(logits)
    dims = prob.shape[:3]
    return ad.reshape(prob, dims)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


def _conv_block_specs(prefix, cin, cout):
    return [
        (f"{prefix}.conv1_w", (3, 3, 3, cin, cout), False, "he"),
        (f"{prefix}.conv1_b", (cout,), False, "zeros"),
        (f"{prefix}.in1_g", (cout,), False, "ones"),
        (f"{prefix}.in1_b", (cout,), False, "zeros"),
        (f"{prefix}.conv2_w", (3, 3, 3, cout, cout), False, "he"),
        (f"{prefix}.conv2_b", (cout,), False, "zeros"),
        (f"{prefix}.in2_g", (cout,), False, "ones"),
        (f"{prefix}.in2_b", (cout,), False, "zeros"),
    ]


def param_specs(vol_dims, in_channels, grid_dims, embed_dim, dec_channels,
                n_taps=4, share_image_branch=False):
    """(name, shape, frozen, init) for the whole decoder."""
    target = tuple(2 * g for g in grid_dims)
    n_stages = pyramid_stages(vol_dims, target)
    specs = []

    def image_branch(prefix):
        out = []
        cin = in_channels
        for s in range(n_stages):
            out += _conv_block_specs(f"{prefix}.s{s}", cin, dec_channels)
            cin = dec_channels
        return out

    if share_image_branch:
        specs += image_branch("decoder.imgshared")
    for j in range(1, n_taps + 1):
        if not share_image_branch:
            specs += image_branch(f"decoder.enh{j}.img")
        specs += _conv_block_specs(
            f"decoder.enh{j}.fuse", embed_dim + dec_channels, dec_channels
        )
    head_c = dec_channels
    specs += _conv_block_specs("decoder.head", n_taps * dec_channels, head_c)
    specs += [
        ("decoder.smooth_w", (3, 3, 3, head_c, head_c), False, "he"),
        ("decoder.smooth_b", (head_c,), False, "zeros"),
        ("decoder.proj_w", (1, 1, 1, head_c, 1), False, "he"),
        # negative prior: start predictions near the foreground rate of
        # small lesions instead of 0.5, avoiding the early collapse phase
        ("decoder.proj_b", (1,), False, "neg_prior"),
    ]
    return specs


def enhancer_from_store(store, j, vol_dims, grid_dims, no_image_branch=False,
                        share_image_branch=False):
    target = tuple(2 * g for g in grid_dims)
    n_stages = pyramid_stages(vol_dims, target)
    ratio = vol_dims[0] // target[0]
    stage_stride = 2 if ratio > 1 else 1
    img_prefix = "decoder.imgshared" if share_image_branch else f"decoder.enh{j}.img"
    stages = [
        ConvBlockParams.from_store(store, f"{img_prefix}.s{s}", stride1=stage_stride)
        for s in range(n_stages)
    ]
    fuse = ConvBlockParams.from_store(store, f"decoder.enh{j}.fuse")
    return EnhancerParams(
        image_stages=stages,
        fuse=fuse,
        target_dims=target,
        no_image_branch=no_image_branch,
    )


def predict_from_store(store, vol_dims, grid_dims):
    target = tuple(2 * g for g in grid_dims)
    factor = tuple(v // t for v, t in zip(vol_dims, target))
    return PredictParams(
        head=ConvBlockParams.from_store(store, "decoder.head"),
        upsample_factor=factor,
        smooth_w=store["decoder.smooth_w"],
        smooth_b=store["decoder.smooth_b"],
        proj_w=store["decoder.proj_w"],
        proj_b=store["decoder.proj_b"],
    )
