"""Analytic FLOP and parameter accounting. No tensors are executed:
every count is a closed-form function of the configuration.

Multiply-accumulates are tallied separately from other flops so the MAC
convention (2 flops per MAC by default, 1 with ``mac_flops=1``) can be
switched without re-deriving anything. Headline comparisons between
prompter variants use the 'linear' category — the multiply-accumulates
of parameterized linear maps, the convention common FLOP profilers
apply (they instrument layers, not raw attention matmuls). The
attention products are itemized under 'attention' and can be included
explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ModelSpec

PROMPTER_VARIANTS = ("spatial", "dual-shared", "dual-full")


@dataclass(frozen=True)
class CostItem:
    module: str
    name: str
    category: str  # linear | attention | norm | act | interp | other
    macs: int = 0
    other_flops: int = 0
    params: int = 0


@dataclass
class CostReport:
    items: list[CostItem] = field(default_factory=list)
    mac_flops: int = 2

    def _filtered(self, module=None, category=None):
        return [
            it
            for it in self.items
            if (module is None or it.module == module)
            and (category is None or it.category == category)
        ]

    def macs(self, module=None, category=None):
        return sum(it.macs for it in self._filtered(module, category))

    def flops(self, module=None, category=None):
        sel = self._filtered(module, category)
        return sum(it.macs * self.mac_flops + it.other_flops for it in sel)

    def params(self, module=None):
        return sum(it.params for it in self._filtered(module))

    def modules(self):
        seen = []
        for it in self.items:
            if it.module not in seen:
                seen.append(it.module)
        return seen

    def render(self):
        lines = [
            f"{'module':<12} {'flops':>16} {'linear flops':>16} {'params':>12}",
        ]
        for m in self.modules():
            lines.append(
                f"{m:<12} {self.flops(m):>16,} {self.flops(m, category='linear'):>16,} "
                f"{self.params(m):>12,}"
            )
        lines.append(
            f"{'total':<12} {self.flops():>16,} {self.flops(category='linear'):>16,} "
            f"{self.params():>12,}"
        )
        lines.append(f"(convention: {self.mac_flops} flops per multiply-accumulate)")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# per-module item generators
# ---------------------------------------------------------------------------


def patch_embed_items(spec: ModelSpec):
    ph, pw, pd = spec.patch
    n, c = spec.in_channels, spec.embed_dim
    h, w, d = spec.grid_dims
    dbar = spec.vol_dims[2]
    m = h * w * d
    items = []
    if spec.patch_mode == "pseudo3d":
        items.append(CostItem("patch", "conv2d", "linear",
                              macs=h * w * dbar * ph * pw * n * c,
                              params=ph * pw * n * c + c))
        items.append(CostItem("patch", "depth_agg", "linear",
                              macs=m * pd * c, params=pd * c))
    else:
        items.append(CostItem("patch", "conv3d", "linear",
                              macs=m * ph * pw * pd * n * c,
                              params=ph * pw * pd * n * c + c))
    items.append(CostItem("patch", "positional", "other",
                          other_flops=m * c, params=m * c))
    return items


def encoder_items(spec: ModelSpec):
    c, r, l, h = spec.embed_dim, spec.mlp_ratio, spec.adapter_dim, spec.heads
    m = spec.token_count
    items = []
    for i in range(1, spec.layers + 1):
        mod = "encoder"
        pre = f"layer{i:02d}"
        items += [
            CostItem(mod, f"{pre}.norms", "norm",
                     other_flops=2 * 5 * m * c, params=4 * c),
            CostItem(mod, f"{pre}.qkv_proj", "linear",
                     macs=3 * m * c * c, params=3 * (c * c + c)),
            CostItem(mod, f"{pre}.attn_logits", "attention", macs=m * m * c,
                     other_flops=4 * h * m * m),  # + softmax
            CostItem(mod, f"{pre}.attn_mix", "attention", macs=m * m * c),
            CostItem(mod, f"{pre}.attn_out", "linear",
                     macs=m * c * c, params=c * c + c),
            CostItem(mod, f"{pre}.mlp", "linear",
                     macs=2 * r * m * c * c,
                     other_flops=10 * m * r * c,  # activation
                     params=c * r * c + r * c + r * c * c + c),
            CostItem(mod, f"{pre}.adapter", "linear",
                     macs=2 * m * c * l, other_flops=m * l,
                     params=2 * c * l),
        ]
    return items


def prompter_items(token_count, channels, n, variant, module="prompter"):
    """Items for one prompter variant at (M, C) with n reduced tokens."""
    if variant not in PROMPTER_VARIANTS:
        raise ValueError(f"unknown prompter variant {variant!r}; choose {PROMPTER_VARIANTS}")
    m, c = token_count, channels
    norm_flops = 5 * m * c
    items = [
        CostItem(module, "sa.q_proj", "linear", macs=m * c * c, params=c * c),
        CostItem(module, "sa.k_proj", "linear", macs=m * c * c, params=c * c),
        CostItem(module, "sa.v_proj", "linear", macs=m * c * c, params=c * c),
        CostItem(module, "sa.reduce_k", "linear", macs=n * m * c, params=n * m),
        CostItem(module, "sa.reduce_v", "linear", macs=n * m * c, params=n * m),
        CostItem(module, "sa.q_norm", "norm", other_flops=norm_flops, params=2 * c),
        CostItem(module, "sa.logits", "attention", macs=n * m * c,
                 other_flops=4 * n * m),
        CostItem(module, "sa.mix", "attention", macs=n * m * c),
    ]
    if variant == "spatial":
        items.append(CostItem(module, "sa.down", "linear",
                              macs=m * c * c, params=c * c))
        return items
    # dual variants add channel attention and the residual fusion
    items += [
        CostItem(module, "ca.v_proj", "linear", macs=m * c * c, params=c * c),
        CostItem(module, "ca.q_norm", "norm", other_flops=norm_flops, params=2 * c),
        CostItem(module, "ca.k_norm", "norm", other_flops=norm_flops, params=2 * c),
        CostItem(module, "ca.logits", "attention", macs=m * c * c,
                 other_flops=4 * c * c),
        CostItem(module, "ca.mix", "attention", macs=m * c * c),
        CostItem(module, "sa.down", "linear", macs=m * c * (c // 2),
                 params=c * (c // 2)),
        CostItem(module, "ca.down", "linear", macs=m * c * (c // 2),
                 params=c * (c // 2)),
        CostItem(module, "residual", "other", other_flops=m * c),
    ]
    if variant == "dual-full":  # unshared: CA recomputes its own Q/K products
        items += [
            CostItem(module, "ca.q_proj", "linear", macs=m * c * c, params=c * c),
            CostItem(module, "ca.k_proj", "linear", macs=m * c * c, params=c * c),
        ]
    return items


def _conv_block_items(module, name, voxels_out, cin, cout, k=27):
    """(conv k -> IN -> relu) x2; first conv maps cin -> cout."""
    macs = voxels_out * k * cin * cout + voxels_out * k * cout * cout
    params = k * cin * cout + cout + k * cout * cout + cout  # weights + biases
    params += 4 * cout  # two IN affine pairs
    other = 2 * (5 + 1) * voxels_out * cout  # norms + relus
    return [CostItem(module, name, "linear", macs=macs, params=params),
            CostItem(module, f"{name}.normact", "norm", other_flops=other)]


def decoder_items(spec: ModelSpec):
    c, cdec = spec.embed_dim, spec.dec_channels
    h, w, d = spec.grid_dims
    target = (2 * h, 2 * w, 2 * d)
    tvox = target[0] * target[1] * target[2]
    vvox = spec.vol_dims[0] * spec.vol_dims[1] * spec.vol_dims[2]
    n_taps = len(spec.taps)
    ratio = spec.vol_dims[0] // target[0]
    n_stages = max(1, ratio.bit_length() - 1)

    items = []

    def image_branch(tag):
        out = []
        cin = spec.in_channels
        vox = vvox
        for s in range(n_stages):
            if ratio > 1:
                vox //= 8  # stride-2 stage halves each axis
            out += _conv_block_items("decoder", f"{tag}.s{s}", vox, cin, cdec)
            cin = cdec
        return out

    if spec.share_image_branch:
        items += image_branch("imgshared")
    for j in range(1, n_taps + 1):
        if not spec.share_image_branch:
            items += image_branch(f"enh{j}.img")
        items.append(CostItem("decoder", f"enh{j}.upsample", "interp",
                              other_flops=7 * tvox * c))
        items += _conv_block_items("decoder", f"enh{j}.fuse", tvox, c + cdec, cdec)
    head_c = cdec
    items += _conv_block_items("decoder", "head", tvox, n_taps * cdec, head_c)
    items.append(CostItem("decoder", "up_full", "interp",
                          other_flops=7 * vvox * head_c))
    items.append(CostItem("decoder", "smooth", "linear",
                          macs=vvox * 27 * head_c * head_c,
                          other_flops=vvox * head_c,
                          params=27 * head_c * head_c + head_c))
    items.append(CostItem("decoder", "project", "linear",
                          macs=vvox * head_c,
                          other_flops=4 * vvox,  # sigmoid
                          params=head_c + 1))
    return items


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def count_cost(spec: ModelSpec, mac_flops=2) -> CostReport:
    """Whole-model analytic cost for one forward pass."""
    spec.validate()
    variant = "dual-shared" if spec.share_qk else "dual-full"
    items = (
        patch_embed_items(spec)
        + encoder_items(spec)
        + prompter_items(spec.token_count, spec.embed_dim, spec.prompt_n, variant)
        + decoder_items(spec)
    )
    return CostReport(items=items, mac_flops=mac_flops)


def prompter_cost(feature_shape, n, variant, mac_flops=2) -> CostReport:
    """Prompter-only cost at an explicit feature-map shape (H, W, D, C)."""
    h, w, d, c = feature_shape
    return CostReport(
        items=prompter_items(h * w * d, c, n, variant), mac_flops=mac_flops
    )


def prompter_sharing_reduction(feature_shape=(32, 32, 32, 256), n=64, mac_flops=2):
    """(full - shared) / full over the linear-map flops of the dual prompter.

    Convention-invariant: the MAC factor cancels in the ratio.
    """
    full = prompter_cost(feature_shape, n, "dual-full", mac_flops)
    shared = prompter_cost(feature_shape, n, "dual-shared", mac_flops)
    f = full.flops(category="linear")
    s = shared.flops(category="linear")
    return (f - s) / f


def prompter_table(feature_shape=(32, 32, 32, 256), n=64, mac_flops=2):
    """Per-variant totals plus the sharing reduction, rendered as text."""
    lines = [f"{'prompt method':<22} {'linear flops':>16} {'params':>12}"]
    for variant in PROMPTER_VARIANTS:
        rep = prompter_cost(feature_shape, n, variant, mac_flops)
        lines.append(
            f"{variant:<22} {rep.flops(category='linear'):>16,} {rep.params():>12,}"
        )
    red = prompter_sharing_reduction(feature_shape, n, mac_flops)
    lines.append(f"sharing reduction (full vs shared): {red:.1%}")
    lines.append(f"(convention: {mac_flops} flops per multiply-accumulate)")
    return "\n".join(lines)
