"""Model assembly: parameter creation, initialization, and the full
volume -> probability-map forward pass.

Every module contributes (name, shape, frozen, init) parameter specs;
``init_store`` materializes them from one seeded stream in a fixed
order, so identical seeds give bit-identical stores. The freeze policy
is applied at build time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import encoder as enc
from . import patch_embed as pe
from . import prompter as pr
from .autodiff import ParameterStore, Tensor
from .volume_io import Volume


@dataclass(frozen=True)
class ModelSpec:
    """Complete architectural record for one build."""

    vol_dims: tuple[int, int, int] = (32, 32, 32)
    in_channels: int = 1
    patch: tuple[int, int, int] = (4, 4, 4)
    patch_mode: str = "pseudo3d"
    embed_dim: int = 64
    heads: int = 4
    layers: int = 12
    mlp_ratio: int = 4
    adapter_dim: int = 16
    adapter_scale: float = 1.0
    activation: str = "gelu"
    taps: tuple[int, ...] = (3, 6, 9, 12)
    prompt_n: int = 64
    prompt_layer: int = 12
    share_qk: bool = True
    attn_scaling: bool = True
    dec_channels: int = 16
    no_image_branch: bool = False
    share_image_branch: bool = False

    @property
    def grid_dims(self):
        return tuple(v // p for v, p in zip(self.vol_dims, self.patch))

    @property
    def token_count(self):
        h, w, d = self.grid_dims
        return h * w * d

    def patch_config(self):
        return pe.PatchConfig(self.patch, self.embed_dim, self.patch_mode).validate()

    def encoder_config(self):
        return enc.EncoderConfig(
            heads=self.heads,
            adapter_dim=self.adapter_dim,
            scale=self.adapter_scale,
            layers=self.layers,
            taps=self.taps,
            mlp_ratio=self.mlp_ratio,
            activation=self.activation,
        ).validate(self.embed_dim)

    def prompter_config(self):
        return pr.PrompterConfig(
            reduced_tokens=self.prompt_n,
            share_qk=self.share_qk,
            prompt_layer=self.prompt_layer,
            attn_scaling=self.attn_scaling,
        ).validate(self.taps)

    def validate(self):
        self.patch_config()
        for v, p in zip(self.vol_dims, self.patch):
            if v % p != 0:
                raise ValueError(f"volume dims {self.vol_dims} not divisible by patch {self.patch}")
        self.encoder_config()
        self.prompter_config()
        if self.prompt_n > self.token_count:
            raise ValueError(
                f"reduced tokens {self.prompt_n} exceed token count {self.token_count}"
            )
        dec.pyramid_stages(self.vol_dims, tuple(2 * g for g in self.grid_dims))
        return self


def _patch_param_specs(spec: ModelSpec):
    ph, pw, pd = spec.patch
    n, c = spec.in_channels, spec.embed_dim
    if spec.patch_mode == "pseudo3d":
        specs = [
            ("patch.w2d", (ph, pw, 1, n, c), False, "trunc002"),
            ("patch.b2d", (c,), False, "zeros"),
            ("patch.wdepth", (pd, c), False, "trunc002"),
        ]
    else:
        specs = [
            ("patch.w3d", (ph, pw, pd, n, c), False, "trunc002"),
            ("patch.b3d", (c,), False, "zeros"),
        ]
    specs.append(("patch.pos", spec.grid_dims + (c,), False, "trunc002"))
    return specs


def param_specs(spec: ModelSpec):
    specs = _patch_param_specs(spec)
    specs += enc.param_specs(spec.encoder_config(), spec.embed_dim)
    specs += pr.param_specs(spec.prompter_config(), spec.embed_dim, spec.token_count)
    specs += dec.param_specs(
        spec.vol_dims,
        spec.in_channels,
        spec.grid_dims,
        spec.embed_dim,
        spec.dec_channels,
        n_taps=len(spec.taps),
        share_image_branch=spec.share_image_branch,
    )
    return specs


def _init_array(rng, shape, init):
    if init == "zeros":
        return np.zeros(shape)
    if init == "ones":
        return np.ones(shape)
    if init == "trunc002":
        return np.clip(rng.standard_normal(shape) * 0.02, -0.04, 0.04)
    if init == "scaled":  # 1/sqrt(fan_in) for dense maps
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        return rng.standard_normal(shape) / np.sqrt(fan_in)
    if init == "he":  # conv kernels (..., Cin, Cout)
        fan_in = int(np.prod(shape[:-1]))
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    if init == "neg_prior":  # sigmoid(-2) ~ 0.12 initial foreground prob
        return np.full(shape, -2.0)
    raise ValueError(f"unknown init tag {init!r}")


def init_store(spec: ModelSpec, seed) -> ParameterStore:
    """Materialize all parameters; deterministic in (spec, seed, dtype mode)."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([0x1A17, int(seed)]))
    store = ParameterStore()
    for name, shape, frozen, init in param_specs(spec):
        store.add(name, ad.tensor(_init_array(rng, shape, init)), frozen=frozen)
    enc.apply_freeze_policy(store)
    return store


@dataclass
class ForwardTrace:
    """Intermediate products handed back alongside the probability map."""

    taps: dict = field(default_factory=dict)
    prompted: dict = field(default_factory=dict)
    enhanced: list = field(default_factory=list)


def embed_volume(x: Tensor, spec: ModelSpec, store) -> pe.FeatureMap:
    if spec.patch_mode == "pseudo3d":
        fm = pe.pseudo3d_patch_embed(
            x, store["patch.w2d"], store["patch.b2d"], store["patch.wdepth"], spec.patch
        )
    else:
        fm = pe.true3d_patch_embed(x, store["patch.w3d"], store["patch.b3d"], spec.patch)
    return pe.add_positional(fm, store["patch.pos"])


def forward(spec: ModelSpec, store, volume, return_trace=False):
    """Volume (or raw (H̄, W̄, D̄, N) array) -> probability Tensor (H̄, W̄, D̄)."""
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    if data.shape != tuple(spec.vol_dims) + (spec.in_channels,):
        raise ad.ShapeMismatchError(
            f"volume shape {data.shape} does not match model input "
            f"{tuple(spec.vol_dims) + (spec.in_channels,)}"
        )
    x = ad.tensor(data)
    fm = embed_volume(x, spec, store)
    taps = enc.encode(fm, spec.encoder_config(), store)
    pparams = pr.PrompterParams.from_store(store, spec.share_qk)
    prompted = pr.attach_prompter(taps, pparams, spec.prompter_config())
    enhanced = []
    for j, tap_index in enumerate(sorted(prompted), start=1):
        ep = dec.enhancer_from_store(
            store, j, spec.vol_dims, spec.grid_dims,
            no_image_branch=spec.no_image_branch,
            share_image_branch=spec.share_image_branch,
        )
        enhanced.append(dec.original_feature_enhancer(prompted[tap_index], x, ep))
    pp = dec.predict_from_store(store, spec.vol_dims, spec.grid_dims)
    prob = dec.predict(enhanced, pp)
    if return_trace:
        return prob, ForwardTrace(taps=taps, prompted=prompted, enhanced=enhanced)
    return prob
