"""Dual-attention auto-prompting over one encoder tap.

Spatial attention is token-level self-attention with linear cost: keys
and values are projected down to a constant ``n`` tokens by learned
(n, M) reducers, so cost grows as O(M*n) instead of O(M^2). Channel
attention mixes channels through a (C, C) affinity built from the same
normalized projections. With ``share_qk`` the two branches read one
physical copy of W_q and W_k (2*C^2 fewer parameters, and the shared
Z@W_q / Z@W_k products are computed once).

Both branch outputs are projected to C/2 channels, concatenated, and
added residually onto the tap, so zero down-projections make the
prompter an exact identity.

Softmax axes (the equations leave them open) are chosen so every output
is a convex combination: spatial weights normalize over the n reduced
keys per query token; the channel affinity normalizes over input
channels per output channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .patch_embed import FeatureMap


@dataclass(frozen=True)
class PrompterConfig:
    reduced_tokens: int = 64
    share_qk: bool = True
    prompt_layer: int = 12
    attn_scaling: bool = True

    def validate(self, taps=(3, 6, 9, 12)):
        if self.reduced_tokens < 1:
            raise ValueError("reduced_tokens must be >= 1")
        if self.prompt_layer not in taps:
            raise ValueError(
                f"prompt_layer {self.prompt_layer} not among taps {tuple(taps)}"
            )
        return self


@dataclass
class PrompterParams:
    wq_sa: Tensor
    wk_sa: Tensor
    wq_ca: Tensor  # same object as wq_sa when weights are shared
    wk_ca: Tensor
    wv_sa: Tensor
    wv_ca: Tensor
    reduce_k: Tensor  # (n, M)
    reduce_v: Tensor
    down_sa: Tensor  # (C, C/2)
    down_ca: Tensor
    norm_q_sa_g: Tensor
    norm_q_sa_b: Tensor
    norm_q_ca_g: Tensor
    norm_q_ca_b: Tensor
    norm_k_ca_g: Tensor
    norm_k_ca_b: Tensor

    @classmethod
    def from_store(cls, store, share_qk):
        def g(name):
            return store[f"prompter.{name}"]

        if share_qk:
            wq = g("wq")
            wk = g("wk")
            q_fields = dict(wq_sa=wq, wq_ca=wq, wk_sa=wk, wk_ca=wk)
        else:
            q_fields = dict(
                wq_sa=g("wq_sa"), wq_ca=g("wq_ca"),
                wk_sa=g("wk_sa"), wk_ca=g("wk_ca"),
            )
        return cls(
            **q_fields,
            wv_sa=g("wv_sa"),
            wv_ca=g("wv_ca"),
            reduce_k=g("reduce_k"),
            reduce_v=g("reduce_v"),
            down_sa=g("down_sa"),
            down_ca=g("down_ca"),
            norm_q_sa_g=g("norm_q_sa_g"),
            norm_q_sa_b=g("norm_q_sa_b"),
            norm_q_ca_g=g("norm_q_ca_g"),
            norm_q_ca_b=g("norm_q_ca_b"),
            norm_k_ca_g=g("norm_k_ca_g"),
            norm_k_ca_b=g("norm_k_ca_b"),
        )


def param_specs(cfg: PrompterConfig, embed_dim, token_count):
    """(name, shape, frozen, init) for prompter parameters."""
    c, n, m = embed_dim, cfg.reduced_tokens, token_count
    if c % 2 != 0:
        raise ValueError(f"prompter needs an even channel count, got {c}")
    if n > m:
        raise ValueError(f"reduced tokens {n} exceed token count {m}")
    if cfg.share_qk:
        specs = [
            ("prompter.wq", (c, c), False, "trunc002"),
            ("prompter.wk", (c, c), False, "trunc002"),
        ]
    else:
        specs = [
            ("prompter.wq_sa", (c, c), False, "trunc002"),
            ("prompter.wk_sa", (c, c), False, "trunc002"),
            ("prompter.wq_ca", (c, c), False, "trunc002"),
            ("prompter.wk_ca", (c, c), False, "trunc002"),
        ]
    specs += [
        ("prompter.wv_sa", (c, c), False, "trunc002"),
        ("prompter.wv_ca", (c, c), False, "trunc002"),
        ("prompter.reduce_k", (n, m), False, "trunc002"),
        ("prompter.reduce_v", (n, m), False, "trunc002"),
        ("prompter.down_sa", (c, c // 2), False, "zeros"),
        ("prompter.down_ca", (c, c // 2), False, "zeros"),
        ("prompter.norm_q_sa_g", (c,), False, "ones"),
        ("prompter.norm_q_sa_b", (c,), False, "zeros"),
        ("prompter.norm_q_ca_g", (c,), False, "ones"),
        ("prompter.norm_q_ca_b", (c,), False, "zeros"),
        ("prompter.norm_k_ca_g", (c,), False, "ones"),
        ("prompter.norm_k_ca_b", (c,), False, "zeros"),
    ]
    return specs


def _normed_projection(z, w, g, b):
    return ad.add(ad.mul(ad.layer_norm(ad.matmul(z, w), axis=-1), g), b)


def _tokens_of(x):
    return (x.tokens(), x) if isinstance(x, FeatureMap) else (x, None)


def _rewrap(out, fm):
    return fm.with_tokens(out) if fm is not None else out


def spatial_attention(x, p: PrompterParams, cfg: PrompterConfig,
                      return_weights=False):
    """Linear-complexity token attention; shape preserved.

    With identity reducers and n = M this is exactly full self-attention
    with the same projection weights.
    """
    z, fm = _tokens_of(x)
    m, c = z.shape
    n = p.reduce_k.shape[0]
    if n > m:
        raise ShapeMismatchError(f"spatial attention: n={n} exceeds tokens M={m}")
    if p.reduce_k.shape[1] != m or p.reduce_v.shape[1] != m:
        raise ShapeMismatchError(
            f"spatial attention: reducers built for {p.reduce_k.shape[1]} tokens, got {m}"
        )
    q = _normed_projection(z, p.wq_sa, p.norm_q_sa_g, p.norm_q_sa_b)  # (M, C)
    k_hat = ad.matmul(p.reduce_k, ad.matmul(z, p.wk_sa))  # (n, C)
    v_hat = ad.matmul(p.reduce_v, ad.matmul(z, p.wv_sa))  # (n, C)
    logits = ad.matmul(k_hat, ad.permute(q, (1, 0)))  # (n, M)
    if cfg.attn_scaling:
        logits = ad.scale(logits, 1.0 / math.sqrt(c))
    weights = ad.softmax(logits, axis=0)  # each query's column sums to 1
    out = ad.matmul(ad.permute(weights, (1, 0)), v_hat)  # (M, C)
    result = _rewrap(out, fm)
    return (result, weights) if return_weights else result


def channel_attention(x, p: PrompterParams, scaling=True, return_affinity=False):
    """Channel-mixing attention through a (C, C) affinity; shape preserved.

    The exposed affinity is (out_channel, in_channel) with rows summing
    to 1: output channel b is the convex mix sum_a affinity[b, a] * V[:, a].
    """
    z, fm = _tokens_of(x)
    _, c = z.shape
    if p.wq_ca.shape[0] != c:
        raise ShapeMismatchError(
            f"channel attention: channels {c} != weights {p.wq_ca.shape[0]}"
        )
    q = _normed_projection(z, p.wq_ca, p.norm_q_ca_g, p.norm_q_ca_b)
    k = _normed_projection(z, p.wk_ca, p.norm_k_ca_g, p.norm_k_ca_b)
    v = ad.matmul(z, p.wv_ca)
    logits = ad.matmul(ad.permute(q, (1, 0)), k)  # (C, C), rows = in channels
    if scaling:
        logits = ad.scale(logits, 1.0 / math.sqrt(c))
    mix = ad.softmax(logits, axis=0)  # normalize over input channels
    out = ad.matmul(v, mix)
    result = _rewrap(out, fm)
    if return_affinity:
        return result, ad.permute(mix, (1, 0))
    return result


def dual_prompt(x, p: PrompterParams, cfg: PrompterConfig):
    """Residual fusion of the two down-projected attention branches."""
    z, fm = _tokens_of(x)
    _, c = z.shape
    if c % 2 != 0:
        raise ShapeMismatchError(f"dual prompt requires an even channel count, got {c}")
    sa = spatial_attention(z, p, cfg)
    ca = channel_attention(z, p, scaling=cfg.attn_scaling)
    fused = ad.concat([ad.matmul(sa, p.down_sa), ad.matmul(ca, p.down_ca)], axis=1)
    out = ad.add(z, fused)
    return _rewrap(out, fm)


def attach_prompter(taps: dict, p: PrompterParams, cfg: PrompterConfig):
    """Replace exactly the configured tap with its prompted version."""
    if cfg.prompt_layer not in taps:
        raise ShapeMismatchError(
            f"prompt layer {cfg.prompt_layer} not among taps {sorted(taps)}"
        )
    out = dict(taps)
    out[cfg.prompt_layer] = dual_prompt(taps[cfg.prompt_layer], p, cfg)
    return out
