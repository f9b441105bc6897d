"""Full gradient-verification suite: every differentiable op and every
composite block checked against central finite differences on many
random small instances, in 64-bit mode.

The CLI 'gradcheck' subcommand and the acceptance tests both run this.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import encoder as enc
from . import prompter as pr
from .gradcheck_tol import DEFAULT_TOL
from .objectives import combined_loss
from .patch_embed import FeatureMap


@dataclass
class CaseResult:
    name: str
    instances: int
    max_err: float
    flagged: int
    passed: bool


def _t(rng, *shape, lo=None, hi=None):
    if lo is None:
        return ad.tensor(rng.standard_normal(shape), dtype=np.float64)
    return ad.tensor(rng.uniform(lo, hi, shape), dtype=np.float64)


# -- core op cases ------------------------------------------------------------


def _case_matmul(rng):
    m, k, n = rng.integers(2, 5, 3)
    b = _t(rng, k, n)
    return (lambda x: ad.matmul(x, b)), rng.standard_normal((m, k))


def _case_matmul_batched(rng):
    h, m, k, n = 2, *rng.integers(2, 4, 3)
    b = _t(rng, h, k, n)
    return (lambda x: ad.matmul(x, b)), rng.standard_normal((h, m, k))


def _case_conv3d(rng):
    kd = tuple(rng.integers(1, 4, 3))
    cin, cout = rng.integers(1, 3), rng.integers(1, 4)
    stride = tuple(rng.integers(1, 3, 3))
    padding = tuple(rng.integers(0, 2, 3))
    dims = tuple(int(k + s * rng.integers(1, 3)) for k, s in zip(kd, stride))
    w = _t(rng, *kd, cin, cout)
    return (
        lambda x: ad.conv3d(x, w, stride=stride, padding=padding),
        rng.standard_normal(dims + (int(cin),)),
    )


def _case_conv3d_wrt_kernel(rng):
    x = _t(rng, 4, 4, 4, 2)
    return (
        lambda w: ad.conv3d(x, w, stride=1, padding=1),
        rng.standard_normal((3, 3, 3, 2, 2)),
    )


def _case_upsample(rng):
    dims = tuple(rng.integers(2, 4, 3))
    factor = tuple(rng.integers(1, 3, 3))
    c = int(rng.integers(1, 3))
    return (lambda x: ad.trilinear_upsample(x, factor)), rng.standard_normal(dims + (c,))


def _case_relu(rng):
    return ad.relu, rng.standard_normal(tuple(rng.integers(2, 5, 2)))


def _case_gelu(rng):
    return ad.gelu, rng.standard_normal(tuple(rng.integers(2, 5, 2)))


def _case_sigmoid(rng):
    return ad.sigmoid, rng.standard_normal(tuple(rng.integers(2, 5, 2)))


def _case_softmax(rng):
    nd = int(rng.integers(1, 4))
    shape = tuple(rng.integers(2, 5, nd))
    axis = int(rng.integers(0, nd))
    return (lambda x: ad.softmax(x, axis=axis)), rng.standard_normal(shape)


def _case_layer_norm(rng):
    shape = tuple(rng.integers(2, 5, 2))
    return (lambda x: ad.layer_norm(x, axis=-1)), rng.standard_normal(shape)


def _case_instance_norm(rng):
    shape = tuple(rng.integers(2, 4, 4))
    return ad.instance_norm, rng.standard_normal(shape)


def _case_concat(rng):
    other = _t(rng, 3, 2)
    return (lambda x: ad.concat([x, other], axis=1)), rng.standard_normal((3, 4))


def _case_add_broadcast(rng):
    b = _t(rng, 4)
    return (lambda x: ad.add(x, b)), rng.standard_normal((3, 4))


def _case_mul(rng):
    b = _t(rng, 3, 4)
    return (lambda x: ad.mul(x, b)), rng.standard_normal((3, 4))


def _case_div(rng):
    b = ad.tensor(rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)),
                  dtype=np.float64)
    return (lambda x: ad.div(x, b)), rng.standard_normal((3, 4))


def _case_sub(rng):
    b = _t(rng, 3, 4)
    return (lambda x: ad.sub(x, b)), rng.standard_normal((3, 4))


def _case_scale(rng):
    s = float(rng.uniform(-2, 2))
    return (lambda x: ad.scale(x, s)), rng.standard_normal((4, 3))


def _case_log(rng):
    return ad.log, rng.uniform(0.2, 3.0, (4, 3))


def _case_clamp(rng):
    return (lambda x: ad.clamp(x, -2.5, 2.5)), rng.standard_normal((4, 4))


def _case_permute(rng):
    axes = tuple(rng.permutation(3))
    return (lambda x: ad.permute(x, axes)), rng.standard_normal((2, 3, 4))


def _case_reshape(rng):
    return (lambda x: ad.reshape(x, (6, 2))), rng.standard_normal((3, 4))


def _case_reduce_sum(rng):
    nd = int(rng.integers(1, 4))
    shape = tuple(rng.integers(2, 5, nd))
    axis = None if rng.random() < 0.3 else int(rng.integers(0, nd))
    return (lambda x: ad.reduce_sum(x, axis=axis)), rng.standard_normal(shape)


def _case_reduce_mean(rng):
    nd = int(rng.integers(1, 4))
    shape = tuple(rng.integers(2, 5, nd))
    axis = None if rng.random() < 0.3 else int(rng.integers(0, nd))
    return (lambda x: ad.reduce_mean(x, axis=axis)), rng.standard_normal(shape)


# -- composite blocks ---------------------------------------------------------


def _mini_layer_params(rng, c=8, l=2, ratio=2):
    def t(*shape, scale=1.0):
        return ad.tensor(rng.standard_normal(shape) * scale, dtype=np.float64)

    return enc.LayerParams(
        norm1_g=ad.tensor(np.ones(c), dtype=np.float64),
        norm1_b=t(c, scale=0.1),
        wq=t(c, c, scale=c ** -0.5), bq=t(c, scale=0.1),
        wk=t(c, c, scale=c ** -0.5), bk=t(c, scale=0.1),
        wv=t(c, c, scale=c ** -0.5), bv=t(c, scale=0.1),
        wo=t(c, c, scale=c ** -0.5), bo=t(c, scale=0.1),
        norm2_g=ad.tensor(np.ones(c), dtype=np.float64),
        norm2_b=t(c, scale=0.1),
        mlp_w1=t(c, ratio * c, scale=c ** -0.5), mlp_b1=t(ratio * c, scale=0.1),
        mlp_w2=t(ratio * c, c, scale=(ratio * c) ** -0.5), mlp_b2=t(c, scale=0.1),
        adapter_down=t(c, l, scale=0.2), adapter_up=t(l, c, scale=0.2),
    )


def _fm(x):
    return FeatureMap.wrap(x)


def _case_adapter(rng):
    p = _mini_layer_params(rng, c=6, l=2)
    return (lambda x: enc.adapter_forward(x, p)), rng.standard_normal((5, 6))


def _case_adapter_wrt_down(rng):
    p = _mini_layer_params(rng, c=6, l=2)
    x = _t(rng, 5, 6)
    return (
        lambda w: enc.adapter_forward(x, dataclasses.replace(p, adapter_down=w)),
        rng.standard_normal((6, 2)),
    )


def _case_layer(rng):
    p = _mini_layer_params(rng)
    return (
        lambda x: enc.layer_forward(_fm(x), p, s=0.7, heads=2).data,
        rng.standard_normal((2, 2, 2, 8)),
    )


def _case_layer_wrt_adapter(rng):
    p = _mini_layer_params(rng)
    x = _t(rng, 2, 2, 2, 8)
    return (
        lambda w: enc.layer_forward(
            _fm(x), dataclasses.replace(p, adapter_up=w), s=1.3, heads=2
        ).data,
        rng.standard_normal((2, 8)),
    )


def _case_two_layer_encoder(rng):
    p1, p2 = _mini_layer_params(rng), _mini_layer_params(rng)

    def f(x):
        z = enc.layer_forward(_fm(x), p1, s=1.0, heads=2)
        return enc.layer_forward(z, p2, s=1.0, heads=2).data

    return f, rng.standard_normal((2, 2, 2, 8))


def _mini_prompter_params(rng, c=4, n=3, m=8):
    def t(*shape, scale=0.5):
        return ad.tensor(rng.standard_normal(shape) * scale, dtype=np.float64)

    wq, wk = t(c, c), t(c, c)
    return pr.PrompterParams(
        wq_sa=wq, wk_sa=wk, wq_ca=wq, wk_ca=wk,
        wv_sa=t(c, c), wv_ca=t(c, c),
        reduce_k=t(n, m), reduce_v=t(n, m),
        down_sa=t(c, c // 2), down_ca=t(c, c // 2),
        norm_q_sa_g=ad.tensor(np.ones(c), dtype=np.float64), norm_q_sa_b=t(c, scale=0.1),
        norm_q_ca_g=ad.tensor(np.ones(c), dtype=np.float64), norm_q_ca_b=t(c, scale=0.1),
        norm_k_ca_g=ad.tensor(np.ones(c), dtype=np.float64), norm_k_ca_b=t(c, scale=0.1),
    )


_PCFG = pr.PrompterConfig(reduced_tokens=3, prompt_layer=12)


def _case_spatial_attention(rng):
    p = _mini_prompter_params(rng)
    return (lambda x: pr.spatial_attention(x, p, _PCFG)), rng.standard_normal((8, 4))


def _case_spatial_wrt_reducer(rng):
    p = _mini_prompter_params(rng)
    x = _t(rng, 8, 4)
    return (
        lambda w: pr.spatial_attention(x, dataclasses.replace(p, reduce_k=w), _PCFG),
        rng.standard_normal((3, 8)),
    )


def _case_channel_attention(rng):
    p = _mini_prompter_params(rng)
    return (lambda x: pr.channel_attention(x, p)), rng.standard_normal((8, 4))


def _case_dual_prompt(rng):
    p = _mini_prompter_params(rng)
    return (lambda x: pr.dual_prompt(x, p, _PCFG)), rng.standard_normal((8, 4))


def _case_dual_prompt_wrt_down(rng):
    p = _mini_prompter_params(rng)
    x = _t(rng, 8, 4)
    return (
        lambda w: pr.dual_prompt(x, dataclasses.replace(p, down_ca=w), _PCFG),
        rng.standard_normal((4, 2)),
    )


def _mini_conv_block(rng, cin, cout, stride1=1):
    def t(*shape, scale=None):
        fan = np.prod(shape[:-1]) if len(shape) > 1 else shape[0]
        s = scale if scale is not None else np.sqrt(2.0 / fan)
        return ad.tensor(rng.standard_normal(shape) * s, dtype=np.float64)

    return dec.ConvBlockParams(
        conv1_w=t(3, 3, 3, cin, cout), conv1_b=t(cout, scale=0.1),
        in1_g=ad.tensor(np.ones(cout), dtype=np.float64), in1_b=t(cout, scale=0.1),
        conv2_w=t(3, 3, 3, cout, cout), conv2_b=t(cout, scale=0.1),
        in2_g=ad.tensor(np.ones(cout), dtype=np.float64), in2_b=t(cout, scale=0.1),
        stride1=stride1,
    )


def _mini_enhancer(rng, c=6, cdec=3):
    return dec.EnhancerParams(
        image_stages=[_mini_conv_block(rng, 1, cdec, stride1=2)],
        fuse=_mini_conv_block(rng, c + cdec, cdec),
        target_dims=(4, 4, 4),
    )


def _case_enhancer(rng):
    p = _mini_enhancer(rng)
    image = _t(rng, 8, 8, 8, 1)
    return (
        lambda x: dec.original_feature_enhancer(_fm(x), image, p).data,
        rng.standard_normal((2, 2, 2, 6)),
    )


def _case_enhancer_wrt_image(rng):
    p = _mini_enhancer(rng)
    tap = _t(rng, 2, 2, 2, 6)
    return (
        lambda img: dec.original_feature_enhancer(_fm(tap), img, p).data,
        rng.standard_normal((8, 8, 8, 1)),
    )


def _mini_predict(rng, cdec=2, n_taps=4):
    def t(*shape, scale=None):
        fan = np.prod(shape[:-1]) if len(shape) > 1 else shape[0]
        s = scale if scale is not None else np.sqrt(2.0 / fan)
        return ad.tensor(rng.standard_normal(shape) * s, dtype=np.float64)

    return dec.PredictParams(
        head=_mini_conv_block(rng, n_taps * cdec, cdec),
        upsample_factor=(2, 2, 2),
        smooth_w=t(3, 3, 3, cdec, cdec), smooth_b=t(cdec, scale=0.1),
        proj_w=t(1, 1, 1, cdec, 1), proj_b=t(1, scale=0.1),
    )


def _case_predict(rng):
    p = _mini_predict(rng)
    others = [_t(rng, 4, 4, 4, 2) for _ in range(3)]

    def f(x):
        maps = [_fm(x)] + [_fm(o) for o in others]
        return dec.predict(maps, p)

    return f, rng.standard_normal((4, 4, 4, 2))


def _case_combined_loss(rng):
    gt = (rng.random((3, 3, 3)) < 0.4).astype(np.float64)
    return (lambda x: combined_loss(x, gt)), rng.uniform(0.05, 0.95, (3, 3, 3))


OP_CASES = [
    ("matmul", _case_matmul),
    ("matmul_batched", _case_matmul_batched),
    ("conv3d", _case_conv3d),
    ("conv3d_wrt_kernel", _case_conv3d_wrt_kernel),
    ("trilinear_upsample", _case_upsample),
    ("relu", _case_relu),
    ("gelu", _case_gelu),
    ("sigmoid", _case_sigmoid),
    ("softmax", _case_softmax),
    ("layer_norm", _case_layer_norm),
    ("instance_norm", _case_instance_norm),
    ("concat", _case_concat),
    ("add_broadcast", _case_add_broadcast),
    ("mul", _case_mul),
    ("div", _case_div),
    ("sub", _case_sub),
    ("scale", _case_scale),
    ("log", _case_log),
    ("clamp", _case_clamp),
    ("permute", _case_permute),
    ("reshape", _case_reshape),
    ("reduce_sum", _case_reduce_sum),
    ("reduce_mean", _case_reduce_mean),
]

BLOCK_CASES = [
    ("adapter", _case_adapter),
    ("adapter_wrt_down", _case_adapter_wrt_down),
    ("encoder_layer", _case_layer),
    ("encoder_layer_wrt_adapter", _case_layer_wrt_adapter),
    ("encoder_two_layers", _case_two_layer_encoder),
    ("spatial_attention", _case_spatial_attention),
    ("spatial_attention_wrt_reducer", _case_spatial_wrt_reducer),
    ("channel_attention", _case_channel_attention),
    ("dual_prompt", _case_dual_prompt),
    ("dual_prompt_wrt_down", _case_dual_prompt_wrt_down),
    ("enhancer", _case_enhancer),
    ("enhancer_wrt_image", _case_enhancer_wrt_image),
    ("predict", _case_predict),
    ("combined_loss", _case_combined_loss),
]

ALL_CASES = OP_CASES + BLOCK_CASES


def run_gradcheck_suite(instances=20, tol=DEFAULT_TOL, seed=0, log_fn=None,
                        cases=None):
    """Run every case; returns a list of CaseResult (all must pass)."""
    results = []
    with ad.precision("f64"):
        for name, maker in cases or ALL_CASES:
            rng = np.random.default_rng(np.random.SeedSequence([0x9C, seed, hash(name) % (2**31)]))
            max_err, flagged, ok = 0.0, 0, True
            for i in range(instances):
                f, x0 = maker(rng)
                rep = ad.gradient_check(f, np.asarray(x0, dtype=np.float64),
                                        tol=tol, seed=seed + i)
                max_err = max(max_err, rep.max_rel_error)
                flagged += len(rep.flagged)
                ok = ok and rep.passed
            results.append(CaseResult(name, instances, max_err, flagged, ok))
            if log_fn:
                status = "ok" if ok else "FAIL"
                log_fn(f"{status:4s} {name:32s} max_rel_err={max_err:.3e} "
                       f"kinks_flagged={flagged}")
    return results
