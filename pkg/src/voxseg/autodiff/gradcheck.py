"""Central-finite-difference verification of analytic gradients.

``gradient_check(f, x)`` reduces f's output to a scalar through a fixed
random projection, backpropagates, and compares against central
differences coordinate by coordinate. Coordinates where one-sided
differences disagree (kinks such as relu at exactly 0, whose derivative
we define as 0) are flagged rather than failed.

Runs in 64-bit mode only: float32 finite differences would drown in
rounding noise at the tolerances used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GraphError, Tensor, backward, mul, reduce_sum, tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    flagged: list = field(default_factory=list)  # kink coordinates, excluded
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures and self.max_rel_error <= self.tol


def _scalar_eval(f, x_data, proj):
    out = f(tensor(x_data, dtype=np.float64))
    return float((out.data * proj).sum())


def gradient_check(f, x, tol=1e-4, step=1e-5, seed=0):
    """Compare analytic and central-difference gradients of ``f`` at ``x``.

    f maps Tensor -> Tensor; x is a float64 Tensor or array. Returns a
    GradCheckReport; ``passed`` means the max relative error over smooth
    coordinates is <= tol and no genuine mismatch was found.
    """
    x_data = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if not np.all(np.isfinite(x_data)):
        raise GraphError("gradient_check: non-finite input")

    probe = f(tensor(x_data.copy(), dtype=np.float64))
    probe2 = f(tensor(x_data.copy(), dtype=np.float64))
    if probe.data.shape != probe2.data.shape or not np.array_equal(
        probe.data, probe2.data
    ):
        raise GraphError("gradient_check: f is not deterministic")

    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(probe.data.shape)

    xt = tensor(x_data.copy(), requires_grad=True, dtype=np.float64)
    out = f(xt)
    backward(reduce_sum(mul(out, tensor(proj, dtype=np.float64))))
    analytic = (
        xt.grad if xt.grad is not None else np.zeros_like(x_data)
    ).reshape(-1)

    flat = x_data.reshape(-1)
    numeric = np.zeros_like(flat)
    base = None
    max_err = 0.0
    flagged, failures = [], []
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = _scalar_eval(f, x_data, proj)
        flat[i] = orig - step
        f_minus = _scalar_eval(f, x_data, proj)
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * step)

        denom = max(abs(analytic[i]), abs(numeric[i]), 1e-3)
        err = abs(analytic[i] - numeric[i]) / denom
        if err > tol:
            # distinguish a kink from a wrong derivative: one-sided slopes
            # agree at smooth points and split at subgradient points
            if base is None:
                base = _scalar_eval(f, x_data, proj)
            fwd = (f_plus - base) / step
            bwd = (base - f_minus) / step
            gap = abs(fwd - bwd) / max(abs(fwd), abs(bwd), 1e-3)
            if gap > 10.0 * tol:
                flagged.append(i)
                continue
            failures.append((i, float(analytic[i]), float(numeric[i])))
        max_err = max(max_err, err)

    return GradCheckReport(
        max_rel_error=float(max_err),
        tol=tol,
        n_checked=flat.size,
        flagged=flagged,
        failures=failures,
    )
