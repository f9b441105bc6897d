"""Single source for the gradient-verification tolerance (64-bit mode)."""

DEFAULT_TOL = 1e-4
