"""Named trainable arrays with per-parameter freeze flags.

Frozen entries keep participating in forward/backward math but are
excluded from optimizer updates; marking an entry frozen also clears its
``requires_grad`` so backward prunes the corresponding weight-gradient
work.
"""

from __future__ import annotations

from .tensor import GraphError, Tensor


class ParameterStore:
    """Ordered mapping name -> (Tensor, frozen)."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name, value, frozen=False):
        if name in self._entries:
            raise GraphError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = not frozen
        self._entries[name] = t
        self._frozen[name] = bool(frozen)
        return t

    def __getitem__(self, name) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise GraphError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return [(n, t, self._frozen[n]) for n, t in self._entries.items()]

    def is_frozen(self, name):
        if name not in self._frozen:
            raise GraphError(f"unknown parameter {name!r}")
        return self._frozen[name]

    def set_frozen(self, name, frozen):
        if name not in self._entries:
            raise GraphError(f"unknown parameter {name!r}")
        self._frozen[name] = bool(frozen)
        self._entries[name].requires_grad = not frozen

    def trainable(self):
        return [(n, t) for n, t, fr in self.items() if not fr]

    def frozen(self):
        return [(n, t) for n, t, fr in self.items() if fr]

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def total_params(self):
        return sum(t.size for t in self._entries.values())

    def trainable_params(self):
        return sum(t.size for _, t in self.trainable())
