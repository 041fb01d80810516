"""Named activation functions."""

from __future__ import annotations

import math

from .expr import ActivationDef, parse

# tanh approximation of GELU with its standard constants.
_GELU = f"0.5*x1*(1 + tanh({math.sqrt(2.0 / math.pi)!r}*(x1 + 0.044715*x1^3)))"

_SOURCES = {
    "sigmoid": ("sigmoid(x1)", 1),
    "tanh": ("tanh(x1)", 1),
    "relu": ("max(0, x1)", 1),
    "swish": ("x1*sigmoid(x1)", 1),
    "gelu": (_GELU, 1),
    "hardtanh": ("min(1, max(x1, -1))", 1),
    # sigmoid-shaped form with range (0, 1)
    "loglog": ("1 - exp(-exp(x1))", 1),
    "sig_tanh": ("sigmoid(x1)*tanh(x2)", 2),
    "x_sig": ("x1*sigmoid(x2)", 2),
}

PRESETS: dict[str, ActivationDef] = {
    name: ActivationDef(name, arity, parse(text)) for name, (text, arity) in _SOURCES.items()
}
PRESET_TEXT: dict[str, str] = {name: text for name, (text, _) in _SOURCES.items()}

ALIASES = {"hard_tanh": "hardtanh", "hard-tanh": "hardtanh", "log_log": "loglog", "log-log": "loglog"}

ONE_D = ("sigmoid", "tanh", "relu", "swish", "gelu", "hardtanh", "loglog")
TWO_D = ("sig_tanh", "x_sig")


def get(name: str) -> ActivationDef:
    key = ALIASES.get(name.lower(), name.lower())
    try:
        return PRESETS[key]
    except KeyError:
        raise KeyError(f"unknown activation preset {name!r}; known: {', '.join(PRESETS)}") from None
