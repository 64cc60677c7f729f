"""Scalar fields on chart domains with value and jet evaluation.

Used for lapse functions beta and potentials V.  Closed-form tokens keep
high-order derivatives exact; tabulated grids fall back to bicubic
interpolation (derivative order <= 2).
"""

from __future__ import annotations

import numpy as np

from .jets import Jet

__all__ = ["ConstantField", "TrigField", "field_from_config"]


class ConstantField:
    def __init__(self, c=0.0):
        self.c = float(c)

    def value(self, x):
        x = np.asarray(x)
        return self.c * np.ones(x.shape[:-1]) if x.ndim > 1 else self.c

    def jet(self, space, x_jets):
        batch = x_jets[0].batch
        return Jet.constant(space, self.c * np.ones(batch) if batch else self.c)

    def config(self):
        return {"type": "const", "c": self.c}


class TrigField:
    """c0 + sum_m amp_m * sin(k_m . x + phase_m) on a periodic chart."""

    def __init__(self, c0=0.0, terms=()):
        self.c0 = float(c0)
        self.terms = [(float(a), np.asarray(k, dtype=float), float(p))
                      for (a, k, p) in terms]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self.c0 * np.ones(x.shape[:-1])
        for a, k, p in self.terms:
            out = out + a * np.sin(x @ k + p)
        return out if out.shape else float(out)

    def jet(self, space, x_jets):
        batch = x_jets[0].batch
        out = Jet.constant(space, self.c0 * np.ones(batch) if batch else self.c0)
        for a, k, p in self.terms:
            arg = Jet.constant(space, p * np.ones(batch) if batch else p)
            for i, ki in enumerate(k):
                if ki != 0.0:
                    arg = arg + ki * x_jets[i]
            out = out + a * arg.sin()
        return out

    def config(self):
        return {"type": "trig", "c0": self.c0,
                "terms": [[a, list(k), p] for (a, k, p) in self.terms]}


def field_from_config(cfg):
    if cfg is None:
        return None
    if isinstance(cfg, (int, float)):
        return ConstantField(cfg)
    kind = cfg.get("type", "const")
    if kind == "const":
        return ConstantField(cfg.get("c", 0.0))
    if kind == "trig":
        return TrigField(cfg.get("c0", 0.0),
                         [tuple(t) for t in cfg.get("terms", [])])
    raise ValueError(f"unknown field type {kind!r}")
