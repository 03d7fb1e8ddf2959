"""Delay perturbation signals ``d(t)`` with values in ``[-1, 1]``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError

__all__ = ["DelaySignal", "parse_signal"]

KINDS = ("constant", "piecewise_constant", "sinusoid")


@lru_cache(maxsize=1 << 16)
def _pwc_value(seed: int, j: int) -> float:
    return float(np.random.default_rng([seed, j]).uniform(-1.0, 1.0))


@dataclass(frozen=True)
class DelaySignal:
    """Perturbation ``d`` together with its magnitude ``epsilon``.

    ``constant``            d(t) = c
    ``piecewise_constant``  d uniform on [-1, 1], redrawn every ``dwell``
                            time units from a stream keyed by ``(seed, j)``
    ``sinusoid``            d(t) = sin(2 pi freq t + phase)

    Values are clamped to ``[-1, 1]``, so the bound holds exactly.
    """

    kind: str
    epsilon: float = 0.0
    c: float = 0.0
    seed: int = 0
    dwell: float = 1.0
    freq: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown signal kind {self.kind!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValidationError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.kind == "constant" and not -1.0 <= self.c <= 1.0:
            raise ValidationError(f"constant value must lie in [-1, 1], got {self.c}")
        if self.kind == "piecewise_constant" and not self.dwell > 0.0:
            raise ValidationError(f"dwell must be positive, got {self.dwell}")
        if self.kind == "sinusoid" and not self.freq > 0.0:
            raise ValidationError(f"freq must be positive, got {self.freq}")

    @classmethod
    def constant(cls, c=0.0, epsilon=0.0):
        return cls("constant", epsilon=epsilon, c=float(c))

    @classmethod
    def piecewise_constant(cls, seed, dwell, epsilon=0.0):
        return cls("piecewise_constant", epsilon=epsilon, seed=int(seed), dwell=float(dwell))

    @classmethod
    def sinusoid(cls, freq, phase=0.0, epsilon=0.0):
        return cls("sinusoid", epsilon=epsilon, freq=float(freq), phase=float(phase))

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            v = self.c
        elif self.kind == "piecewise_constant":
            v = _pwc_value(self.seed, max(int(math.floor(t / self.dwell)), 0))
        else:
            v = math.sin(2.0 * math.pi * self.freq * t + self.phase)
        return min(1.0, max(-1.0, v))

    def spec(self) -> str:
        if self.kind == "constant":
            return f"const:{self.c!r}"
        if self.kind == "piecewise_constant":
            return f"pwc:{self.seed}:{self.dwell!r}"
        return f"sin:{self.freq!r}:{self.phase!r}"


def parse_signal(spec: str, epsilon: float = 0.0) -> DelaySignal:
    """Parse ``const:c``, ``pwc:seed:dwell`` or ``sin:freq[:phase]``."""
    parts = spec.strip().split(":")
    head, args = parts[0].lower(), parts[1:]
    try:
        if head == "const" and len(args) == 1:
            return DelaySignal.constant(float(args[0]), epsilon)
        if head == "pwc" and len(args) == 2:
            return DelaySignal.piecewise_constant(int(args[0]), float(args[1]), epsilon)
        if head == "sin" and len(args) in (1, 2):
            phase = float(args[1]) if len(args) == 2 else 0.0
            return DelaySignal.sinusoid(float(args[0]), phase, epsilon)
    except ValueError as exc:
        raise ValidationError(f"bad signal spec {spec!r}: {exc}") from None
    raise ValidationError(
        f"bad signal spec {spec!r}; expected const:c, pwc:seed:dwell or sin:freq[:phase]"
    )
