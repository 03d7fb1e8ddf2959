"""Small-gain robustness margins for predictor feedback with a perturbed
input delay.

A delay ``r + eps*d(t)`` with ``|d| <= 1`` is tolerated by the predictor
law built for the nominal delay ``r`` whenever

    theta |C| (exp(|Ahat| eps) - exp(-lam eps)) < lam            (general)
    2 |C| (1 - exp(-|Ahat| eps)) < |Ahat|                          (n = 1)

where ``Ahat = A + B k``, ``C = exp(A r) B k`` and ``(theta, lam)`` is a decay
envelope of ``Ahat``. Both left-hand sides increase with ``eps``, so the
largest admissible ``eps`` is found by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PreconditionError, ValidationError
from .linalg import (
    DecayEnvelope,
    as_matrix,
    decay_envelope,
    is_hurwitz,
    mat_exp,
    optimize_envelope,
    spectral_norm,
)

__all__ = [
    "PlantModel",
    "ComparisonSystem",
    "MarginReport",
    "scalar_plant",
    "comparison_system",
    "small_gain_sides",
    "small_gain_check",
    "closed_loop_margin",
    "max_epsilon",
    "scalar_bound",
    "certify_sigma",
    "sigma_condition",
]

STRICT_MARGIN = 1e-12
EPS_RTOL = 1e-10
SIGMA_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PlantModel:
    """``x' = A x + B u(t - r - eps d(t))`` with gain ``k`` (``A + B k`` Hurwitz)."""

    A: np.ndarray
    B: np.ndarray
    k: np.ndarray
    r: float

    def __post_init__(self):
        A = as_matrix(self.A, "A", square=True)
        B = as_matrix(self.B, "B")
        k = as_matrix(self.k, "K")
        n = A.shape[0]
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got shape {B.shape}")
        m = B.shape[1]
        if k.shape != (m, n):
            raise DimensionError(f"K must have shape {(m, n)}, got {k.shape}")
        r = float(self.r)
        if not (r > 0.0 and math.isfinite(r)):
            raise ValidationError(f"nominal delay r must be positive, got {self.r}")
        hurwitz, alpha = is_hurwitz(A + B @ k)
        if not hurwitz:
            raise PreconditionError(
                f"Hurwitz check failed: A + B K has spectral abscissa {alpha:.6g} >= 0"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A + self.B @ self.k

    @property
    def coupling(self) -> np.ndarray:
        """``exp(A r) B k``, the gain multiplying the delay mismatch."""
        return mat_exp(self.A, self.r) @ self.B @ self.k


def scalar_plant(p: float, r: float = 1.0) -> PlantModel:
    """Unstable scalar plant ``x' = x + u(t - r - ...)`` with gain ``k = -p``."""
    return PlantModel(A=[[1.0]], B=[[1.0]], k=[[-float(p)]], r=r)


@dataclass(frozen=True, eq=False)
class ComparisonSystem:
    """``x' = Ahat x + q(t) C (x(t - r - eps d(t)) - x(t - r))``."""

    Ahat: np.ndarray
    C: np.ndarray
    r: float
    envelope: DecayEnvelope

    def __post_init__(self):
        Ahat = as_matrix(self.Ahat, "Ahat", square=True)
        C = as_matrix(self.C, "C", square=True)
        if C.shape != Ahat.shape:
            raise DimensionError("Ahat and C must have the same shape")
        hurwitz, alpha = is_hurwitz(Ahat)
        if not hurwitz:
            raise PreconditionError(f"Ahat is not Hurwitz (spectral abscissa {alpha:.6g})")
        if self.envelope.lam > -alpha * (1.0 + 1e-12):
            raise ValidationError(
                f"envelope rate {self.envelope.lam:.6g} exceeds the decay margin {-alpha:.6g}"
            )
        r = float(self.r)
        if not (r > 0.0 and math.isfinite(r)):
            raise ValidationError(f"r must be positive, got {self.r}")
        object.__setattr__(self, "Ahat", Ahat)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "_norms", (spectral_norm(Ahat), spectral_norm(C)))

    @property
    def n(self) -> int:
        return self.Ahat.shape[0]

    @property
    def ahat_norm(self) -> float:
        return self._norms[0]

    @property
    def c_norm(self) -> float:
        return self._norms[1]


@dataclass(frozen=True)
class MarginReport:
    epsilon: float
    lhs: float
    rhs: float
    feasible: bool
    epsilon_max: float
    sigma: float
    delta: float
    scalar_path: bool
    theta: float
    lam: float
    capped: bool = False

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        if not math.isfinite(d["delta"]):
            d["delta"] = None
        return d


# ---------------------------------------------------------------------------
# inequality sides and bisection
# ---------------------------------------------------------------------------

def _sides(a_norm, c_norm, theta, lam, eps, scalar):
    if scalar:
        return 2.0 * c_norm * -math.expm1(-a_norm * eps), a_norm
    return theta * c_norm * (math.exp(a_norm * eps) - math.exp(-lam * eps)), lam


def _sup_feasible(a_norm, c_norm, theta, lam, r, scalar, rtol=EPS_RTOL):
    """Largest certified eps in [0, r] and whether the cap r was hit."""

    def ok(eps):
        lhs, rhs = _sides(a_norm, c_norm, theta, lam, eps, scalar)
        return lhs < rhs

    if ok(r):
        return r, True
    lo, hi = 0.0, r
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, False


def _resolve_scalar(n, scalar_path):
    if scalar_path is None:
        return n == 1
    if scalar_path and n != 1:
        raise ValidationError("the scalar inequality only applies when n = 1")
    return bool(scalar_path)


def _check_eps(epsilon, r):
    epsilon = float(epsilon)
    if not math.isfinite(epsilon) or epsilon < 0.0:
        raise ValidationError(f"epsilon must be non-negative, got {epsilon}")
    if epsilon > r:
        raise PreconditionError(f"epsilon={epsilon} exceeds the nominal delay r={r}")
    return epsilon


def small_gain_sides(sys: ComparisonSystem, epsilon: float, scalar_path=None):
    """``(lhs, rhs)`` of the small-gain inequality at ``epsilon``."""
    scalar = _resolve_scalar(sys.n, scalar_path)
    epsilon = _check_eps(epsilon, sys.r)
    env = sys.envelope
    return _sides(sys.ahat_norm, sys.c_norm, env.theta, env.lam, epsilon, scalar)


def small_gain_check(sys: ComparisonSystem, epsilon: float, scalar_path=None) -> MarginReport:
    """Evaluate the small-gain inequality for ``sys`` at ``epsilon``.

    ``scalar_path`` defaults to ``n == 1``; the scalar form ignores the
    envelope since ``theta = 1`` and ``lam = |Ahat|`` are exact for n = 1.
    When feasible the report also carries the certified decay rate and
    contraction gain from :func:`certify_sigma`.
    """
    scalar = _resolve_scalar(sys.n, scalar_path)
    epsilon = _check_eps(epsilon, sys.r)
    env = sys.envelope
    theta, lam = (1.0, sys.ahat_norm) if scalar else (env.theta, env.lam)
    lhs, rhs = _sides(sys.ahat_norm, sys.c_norm, theta, lam, epsilon, scalar)
    eps_max, capped = _sup_feasible(sys.ahat_norm, sys.c_norm, theta, lam, sys.r, scalar)
    feasible = lhs < rhs
    sigma, delta = 0.0, math.nan
    if feasible:
        try:
            sigma, delta = certify_sigma(sys, epsilon, scalar_path=scalar)
        except PreconditionError:
            # lhs < rhs but within the strictness margin of equality
            sigma, delta = 0.0, math.nan
    return MarginReport(
        epsilon=epsilon, lhs=lhs, rhs=rhs, feasible=feasible,
        epsilon_max=eps_max, sigma=sigma, delta=delta, scalar_path=scalar,
        theta=theta, lam=lam, capped=capped,
    )


def _scalar_envelope(Ahat):
    return DecayEnvelope(theta=1.0, lam=abs(float(Ahat[0, 0])))


def comparison_system(model: PlantModel, mu=None, scalar_path=None) -> ComparisonSystem:
    """Comparison system of the predictor-state dynamics of ``model``.

    The envelope of ``A + B k`` is exact for n = 1 (unless ``mu`` is
    given), taken at ``mu`` when supplied, and otherwise chosen to maximise
    the certified eps.
    """
    Ahat = model.closed_loop
    C = model.coupling
    scalar = _resolve_scalar(model.n, scalar_path)
    if mu is not None:
        env = decay_envelope(Ahat, mu)
    elif model.n == 1:
        env = _scalar_envelope(Ahat)
    else:
        a_norm, c_norm, r = spectral_norm(Ahat), spectral_norm(C), model.r

        def objective(e):
            return _sup_feasible(a_norm, c_norm, e.theta, e.lam, r, scalar)[0]

        env = optimize_envelope(Ahat, objective)
    return ComparisonSystem(Ahat=Ahat, C=C, r=model.r, envelope=env)


def closed_loop_margin(model: PlantModel, epsilon: float, mu=None, scalar_path=None) -> MarginReport:
    """Small-gain check for the closed loop with ``Ahat = A + B k`` and
    ``C = exp(A r) B k``."""
    sys = comparison_system(model, mu=mu, scalar_path=scalar_path)
    return small_gain_check(sys, epsilon, scalar_path=scalar_path)


def max_epsilon(model: PlantModel, mu=None, scalar_path=None) -> float:
    """Supremum of certified perturbation magnitudes, capped at ``r``."""
    sys = comparison_system(model, mu=mu, scalar_path=scalar_path)
    scalar = _resolve_scalar(sys.n, scalar_path)
    env = sys.envelope
    theta, lam = (1.0, sys.ahat_norm) if scalar else (env.theta, env.lam)
    return _sup_feasible(sys.ahat_norm, sys.c_norm, theta, lam, sys.r, scalar)[0]


def scalar_bound(p: float) -> float:
    """Closed-form bound for the unstable scalar plant with gain ``-p``."""
    p = float(p)
    if not p > 1.0:
        raise ValidationError(f"gain p must exceed 1 for a stable closed loop, got {p}")
    two_pe = 2.0 * p * math.e
    # log1p keeps accuracy as p -> 1
    return math.log1p((p - 1.0) / (two_pe - p + 1.0)) / (p - 1.0)


# ---------------------------------------------------------------------------
# decay-rate certificate
# ---------------------------------------------------------------------------

def sigma_condition(sys: ComparisonSystem, epsilon: float, sigma: float, scalar_path=None) -> float:
    """Contraction gain ``delta(sigma)``; the certificate needs it below one."""
    scalar = _resolve_scalar(sys.n, scalar_path)
    a, c, r = sys.ahat_norm, sys.c_norm, sys.r
    eps = float(epsilon)
    if scalar:
        gap = a - sigma
        return (c * math.exp(sigma * (r + eps)) / gap
                * (2.0 - math.exp(-gap * eps) - math.exp(-a * eps)))
    theta, lam = sys.envelope.theta, sys.envelope.lam
    gap = lam - sigma
    return (math.exp(sigma * (r + eps)) * theta * c / gap
            * (-math.expm1(-gap * eps) + math.expm1(a * eps)))


def certify_sigma(sys: ComparisonSystem, epsilon: float, scalar_path=None,
                  tol=SIGMA_TOL, margin=STRICT_MARGIN) -> tuple[float, float]:
    """Largest decay rate ``sigma`` in ``(0, lam)`` with ``delta(sigma) < 1``.

    ``delta`` is increasing in ``sigma``, so bisection applies. Returns
    ``(sigma, delta(sigma))``.
    """
    scalar = _resolve_scalar(sys.n, scalar_path)
    epsilon = _check_eps(epsilon, sys.r)
    lam = sys.ahat_norm if scalar else sys.envelope.lam
    target = 1.0 - margin
    if not sigma_condition(sys, epsilon, 0.0, scalar) < target:
        lhs, rhs = small_gain_sides(sys, epsilon, scalar)
        raise PreconditionError(
            f"small-gain inequality fails at epsilon={epsilon}: lhs={lhs:.12g} rhs={rhs:.12g}"
        )
    lo, hi = 0.0, lam
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sigma_condition(sys, epsilon, mid, scalar) < target:
            lo = mid
        else:
            hi = mid
    return lo, sigma_condition(sys, epsilon, lo, scalar)
