"""Constant delay mismatch: characteristic quasipolynomials, imaginary-axis
crossings and rightmost characteristic roots.

With a constant actual delay ``tau`` and the predictor designed for ``r``,
the closed loop is stable when every root of

    det(s I - (A + B k) + G (exp(-r s) - exp(-tau s)))

lies in the open left half plane, with ``G = B k exp(Ar)`` (state form) or
``G = exp(Ar) B k`` (predictor form). For the scalar unstable plant with
gain ``-p`` this is ``s + (p - 1) + p e^{1 - tau s} - p e^{1 - s}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ValidationError
from .linalg import eigvals, mat_exp
from .margin import PlantModel, scalar_bound, scalar_plant

__all__ = [
    "StabilityWindow",
    "RootEstimate",
    "char_eval_matrix",
    "char_eval_scalar",
    "crossing_function",
    "crossing_roots",
    "crossing_curve",
    "cheb",
    "collocation_matrix",
    "rightmost_root",
    "figure1_sweep",
    "write_sweep_csv",
]

TAU_CAP = 10.0
SCAN_POINTS = 20_000
BISECT_TOL = 1e-12


def _delay_terms(model: PlantModel, form: str):
    eAr = mat_exp(model.A, model.r)
    Bk = model.B @ model.k
    if form == "reduced_x":
        return Bk @ eAr
    if form == "reduced_p":
        return eAr @ Bk
    raise ValidationError(f"form must be 'reduced_x' or 'reduced_p', got {form!r}")


def char_eval_matrix(model: PlantModel, tau: float, s: complex, form: str = "reduced_x") -> complex:
    """Characteristic function of the closed loop under constant delay ``tau``."""
    if tau < 0.0:
        raise ValidationError(f"tau must be non-negative, got {tau}")
    G = _delay_terms(model, form)
    s = complex(s)
    M = (s * np.eye(model.n) - model.closed_loop
         + G * (np.exp(-model.r * s) - np.exp(-tau * s)))
    return complex(np.linalg.det(M))


def char_eval_scalar(p: float, tau: float, s: complex) -> complex:
    """``s + (p - 1) + p e^{1 - tau s} - p e^{1 - s}``."""
    s = complex(s)
    return s + (p - 1.0) + p * np.exp(1.0 - tau * s) - p * np.exp(1.0 - s)


# ---------------------------------------------------------------------------
# crossing curve of the scalar example
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityWindow:
    """Delays ``tau_min < 1 < tau_max`` bounding the stable window at gain ``p``.

    ``crossing_frequencies`` lists ``(omega, tau)`` at the window edges;
    ``all_crossings`` every crossing found up to the enumeration cap.
    A side with no crossing inside the cap is reported as ``nan`` (lower)
    or ``inf`` (upper) with ``open_lower``/``open_upper`` set.
    """

    p: float
    tau_min: float
    tau_max: float
    crossing_frequencies: tuple
    all_crossings: tuple = field(default=(), repr=False)
    open_lower: bool = False
    open_upper: bool = False

    @property
    def half_width(self) -> float:
        return 0.5 * (self.tau_max - self.tau_min)


def crossing_function(p: float, omega):
    """Zero exactly at frequencies where ``tau`` can place a root at ``j omega``."""
    omega = np.asarray(omega, dtype=float)
    return ((p - 1.0) * np.cos(omega) - omega * np.sin(omega)
            - ((p - 1.0) ** 2 + omega ** 2) / (2.0 * p * math.e))


def _bisect(f, a, b, fa, tol=BISECT_TOL):
    while b - a > tol:
        c = 0.5 * (a + b)
        fc = f(c)
        if fc == 0.0:
            return c
        if (fc > 0.0) == (fa > 0.0):
            a, fa = c, fc
        else:
            b = c
    return 0.5 * (a + b)


def crossing_roots(p: float, n_scan: int = SCAN_POINTS) -> np.ndarray:
    """All sign-change roots of :func:`crossing_function` on ``(0, 2 p e)``."""
    _check_gain(p)
    hi = 2.0 * p * math.e
    grid = np.linspace(0.0, hi, n_scan + 1)[1:-1]
    vals = crossing_function(p, grid)
    roots = []
    f = lambda w: float(crossing_function(p, w))
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0.0)[0]:
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
            continue
        roots.append(_bisect(f, float(grid[i]), float(grid[i + 1]), float(vals[i])))
    return np.unique(np.array(roots))


def crossing_phase(p: float, omega: float) -> float:
    """The angle ``phi`` in (-pi, pi] with ``cos phi = cos w - (p-1)/(pe)``
    and ``sin phi = sin w + w/(pe)``."""
    pe = p * math.e
    return math.atan2(math.sin(omega) + omega / pe, math.cos(omega) - (p - 1.0) / pe)


def unit_circle_defect(p: float, omega: float) -> float:
    """How far the phase equations are from lying on the unit circle."""
    pe = p * math.e
    c = math.cos(omega) - (p - 1.0) / pe
    s = math.sin(omega) + omega / pe
    return abs(c * c + s * s - 1.0)


def _check_gain(p):
    if not p > 1.0:
        raise ValidationError(f"gain p must exceed 1, got {p}")


def crossing_curve(p: float, tau_cap: float = TAU_CAP, n_scan: int = SCAN_POINTS) -> StabilityWindow:
    """Stability window around the nominal delay for the scalar example.

    Finds every crossing frequency, converts each to its phase, enumerates
    the delays ``tau = (phi + 2 k pi)/omega`` in ``(0, tau_cap]`` and keeps
    the crossing delays nearest to 1 on either side.
    """
    _check_gain(p)
    crossings = []
    for w in crossing_roots(p, n_scan):
        phi = crossing_phase(p, w)
        k_lo = math.ceil(-phi / (2.0 * math.pi))
        k_hi = math.floor((tau_cap * w - phi) / (2.0 * math.pi))
        for k in range(k_lo, k_hi + 1):
            tau = (phi + 2.0 * math.pi * k) / w
            if 0.0 < tau <= tau_cap:
                crossings.append((float(w), float(tau)))
    crossings.sort(key=lambda c: c[1])
    below = [c for c in crossings if c[1] < 1.0]
    above = [c for c in crossings if c[1] > 1.0]
    edges = []
    tau_min, tau_max = math.nan, math.inf
    if below:
        edges.append(below[-1])
        tau_min = below[-1][1]
    if above:
        edges.append(above[0])
        tau_max = above[0][1]
    return StabilityWindow(
        p=float(p), tau_min=tau_min, tau_max=tau_max,
        crossing_frequencies=tuple(edges), all_crossings=tuple(crossings),
        open_lower=not below, open_upper=not above,
    )


# ---------------------------------------------------------------------------
# rightmost root by Chebyshev collocation of the delay equation
# ---------------------------------------------------------------------------

class RootEstimate(NamedTuple):
    root: complex
    collocation: complex
    residual: float
    refined: bool


def cheb(N: int, T: float):
    """Chebyshev differentiation matrix and nodes on ``[-T, 0]`` (node 0 at 0)."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    theta = T * (x - 1.0) / 2.0
    return D * (2.0 / T), theta


def _lagrange_row(theta, point):
    """Barycentric weights giving the interpolant's value at ``point``."""
    N = len(theta) - 1
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = point - theta
    hit = np.nonzero(np.abs(diff) < 1e-14 * max(1.0, abs(point)))[0]
    row = np.zeros(N + 1)
    if hit.size:
        row[hit[0]] = 1.0
        return row
    terms = w / diff
    return terms / terms.sum()


def _dde_coefficients(model_or_p, tau, form):
    """``(A0, [(A_l, delay_l)])`` for ``x' = A0 x + sum_l A_l x(t - delay_l)``."""
    if isinstance(model_or_p, PlantModel):
        model = model_or_p
    else:
        model = scalar_plant(float(model_or_p))
    G = _delay_terms(model, form)
    return model, model.closed_loop, [(G, float(tau)), (-G, model.r)]


def collocation_matrix(A0, delayed, N: int) -> np.ndarray:
    """Finite-dimensional approximation of the delay equation's generator."""
    n = A0.shape[0]
    T = max(d for _, d in delayed)
    D, theta = cheb(N, T)
    AN = np.zeros(((N + 1) * n, (N + 1) * n))
    AN[n:, :] = np.kron(D[1:], np.eye(n))
    top = np.kron(_lagrange_row(theta, 0.0), A0)
    for Al, dl in delayed:
        top += np.kron(_lagrange_row(theta, -dl), Al)
    AN[:n, :] = top
    return AN


def _newton(model, A0, delayed, s, max_iter=50):
    """Newton on ``det M(s)`` via ``det'/det = tr(M^{-1} M')``."""
    n = A0.shape[0]
    ident = np.eye(n)

    def M_and_dM(z):
        M = z * ident - A0
        dM = ident.astype(complex)
        for Al, dl in delayed:
            e = np.exp(-dl * z)
            M = M - Al * e
            dM = dM + dl * Al * e
        return M, dM

    for _ in range(max_iter):
        M, dM = M_and_dM(s)
        try:
            step = 1.0 / np.trace(np.linalg.solve(M, dM))
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(step):
            break
        s = s - step
        if abs(step) <= 1e-15 * max(1.0, abs(s)):
            break
    M, _ = M_and_dM(s)
    return s, abs(np.linalg.det(M))


def rightmost_root(model_or_p, tau: float, N: int = 48, form: str = "reduced_x",
                   tol: float = 1e-9) -> RootEstimate:
    """Rightmost characteristic root for constant delay ``tau``.

    ``model_or_p`` is a :class:`PlantModel` or the gain ``p`` of the scalar
    example. The delay equation is discretised by collocation at ``N + 1``
    Chebyshev nodes on ``[-max(tau, r), 0]``; the rightmost eigenvalue of the
    resulting matrix is then polished by Newton's method on the
    characteristic function. ``refined`` is False when Newton does not reach
    residual ``tol``, in which case the collocation value is returned.
    """
    if N < 16:
        raise ValidationError(f"N must be at least 16, got {N}")
    if not tau >= 0.0:
        raise ValidationError(f"tau must be non-negative, got {tau}")
    model, A0, delayed = _dde_coefficients(model_or_p, tau, form)
    T = max(d for _, d in delayed)
    if T == 0.0:
        ev = eigvals(A0 + sum(Al for Al, _ in delayed))
    else:
        ev = eigvals(collocation_matrix(A0, delayed, N))
    if not np.all(np.isfinite(ev)):
        raise NumericalError("collocation eigenvalues are not finite")
    order = np.lexsort((-ev.imag, -ev.real))
    guess = complex(ev[order[0]])
    if guess.imag < 0.0:
        guess = guess.conjugate()
    s, res = _newton(model, A0, delayed, guess)
    # Newton must stay near the eigenvalue it started from
    close = abs(s - guess) <= 1e-2 * max(1.0, abs(guess))
    if res <= tol and close and np.isfinite(s):
        if abs(s.imag) < 1e-12:
            s = complex(s.real, 0.0)
        return RootEstimate(s, guess, float(res), True)
    return RootEstimate(guess, guess, float(res), False)


# ---------------------------------------------------------------------------
# figure data: certified time-varying window vs constant-delay window
# ---------------------------------------------------------------------------

class SweepRow(NamedTuple):
    p: float
    red_tau_min: float
    red_tau_max: float
    blue_tau_min: float
    blue_tau_max: float


def _sweep_row(p: float) -> SweepRow:
    eps = scalar_bound(p)
    win = crossing_curve(p)
    return SweepRow(float(p), 1.0 - eps, 1.0 + eps, win.tau_min, win.tau_max)


def figure1_sweep(p_grid, jobs: int = 1) -> list[SweepRow]:
    """For each gain ``p``: the certified window ``1 -/+ scalar_bound(p)``
    for time-varying perturbations and the exact constant-delay window.

    Rows come back sorted by ``p`` regardless of ``jobs``.
    """
    ps = sorted(float(p) for p in p_grid)
    for p in ps:
        _check_gain(p)
    if jobs > 1 and len(ps) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, ps))
    else:
        rows = [_sweep_row(p) for p in ps]
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("p,red_tau_min,red_tau_max,blue_tau_min,blue_tau_max\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
