"""Dense real linear algebra: matrix exponential, eigenvalues, Lyapunov
certificates and exponential decay envelopes.

Matrices are plain 2-D ``numpy`` float arrays. Everything here is a pure
function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DimensionError,
    InfeasibleError,
    NumericalError,
    PreconditionError,
    ValidationError,
)

__all__ = [
    "DecayEnvelope",
    "as_matrix",
    "mat_exp",
    "spectral_norm",
    "eigvals",
    "spectral_abscissa",
    "is_hurwitz",
    "solve_lyapunov",
    "decay_envelope",
    "certify_envelope",
    "optimize_envelope",
    "ENDPOINT_MARGIN",
]

# keeps mu strictly inside (0, -alpha(M)); the Lyapunov solve is singular at
# the upper endpoint
ENDPOINT_MARGIN = 1e-6


def as_matrix(M, name="matrix", square=False) -> np.ndarray:
    """Validate ``M`` and return it as a 2-D float array (a copy)."""
    a = np.array(M, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# matrix exponential: scaling and squaring with diagonal Pade approximants
# ---------------------------------------------------------------------------

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}

# 1-norm thresholds below which the degree-m approximant is accurate to
# double precision without scaling
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_low(A, m):
    b = _PADE[m]
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    powers = [ident, A2]
    for _ in range(2, m // 2 + 1):
        powers.append(powers[-1] @ A2)
    U = sum(b[2 * j + 1] * powers[j] for j in range(m // 2 + 1))
    V = sum(b[2 * j] * powers[j] for j in range(m // 2 + 1))
    return A @ U, V


def _pade13(A):
    b = _PADE[13]
    ident = np.eye(A.shape[0])
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


def mat_exp(M, t: float = 1.0) -> np.ndarray:
    """Return ``exp(M t)``.

    Scaling and squaring: pick the cheapest diagonal Pade approximant whose
    error bound is below unit roundoff for ``|Mt|_1``; if even degree 13
    is not enough, scale by ``2**-s`` first and square ``s`` times.
    """
    A = as_matrix(M, "M", square=True)
    if not math.isfinite(t):
        raise ValidationError("t must be finite")
    A = A * t
    n = A.shape[0]
    if n == 0:
        return A
    norm1 = np.abs(A).sum(axis=0).max()
    if norm1 == 0.0:
        return np.eye(n)
    s = 0
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            U, V = _pade_low(A, m)
            break
    else:
        s = max(0, int(math.ceil(math.log2(norm1 / _THETA[13]))))
        U, V = _pade13(A / 2.0**s)
    X = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        X = X @ X
    return X


def spectral_norm(M) -> float:
    """Induced Euclidean norm (largest singular value)."""
    a = as_matrix(M, "M")
    if a.size == 0:
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[0])


# ---------------------------------------------------------------------------
# eigenvalues: balancing, Householder Hessenberg reduction, Francis
# double-shift QR on the real Hessenberg form
# ---------------------------------------------------------------------------

def _balance(a):
    """Diagonal similarity by powers of two equalising row/column norms."""
    radix = 2.0
    sqrdx = radix * radix
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def _hessenberg(a):
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vnorm2 = v @ v
        if vnorm2 == 0.0:
            continue
        beta = 2.0 / vnorm2
        a[k + 1:, k:] -= beta * np.outer(v, v @ a[k + 1:, k:])
        a[:, k + 1:] -= beta * np.outer(a[:, k + 1:] @ v, v)
        a[k + 2:, k] = 0.0
    return a


def _hqr(a, max_its=30):
    """Eigenvalues of an upper Hessenberg matrix (destroys ``a``)."""
    n = a.shape[0]
    wr = np.zeros(n, dtype=complex)
    anorm = np.abs(a).sum()
    nn = n - 1
    t = 0.0
    its = 0
    total_its = 0
    while nn >= 0:
        # look for a single small subdiagonal element
        l = nn
        while l > 0:
            s = abs(a[l - 1, l - 1]) + abs(a[l, l])
            if s == 0.0:
                s = anorm
            if abs(a[l, l - 1]) + s == s:
                a[l, l - 1] = 0.0
                break
            l -= 1
        x = a[nn, nn]
        if l == nn:
            wr[nn] = x + t
            nn -= 1
            its = 0
            continue
        y = a[nn - 1, nn - 1]
        w = a[nn, nn - 1] * a[nn - 1, nn]
        if l == nn - 1:
            p = 0.5 * (y - x)
            q = p * p + w
            z = math.sqrt(abs(q))
            x += t
            if q >= 0.0:
                z = p + math.copysign(z, p)
                wr[nn - 1] = wr[nn] = x + z
                if z != 0.0:
                    wr[nn] = x - w / z
            else:
                wr[nn - 1] = complex(x + p, z)
                wr[nn] = complex(x + p, -z)
            nn -= 2
            its = 0
            continue
        if its == max_its:
            raise NumericalError(
                f"QR iteration did not converge after {total_its} iterations",
                iterations=total_its,
            )
        if its in (10, 20):
            # exceptional shift
            t += x
            for i in range(nn + 1):
                a[i, i] -= x
            s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
            x = y = 0.75 * s
            w = -0.4375 * s * s
        its += 1
        total_its += 1
        # look for two consecutive small subdiagonal elements
        m = nn - 2
        while m >= l:
            z = a[m, m]
            r = x - z
            s = y - z
            p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
            q = a[m + 1, m + 1] - z - r - s
            r = a[m + 2, m + 1]
            s = abs(p) + abs(q) + abs(r)
            p /= s
            q /= s
            r /= s
            if m == l:
                break
            u = abs(a[m, m - 1]) * (abs(q) + abs(r))
            v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
            if u + v == v:
                break
            m -= 1
        for i in range(m, nn - 1):
            a[i + 2, i] = 0.0
            if i != m:
                a[i + 2, i - 1] = 0.0
        # double-shift QR step on rows l..nn, columns m..nn
        for k in range(m, nn):
            if k != m:
                p = a[k, k - 1]
                q = a[k + 1, k - 1]
                r = a[k + 2, k - 1] if k + 1 != nn else 0.0
                x = abs(p) + abs(q) + abs(r)
                if x != 0.0:
                    p /= x
                    q /= x
                    r /= x
            s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
            if s == 0.0:
                continue
            if k == m:
                if l != m:
                    a[k, k - 1] = -a[k, k - 1]
            else:
                a[k, k - 1] = -s * x
            p += s
            x = p / s
            y = q / s
            z = r / s
            q /= p
            r /= p
            last = k + 1 != nn
            cols = slice(k, nn + 1)
            pv = a[k, cols] + q * a[k + 1, cols]
            if last:
                pv = pv + r * a[k + 2, cols]
                a[k + 2, cols] -= pv * z
            a[k + 1, cols] -= pv * y
            a[k, cols] -= pv * x
            rows = slice(l, min(nn, k + 3) + 1)
            pv = x * a[rows, k] + y * a[rows, k + 1]
            if last:
                pv = pv + z * a[rows, k + 2]
                a[rows, k + 2] -= pv * r
            a[rows, k + 1] -= pv * q
            a[rows, k] -= pv
    return wr


def eigvals(M) -> np.ndarray:
    """All eigenvalues of a real square matrix, as a complex array."""
    a = as_matrix(M, "M", square=True)
    if a.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    if a.shape[0] == 1:
        return np.array([complex(a[0, 0])])
    a = _hessenberg(_balance(a))
    return _hqr(a)


def spectral_abscissa(M) -> float:
    return float(np.max(eigvals(M).real))


def is_hurwitz(M) -> tuple[bool, float]:
    """Return ``(hurwitz, alpha)`` with ``alpha`` the spectral abscissa."""
    alpha = spectral_abscissa(M)
    return alpha < 0.0, alpha


# ---------------------------------------------------------------------------
# Lyapunov certificates and decay envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayEnvelope:
    """Constants with ``|exp(M t)| <= theta * exp(-lam * t)`` for ``t >= 0``.

    ``mu`` is the Lyapunov shift that produced the pair (equal to ``lam``);
    ``feasible`` is False only when :func:`optimize_envelope` found no
    parameter at which its objective was finite.
    """

    theta: float
    lam: float
    mu: float | None = None
    feasible: bool = True

    def __post_init__(self):
        if not (self.theta >= 1.0 and math.isfinite(self.theta)):
            raise ValidationError(f"theta must be a finite number >= 1, got {self.theta}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ValidationError(f"lambda must be a finite positive number, got {self.lam}")

    def bound(self, t):
        return self.theta * np.exp(-self.lam * np.asarray(t, dtype=float))


def solve_lyapunov(F, Q) -> np.ndarray:
    """Solve ``F' P + P F = -Q`` through the Kronecker (vectorised) form."""
    F = as_matrix(F, "F", square=True)
    Q = as_matrix(Q, "Q", square=True)
    n = F.shape[0]
    if Q.shape != F.shape:
        raise DimensionError("F and Q must have the same shape")
    ident = np.eye(n)
    # row-major vec: vec(X Y Z) = (X kron Z') vec(Y)
    K = np.kron(F.T, ident) + np.kron(ident, F.T)
    try:
        p = np.linalg.solve(K, -Q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Lyapunov operator: {exc}") from None
    P = p.reshape(n, n)
    return 0.5 * (P + P.T)


def decay_envelope(M, mu: float) -> DecayEnvelope:
    """Envelope ``(sqrt|P|, mu)`` from a shifted Lyapunov certificate.

    Solves ``(M + mu I)' P + P (M + mu I) = -I`` and rescales ``P`` so its
    smallest eigenvalue is exactly one, which gives ``P >= I`` and
    ``P M + M' P + 2 mu P <= 0`` with the smallest admissible ``|P|``.
    """
    A = as_matrix(M, "M", square=True)
    hurwitz, alpha = is_hurwitz(A)
    if not hurwitz:
        raise PreconditionError(f"matrix is not Hurwitz (spectral abscissa {alpha:.6g})")
    if not (mu > 0.0 and math.isfinite(mu)):
        raise ValidationError(f"mu must be positive, got {mu}")
    if mu >= -alpha:
        raise InfeasibleError(
            f"mu={mu:.6g} must be below the decay margin -alpha={-alpha:.6g}"
        )
    n = A.shape[0]
    P = solve_lyapunov(A + mu * np.eye(n), np.eye(n))
    if not np.all(np.isfinite(P)):
        raise NumericalError("Lyapunov solution is not finite")
    ev = np.linalg.eigvalsh(P)
    if ev[0] <= 0.0:
        raise NumericalError("Lyapunov solution is not positive definite")
    theta = math.sqrt(max(ev[-1] / ev[0], 1.0))
    return DecayEnvelope(theta=theta, lam=float(mu), mu=float(mu))


def certify_envelope(M, envelope: DecayEnvelope, n_points=200, rtol=1e-9) -> bool:
    """Check the envelope on ``n_points`` times spread over ``[0, 20/lam]``."""
    A = as_matrix(M, "M", square=True)
    ts = np.linspace(0.0, 20.0 / envelope.lam, n_points)
    for t in ts:
        lhs = spectral_norm(mat_exp(A, t))
        if lhs > envelope.theta * math.exp(-envelope.lam * t) * (1.0 + rtol):
            return False
    return True


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimize_envelope(
    M,
    objective: Callable[[DecayEnvelope], float],
    margin: float = ENDPOINT_MARGIN,
    n_scan: int = 41,
    tol: float = 1e-10,
) -> DecayEnvelope:
    """Maximise ``objective(decay_envelope(M, mu))`` over admissible ``mu``.

    A coarse scan over ``(margin, -alpha (1 - margin))`` locates the best
    bracket, which golden-section search then refines. Non-finite objective
    values count as infeasible; if every probe is infeasible the envelope at
    the first admissible ``mu`` comes back with ``feasible=False``.
    """
    A = as_matrix(M, "M", square=True)
    hurwitz, alpha = is_hurwitz(A)
    if not hurwitz:
        raise PreconditionError(f"matrix is not Hurwitz (spectral abscissa {alpha:.6g})")
    lo, hi = margin, -alpha * (1.0 - margin)
    if lo >= hi:
        lo = hi * margin

    cache = {}

    def score(mu):
        if mu not in cache:
            try:
                env = decay_envelope(A, mu)
            except (NumericalError, ValidationError):
                # near-defective spectra make the shifted Lyapunov operator
                # numerically singular close to the endpoint
                cache[mu] = (-math.inf, None)
                return -math.inf
            val = objective(env)
            val = float(val) if val is not None else -math.inf
            cache[mu] = (val if math.isfinite(val) else -math.inf, env)
        return cache[mu][0]

    grid = np.linspace(lo, hi, n_scan)
    vals = [score(mu) for mu in grid]
    best = int(np.argmax(vals))
    if not math.isfinite(vals[best]):
        for mu in grid:
            env = cache[mu][1]
            if env is not None:
                return DecayEnvelope(env.theta, env.lam, env.mu, feasible=False)
        raise NumericalError("no admissible decay envelope found")

    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, n_scan - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    while b - a > tol * max(1.0, abs(b)):
        if score(c) >= score(d):
            b, d = d, c
            c = b - _GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + _GOLDEN * (b - a)
    mu_best = max(cache, key=lambda mu: cache[mu][0])
    return cache[mu_best][1]
