"""Fixed-step simulation of predictor feedback under a perturbed input delay.

All trajectories live on a uniform grid of step ``h``. The plant state is
advanced by classical RK4; delayed reads of a recorded signal use linear
interpolation between grid nodes, which limits the global order to two.

Two quadratures of the predictor integral

    int_{t-r}^{t} exp(A (t - s)) B u(s) ds

are used. The control law integrates the kernel exactly against the
piecewise-linear interpolant of ``u`` (trapezoidal product rule); the
recorded predictor state ``p`` uses the plain composite trapezoid on the
grid. The two agree to O(h^2), which is what the ``u = k p`` diagnostic
measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    ConsistencyError,
    CoverageError,
    DivergenceError,
    PreconditionError,
    ValidationError,
)
from .linalg import mat_exp
from .margin import ComparisonSystem, PlantModel

__all__ = [
    "HistoryFunction",
    "SimTrace",
    "ComparisonTrace",
    "DecayFit",
    "make_compatible_history",
    "predictor_control",
    "predictor_state",
    "simulate_closed_loop",
    "simulate_derivative_form",
    "simulate_comparison",
    "recover_state",
    "fit_decay",
    "write_trace_csv",
]

BLOWUP = 1e12
_GRID_TOL = 1e-9


def _steps(length, h, name):
    q = length / h
    n = int(round(q))
    if abs(q - n) > _GRID_TOL * max(1.0, q):
        raise ValidationError(f"step h={h} does not divide {name}={length}")
    return n


def _history_nodes(window, h):
    # smallest node count whose grid reaches back to -window
    return int(math.ceil(window / h - _GRID_TOL))


def _vec(v, size, name):
    a = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
    if a.size == 1 and size > 1:
        a = np.full(size, a[0])
    if a.size != size:
        raise ValidationError(f"{name} must have {size} entries, got {a.size}")
    return a


class _Kernel:
    """Grid weights of the predictor integral for one ``(model, h)`` pair.

    Node ``j = 0..N`` of a window sits at ``t - r + j h``.
    """

    def __init__(self, model: PlantModel, h: float):
        A, B, k = model.A, model.B, model.k
        n, m = model.n, model.m
        N = _steps(model.r, h, "r")
        self.N, self.h = N, h
        E = np.stack([mat_exp(A, q * h) for q in range(N + 1)])
        self.eAr = E[N]

        aug = np.zeros((n + 2 * m, n + 2 * m))
        aug[:n, :n] = A
        aug[:n, n:n + m] = B
        aug[n:n + m, n + m:] = np.eye(m)
        X = mat_exp(aug, h)
        g_right = X[:n, n + m:] / h
        g_left = X[:n, n:n + m] - g_right

        W = np.zeros((N + 1, n, m))
        W[:N] += E[N - 1::-1] @ g_left
        W[1:] += E[N - 1::-1] @ g_right
        self.W = W
        T = h * (E[::-1] @ B)
        T[0] *= 0.5
        T[-1] *= 0.5
        self.T = T
        self.kW = k @ W
        self.kT = k @ T
        self.k_eAr = k @ self.eAr
        self.implicit = np.linalg.inv(np.eye(m) - self.kW[N])


_KERNELS: dict = {}


def _kernel(model, h):
    key = (id(model), h)
    ker = _KERNELS.get(key)
    if ker is None or ker[0] is not model:
        if len(_KERNELS) > 32:
            _KERNELS.clear()
        ker = (model, _Kernel(model, h))
        _KERNELS[key] = ker
    return ker[1]


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------

@dataclass
class HistoryFunction:
    """Initial data: ``x0`` and ``u`` at grid nodes covering ``[-r-eps, 0]``."""

    h: float
    times: np.ndarray
    u_values: np.ndarray
    x0: np.ndarray

    def __call__(self, s: float) -> np.ndarray:
        t0 = self.times[0]
        q = (s - t0) / self.h
        if q < -_GRID_TOL or s > _GRID_TOL * self.h:
            raise CoverageError(f"time {s} outside the history interval [{t0}, 0]")
        i = min(max(int(math.floor(q)), 0), len(self.times) - 2)
        f = q - i
        return (1.0 - f) * self.u_values[i] + f * self.u_values[i + 1]

    def compatibility_residual(self, model: PlantModel) -> float:
        """Distance of ``u(0)`` from the control law evaluated on the history."""
        ker = _kernel(model, self.h)
        window = self.u_values[-(ker.N + 1):]
        law = ker.k_eAr @ self.x0 + np.einsum("jab,jb->a", ker.kW, window)
        return float(np.linalg.norm(self.u_values[-1] - law))


def make_compatible_history(model: PlantModel, epsilon: float, x0, u_shape: Callable | float = 0.0,
                            h: float = 1e-2) -> HistoryFunction:
    """History whose endpoint satisfies the control law (a point of S).

    ``u_shape`` is sampled on the grid; over the last ``min(4h, r/10)`` time
    units it is blended linearly into the value ``u(0)``, which is solved
    for so that ``u(0)`` equals the control law applied to the blended
    history itself.
    """
    if not h > 0.0:
        raise ValidationError(f"step h must be positive, got {h}")
    if epsilon < 0.0 or epsilon > model.r:
        raise ValidationError(f"epsilon must lie in [0, r], got {epsilon}")
    ker = _kernel(model, h)
    m = model.m
    x0 = _vec(x0, model.n, "x0")
    Nh = _history_nodes(model.r + epsilon, h)
    times = -h * np.arange(Nh, -1, -1, dtype=float)
    if callable(u_shape):
        shape = np.array([_vec(u_shape(s), m, "u_shape") for s in times])
    else:
        shape = np.tile(_vec(u_shape, m, "u_shape"), (Nh + 1, 1))

    blend = min(4.0 * h, model.r / 10.0)
    w = np.clip(1.0 + times / blend, 0.0, 1.0)
    # u_j = a_j + w_j u0
    a = shape - np.outer(w, shape[-1])
    N = ker.N
    kW = ker.kW
    lhs = np.eye(m) - np.einsum("jab,j->ab", kW, w[-(N + 1):])
    rhs = ker.k_eAr @ x0 + np.einsum("jab,jb->a", kW, a[-(N + 1):])
    u0 = np.linalg.solve(lhs, rhs)
    u_values = a + np.outer(w, u0)
    return HistoryFunction(h=h, times=times, u_values=u_values, x0=x0)


# ---------------------------------------------------------------------------
# predictor law and predictor state
# ---------------------------------------------------------------------------

def _window_values(u_history, N, h, t, m):
    if callable(u_history):
        nodes = t - h * np.arange(N, -1, -1)
        return np.array([_vec(u_history(s), m, "u") for s in nodes])
    u = np.asarray(u_history, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if m == 1 else u.reshape(1, -1)
    if u.shape[0] < N + 1:
        raise CoverageError(
            f"u history has {u.shape[0]} nodes; the window [t-r, t] needs {N + 1}"
        )
    return u[-(N + 1):]


def predictor_control(model: PlantModel, x_now, u_history, h: float, t: float = 0.0) -> np.ndarray:
    """Control law ``k exp(Ar) x(t) + k int_{t-r}^{t} exp(A(t-s)) B u(s) ds``.

    ``u_history`` is either an array of ``u`` at the grid nodes ending at
    ``t`` (at least ``r/h + 1`` rows) or a callable sampled on that grid.
    """
    ker = _kernel(model, h)
    x = _vec(x_now, model.n, "x")
    window = _window_values(u_history, ker.N, h, t, model.m)
    return ker.k_eAr @ x + np.einsum("jab,jb->a", ker.kW, window)


def predictor_state(model: PlantModel, x_now, u_history, h: float, t: float = 0.0) -> np.ndarray:
    """``p(t) = exp(Ar) x(t) + int_{t-r}^{t} exp(A(t-s)) B u(s) ds`` by the
    composite trapezoid."""
    ker = _kernel(model, h)
    x = _vec(x_now, model.n, "x")
    window = _window_values(u_history, ker.N, h, t, model.m)
    return ker.eAr @ x + np.einsum("jab,jb->a", ker.T, window)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def _sliding_max(values, width):
    if width <= 0:
        return values.copy()
    view = np.lib.stride_tricks.sliding_window_view(values, width + 1)
    return view.max(axis=1)


@dataclass
class SimTrace:
    """Closed-loop trajectory on ``times = 0, dt, ..., t_final``.

    ``u_history`` holds the control at the history nodes (ending at t = 0)
    so that windows reaching before t = 0 can be formed.
    """

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    dt: float
    u_history: np.ndarray
    window: float
    diverged: bool = False

    def u_all(self):
        return np.vstack([self.u_history[:-1], self.u])

    def decay_profile(self) -> np.ndarray:
        """``|x(t)| + max over [t - r - eps, t] of |u|`` at every grid time."""
        width = len(self.u_history) - 1
        unorm = np.linalg.norm(self.u_all(), axis=1)
        return np.linalg.norm(self.x, axis=1) + _sliding_max(unorm, width)

    def identity_gap(self, model: PlantModel) -> np.ndarray:
        """``|u(t_i) - k p(t_i)|`` along the trace."""
        return np.linalg.norm(self.u - self.p @ model.k.T, axis=1)


@dataclass
class ComparisonTrace:
    times: np.ndarray
    x: np.ndarray
    dt: float
    x_history: np.ndarray
    window: float
    diverged: bool = False

    def decay_profile(self) -> np.ndarray:
        """Sup norm of the state segment on ``[t - r - eps, t]``."""
        width = len(self.x_history) - 1
        full = np.vstack([self.x_history[:-1], self.x])
        return _sliding_max(np.linalg.norm(full, axis=1), width)


class _Record:
    """Growing record of a grid signal starting at node ``-offset``."""

    def __init__(self, initial, total, h):
        self.offset = len(initial) - 1
        self.h = h
        self.data = np.zeros((self.offset + 1 + total, initial.shape[1]))
        self.data[: self.offset + 1] = initial
        self.last = 0  # newest filled node index (time = last * h)

    def __setitem__(self, i, value):
        self.data[i + self.offset] = value
        self.last = max(self.last, i)

    def window(self, lo, hi):
        return self.data[lo + self.offset: hi + self.offset + 1]

    def at(self, s):
        q = s / self.h
        if q < -self.offset - _GRID_TOL:
            raise ConsistencyError(f"read at t={s} precedes the stored history")
        i = int(math.floor(q))
        if i >= self.last:
            # only reachable when eps is within one step of r
            i = self.last - 1
        i = max(i, -self.offset)
        f = q - i
        a = self.data[i + self.offset]
        b = self.data[i + 1 + self.offset]
        return a + f * (b - a)


def _check_run(model_r, epsilon, history, dt, t_final):
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if abs(history.h - dt) > _GRID_TOL * dt:
        raise ValidationError(f"dt={dt} must equal the history step {history.h}")
    if epsilon < 0.0 or epsilon > model_r:
        raise PreconditionError(f"epsilon={epsilon} must lie in [0, r={model_r}]")
    need = _history_nodes(model_r + epsilon, dt)
    if len(history.times) < need + 1:
        raise CoverageError(
            f"history covers {len(history.times) - 1} steps; [-r-eps, 0] needs {need}"
        )
    return _steps(t_final, dt, "t_final")


def _signal_parts(signal):
    eps = float(getattr(signal, "epsilon", 0.0))
    return signal, eps


def simulate_closed_loop(model: PlantModel, signal, history: HistoryFunction,
                         t_final: float, dt: float) -> SimTrace:
    """Simulate ``x' = A x + B u(t - r - eps d(t))`` under the predictor law.

    After each RK4 step the control at the new node solves the (implicit,
    because the window ends at the new node) discretised control law.
    """
    d, eps = _signal_parts(signal)
    steps = _check_run(model.r, eps, history, dt, t_final)
    h = dt
    ker = _kernel(model, h)
    N = ker.N
    A, B = model.A, model.B
    r = model.r

    urec = _Record(history.u_values, steps, h)
    X = np.zeros((steps + 1, model.n))
    P = np.zeros((steps + 1, model.n))
    X[0] = history.x0
    P[0] = ker.eAr @ X[0] + np.einsum("jab,jb->a", ker.T, urec.window(-N, 0))

    def vin(t):
        return B @ urec.at(t - r - eps * d(t))

    x = X[0].copy()
    diverged = False
    last = steps
    for i in range(steps):
        t = i * h
        v1 = vin(t)
        v2 = vin(t + 0.5 * h)
        v4 = vin(t + h)
        k1 = A @ x + v1
        k2 = A @ (x + 0.5 * h * k1) + v2
        k3 = A @ (x + 0.5 * h * k2) + v2
        k4 = A @ (x + h * k3) + v4
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[i + 1] = x
        win = urec.window(i + 1 - N, i)
        rhs = ker.k_eAr @ x + np.einsum("jab,jb->a", ker.kW[:N], win)
        urec[i + 1] = ker.implicit @ rhs
        P[i + 1] = ker.eAr @ x + np.einsum("jab,jb->a", ker.T, urec.window(i + 1 - N, i + 1))
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP:
            diverged = True
            last = i + 1
            break

    trace = SimTrace(
        times=h * np.arange(last + 1), x=X[: last + 1], u=urec.window(0, last).copy(),
        p=P[: last + 1], dt=h, u_history=history.u_values.copy(),
        window=r + eps, diverged=diverged,
    )
    if diverged:
        raise DivergenceError(f"state norm exceeded {BLOWUP:g} at t={last * h:g}", trace=trace)
    return trace


def simulate_derivative_form(model: PlantModel, signal, history: HistoryFunction,
                             t_final: float, dt: float) -> SimTrace:
    """Simulate the plant with the differentiated control law.

    The control is a state variable with

        u' = k exp(Ar) (A x + B u(t - r - eps d) - B u(t - r)) + k A J + k B u

    where ``J(t) = int_{t-r}^{t} exp(A(t-s)) B u(s) ds``. ``J`` is recomputed
    from the recorded ``u`` at every grid node and carried through the RK4
    stages by its own equation ``J' = A J + B u - exp(Ar) B u(t - r)``.
    """
    d, eps = _signal_parts(signal)
    steps = _check_run(model.r, eps, history, dt, t_final)
    h = dt
    ker = _kernel(model, h)
    N = ker.N
    A, B, k = model.A, model.B, model.k
    n, m = model.n, model.m
    r = model.r
    eAr = ker.eAr
    eArB = eAr @ B
    k_eAr = ker.k_eAr
    kA, kB = k @ A, k @ B

    urec = _Record(history.u_values, steps, h)
    X = np.zeros((steps + 1, n))
    P = np.zeros((steps + 1, n))
    X[0] = history.x0
    P[0] = eAr @ X[0] + np.einsum("jab,jb->a", ker.T, urec.window(-N, 0))

    def rhs(x, u, J, ud, ur):
        dx = A @ x + B @ ud
        du = k_eAr @ (A @ x + B @ ud - B @ ur) + kA @ J + kB @ u
        dJ = A @ J + B @ u - eArB @ ur
        return dx, du, dJ

    x = X[0].copy()
    u = urec.window(0, 0)[0].copy()
    diverged = False
    last = steps
    for i in range(steps):
        t = i * h
        J = np.einsum("jab,jb->a", ker.W, urec.window(i - N, i))
        reads = []
        for tau in (t, t + 0.5 * h, t + h):
            reads.append((urec.at(tau - r - eps * d(tau)), urec.at(tau - r)))
        (ud1, ur1), (ud2, ur2), (ud4, ur4) = reads
        a1 = rhs(x, u, J, ud1, ur1)
        a2 = rhs(x + 0.5 * h * a1[0], u + 0.5 * h * a1[1], J + 0.5 * h * a1[2], ud2, ur2)
        a3 = rhs(x + 0.5 * h * a2[0], u + 0.5 * h * a2[1], J + 0.5 * h * a2[2], ud2, ur2)
        a4 = rhs(x + h * a3[0], u + h * a3[1], J + h * a3[2], ud4, ur4)
        x = x + (h / 6.0) * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0])
        u = u + (h / 6.0) * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1])
        X[i + 1] = x
        urec[i + 1] = u
        P[i + 1] = eAr @ x + np.einsum("jab,jb->a", ker.T, urec.window(i + 1 - N, i + 1))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))) or np.linalg.norm(x) > BLOWUP:
            diverged = True
            last = i + 1
            break

    trace = SimTrace(
        times=h * np.arange(last + 1), x=X[: last + 1], u=urec.window(0, last).copy(),
        p=P[: last + 1], dt=h, u_history=history.u_values.copy(),
        window=r + eps, diverged=diverged,
    )
    if diverged:
        raise DivergenceError(f"state norm exceeded {BLOWUP:g} at t={last * h:g}", trace=trace)
    return trace


def _as_signal(s):
    if callable(s):
        return lambda t: min(1.0, max(-1.0, float(s(t))))
    v = min(1.0, max(-1.0, float(s)))
    return lambda t: v


def simulate_comparison(sys: ComparisonSystem, epsilon: float, d_signal, q_signal,
                        history, t_final: float, dt: float) -> ComparisonTrace:
    """Simulate ``x' = Ahat x + q(t) C (x(t - r - eps d(t)) - x(t - r))``.

    ``history`` is a callable ``s -> x(s)`` on ``[-r - eps, 0]`` (or a
    constant vector); ``d_signal`` and ``q_signal`` are callables or
    constants, clamped to ``[-1, 1]``.
    """
    eps = float(epsilon)
    if eps < 0.0 or eps > sys.r:
        raise PreconditionError(f"epsilon={eps} must lie in [0, r={sys.r}]")
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    h = dt
    steps = _steps(t_final, h, "t_final")
    d, q = _as_signal(d_signal), _as_signal(q_signal)
    n = sys.n
    Nh = _history_nodes(sys.r + eps, h)
    hist_t = -h * np.arange(Nh, -1, -1, dtype=float)
    if callable(history):
        hist = np.array([_vec(history(s), n, "history") for s in hist_t])
    else:
        hist = np.tile(_vec(history, n, "history"), (Nh + 1, 1))

    A, C, r = sys.Ahat, sys.C, sys.r
    xrec = _Record(hist, steps, h)

    def g(t):
        return q(t) * (C @ (xrec.at(t - r - eps * d(t)) - xrec.at(t - r)))

    x = hist[-1].copy()
    diverged = False
    last = steps
    for i in range(steps):
        t = i * h
        g1, g2, g4 = g(t), g(t + 0.5 * h), g(t + h)
        k1 = A @ x + g1
        k2 = A @ (x + 0.5 * h * k1) + g2
        k3 = A @ (x + 0.5 * h * k2) + g2
        k4 = A @ (x + h * k3) + g4
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xrec[i + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP:
            diverged = True
            last = i + 1
            break

    trace = ComparisonTrace(
        times=h * np.arange(last + 1), x=xrec.window(0, last).copy(), dt=h,
        x_history=hist, window=r + eps, diverged=diverged,
    )
    if diverged:
        raise DivergenceError(f"state norm exceeded {BLOWUP:g} at t={last * h:g}", trace=trace)
    return trace


def recover_state(model: PlantModel, trace: SimTrace, t: float) -> np.ndarray:
    """Plant state from the predictor path:
    ``x(t) = exp(-Ar) p(t) - int_{t-r}^{t} exp(A(t-r-s)) B k p(s) ds``
    by the composite trapezoid on the trace grid (needs ``t >= r``)."""
    h = trace.dt
    N = _steps(model.r, h, "r")
    i = _steps(t, h, "t") if t > 0 else 0
    if i < N:
        raise CoverageError(f"t={t} < r={model.r}: p is not available on [t-r, t]")
    if i >= len(trace.times):
        raise CoverageError(f"t={t} lies beyond the end of the trace")
    Bk = model.B @ model.k
    weights = np.stack([mat_exp(model.A, -j * h) @ Bk for j in range(N + 1)]) * h
    weights[0] *= 0.5
    weights[-1] *= 0.5
    window = trace.p[i - N: i + 1]
    integral = np.einsum("jab,jb->a", weights, window)
    return mat_exp(model.A, -model.r) @ trace.p[i] - integral


# ---------------------------------------------------------------------------
# decay diagnostics
# ---------------------------------------------------------------------------

class DecayFit(NamedTuple):
    sigma_hat: float
    Q_hat: float
    estimate_holds: bool
    exact_zero: bool = False


def fit_decay(trace, burn_in: float) -> DecayFit:
    """Fit ``s(t) <= Q s(0) exp(-sigma t)`` to a trace's decay profile.

    ``sigma_hat`` is the least-squares slope of ``log s`` on
    ``[burn_in, t_final]``. ``Q_hat`` is the smallest constant for which the
    estimate with rate ``sigma_hat`` covers every grid point, so the check
    passes exactly when the fitted rate is positive and ``Q_hat`` is finite.
    """
    s = trace.decay_profile()
    t = trace.times
    tail = t >= burn_in - 1e-12
    if not np.any(s[tail] > 0.0):
        return DecayFit(math.inf, 0.0, True, exact_zero=True)
    mask = tail & (s > 0.0)
    if mask.sum() < 2:
        raise ValidationError("trace too short after burn_in for a decay fit")
    slope, _ = np.polyfit(t[mask], np.log(s[mask]), 1)
    sigma = -float(slope)
    s0 = s[0]
    if s0 == 0.0:
        # zero initial data with a nonzero response cannot satisfy the estimate
        return DecayFit(sigma, math.inf, False)
    with np.errstate(over="ignore"):
        q_hat = float(np.max(s * np.exp(sigma * t)) / s0)
        bound = q_hat * s0 * np.exp(-sigma * t) * (1.0 + 1e-6)
    holds = bool(sigma > 0.0 and math.isfinite(q_hat) and np.all(s <= bound))
    return DecayFit(sigma, q_hat, holds)


def write_trace_csv(trace: SimTrace, path) -> None:
    """CSV with header ``t,x_1..x_n,u_1..u_m,p_1..p_n``, 17 significant digits."""
    n, m = trace.x.shape[1], trace.u.shape[1]
    header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
              + [f"p_{i + 1}" for i in range(n)])
    data = np.column_stack([trace.times, trace.x, trace.u, trace.p])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
