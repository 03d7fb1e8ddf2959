"""Acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS/FAIL lines
inline; they are also repeated in the terminal summary of any run.
"""

import math
import time

import numpy as np

from delayrobust.constant_delay import (
    char_eval_scalar,
    crossing_curve,
    crossing_roots,
    figure1_sweep,
    rightmost_root,
    unit_circle_defect,
)
from delayrobust.ddesim import (
    fit_decay,
    make_compatible_history,
    simulate_closed_loop,
    simulate_comparison,
    simulate_derivative_form,
)
from delayrobust.linalg import (
    DecayEnvelope,
    certify_envelope,
    decay_envelope,
    spectral_abscissa,
)
from delayrobust.margin import (
    ComparisonSystem,
    certify_sigma,
    max_epsilon,
    scalar_bound,
    scalar_plant,
    small_gain_sides,
)
from delayrobust.signals import DelaySignal

from conftest import bound_oracle, random_hurwitz, report

P_GRID = np.linspace(1.5, 5.0, 8)
U_STAR = -2 * math.e / (2 * math.e - 1)


def test_closed_form_consistency():
    start = time.perf_counter()
    worst = 0.0
    for p in (1.5, 2.0, 3.0, 5.0):
        got = max_epsilon(scalar_plant(p))
        worst = max(worst, abs(got - scalar_bound(p)) / scalar_bound(p),
                    abs(got - bound_oracle(p)) / bound_oracle(p))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 1.0
    assert report(1, "bisected margin equals closed form", ok,
                  f"max rel err {worst:.2e} <= 1e-8, {elapsed:.3f}s < 1s")


def test_figure_one_reproduction():
    start = time.perf_counter()
    rows = figure1_sweep(P_GRID)
    elapsed = time.perf_counter() - start
    nested = all(r.blue_tau_min < r.red_tau_min and r.red_tau_max < r.blue_tau_max for r in rows)
    red_sym = max(abs((1 - r.red_tau_min) - (r.red_tau_max - 1)) for r in rows)
    blue_asym = max(abs((1 - r.blue_tau_min) - (r.blue_tau_max - 1)) for r in rows)
    ratios = [(r.red_tau_max - 1) / (0.5 * (r.blue_tau_max - r.blue_tau_min)) for r in rows]
    ok = (nested and red_sym <= 1e-12 and blue_asym > 1e-6
          and all(0.35 <= q <= 0.65 for q in ratios) and elapsed < 30.0)
    assert report(2, "certified band inside constant-delay band", ok,
                  f"nested={nested}, red asym {red_sym:.1e}, blue asym {blue_asym:.2e}, "
                  f"ratio in [{min(ratios):.3f}, {max(ratios):.3f}], {elapsed:.2f}s")


def test_crossing_validity():
    worst_char, worst_circle, count = 0.0, 0.0, 0
    for p in P_GRID:
        for w in crossing_roots(p):
            worst_circle = max(worst_circle, unit_circle_defect(p, w))
        for w, tau in crossing_curve(p).all_crossings:
            worst_char = max(worst_char, abs(char_eval_scalar(p, tau, 1j * w)))
            count += 1
    ok = count > 0 and worst_char <= 1e-6 and worst_circle <= 1e-9
    assert report(3, "crossings are roots on the imaginary axis", ok,
                  f"{count} crossings, |chi| <= {worst_char:.1e}, circle defect "
                  f"<= {worst_circle:.1e}")


def test_spectral_cross_check():
    details, ok = [], True
    for p in (1.5, 2.0, 3.5, 5.0):
        win = crossing_curve(p)
        for tau, inward in ((win.tau_min, 1.0), (win.tau_max, -1.0)):
            edge = rightmost_root(p, tau).root.real
            inside = rightmost_root(p, tau + 1e-3 * inward).root.real
            outside = rightmost_root(p, tau - 1e-3 * inward).root.real
            ok &= abs(edge) <= 1e-4 and inside < 0 < outside
            details.append(abs(edge))
        nominal = rightmost_root(p, 1.0).root
        alpha = spectral_abscissa([[1 - p]])
        ok &= abs(nominal.real - alpha) <= 1e-6
    assert report(4, "rightmost root changes sign at the window edges", ok,
                  f"max |Re| at edges {max(details):.1e}, root at tau = r matches 1 - p")


def test_envelope_certificate():
    rng = np.random.default_rng(5)
    passed = 0
    for _ in range(20):
        n = int(rng.integers(2, 5))
        M = random_hurwitz(rng, n, shift=float(rng.uniform(0.05, 1.5)))
        mu = float(rng.uniform(0.05, 0.95)) * -spectral_abscissa(M)
        passed += certify_envelope(M, decay_envelope(M, mu), n_points=200, rtol=1e-9)
    assert report(5, "decay envelope bounds the matrix exponential", passed == 20,
                  f"{passed}/20 matrices certified on 200 points")


def _identity_gap(model, dt, eps):
    sig = DelaySignal.sinusoid(0.5, epsilon=eps)
    hist = make_compatible_history(model, eps, 1.0, U_STAR, dt)
    return simulate_closed_loop(model, sig, hist, 10.0, dt).identity_gap(model).max()


def test_predictor_identity_order():
    model = scalar_plant(2.0)
    gaps = [_identity_gap(model, dt, 0.04) for dt in (1e-2, 5e-3, 2.5e-3)]
    ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
    ok = all(3.5 <= q <= 4.5 for q in ratios)
    assert report(6, "control equals k times predictor to second order", ok,
                  f"gaps {gaps[0]:.2e}, {gaps[1]:.2e}, {gaps[2]:.2e}; "
                  f"ratios {ratios[0]:.3f}, {ratios[1]:.3f}")


def test_nominal_finite_spectrum():
    model = scalar_plant(2.0)
    dt = 1e-3
    hist = make_compatible_history(model, 0.0, 1.0, 0.0, dt)
    tr = simulate_closed_loop(model, DelaySignal.constant(0.0), hist, 20.0, dt)
    i_r = round(model.r / dt)
    t = tr.times[i_r:]
    oracle = np.exp(-(t - model.r)) * tr.p[i_r, 0]
    err = np.abs(tr.p[i_r:, 0] - oracle)
    # pointwise relative error over five time units past t = r
    short = t <= model.r + 5.0 + 1e-12
    pointwise = float(np.max(err[short] / np.abs(oracle[short])))
    uniform = float(np.max(err) / np.max(np.abs(oracle)))
    ok = pointwise <= 1e-6 and uniform <= 1e-6
    assert report(7, "nominal predictor follows the delay-free closed loop", ok,
                  f"pointwise rel {pointwise:.2e} on [r, r+5], sup-relative {uniform:.2e} "
                  "on [r, 20]")


def test_robust_decay():
    model = scalar_plant(2.0)
    eps = 0.5 * max_epsilon(model)
    dt = 1e-2
    start = time.perf_counter()
    hist = make_compatible_history(model, eps, 1.0, 0.0, dt)
    holds, worst_ratio, worst_sigma = 0, 0.0, math.inf
    for seed in range(100):
        sig = DelaySignal.piecewise_constant(seed, 0.05, epsilon=eps)
        tr = simulate_closed_loop(model, sig, hist, 20.0, dt)
        fit = fit_decay(tr, model.r + eps)
        s = tr.decay_profile()
        holds += fit.estimate_holds
        worst_ratio = max(worst_ratio, s[-1] / s[0])
        worst_sigma = min(worst_sigma, fit.sigma_hat)
    elapsed = time.perf_counter() - start
    ok = holds == 100 and worst_ratio <= 1e-3 and elapsed < 120.0
    assert report(8, "decay under measurable delay perturbations", ok,
                  f"eps {eps:.5f}, {holds}/100 estimates hold, max s(20)/s(0) "
                  f"{worst_ratio:.1e}, min sigma_hat {worst_sigma:.3f}, {elapsed:.1f}s")


def test_comparison_system_decay():
    sys = ComparisonSystem([[-1.0]], [[-2 * math.e]], 1.0, DecayEnvelope(1.0, 1.0))
    eps = 0.04
    lhs, rhs = small_gain_sides(sys, eps, scalar_path=False)
    assert lhs < rhs
    sigma, _ = certify_sigma(sys, eps)
    rng = np.random.default_rng(9)
    fitted = []
    for _ in range(50):
        d, q = (DelaySignal.piecewise_constant(int(rng.integers(1 << 31)),
                                               float(rng.uniform(0.02, 0.5)))
                for _ in range(2))
        x0 = float(rng.uniform(-2, 2))
        slope = float(rng.uniform(-1, 1))
        tr = simulate_comparison(sys, eps, d, q, lambda s: [x0 + slope * s], 20.0, 1e-2)
        fitted.append(fit_decay(tr, sys.r + eps).sigma_hat)
    ok = min(fitted) >= 0.8 * sigma
    assert report(9, "comparison system decays at least at the certified rate", ok,
                  f"certified sigma {sigma:.4f}, min fitted {min(fitted):.4f} "
                  f">= {0.8 * sigma:.4f}")


def test_formulation_equivalence():
    model = scalar_plant(2.0)
    sig = DelaySignal.sinusoid(0.5, epsilon=0.04)
    gaps = []
    for dt in (4e-3, 2e-3, 1e-3):
        hist = make_compatible_history(model, 0.04, 1.0, U_STAR, dt)
        a = simulate_closed_loop(model, sig, hist, 6.0, dt)
        b = simulate_derivative_form(model, sig, hist, 6.0, dt)
        gaps.append(max(np.abs(a.x - b.x).max(), np.abs(a.u - b.u).max()))
    ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
    ok = gaps[-1] <= 1e-4 and all(3.5 <= q <= 4.5 for q in ratios)
    assert report(10, "integral and derivative control laws agree", ok,
                  f"gap {gaps[-1]:.2e} at dt=1e-3, ratios {ratios[0]:.3f}, {ratios[1]:.3f}")
