"""Jet engine checks against sympy ground truth."""

import math

import numpy as np
import pytest
import sympy as sp

from wavefio.jets import Jet, make_space, arccos_sq_series, halfangle_b_series


def _space():
    return make_space({"t": 1, "x": 2, "eta": 2}, {"t": 2, "x": 4, "eta": 3}, 6)


def _sym_jet_coeffs(expr, syms, vals, space):
    """Taylor coefficients of expr about vals, on space's monomials."""
    out = {}
    for mon in space.monomials:
        e = expr
        fac = 1.0
        for s, p in zip(syms, mon):
            for _ in range(int(p)):
                e = sp.diff(e, s)
            fac *= math.factorial(int(p))
        val = complex(e.subs(dict(zip(syms, vals))))
        out[tuple(mon)] = val / fac
    return out


@pytest.mark.parametrize("seed", [0, 1])
def test_mul_div_matches_sympy(seed):
    rng = np.random.default_rng(seed)
    space = _space()
    t, x1, x2, e1, e2 = sp.symbols("t x1 x2 e1 e2")
    syms = (t, x1, x2, e1, e2)
    vals = rng.uniform(0.5, 1.5, size=5)

    f = (1 + t * x1 + 0.3 * x2**2 * e1) * (2 + e2 + 0.1 * x1 * e1 * t)
    g = 1 / (1.5 + 0.2 * t + 0.1 * x1 * e2)

    jt = Jet.variable(space, "t", 0, vals[0])
    jx1 = Jet.variable(space, "x", 0, vals[1])
    jx2 = Jet.variable(space, "x", 1, vals[2])
    je1 = Jet.variable(space, "eta", 0, vals[3])
    je2 = Jet.variable(space, "eta", 1, vals[4])

    jf = (1 + jt * jx1 + 0.3 * jx2 * jx2 * je1) * (2 + je2 + 0.1 * jx1 * je1 * jt)
    jg = (1.5 + 0.2 * jt + 0.1 * jx1 * je2).reciprocal()
    jprod = jf * jg

    ref = _sym_jet_coeffs(f * g, syms, vals, space)
    for mon, cref in ref.items():
        got = complex(jprod.coeffs[space.index[mon]])
        assert got == pytest.approx(cref, abs=1e-10, rel=1e-9), mon


def test_analytic_functions_match_sympy():
    space = make_space({"x": 2}, {"x": 5}, 5)
    x1, x2 = sp.symbols("x1 x2")
    vals = (0.4, 0.7)
    expr = sp.sqrt(1.3 + sp.sin(x1) * x2) * sp.exp(0.2 * x1 * x2) + sp.log(2 + x1)
    jx1 = Jet.variable(space, "x", 0, vals[0])
    jx2 = Jet.variable(space, "x", 1, vals[1])
    jet = ((1.3 + jx1.sin() * jx2).sqrt() * (0.2 * jx1 * jx2).exp()
           + (2 + jx1).log())
    ref = _sym_jet_coeffs(expr, (x1, x2), vals, space)
    for mon, cref in ref.items():
        got = complex(jet.coeffs[space.index[mon]])
        assert got == pytest.approx(cref, abs=1e-10, rel=1e-9), mon


def test_derivative_shifts_and_order():
    space = _space()
    jx1 = Jet.variable(space, "x", 0, 0.3)
    je1 = Jet.variable(space, "eta", 0, 1.1)
    f = jx1 * jx1 * je1 + 2.0 * jx1
    d = f.derivative("x", 0)
    # d/dx1 (x1^2 e1 + 2 x1) = 2 x1 e1 + 2
    assert complex(d.value()) == pytest.approx(2 * 0.3 * 1.1 + 2.0)
    assert complex(d.coeff({("x", 0): 1})) == pytest.approx(2 * 1.1)
    assert complex(d.coeff({("eta", 0): 1})) == pytest.approx(2 * 0.3)
    assert d.ord == f.ord - 1


def test_substitute_composition():
    # f(x, eta) with x -> X(eta) reproduces sympy composition
    space = make_space({"x": 2, "eta": 2}, {"x": 4, "eta": 4}, 5)
    x1, x2, e1, e2 = sp.symbols("x1 x2 e1 e2")
    f = sp.exp(0.3 * x1) * (1 + x2 + e1 * x1) + e2 * x2**2
    X1 = 0.2 * (e1 - 1.0) + 0.5 * (e2 - 2.0) ** 2
    X2 = -0.1 * (e1 - 1.0) * (e2 - 2.0)
    comp = f.subs({x1: 0.7 + X1, x2: -0.2 + X2})

    jx1 = Jet.variable(space, "x", 0, 0.7)
    jx2 = Jet.variable(space, "x", 1, -0.2)
    je1 = Jet.variable(space, "eta", 0, 1.0)
    je2 = Jet.variable(space, "eta", 1, 2.0)
    jf = (0.3 * jx1).exp() * (1 + jx2 + je1 * jx1) + je2 * jx2 * jx2
    d1 = je1 - 1.0
    d2 = je2 - 2.0
    d1.coeffs[0] = 0.0
    d2.coeffs[0] = 0.0
    jX1 = 0.2 * d1 + 0.5 * d2 * d2
    jX2 = -0.1 * d1 * d2
    jcomp = jf.substitute("x", [jX1, jX2])

    for mon in space.monomials:
        if mon[:2].sum() > 0:
            continue  # composed result has no x dependence
        e = comp
        fac = 1.0
        for s, p in zip((e1, e2), mon[2:]):
            for _ in range(int(p)):
                e = sp.diff(e, s)
            fac *= math.factorial(int(p))
        if sum(mon) > jcomp.ord:
            continue
        cref = complex(e.subs({e1: 1.0, e2: 2.0})) / fac
        got = complex(jcomp.coeffs[space.index[tuple(mon)]])
        assert got == pytest.approx(cref, abs=1e-10, rel=1e-9), mon


def test_batched_matches_scalar():
    space = make_space({"x": 1}, {"x": 4}, 4)
    vals = np.array([0.2, 0.5, 1.4])
    jb = Jet.variable(space, "x", 0, vals)
    fb = (1 + jb * jb).sqrt() * jb.exp()
    for i, v in enumerate(vals):
        js = Jet.variable(space, "x", 0, v)
        fs = (1 + js * js).sqrt() * js.exp()
        np.testing.assert_allclose(fb.coeffs[:, i], fs.coeffs, atol=1e-12)


def test_arccos_sq_series_consistency():
    # A(c) = arccos(c)^2 via ODE recurrence vs sympy derivatives
    c = sp.symbols("c")
    A = sp.acos(c) ** 2
    c0 = 0.3
    ser = arccos_sq_series(c0, 5)
    for m in range(6):
        ref = complex(sp.diff(A, c, m).subs(c, c0)) / math.factorial(m)
        assert complex(np.asarray(ser[m])) == pytest.approx(ref, rel=1e-9)


def test_halfangle_b_series():
    # arccos(1-q)^2 = 2 q B(q); check values and first derivative at q0
    for q0 in (0.05, 0.4, 0.9):
        ser = halfangle_b_series(q0, 3)
        ref = np.arccos(1 - q0) ** 2 / (2 * q0)
        assert complex(np.asarray(ser[0])) == pytest.approx(ref, rel=1e-10)
        h = 1e-6
        bp = np.arccos(1 - (q0 + h)) ** 2 / (2 * (q0 + h))
        bm = np.arccos(1 - (q0 - h)) ** 2 / (2 * (q0 - h))
        assert complex(np.asarray(ser[1])) == pytest.approx((bp - bm) / (2 * h), rel=1e-5)
