"""Truncated multivariate Taylor arithmetic (forward-mode jets).

The derivative engine for phase functions, weights and amplitude reduction:
every field is carried as a truncated Taylor polynomial in a small set of
offset variables (time, base-point offsets, momentum offsets), with exact
chain rules through products, quotients, analytic functions and
substitution.  Coefficient arrays carry an optional trailing batch shape so
the same pipeline evaluates one point or a whole quadrature grid.

Truncation is tracked per jet via ``ord`` (valid total order); products and
derivatives propagate it so that silently-invalid coefficients are zeroed
rather than trusted.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = ["JetSpace", "Jet", "make_space", "arccos_sq_series", "halfangle_b_series"]


class JetSpace:
    """Monomial basis for jets in named variable groups with per-group caps.

    Parameters
    ----------
    groups : dict name -> number of variables (declaration order = layout)
    caps : dict name -> max total degree within that group
    total_cap : max total degree across all variables
    """

    def __init__(self, groups, caps, total_cap):
        self.group_names = list(groups)
        self.group_sizes = {g: int(groups[g]) for g in self.group_names}
        self.caps = {g: int(caps[g]) for g in self.group_names}
        self.total_cap = int(total_cap)
        self.n_vars = sum(self.group_sizes.values())
        self.var_offset = {}
        off = 0
        for g in self.group_names:
            self.var_offset[g] = off
            off += self.group_sizes[g]

        self.monomials = self._enumerate()
        self.n_mon = len(self.monomials)
        self.index = {tuple(m): i for i, m in enumerate(self.monomials)}
        self.degrees = self.monomials.sum(axis=1)
        self._mul_cache = None
        self._diff_cache = {}
        self._subs_cache = {}
        self._masks = {}

    def _enumerate(self):
        per_group = []
        for g in self.group_names:
            n, cap = self.group_sizes[g], self.caps[g]
            mons = [m for m in itertools.product(range(cap + 1), repeat=n)
                    if sum(m) <= cap]
            per_group.append(mons)
        out = []
        for combo in itertools.product(*per_group):
            flat = tuple(itertools.chain.from_iterable(combo))
            if sum(flat) <= self.total_cap:
                out.append(flat)
        out.sort(key=lambda m: (sum(m), m))
        return np.array(out, dtype=np.int64)

    def var_index(self, group, i=0):
        return self.var_offset[group] + i

    def _mul_table(self):
        if self._mul_cache is None:
            idx = self.index
            I, J, K = [], [], []
            mons = [tuple(m) for m in self.monomials]
            degs = [sum(m) for m in mons]
            for i, mi in enumerate(mons):
                di = degs[i]
                for j, mj in enumerate(mons):
                    if di + degs[j] > self.total_cap:
                        continue
                    s = tuple(a + b for a, b in zip(mi, mj))
                    k = idx.get(s)
                    if k is not None:
                        I.append(i)
                        J.append(j)
                        K.append(k)
            I = np.asarray(I, dtype=np.int64)
            J = np.asarray(J, dtype=np.int64)
            K = np.asarray(K, dtype=np.int64)
            S = sp.csr_matrix(
                (np.ones(len(K)), (K, np.arange(len(K)))),
                shape=(self.n_mon, len(K)),
            )
            self._mul_cache = (I, J, S)
        return self._mul_cache

    def _diff_table(self, var):
        tab = self._diff_cache.get(var)
        if tab is None:
            src, dst, fac = [], [], []
            for i, m in enumerate(self.monomials):
                if m[var] >= 1:
                    mm = m.copy()
                    mm[var] -= 1
                    j = self.index.get(tuple(mm))
                    if j is not None:
                        src.append(i)
                        dst.append(j)
                        fac.append(float(m[var]))
            tab = (np.asarray(src), np.asarray(dst), np.asarray(fac))
            self._diff_cache[var] = tab
        return tab

    def _subs_groups(self, sub_vars):
        key = tuple(sub_vars)
        tab = self._subs_cache.get(key)
        if tab is None:
            groups = {}
            for i, m in enumerate(self.monomials):
                alpha = tuple(int(m[v]) for v in sub_vars)
                rem = m.copy()
                for v in sub_vars:
                    rem[v] = 0
                j = self.index.get(tuple(rem))
                groups.setdefault(alpha, ([], []))
                groups[alpha][0].append(i)
                groups[alpha][1].append(j)
            tab = {a: (np.asarray(s), np.asarray(d)) for a, (s, d) in groups.items()}
            self._subs_cache[key] = tab
        return tab

    def degree_mask(self, max_deg):
        m = self._masks.get(max_deg)
        if m is None:
            m = self.degrees <= max_deg
            self._masks[max_deg] = m
        return m


@lru_cache(maxsize=64)
def _space_cached(group_items, cap_items, total_cap):
    return JetSpace(dict(group_items), dict(cap_items), total_cap)


def make_space(groups, caps, total_cap):
    """Cached JetSpace constructor (tables are expensive to rebuild)."""
    return _space_cached(tuple(groups.items()), tuple(caps.items()), total_cap)


def _asc(x):
    return np.asarray(x, dtype=complex)


class Jet:
    """Truncated Taylor polynomial with complex coefficients and batch support.

    coeffs has shape (n_mon, *batch).  `ord` is the highest total degree whose
    coefficients are trustworthy; higher ones are kept at zero.
    """

    __slots__ = ("space", "coeffs", "ord")

    def __init__(self, space, coeffs, order=None):
        self.space = space
        self.coeffs = coeffs
        self.ord = space.total_cap if order is None else max(0, min(order, space.total_cap))

    @staticmethod
    def constant(space, value, batch=None):
        value = _asc(value)
        batch = value.shape if batch is None else batch
        c = np.zeros((space.n_mon, *batch), dtype=complex)
        c[0] = value
        return Jet(space, c)

    @staticmethod
    def variable(space, group, i, value, batch=None):
        value = _asc(value)
        batch = value.shape if batch is None else batch
        c = np.zeros((space.n_mon, *batch), dtype=complex)
        c[0] = value
        e = np.zeros(space.n_vars, dtype=np.int64)
        e[space.var_index(group, i)] = 1
        c[space.index[tuple(e)]] = 1.0
        return Jet(space, c)

    @property
    def batch(self):
        return self.coeffs.shape[1:]

    def copy(self):
        return Jet(self.space, self.coeffs.copy(), self.ord)

    def value(self):
        return self.coeffs[0]

    def coeff(self, expdict):
        """Coefficient of the monomial given as {(group, i): power}."""
        e = np.zeros(self.space.n_vars, dtype=np.int64)
        for (g, i), p in expdict.items():
            e[self.space.var_index(g, i)] = p
        return self.coeffs[self.space.index[tuple(e)]]

    def _trim(self):
        if self.ord < self.space.total_cap:
            self.coeffs[~self.space.degree_mask(self.ord)] = 0.0
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.coeffs + other.coeffs,
                       min(self.ord, other.ord))._trim()
        c = self.coeffs.copy() if self.coeffs.flags.writeable else self.coeffs.astype(complex)
        c = np.array(c, copy=True)
        c[0] = c[0] + other
        return Jet(self.space, c, self.ord)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coeffs, self.ord)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.coeffs - other.coeffs,
                       min(self.ord, other.ord))._trim()
        return self + (-_asc(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, self.coeffs * other, self.ord)
        I, J, S = self.space._mul_table()
        a, b = self.coeffs, other.coeffs
        batch = np.broadcast_shapes(a.shape[1:], b.shape[1:])
        a = np.broadcast_to(a, (a.shape[0], *batch))
        b = np.broadcast_to(b, (b.shape[0], *batch))
        W = (a[I] * b[J]).reshape(len(I), -1)
        out = (S @ W).reshape(self.space.n_mon, *batch)
        return Jet(self.space, np.ascontiguousarray(out),
                   min(self.ord, other.ord))._trim()

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.space, self.coeffs / other, self.ord)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def derivative(self, group, i=0):
        v = self.space.var_index(group, i)
        src, dst, fac = self.space._diff_table(v)
        out = np.zeros_like(self.coeffs)
        shape = (-1,) + (1,) * (self.coeffs.ndim - 1)
        out[dst] = self.coeffs[src] * fac.reshape(shape)
        return Jet(self.space, out, self.ord - 1)._trim()

    def apply_series(self, series):
        """Compose with a univariate function: series[m] = f^(m)(c0)/m! at
        c0 = self.value() (entries may be batched arrays)."""
        n = min(len(series) - 1, self.ord)
        delta = self.copy()
        delta.coeffs[0] = 0.0
        out = Jet.constant(self.space, np.broadcast_to(_asc(series[n]), self.batch)
                           if self.batch else _asc(series[n]), self.batch)
        out.ord = self.ord
        for m in range(n - 1, -1, -1):
            out = out * delta
            out.coeffs[0] = out.coeffs[0] + series[m]
            out.ord = self.ord
        return out

    def _c0(self):
        return _asc(self.value())

    def reciprocal(self):
        c0, n = self._c0(), self.ord
        series = [(-1.0) ** m / c0 ** (m + 1) for m in range(n + 1)]
        return self.apply_series(series)

    def sqrt(self):
        c0, n = self._c0(), self.ord
        out, coef = [], np.sqrt(c0)
        for m in range(n + 1):
            out.append(coef)
            coef = coef * (0.5 - m) / (m + 1) / c0
        return self.apply_series(out)

    def power(self, p):
        c0, n = self._c0(), self.ord
        out, coef = [], c0 ** p
        for m in range(n + 1):
            out.append(coef)
            coef = coef * (p - m) / (m + 1) / c0
        return self.apply_series(out)

    def exp(self):
        c0, n = self._c0(), self.ord
        e = np.exp(c0)
        return self.apply_series([e / math.factorial(m) for m in range(n + 1)])

    def log(self):
        c0, n = self._c0(), self.ord
        series = [np.log(c0)]
        for m in range(1, n + 1):
            series.append((-1.0) ** (m + 1) / (m * c0 ** m))
        return self.apply_series(series)

    def sin(self):
        c0, n = self._c0(), self.ord
        s, c = np.sin(c0), np.cos(c0)
        vals = [s, c, -s, -c]
        return self.apply_series([vals[m % 4] / math.factorial(m) for m in range(n + 1)])

    def cos(self):
        c0, n = self._c0(), self.ord
        s, c = np.sin(c0), np.cos(c0)
        vals = [c, -s, -c, s]
        return self.apply_series([vals[m % 4] / math.factorial(m) for m in range(n + 1)])

    def arccos_sq(self):
        """(arccos(self))**2; constant term must lie in (-1, 1)."""
        return self.apply_series(arccos_sq_series(self._c0(), self.ord))

    def substitute(self, group, replacements):
        """Replace the offset variables of `group` by the given jets.

        The replacement jets stand for offsets and must have zero constant
        term; they live in the same space (with no dependence on `group`).
        """
        sub_vars = tuple(self.space.var_index(group, i)
                         for i in range(self.space.group_sizes[group]))
        table = self.space._subs_groups(sub_vars)
        for r in replacements:
            if np.max(np.abs(np.atleast_1d(r.value()))) > 1e-12:
                raise ValueError("substitute expects zero-constant replacement jets")
        pow_cache = {}

        def xpow(i, p):
            key = (i, p)
            if key not in pow_cache:
                pow_cache[key] = replacements[i] if p == 1 else xpow(i, p - 1) * replacements[i]
            return pow_cache[key]

        min_rord = min([r.ord for r in replacements], default=self.space.total_cap)
        out = None
        for alpha, (src, dst) in table.items():
            coef = np.zeros_like(self.coeffs)
            coef[dst] = self.coeffs[src]
            piece = Jet(self.space, coef, self.space.total_cap)
            for i, p in enumerate(alpha):
                if p > 0:
                    piece = piece * xpow(i, p)
            out = piece if out is None else out + piece
        out.ord = min(self.ord, min_rord)
        return out._trim()


@lru_cache(maxsize=256)
def _promote_map(src_key, dst_key):
    src, dst = _space_cached(*src_key), _space_cached(*dst_key)
    src_idx, dst_idx = [], []
    for i, m in enumerate(src.monomials):
        e = np.zeros(dst.n_vars, dtype=np.int64)
        ok = True
        for gi, g in enumerate(src.group_names):
            if g not in dst.group_sizes:
                if m[src.var_offset[g]:src.var_offset[g] + src.group_sizes[g]].sum():
                    ok = False
                    break
                continue
            for k in range(src.group_sizes[g]):
                e[dst.var_offset[g] + k] = m[src.var_offset[g] + k]
        if ok:
            j = dst.index.get(tuple(e))
            if j is not None:
                src_idx.append(i)
                dst_idx.append(j)
    return np.asarray(src_idx), np.asarray(dst_idx)


def promote(jet, target_space):
    """Re-express a jet in a space with matching group names (coefficients on
    monomials absent from the target are required to vanish)."""
    src = jet.space
    src_key = (tuple(src.group_sizes.items()), tuple(src.caps.items()), src.total_cap)
    dst_key = (tuple(target_space.group_sizes.items()),
               tuple(target_space.caps.items()), target_space.total_cap)
    si, di = _promote_map(src_key, dst_key)
    out = np.zeros((target_space.n_mon, *jet.coeffs.shape[1:]), dtype=complex)
    out[di] = jet.coeffs[si]
    return Jet(target_space, out, min(jet.ord, target_space.total_cap))


def arccos_sq_series(c0, n):
    """Taylor coefficients of A(c)=arccos(c)^2 at c0 (|c0|<1), length n+1.

    Uses the ODE (1-c^2) A'' = c A' + 2.
    """
    c0 = np.asarray(c0, dtype=complex)
    th = np.arccos(c0)
    a = [th ** 2, -2.0 * th / np.sqrt(1.0 - c0 ** 2)]
    for m in range(0, max(n - 1, 0)):
        nxt = (2.0 * (1.0 if m == 0 else 0.0)
               + c0 * (m + 1) * (2 * m + 1) * a[m + 1]
               + (m ** 2) * a[m]) / ((1.0 - c0 ** 2) * (m + 2) * (m + 1))
        a.append(nxt)
    return a[: n + 1]


def _halfangle_beta(n_terms=120):
    beta = [1.0]
    for m in range(1, n_terms):
        beta.append(beta[-1] * m * m / ((2 * m + 1) * (m + 1)))
    return np.array(beta)


_BETA = _halfangle_beta()


def halfangle_b_series(q0, n):
    """Taylor coefficients at q0 of B(q) where arccos(1-q)^2 = 2 q B(q).

    Series about q=0 has radius 2; accurate for 0 <= q0 <~ 1.2.
    """
    q0 = np.asarray(q0, dtype=complex)
    js = np.arange(len(_BETA))
    out = []
    for m in range(n + 1):
        j = js[m:]
        comb = np.array([math.comb(int(jj), m) for jj in j], dtype=float)
        terms = _BETA[m:] * comb
        out.append(np.sum(terms * q0[..., None] ** (j - m), axis=-1))
    return out
