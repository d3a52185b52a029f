"""Scalar fields on a chart with analytic derivative suppliers.

Every consumer in this package (curvature checks, the conjugation identity,
the gauge transform) needs pointwise jets of smooth functions: value, first,
second and sometimes third partial derivatives, evaluated on batches of chart
points.  Fields here are cheap closed-form objects; finite differences are
kept separately as cross-check oracles in the test suite.

All evaluation methods take points of shape (B, dim) and return arrays whose
leading axis is B.  Derivative index order is (B, a), (B, a, b), (B, a, b, c)
for d/dq^a, d2/dq^a dq^b, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScalarField:
    """Base class; subclasses provide value/grad/hess (and third if smooth enough)."""

    dim: int

    def value(self, q):
        raise NotImplementedError

    def grad(self, q):
        raise NotImplementedError

    def hess(self, q):
        raise NotImplementedError

    def third(self, q):
        raise NotImplementedError(
            f"{type(self).__name__} does not supply third derivatives"
        )

    def __call__(self, q):
        return self.value(q)


@dataclass
class ConstantField(ScalarField):
    dim: int
    c: float = 0.0

    def value(self, q):
        q = np.atleast_2d(q)
        return np.full(q.shape[0], self.c)

    def grad(self, q):
        q = np.atleast_2d(q)
        return np.zeros((q.shape[0], self.dim))

    def hess(self, q):
        q = np.atleast_2d(q)
        return np.zeros((q.shape[0], self.dim, self.dim))

    def third(self, q):
        q = np.atleast_2d(q)
        return np.zeros((q.shape[0],) + (self.dim,) * 3)


@dataclass
class PolynomialField(ScalarField):
    """Multivariate polynomial sum_k c_k * prod_a q_a^{e_ka}.

    Exponents are a (terms, dim) integer array.  Derivatives are exact, so
    these fields drive the tight-tolerance identity checks.
    """

    dim: int
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    expons: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=int))

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.expons = np.asarray(self.expons, dtype=int)

    def _eval_terms(self, q, expons):
        # prod over axes of q**e, term-wise; q: (B, dim), expons: (T, dim)
        return np.prod(q[:, None, :] ** expons[None, :, :], axis=2)

    def value(self, q):
        q = np.atleast_2d(q)
        if len(self.coeffs) == 0:
            return np.zeros(q.shape[0])
        return self._eval_terms(q, self.expons) @ self.coeffs

    def _diff_once(self, coeffs, expons, a):
        mask = expons[:, a] > 0
        c = coeffs[mask] * expons[mask, a]
        e = expons[mask].copy()
        e[:, a] -= 1
        return c, e

    def grad(self, q):
        q = np.atleast_2d(q)
        out = np.zeros((q.shape[0], self.dim))
        for a in range(self.dim):
            c, e = self._diff_once(self.coeffs, self.expons, a)
            if len(c):
                out[:, a] = self._eval_terms(q, e) @ c
        return out

    def hess(self, q):
        q = np.atleast_2d(q)
        out = np.zeros((q.shape[0], self.dim, self.dim))
        for a in range(self.dim):
            ca, ea = self._diff_once(self.coeffs, self.expons, a)
            if not len(ca):
                continue
            for b in range(a, self.dim):
                c, e = self._diff_once(ca, ea, b)
                if len(c):
                    val = self._eval_terms(q, e) @ c
                    out[:, a, b] = val
                    out[:, b, a] = val
        return out

    def third(self, q):
        q = np.atleast_2d(q)
        out = np.zeros((q.shape[0],) + (self.dim,) * 3)
        for a in range(self.dim):
            ca, ea = self._diff_once(self.coeffs, self.expons, a)
            if not len(ca):
                continue
            for b in range(self.dim):
                cb, eb = self._diff_once(ca, ea, b)
                if not len(cb):
                    continue
                for c_ in range(self.dim):
                    c, e = self._diff_once(cb, eb, c_)
                    if len(c):
                        out[:, a, b, c_] = self._eval_terms(q, e) @ c
        return out


def random_polynomial(dim, degree, rng, scale=1.0):
    """Random dense polynomial of total degree <= degree with N(0, scale) coefficients."""
    expons = []
    for e in np.ndindex(*((degree + 1,) * dim)):
        if sum(e) <= degree:
            expons.append(e)
    expons = np.array(expons, dtype=int)
    coeffs = rng.normal(0.0, scale, len(expons))
    return PolynomialField(dim=dim, coeffs=coeffs, expons=expons)


def _mollifier_1d(u):
    """C-infinity bump exp(1 - 1/(1-u^2)) on |u|<1, extended by zero.

    Returns (psi, dpsi, d2psi) elementwise; safe at |u| >= 1.
    """
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    psi = np.zeros_like(u)
    dpsi = np.zeros_like(u)
    d2psi = np.zeros_like(u)
    ui = u[inside]
    w = 1.0 - ui * ui
    s = 1.0 / w
    val = np.exp(1.0 - s)
    # s' = 2u s^2 ; psi' = -s' psi
    sp = 2.0 * ui * s * s
    spp = 2.0 * s * s + 8.0 * ui * ui * s ** 3
    psi[inside] = val
    dpsi[inside] = -sp * val
    d2psi[inside] = (sp * sp - spp) * val
    return psi, dpsi, d2psi


@dataclass
class BumpField(ScalarField):
    """Compactly supported bump: amplitude * prod_a psi((q_a - center_a)/radius_a).

    Support is the open box center +- radius; the field and all derivatives
    vanish identically outside it.
    """

    dim: int
    center: np.ndarray = None
    radius: np.ndarray = None
    amplitude: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.radius = np.asarray(self.radius, dtype=float)
        if self.center.shape != (self.dim,) or self.radius.shape != (self.dim,):
            raise ValueError("center/radius must have shape (dim,)")
        if np.any(self.radius <= 0):
            raise ValueError("bump radius must be positive")

    def _parts(self, q):
        q = np.atleast_2d(q)
        u = (q - self.center) / self.radius
        return _mollifier_1d(u)  # each (B, dim)

    def value(self, q):
        psi, _, _ = self._parts(q)
        return self.amplitude * np.prod(psi, axis=1)

    def grad(self, q):
        psi, dpsi, _ = self._parts(q)
        prod = np.prod(psi, axis=1)
        out = np.zeros_like(psi)
        for a in range(self.dim):
            others = np.prod(np.delete(psi, a, axis=1), axis=1)
            out[:, a] = dpsi[:, a] / self.radius[a] * others
        return self.amplitude * out

    def hess(self, q):
        psi, dpsi, d2psi = self._parts(q)
        B = psi.shape[0]
        out = np.zeros((B, self.dim, self.dim))
        for a in range(self.dim):
            for b in range(a, self.dim):
                fac = np.ones(B)
                for c in range(self.dim):
                    if c == a == b:
                        fac = fac * d2psi[:, c] / self.radius[c] ** 2
                    elif c == a or c == b:
                        fac = fac * dpsi[:, c] / self.radius[c]
                    else:
                        fac = fac * psi[:, c]
                out[:, a, b] = fac
                out[:, b, a] = fac
        return self.amplitude * out

    @property
    def support_lo(self):
        return self.center - self.radius

    @property
    def support_hi(self):
        return self.center + self.radius


@dataclass
class FuncField(ScalarField):
    """Field from explicit callables (each vectorized over (B, dim) points)."""

    dim: int
    f: object = None
    df: object = None
    d2f: object = None
    d3f: object = None

    def value(self, q):
        return np.asarray(self.f(np.atleast_2d(q)))

    def grad(self, q):
        if self.df is None:
            raise NotImplementedError("no gradient supplier")
        return np.asarray(self.df(np.atleast_2d(q)))

    def hess(self, q):
        if self.d2f is None:
            raise NotImplementedError("no hessian supplier")
        return np.asarray(self.d2f(np.atleast_2d(q)))

    def third(self, q):
        if self.d3f is None:
            raise NotImplementedError("no third-derivative supplier")
        return np.asarray(self.d3f(np.atleast_2d(q)))


class FDField(ScalarField):
    """Wrap a value-only callable with central finite differences of step h.

    Used for the identity's finite-difference variant, where the residual is
    expected to decay as O(h^2).
    """

    def __init__(self, dim, f, h=1e-3):
        self.dim = dim
        self.f = f
        self.h = h

    def value(self, q):
        return np.asarray(self.f(np.atleast_2d(q)))

    def _shift(self, q, a, s):
        qs = np.array(q, dtype=float)
        qs[:, a] += s
        return qs

    def grad(self, q):
        q = np.atleast_2d(q)
        out = np.zeros((q.shape[0], self.dim))
        for a in range(self.dim):
            out[:, a] = (self.f(self._shift(q, a, self.h)) - self.f(self._shift(q, a, -self.h))) / (
                2 * self.h
            )
        return out

    def hess(self, q):
        q = np.atleast_2d(q)
        h = self.h
        f = self.f
        out = np.zeros((q.shape[0], self.dim, self.dim))
        f0 = np.asarray(f(q))
        for a in range(self.dim):
            out[:, a, a] = (
                f(self._shift(q, a, h)) - 2 * f0 + f(self._shift(q, a, -h))
            ) / h ** 2
            for b in range(a + 1, self.dim):
                qpp = self._shift(self._shift(q, a, h), b, h)
                qpm = self._shift(self._shift(q, a, h), b, -h)
                qmp = self._shift(self._shift(q, a, -h), b, h)
                qmm = self._shift(self._shift(q, a, -h), b, -h)
                val = (f(qpp) - f(qpm) - f(qmp) + f(qmm)) / (4 * h ** 2)
                out[:, a, b] = val
                out[:, b, a] = val
        return out

    def third(self, q):
        # d3/dqa dqb dqc via differencing the FD hessian; adequate for O(h^2) studies
        q = np.atleast_2d(q)
        h = self.h
        out = np.zeros((q.shape[0],) + (self.dim,) * 3)
        for c in range(self.dim):
            hp = self.hess(self._shift(q, c, h))
            hm = self.hess(self._shift(q, c, -h))
            out[:, :, :, c] = (hp - hm) / (2 * h)
        return out
