"""Comparison function psi_{K,p}, scalar Hessians, and the spacetime-convexity
inequality for the spacelike distance r_p.

The inequality under test at points q in the exterior of the double cone is

    Hess r_p(X, X)  >=  (psi_{K,p}(q) / r_p(q)) * ( <X,X> - <X, grad r_p>^2 )

for all tangent X.  Note both sides change sign with the causal character of
X, so raising K above a model's admissible interval is detected through
timelike directions (psi shrinks with K, weakening the spacelike bound but
strengthening, and eventually breaking, the timelike one).

grad r_p comes from the terminal velocity of the radial geodesic (one
logarithm solve per point, Gauss-lemma form); Hess r_p from central
differences of that gradient field corrected by the connection.  In the flat
model everything is closed form and the comparison with K = 0 is an exact
identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, LogMapError
from .geometry import christoffel_batch
from .geodesics import exp_batch, log_map_batch, sample_exterior

PASS_TOL = 1e-6


def psi_value(K, r):
    """The curvature comparison factor: sqrt|K| r cot(sqrt|K| r) for K > 0,
    1 for K = 0, sqrt|K| r coth(sqrt|K| r) for K < 0.

    For K > 0 the domain is r < pi / (2 sqrt K); outside it the spatial
    diameter hypothesis is violated and a DomainError is raised.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("psi is defined for r > 0")
    if K == 0:
        return np.ones_like(r) if r.ndim else 1.0
    a = np.sqrt(abs(K))
    if K > 0:
        if np.any(r >= np.pi / (2 * a)):
            raise DomainError("r beyond pi/(2 sqrt K); diameter hypothesis violated")
        out = a * r / np.tan(a * r)
    else:
        out = a * r / np.tanh(a * r)
    return out if out.ndim else float(out)


def psi_derivatives(K, r):
    """(psi, psi', psi'') with respect to r, on the branch for K."""
    r = np.asarray(r, dtype=float)
    if K == 0:
        z = np.zeros_like(r)
        return np.ones_like(r), z, z
    a = np.sqrt(abs(K))
    if K < 0:
        c = 1.0 / np.tanh(a * r)
        s2 = 1.0 / np.sinh(a * r) ** 2
        psi = a * r * c
        dpsi = a * c - a ** 2 * r * s2
        d2psi = -2 * a ** 2 * s2 + 2 * a ** 3 * r * s2 * c
    else:
        psi = psi_value(K, r)  # domain guard
        c = 1.0 / np.tan(a * r)
        s2 = 1.0 / np.sin(a * r) ** 2
        dpsi = a * c - a ** 2 * r * s2
        d2psi = -2 * a ** 2 * s2 + 2 * a ** 3 * r * s2 * c
    return psi, dpsi, d2psi


def hessian_scalar(model, fld, q):
    """Covariant Hessian of a scalar field as a bilinear form at q:
    (Hess f)_ij = d_i d_j f - Gamma^k_ij d_k f."""
    q2 = np.atleast_2d(np.asarray(q, dtype=float))
    G = christoffel_batch(model, q2)
    dd = fld.hess(q2)
    df = fld.grad(q2)
    H = dd - np.einsum("bkij,bk->bij", G, df)
    return H[0] if np.asarray(q).ndim == 1 else H


# ---------------------------------------------------------------------------
# radial data providers

class FlatRadial:
    """Closed-form r_p, grad r_p, Hess r_p in the flat model."""

    def __init__(self, model, p):
        self.model = model
        self.p = np.asarray(p, dtype=float)
        self.eta = model.metric(self.p)[0]

    def at(self, q, guess=None):
        q = np.atleast_2d(q)
        dv = q - self.p[None, :]
        r2 = np.einsum("bi,ij,bj->b", dv, self.eta, dv)
        bad = r2 <= 0
        r = np.sqrt(np.where(bad, 1.0, r2))
        grad = dv / r[:, None]  # raised index
        dr = np.einsum("ij,bj->bi", self.eta, grad)  # lowered dr_i
        hess = (self.eta[None, :, :] - dr[:, :, None] * dr[:, None, :]) / r[:, None, None]
        return r, grad, hess, bad


class ProductRadial:
    """Exact radial data for ultrastatic models with closed-form spatial
    geodesics: r^2 = D(x_p, x)^2 - (t - t_p)^2 with D the spatial distance.

    The spatial factor has constant curvature c0, so its distance Hessian is
    the comparison equality Hess D = k(D) (g0 - dD x dD) with k = coth, 1/D,
    or cot, and the full Hessian of r assembles in closed form.  Machine
    precision at any distance from the cone.
    """

    def __init__(self, model, p):
        if model.exp_closed is None or model.log_closed is None:
            raise ValueError("ProductRadial needs closed-form exp/log")
        self.model = model
        self.p = np.asarray(p, dtype=float)
        self.c0 = float(model.info.get("spatial_curvature", 0.0))

    def _k(self, D):
        if self.c0 < 0:
            return 1.0 / np.tanh(D)
        if self.c0 > 0:
            return 1.0 / np.tan(D)
        return 1.0 / D

    def at(self, q, guess=None):
        model, p = self.model, self.p
        q = np.atleast_2d(q)
        w = model.log_closed(p, q)
        _, qdot = model.exp_closed(p, w)
        t = q[:, 0] - p[0]
        g = model.metric(q)
        g0 = g[:, 1:, 1:]
        # spatial distance and unit gradient from the terminal velocity
        vsp = qdot[:, 1:]
        D = np.sqrt(np.einsum("bi,bij,bj->b", vsp, g0, vsp))
        bad = D <= np.abs(t)
        r = np.sqrt(np.where(bad, 1.0, D ** 2 - t ** 2))
        u_sp = vsp / D[:, None]
        dD = np.einsum("bij,bj->bi", g0, u_sp)  # lowered spatial dD
        k = self._k(D)
        d = model.dim
        B = len(q)
        hess = np.zeros((B, d, d))
        hess[:, 0, 0] = -(D ** 2) / r ** 3
        cross = t[:, None] * D[:, None] * dD / r[:, None] ** 3
        hess[:, 0, 1:] = cross
        hess[:, 1:, 0] = cross
        hessD = k[:, None, None] * (g0 - dD[:, :, None] * dD[:, None, :])
        hess[:, 1:, 1:] = (
            (dD[:, :, None] * dD[:, None, :] + D[:, None, None] * hessD)
            / r[:, None, None]
            - (D ** 2 / r ** 3)[:, None, None] * dD[:, :, None] * dD[:, None, :]
        )
        grad = np.empty((B, d))
        grad[:, 0] = t / r
        grad[:, 1:] = (D / r)[:, None] * u_sp
        return r, grad, hess, bad


class NumericRadial:
    """Geodesic-based radial data: one log solve for grad, 2*dim warm solves
    for the Hessian by central differences of the gradient field.

    The FD step scales with the distance to the null cone (the radial field
    stiffens like 1/r^3 there); precision is reported, not assumed.
    """

    def __init__(self, model, p, fd_step=None, n_steps=None):
        self.model = model
        self.p = np.asarray(p, dtype=float)
        self.gp = model.metric(self.p)[0]
        self.h = fd_step
        self.n_steps = n_steps

    def _grad(self, q, guess=None):
        w, qdot, conv = log_map_batch(self.model, self.p, q, guess=guess,
                                      n_steps=self.n_steps)
        r2 = np.einsum("bi,ij,bj->b", w, self.gp, w)
        bad = ~conv | (r2 <= 0)
        r = np.sqrt(np.where(r2 > 0, r2, 1.0))
        return r, qdot / r[:, None], w, bad

    def at(self, q, guess=None):
        q = np.atleast_2d(q)
        r, u, w, bad = self._grad(q, guess)
        d = self.model.dim
        h = self.h if self.h is not None else np.maximum(2e-4, 0.02 * r)
        h = np.broadcast_to(np.asarray(h, dtype=float), r.shape)
        du = np.empty((len(q), d, d))  # du[:, a, k] = d_a u^k
        for a in range(d):
            qp = q.copy(); qp[:, a] += h
            qm = q.copy(); qm[:, a] -= h
            _, up, _, badp = self._grad(qp, guess=w)
            _, um, _, badm = self._grad(qm, guess=w)
            bad |= badp | badm
            du[:, a, :] = (up - um) / (2 * h[:, None])
        G = christoffel_batch(self.model, q)
        g = self.model.metric(q)
        # covariant derivative of the field u: D_a u^k = d_a u^k + G^k_{al} u^l
        cov = du + np.einsum("bkal,bl->bak", G, u)
        hess = np.einsum("bjk,bak->baj", g, cov)
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return r, u, hess, bad


def radial_provider(model, p, **kw):
    if "flat" in model.tags:
        return FlatRadial(model, p)
    if ("ultrastatic" in model.tags and "perturbed" not in model.tags
            and model.exp_closed is not None):
        return ProductRadial(model, p)
    return NumericRadial(model, p, **kw)


# ---------------------------------------------------------------------------
# reports

@dataclass
class ConvexityReport:
    p: np.ndarray
    K: float
    n_samples: int
    seed: int
    worst_margin: float
    passed: bool
    skipped: int
    excluded_near_cone: int
    records: Optional[dict] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "p": self.p.tolist(), "K": self.K, "n_samples": self.n_samples,
            "seed": self.seed, "worst_margin": self.worst_margin,
            "passed": self.passed, "skipped": self.skipped,
            "excluded_near_cone": self.excluded_near_cone,
            "notes": self.notes,
        }
        return out


def hessian_comparison_check(model, p, K, n_samples=1000, seed=0,
                             keep_records=False):
    """Sampled verification of the Hessian comparison inequality.

    Points are drawn in E_p through the exponential map; per point several
    unit X are tested.  Pass criterion: margin >= -1e-6 * (|lhs| + |rhs| + 1)
    at every sample.  The report notes that the hypotheses are sampled, not
    proven.
    """
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    per_point = 4
    n_base = max(1, int(np.ceil(n_samples / per_point)))
    ext = sample_exterior(model, p, n_base, rng)
    q = ext["q"]
    prov = radial_provider(model, p)
    r, u, hess, bad = prov.at(q, guess=ext["w"])
    skipped = int(np.sum(bad))
    keep = ~bad
    q, r, u, hess = q[keep], r[keep], u[keep], hess[keep]
    g = model.metric(q)
    psi = psi_value(K, r)
    B = len(q)
    X = rng.normal(size=(B, per_point, model.dim))
    X /= np.linalg.norm(X, axis=2, keepdims=True)
    lhs = np.einsum("bpi,bij,bpj->bp", X, hess, X)
    gXX = np.einsum("bpi,bij,bpj->bp", X, g, X)
    u_low = np.einsum("bij,bj->bi", g, u)
    gXu = np.einsum("bpi,bi->bp", X, u_low)
    rhs = (psi / r)[:, None] * (gXX - gXu ** 2)
    margin = lhs - rhs
    tol = PASS_TOL * (np.abs(lhs) + np.abs(rhs) + 1.0)
    passed = bool(np.all(margin >= -tol))
    flat_margin = margin.reshape(-1)
    worst = float(np.min(flat_margin)) if flat_margin.size else np.nan
    rep = ConvexityReport(
        p=p, K=float(K), n_samples=int(margin.size), seed=int(seed),
        worst_margin=worst, passed=passed, skipped=skipped,
        excluded_near_cone=int(ext["excluded_near_cone"]),
        notes={"hypotheses": "sampled, not proven",
               "eikonal_max_dev": float(np.max(np.abs(
                   np.einsum("bi,bij,bj->b", u, g, u) - 1.0)))},
    )
    if keep_records:
        rep.records = {"q": q, "r": r, "X": X, "lhs": lhs, "rhs": rhs,
                       "margin": margin}
    return rep


def radial_checks(model, p, n_samples=1000, seed=0):
    """Eikonal identity |g(grad r, grad r) - 1| and the radial-geodesic
    residual |D_{grad r} grad r| over sampled exterior points."""
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    ext = sample_exterior(model, p, n_samples, rng)
    q = ext["q"]
    prov = radial_provider(model, p)
    r, u, hess, bad = prov.at(q, guess=ext["w"])
    q, r, u, hess = q[~bad], r[~bad], u[~bad], hess[~bad]
    g = model.metric(q)
    ginv = np.linalg.inv(g)
    eik = np.abs(np.einsum("bi,bij,bj->b", u, g, u) - 1.0)
    # D_{u} u as a vector: g^{jk} u^i Hess_{ij}
    acc = np.einsum("bjk,bi,bij->bk", ginv, u, hess)
    acc_norm = np.linalg.norm(acc, axis=1)
    return {
        "p": p.tolist(),
        "n_samples": int(len(q)),
        "seed": int(seed),
        "skipped": int(np.sum(bad)),
        "excluded_near_cone": int(ext["excluded_near_cone"]),
        "max_eikonal_residual": float(np.max(eik)),
        "max_radial_residual": float(np.max(acc_norm)),
    }
