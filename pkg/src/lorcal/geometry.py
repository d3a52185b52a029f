"""Connection, curvature, and the sampled curvature-bound check R <= K.

Index conventions: dmetric[b, a, i, j] = d_a g_ij.  The lowered curvature is
the quadrilinear form

    R_ijkl = < R(e_i, e_j) e_k , e_l >,

so the bound under test reads, for every tangent pair,

    R_ijkl X^i Y^j Y^k X^l  <=  K * ( <X,X><Y,Y> - <X,Y>^2 ).

Plane pairs are sampled on the unit sphere of the auxiliary Euclidean norm on
components; pairs with |Q| < 1e-12 (in particular exactly parallel ones) are
resampled, every other pair is kept even when the plane is null-degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CapabilityError, DomainError


# ---------------------------------------------------------------------------
# batched tensor kernels

def christoffel_batch(model, q):
    """Gamma[b, i, j, k] = Gamma^i_jk at each point of q (B, d)."""
    g = model.metric(q)
    dg = model.dmetric(q)
    ginv = np.linalg.inv(g)
    T = (np.einsum("bjmk->bmjk", dg) + np.einsum("bkmj->bmjk", dg)
         - np.einsum("bmjk->bmjk", dg))
    return 0.5 * np.einsum("bim,bmjk->bijk", ginv, T)


def christoffel_derivative_batch(model, q):
    """dGamma[b, l, i, j, k] = d_l Gamma^i_jk (needs second metric derivatives)."""
    g = model.metric(q)
    dg = model.dmetric(q)
    d2g = model.d2metric(q)
    ginv = np.linalg.inv(g)
    T = (np.einsum("bjmk->bmjk", dg) + np.einsum("bkmj->bmjk", dg)
         - np.einsum("bmjk->bmjk", dg))
    dT = (np.einsum("bljmk->blmjk", d2g) + np.einsum("blkmj->blmjk", d2g)
          - np.einsum("blmjk->blmjk", d2g))
    dginv = -np.einsum("bia,blac,bcm->blim", ginv, dg, ginv, optimize=True)
    return 0.5 * (np.einsum("blim,bmjk->blijk", dginv, T)
                  + np.einsum("bim,blmjk->blijk", ginv, dT))


def riemann_lowered_batch(model, q):
    """R[b, i, j, k, l] = < R(e_i, e_j) e_k, e_l > at each point."""
    if model.deriv_order < 2:
        raise CapabilityError("model lacks second-order derivative suppliers")
    g = model.metric(q)
    G = christoffel_batch(model, q)
    dG = christoffel_derivative_batch(model, q)
    # R^a_{kij} = d_i G^a_{jk} - d_j G^a_{ik} + G^a_{im} G^m_{jk} - G^a_{jm} G^m_{ik}
    Rup = (np.einsum("biajk->bakij", dG) - np.einsum("bjaik->bakij", dG)
           + np.einsum("baim,bmjk->bakij", G, G) - np.einsum("bajm,bmik->bakij", G, G))
    return np.einsum("bla,bakij->bijkl", g, Rup)


def _require_inside(model, q):
    if not bool(np.all(model.contains(q, margin=1e-12))):
        raise DomainError("point outside the chart domain")


def christoffel(model, q):
    """Levi-Civita symbols Gamma^i_jk at a single chart point."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _require_inside(model, q)
    return christoffel_batch(model, q)[0]


def riemann_lowered(model, q):
    """Lowered curvature tensor at a single chart point."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _require_inside(model, q)
    return riemann_lowered_batch(model, q)[0]


def curvature_quadratic_form(model, q, X, Y):
    """(numerator, Q) of the curvature bound at q: g(R(X,Y)Y,X) and
    Q(X,Y) = g(X,X) g(Y,Y) - g(X,Y)^2."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _require_inside(model, q)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    R = riemann_lowered_batch(model, q)[0]
    g = model.metric(q)[0]
    num = float(np.einsum("ijkl,i,j,k,l->", R, X, Y, Y, X))
    gXX = float(X @ g @ X)
    gYY = float(Y @ g @ Y)
    gXY = float(X @ g @ Y)
    return num, gXX * gYY - gXY ** 2


def symmetry_residuals(R):
    """Max violation of the four index symmetries and the first Bianchi identity,
    relative to the component scale."""
    scale = np.max(np.abs(R)) + 1e-300
    anti1 = np.max(np.abs(R + np.einsum("ijkl->jikl", R)))
    anti2 = np.max(np.abs(R + np.einsum("ijkl->ijlk", R)))
    pair = np.max(np.abs(R - np.einsum("ijkl->klij", R)))
    bianchi = np.max(np.abs(R + np.einsum("ijkl->jkil", R) + np.einsum("ijkl->kijl", R)))
    return {
        "antisym_first": anti1 / scale,
        "antisym_last": anti2 / scale,
        "pair_sym": pair / scale,
        "first_bianchi": bianchi / scale,
        "scale": scale,
    }


# ---------------------------------------------------------------------------
# region + report types

@dataclass(frozen=True)
class Region:
    """Sub-region of a chart: an axis box or a Euclidean ball."""

    kind: str  # "box" | "ball"
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0

    @staticmethod
    def box(lo, hi):
        return Region("box", lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float))

    @staticmethod
    def ball(center, radius):
        return Region("ball", center=np.asarray(center, dtype=float), radius=float(radius))

    @staticmethod
    def whole(model):
        return Region.box(model.chart_lo, model.chart_hi)

    def sample(self, rng, m):
        if self.kind == "box":
            return self.lo + (self.hi - self.lo) * rng.random((m, len(self.lo)))
        d = len(self.center)
        v = rng.normal(size=(m, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = self.radius * rng.random(m) ** (1.0 / d)
        return self.center + r[:, None] * v

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass
class CurvatureReport:
    K: float
    region: Region
    n_samples: int
    seed: int
    worst_margin: float
    passed: bool
    violating_sample: Optional[dict] = None

    def to_dict(self):
        out = {
            "K": self.K,
            "region": self.region.to_dict(),
            "n_samples": self.n_samples,
            "seed": self.seed,
            "worst_margin": self.worst_margin,
            "passed": self.passed,
        }
        if self.violating_sample is not None:
            out["violating_sample"] = self.violating_sample
        return out


def _sample_plane_pairs(rng, m, d):
    """Unit-sphere pairs under the auxiliary Euclidean norm on components."""
    X = rng.normal(size=(m, d))
    Y = rng.normal(size=(m, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    return X, Y


def curvature_bound_check(model, region=None, K=0.0, n_samples=1000, seed=0,
                          tol_scale=1e-9):
    """Sampled test of R <= K over a region; a failed check is a report, not an error.

    Pass criterion per sample: K*Q - numerator >= -tol_scale*(|K*Q| + |num| + 1).
    The reduction is an ordered min over the seeded sample sequence, so reruns
    with the same seed reproduce worst_margin bit-exactly.
    """
    if region is None:
        region = Region.whole(model)
    rng = np.random.default_rng(seed)
    q = region.sample(rng, n_samples)
    if not bool(np.all(model.contains(q, margin=1e-12))):
        raise DomainError("region leaves the chart domain")
    d = model.dim
    X, Y = _sample_plane_pairs(rng, n_samples, d)
    g = model.metric(q)
    for _ in range(100):
        gXX = np.einsum("bi,bij,bj->b", X, g, X)
        gYY = np.einsum("bi,bij,bj->b", Y, g, Y)
        gXY = np.einsum("bi,bij,bj->b", X, g, Y)
        Q = gXX * gYY - gXY ** 2
        degenerate = np.abs(Q) < 1e-12
        if not np.any(degenerate):
            break
        Xn, Yn = _sample_plane_pairs(rng, int(degenerate.sum()), d)
        X[degenerate] = Xn
        Y[degenerate] = Yn
    R = riemann_lowered_batch(model, q)
    num = np.einsum("bijkl,bi,bj,bk,bl->b", R, X, Y, Y, X)
    margin = K * Q - num
    tol = tol_scale * (np.abs(K * Q) + np.abs(num) + 1.0)
    passed = bool(np.all(margin >= -tol))
    worst = int(np.argmin(margin + tol))
    violating = None
    if not passed:
        violating = {
            "point": q[worst].tolist(),
            "X": X[worst].tolist(),
            "Y": Y[worst].tolist(),
            "margin": float(margin[worst]),
            "tolerance": float(tol[worst]),
        }
    return CurvatureReport(
        K=float(K), region=region, n_samples=int(n_samples), seed=int(seed),
        worst_margin=float(np.min(margin)), passed=passed,
        violating_sample=violating,
    )
