"""Metric catalog: chart-based Lorentzian metrics with analytic derivative suppliers.

Every model lives on a coordinate box [-T,T] x Box(M0) and supplies its metric
entries together with exact first and second partial derivatives (fourth order
for the jet family, whose entries are quadratic polynomials).  Finite
differences never enter the suppliers; they are kept as oracles in the tests.

Catalog families
----------------
minkowski(n)              flat eta = diag(-1, 1, ..., 1)
ultrastatic(spatial, n)   -dt^2 + g0(x), g0 a constant-curvature conformal patch
warped(profile, spatial)  -dt^2 + f(t)^2 g0(x), Robertson-Walker style
jet(C, kappa)             eta_ij - (1/3) R_iklj(0) x^k x^l with prescribed
                          curvature at the origin (time-space block C, spatial
                          block a Kulkarni-Nomizu multiple kappa/2 of I ^ I)
perturbed(base, bump)     base + compactly supported smooth bump on chosen entries

The warped family stores the admissible curvature-bound interval
[sup_t (C + f'(t)^2)/f(t)^2, inf_t f''(t)/f(t)] on the model: those are the K
for which the R <= K check is expected to pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConstructionError, ValidationError
from .fields import BumpField


@dataclass(frozen=True)
class MetricModel:
    """Immutable chart metric with vectorized entry/derivative suppliers.

    Suppliers take points of shape (B, 1+n):
      metric  -> (B, d, d)
      dmetric -> (B, a, i, j)      with a the derivative index
      d2metric-> (B, a, b, i, j)
    """

    name: str
    n: int
    chart_lo: np.ndarray
    chart_hi: np.ndarray
    tags: frozenset
    deriv_order: int
    descriptor: dict
    g_fn: object
    dg_fn: object
    d2g_fn: object
    exp_closed: object = None  # optional (p, w(B,d)) -> (q(B,d), qdot(B,d))
    log_closed: object = None  # optional (p, q(B,d)) -> w(B,d)
    info: dict = dc_field(default_factory=dict)

    @property
    def dim(self):
        return 1 + self.n

    def metric(self, q):
        return self.g_fn(np.atleast_2d(np.asarray(q, dtype=float)))

    def dmetric(self, q):
        return self.dg_fn(np.atleast_2d(np.asarray(q, dtype=float)))

    def d2metric(self, q):
        return self.d2g_fn(np.atleast_2d(np.asarray(q, dtype=float)))

    def inverse_metric(self, q):
        return np.linalg.inv(self.metric(q))

    def contains(self, q, margin=0.0):
        q = np.atleast_2d(q)
        return np.all((q >= self.chart_lo - margin) & (q <= self.chart_hi + margin), axis=1)

    def metric_at(self, q):
        return self.metric(q)[0]

    def is_cylinder(self):
        """True when the model has no dt-dx cross terms (wave solver requirement)."""
        return "jet" not in self.tags and not self.info.get("mixes_time", False)

    def conformal_factor(self, q):
        """c(t,x) = -g_00 for cylinder-form metrics c*(-dt^2 + g0)."""
        return -self.metric(q)[:, 0, 0]

    def sample_points(self, rng, m, lo=None, hi=None):
        lo = self.chart_lo if lo is None else np.asarray(lo, dtype=float)
        hi = self.chart_hi if hi is None else np.asarray(hi, dtype=float)
        return lo + (hi - lo) * rng.random((m, self.dim))


# ---------------------------------------------------------------------------
# conformal constant-curvature patches: g0_{ab} = phi(x)^2 delta_ab
# phi = 2/(1 - s |x|^2) with s = +1 hyperbolic (curvature -1), s = -1 sphere
# (curvature +1), s = 0 flat.

def _phi_parts(x, s):
    """phi, d_phi (B,n), d2_phi (B,n,n) for phi = 2/w, w = 1 - s|x|^2.

    s = 0 degenerates to the flat patch phi = 1.
    """
    x = np.atleast_2d(x)
    B, n = x.shape
    if s == 0.0:
        return np.ones(B), np.zeros((B, n)), np.zeros((B, n, n))
    rho2 = np.sum(x * x, axis=1)
    # floor keeps the supplier evaluable on transient out-of-chart probes
    # (Newton shooting); chart boxes stay well inside the coordinate disk
    w = np.maximum(1.0 - s * rho2, 1e-9)
    phi = 2.0 / w
    wg = -2.0 * s * x  # dw/dx_a
    phig = -2.0 * wg / w[:, None] ** 2
    eye = np.eye(n)
    w2 = (w ** 2)[:, None, None]
    w3 = (w ** 3)[:, None, None]
    phih = (4.0 * s) * eye[None, :, :] / w2 + 4.0 * wg[:, :, None] * wg[:, None, :] / w3
    return phi, phig, phih


def _spatial_sign(spatial):
    try:
        return {"hyperbolic": 1.0, "sphere": -1.0, "flat": 0.0}[spatial]
    except KeyError:
        raise ValidationError(f"unknown spatial patch {spatial!r}") from None


def _warp_profile(profile):
    """f(t) -> (f, f', f'') as vectorized callables."""
    if profile == "cosh":
        return np.cosh, np.sinh, np.cosh
    if profile == "one":
        one = lambda t: np.ones_like(np.asarray(t, dtype=float))
        zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))
        return one, zero, zero
    raise ValidationError(f"unknown warp profile {profile!r}")


def _cylinder_suppliers(n, s, f, fp, fpp):
    """Suppliers for -dt^2 + f(t)^2 phi(x)^2 delta; s the patch sign."""
    d = 1 + n

    def g_fn(q):
        B = q.shape[0]
        phi, _, _ = _phi_parts(q[:, 1:], s)
        out = np.zeros((B, d, d))
        out[:, 0, 0] = -1.0
        F = (f(q[:, 0]) ** 2) * phi ** 2
        for a in range(1, d):
            out[:, a, a] = F
        return out

    def dg_fn(q):
        B = q.shape[0]
        t = q[:, 0]
        phi, phig, _ = _phi_parts(q[:, 1:], s)
        ft, fpt = f(t), fp(t)
        out = np.zeros((B, d, d, d))
        # d/dt block: 2 f f' phi^2 on spatial diagonal
        dt_diag = 2.0 * ft * fpt * phi ** 2
        for a in range(1, d):
            out[:, 0, a, a] = dt_diag
        # d/dx_g block: f^2 * 2 phi phi_g
        for gidx in range(n):
            dg_diag = (ft ** 2) * 2.0 * phi * phig[:, gidx]
            for a in range(1, d):
                out[:, 1 + gidx, a, a] = dg_diag
        return out

    def d2g_fn(q):
        B = q.shape[0]
        t = q[:, 0]
        phi, phig, phih = _phi_parts(q[:, 1:], s)
        ft, fpt, fppt = f(t), fp(t), fpp(t)
        out = np.zeros((B, d, d, d, d))
        dtt = 2.0 * (fpt ** 2 + ft * fppt) * phi ** 2
        for a in range(1, d):
            out[:, 0, 0, a, a] = dtt
        for gidx in range(n):
            dtg = 2.0 * ft * fpt * 2.0 * phi * phig[:, gidx]
            for a in range(1, d):
                out[:, 0, 1 + gidx, a, a] = dtg
                out[:, 1 + gidx, 0, a, a] = dtg
        for gi in range(n):
            for gj in range(n):
                dij = (ft ** 2) * 2.0 * (
                    phig[:, gi] * phig[:, gj] + phi * phih[:, gi, gj]
                )
                for a in range(1, d):
                    out[:, 1 + gi, 1 + gj, a, a] = dij
        return out

    return g_fn, dg_fn, d2g_fn


# ---------------------------------------------------------------------------
# closed-form exponential maps for the product models (used as fast paths and
# as the product-structure oracle in tests)

def _disk_exp(z0, v):
    """Poincare-disk exponential, complex form; curvature -1, metric 4|dz|^2/(1-|z|^2)^2.

    z0 scalar or (B,) complex base points, v (B,) complex initial velocities
    (coordinate components); returns (z1, v1) position and terminal coordinate
    velocity of the unit-time geodesic, by conjugating with the Moebius map
    that moves z0 to 0.
    """
    v = np.asarray(v, dtype=complex)
    z0 = np.asarray(z0, dtype=complex)
    a = 1.0 - np.abs(z0) ** 2
    v0 = v / a  # velocity at the origin after T_z0
    sp = np.abs(v0)
    out_z = np.empty_like(v0)
    out_v = np.empty_like(v0)
    small = sp < 1e-300
    out_z[small] = 0.0
    out_v[small] = v0[small]
    vs, ss = v0[~small], sp[~small]
    zt = np.tanh(ss) * vs / ss  # radial geodesic from the origin
    vt = vs / np.cosh(ss) ** 2  # d/du tanh(u|v|) * v/|v| at u=1
    out_z[~small] = zt
    out_v[~small] = vt
    # undo the Moebius map: w = (zt + z0)/(1 + conj(z0) zt); dw/dzt = a/(1+conj(z0)zt)^2
    denom = 1.0 + np.conj(z0) * out_z
    z1 = (out_z + z0) / denom
    v1 = out_v * a / denom ** 2
    return z1, v1


def _disk_log(z0, z1):
    """Inverse of _disk_exp in the position slot."""
    z1 = np.asarray(z1, dtype=complex)
    z0 = np.asarray(z0, dtype=complex)
    a = 1.0 - np.abs(z0) ** 2
    zt = (z1 - z0) / (1.0 - np.conj(z0) * z1)
    r = np.abs(zt)
    out = np.empty_like(zt)
    small = r < 1e-300
    out[small] = 0.0
    out[~small] = np.arctanh(r[~small]) * zt[~small] / r[~small]
    return out * a


def _sphere_lift(z):
    """Inverse stereographic: plane point (B,) complex -> unit vectors (B, 3)."""
    z = np.asarray(z, dtype=complex)
    rho2 = np.abs(z) ** 2
    P = np.empty(z.shape + (3,))
    P[..., 0] = 2 * z.real / (1 + rho2)
    P[..., 1] = 2 * z.imag / (1 + rho2)
    P[..., 2] = (rho2 - 1) / (1 + rho2)
    return P


def _sphere_drop(P, dP=None):
    """Stereographic projection of unit vectors (and optionally tangents)."""
    denom = 1.0 - P[..., 2]
    z = (P[..., 0] + 1j * P[..., 1]) / denom
    if dP is None:
        return z
    dz = ((dP[..., 0] + 1j * dP[..., 1]) / denom
          + (P[..., 0] + 1j * P[..., 1]) * dP[..., 2] / denom ** 2)
    return z, dz


def _sphere_jac(z0):
    """Jacobian of the inverse stereographic lift at z0: (..., 3, 2), with
    orthogonal columns of norm lam = 2/(1+|z0|^2)."""
    z0 = np.asarray(z0, dtype=complex)
    x, y = z0.real, z0.imag
    s = 1 + x * x + y * y
    J = np.empty(z0.shape + (3, 2))
    J[..., 0, 0] = 2 / s - 4 * x * x / s ** 2
    J[..., 0, 1] = -4 * x * y / s ** 2
    J[..., 1, 0] = -4 * x * y / s ** 2
    J[..., 1, 1] = 2 / s - 4 * y * y / s ** 2
    J[..., 2, 0] = 4 * x / s ** 2
    J[..., 2, 1] = 4 * y / s ** 2
    return J


def _sphere_exp(z0, v):
    """Great-circle exponential on the stereographic sphere patch
    (metric 4|dz|^2/(1+|z|^2)^2, curvature +1).  z0 scalar or (B,)."""
    v = np.asarray(v, dtype=complex)
    z0 = np.asarray(z0, dtype=complex)
    P0 = _sphere_lift(z0)  # (..., 3) broadcasting with v handled below
    J = _sphere_jac(z0)
    Vc = np.stack([v.real, v.imag], axis=-1)  # (B, 2)
    V = np.einsum("...ij,...j->...i", J, Vc)  # (B, 3) tangent at P0
    P0b = np.broadcast_to(P0, V.shape)
    nv = np.linalg.norm(V, axis=-1)
    small = nv < 1e-300
    nv_safe = np.where(small, 1.0, nv)
    Vh = V / nv_safe[..., None]
    ca, sa = np.cos(nv), np.sin(nv)
    out_P = ca[..., None] * P0b + sa[..., None] * Vh
    out_V = nv[..., None] * (-sa[..., None] * P0b + ca[..., None] * Vh)
    out_P[small] = P0b[small]
    out_V[small] = V[small]
    z1, dz1 = _sphere_drop(out_P, out_V)
    return z1, dz1


def _sphere_log(z0, z1):
    z1 = np.asarray(z1, dtype=complex)
    z0 = np.asarray(z0, dtype=complex)
    P0 = _sphere_lift(z0)
    P1 = _sphere_lift(z1)
    P0b = np.broadcast_to(P0, P1.shape)
    c = np.clip(np.einsum("...i,...i->...", P1, P0b), -1.0, 1.0)
    ang = np.arccos(c)
    T = P1 - c[..., None] * P0b
    tn = np.linalg.norm(T, axis=-1)
    good = tn > 1e-300
    V = np.zeros_like(P1)
    V[good] = T[good] / tn[good][:, None] * ang[good][:, None]
    # pull back through the lift differential (orthogonal columns of norm lam)
    J = _sphere_jac(z0)
    lam2 = (2.0 / (1 + np.abs(z0) ** 2)) ** 2
    Vc = np.einsum("...ij,...i->...j", np.broadcast_to(J, P1.shape + (2,)), V) \
        / np.asarray(lam2)[..., None]
    return Vc[..., 0] + 1j * Vc[..., 1]


def _make_ultrastatic_exp(n, spatial):
    if n != 2 or spatial not in ("hyperbolic", "sphere"):
        return None, None
    sp_exp = _disk_exp if spatial == "hyperbolic" else _sphere_exp
    sp_log = _disk_log if spatial == "hyperbolic" else _sphere_log

    def exp_closed(p, w):
        w = np.atleast_2d(w)
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            z0 = complex(p[1], p[2])
            t0 = p[0]
        else:
            z0 = p[:, 1] + 1j * p[:, 2]
            t0 = p[:, 0]
        zv = w[:, 1] + 1j * w[:, 2]
        z1, v1 = sp_exp(z0, zv)
        q = np.empty_like(w)
        q[:, 0] = t0 + w[:, 0]
        q[:, 1], q[:, 2] = z1.real, z1.imag
        qdot = np.empty_like(w)
        qdot[:, 0] = w[:, 0]
        qdot[:, 1], qdot[:, 2] = v1.real, v1.imag
        return q, qdot

    def log_closed(p, q):
        q = np.atleast_2d(q)
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            z0 = complex(p[1], p[2])
            t0 = p[0]
        else:
            z0 = p[:, 1] + 1j * p[:, 2]
            t0 = p[:, 0]
        z1 = q[:, 1] + 1j * q[:, 2]
        v = sp_log(z0, z1)
        w = np.empty_like(q)
        w[:, 0] = q[:, 0] - t0
        w[:, 1], w[:, 2] = v.real, v.imag
        return w

    return exp_closed, log_closed


# ---------------------------------------------------------------------------
# catalog constructors

def _half_widths(x_half, n):
    xh = np.asarray(x_half, dtype=float)
    if xh.ndim == 0:
        xh = np.full(n, float(xh))
    if xh.shape != (n,):
        raise ValidationError("x_half must be a scalar or length-n sequence")
    return xh


def minkowski(n=2, t_half=1.0, x_half=1.0):
    d = 1 + n
    eta = np.diag(np.array([-1.0] + [1.0] * n))

    def g_fn(q):
        return np.broadcast_to(eta, (q.shape[0], d, d)).copy()

    def dg_fn(q):
        return np.zeros((q.shape[0], d, d, d))

    def d2g_fn(q):
        return np.zeros((q.shape[0], d, d, d, d))

    def exp_closed(p, w):
        w = np.atleast_2d(w)
        return np.atleast_2d(np.asarray(p, dtype=float)) + w, w.copy()

    def log_closed(p, q):
        return np.atleast_2d(q) - np.atleast_2d(np.asarray(p, dtype=float))

    xh = _half_widths(x_half, n)
    lo = np.concatenate([[-t_half], -xh])
    hi = np.concatenate([[t_half], xh])
    return MetricModel(
        name=f"minkowski{n}", n=n, chart_lo=lo, chart_hi=hi,
        tags=frozenset({"flat", "ultrastatic"}), deriv_order=2,
        descriptor={"family": "minkowski", "n": n, "t_half": t_half,
                    "x_half": xh.tolist()},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        exp_closed=exp_closed, log_closed=log_closed,
        info={"admissible_K": (0.0, 0.0), "spatial_curvature": 0.0},
    )


def ultrastatic(spatial="hyperbolic", n=2, t_half=3.0, x_half=0.45):
    s = _spatial_sign(spatial)
    f, fp, fpp = _warp_profile("one")
    g_fn, dg_fn, d2g_fn = _cylinder_suppliers(n, s, f, fp, fpp)
    xh = _half_widths(x_half, n)
    lo = np.concatenate([[-t_half], -xh])
    hi = np.concatenate([[t_half], xh])
    C = -s if n >= 2 else 0.0  # fiber curvature: hyperbolic -1, sphere +1
    exp_closed, log_closed = _make_ultrastatic_exp(n, spatial)
    model = MetricModel(
        name=f"ultrastatic_{spatial}{n}", n=n, chart_lo=lo, chart_hi=hi,
        tags=frozenset({"ultrastatic"}), deriv_order=2,
        descriptor={"family": "ultrastatic", "spatial": spatial, "n": n,
                    "t_half": t_half, "x_half": xh.tolist()},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        exp_closed=exp_closed, log_closed=log_closed,
        info={"admissible_K": (C, 0.0) if C <= 0 else None, "spatial_curvature": C},
    )
    _validate_signature(model)
    return model


def warped(profile="cosh", spatial="sphere", n=2, t_half=0.4, x_half=0.3):
    """-dt^2 + f(t)^2 g0.  The admissible-K interval uses the fiber curvature C."""
    s = _spatial_sign(spatial)
    f, fp, fpp = _warp_profile(profile)
    g_fn, dg_fn, d2g_fn = _cylinder_suppliers(n, s, f, fp, fpp)
    xh = _half_widths(x_half, n)
    lo = np.concatenate([[-t_half], -xh])
    hi = np.concatenate([[t_half], xh])
    C = -s if n >= 2 else 0.0
    tt = np.linspace(-t_half, t_half, 2001)
    left = np.max((C + fp(tt) ** 2) / f(tt) ** 2)
    right = np.min(fpp(tt) / f(tt))
    if right < left <= right + 1e-9:  # degenerate interval up to roundoff
        left = right
    model = MetricModel(
        name=f"warped_{profile}_{spatial}{n}", n=n, chart_lo=lo, chart_hi=hi,
        tags=frozenset({"warped"}), deriv_order=2,
        descriptor={"family": "warped", "profile": profile, "spatial": spatial,
                    "n": n, "t_half": t_half, "x_half": x_half},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        info={"admissible_K": (float(left), float(right)) if left <= right else None,
              "spatial_curvature": C},
    )
    _validate_signature(model)
    return model


def _jet_curvature_array(C, kappa, n):
    """Assemble the prescribed curvature tensor at the origin.

    Time-space block R_{0 a b 0} = C_ab (with the pair/antisymmetry images),
    purely spatial block (kappa/2) (I ^o I)_{abcd}; all components with an odd
    number of time indices, and R_{00..}, vanish.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (n, n) or not np.allclose(C, C.T, atol=1e-14):
        raise ValidationError("jet block C must be a symmetric n x n matrix")
    if np.any(np.linalg.eigvalsh(C) >= 0):
        raise ValidationError("jet block C must have strictly negative eigenvalues")
    if kappa <= 0:
        raise ValidationError("jet kappa must be positive")
    d = 1 + n
    P = np.zeros((d, d, d, d))
    for a in range(n):
        for b in range(n):
            P[0, 1 + a, 1 + b, 0] = C[a, b]
            P[1 + a, 0, 0, 1 + b] = C[a, b]
            P[1 + a, 0, 1 + b, 0] = -C[a, b]
            P[0, 1 + a, 0, 1 + b] = -C[a, b]
    # Kulkarni-Nomizu of I with itself: (I^oI)_{abcd} = 2(d_ac d_bd - d_ad d_bc)
    eye = np.eye(n)
    KN = 2.0 * (np.einsum("ac,bd->abcd", eye, eye) - np.einsum("ad,bc->abcd", eye, eye))
    P[1:, 1:, 1:, 1:] = 0.5 * kappa * KN
    return P


def jet(C=None, kappa=1.0, n=2, half=0.15):
    """Quadratic normal-form metric g_ij = eta_ij - (1/3) R_iklj(0) x^k x^l."""
    if C is None:
        C = -np.eye(n)
    P = _jet_curvature_array(C, kappa, n)
    d = 1 + n
    eta = np.diag(np.array([-1.0] + [1.0] * n))
    # coefficient W[i,j,k,l] of x^k x^l in g_ij, symmetrized in (k,l)
    W = -(1.0 / 6.0) * (np.einsum("iklj->ijkl", P) + np.einsum("ilkj->ijkl", P))

    def g_fn(q):
        return eta[None, :, :] + np.einsum("ijkl,bk,bl->bij", W, q, q)

    def dg_fn(q):
        # d/dq^a of W_{ijkl} q^k q^l = 2 W_{ijal} q^l
        return 2.0 * np.einsum("ijal,bl->baij", W, q)

    def d2g_fn(q):
        B = q.shape[0]
        out = np.broadcast_to(2.0 * np.einsum("ijab->abij", W), (B, d, d, d, d))
        return out.copy()

    def d3g_fn(q):
        return np.zeros((q.shape[0],) + (d,) * 5)

    lo = np.full(d, -half)
    hi = np.full(d, half)
    model = MetricModel(
        name=f"jet{n}", n=n, chart_lo=lo, chart_hi=hi,
        tags=frozenset({"jet"}), deriv_order=4,
        descriptor={"family": "jet", "n": n, "C": np.asarray(C).tolist(),
                    "kappa": kappa, "half": half},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        info={"curvature_at_origin": P, "admissible_K": (-kappa, 0.0),
              "mixes_time": True, "d3g_fn": d3g_fn, "d4g_fn": d3g_fn},
    )
    _validate_signature(model)
    return model


def perturbed(base, amplitude=0.05, center=None, radius=None, entries=((1, 1),)):
    """base metric + amplitude * bump(q) on the listed symmetric entries.

    The bump is a C-infinity compactly supported mollifier whose support must
    sit strictly inside the chart interior.
    """
    d = base.dim
    if center is None:
        center = 0.5 * (base.chart_lo + base.chart_hi)
    if radius is None:
        radius = 0.25 * (base.chart_hi - base.chart_lo)
    bump = BumpField(dim=d, center=np.asarray(center, dtype=float),
                     radius=np.asarray(radius, dtype=float), amplitude=amplitude)
    if np.any(bump.support_lo <= base.chart_lo) or np.any(bump.support_hi >= base.chart_hi):
        raise ValidationError("bump support must be strictly inside the chart interior")
    E = np.zeros((d, d))
    for (i, j) in entries:
        E[i, j] = 1.0
        E[j, i] = 1.0
    mixes = any((i == 0) != (j == 0) for (i, j) in entries)

    def g_fn(q):
        return base.g_fn(q) + bump.value(q)[:, None, None] * E[None, :, :]

    def dg_fn(q):
        return base.dg_fn(q) + bump.grad(q)[:, :, None, None] * E[None, None, :, :]

    def d2g_fn(q):
        return base.d2g_fn(q) + bump.hess(q)[:, :, :, None, None] * E[None, None, None, :, :]

    model = MetricModel(
        name=f"perturbed_{base.name}", n=base.n,
        chart_lo=base.chart_lo, chart_hi=base.chart_hi,
        tags=base.tags | {"perturbed"}, deriv_order=2,
        descriptor={"family": "perturbed", "base": base.descriptor,
                    "amplitude": amplitude,
                    "center": np.asarray(center).tolist(),
                    "radius": np.asarray(radius).tolist(),
                    "entries": [list(e) for e in entries]},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        info={"bump": bump, "base": base,
              "mixes_time": mixes or base.info.get("mixes_time", False)},
    )
    _validate_signature(model)
    return model


def conformal_scale(base, c_field):
    """Metric c(q) * g(q): the cylinder form with a nontrivial conformal factor.

    c_field must supply value/grad/hess; positivity is validated on samples.
    """
    def g_fn(q):
        return c_field.value(q)[:, None, None] * base.g_fn(q)

    def dg_fn(q):
        c = c_field.value(q)
        dc = c_field.grad(q)
        return (dc[:, :, None, None] * base.g_fn(q)[:, None, :, :]
                + c[:, None, None, None] * base.dg_fn(q))

    def d2g_fn(q):
        c = c_field.value(q)
        dc = c_field.grad(q)
        hc = c_field.hess(q)
        g = base.g_fn(q)
        dg = base.dg_fn(q)
        out = (np.einsum("bac,bij->bacij", hc, g)
               + np.einsum("ba,bcij->bacij", dc, dg)
               + np.einsum("bc,baij->bacij", dc, dg)
               + c[:, None, None, None, None] * base.d2g_fn(q))
        return out

    model = MetricModel(
        name=f"conformal_{base.name}", n=base.n,
        chart_lo=base.chart_lo, chart_hi=base.chart_hi,
        tags=(base.tags - {"flat", "ultrastatic"}) | {"conformal"},
        deriv_order=2,
        descriptor={"family": "conformal", "base": base.descriptor},
        g_fn=g_fn, dg_fn=dg_fn, d2g_fn=d2g_fn,
        info={"base": base, "conformal_factor_field": c_field},
    )
    rng = np.random.default_rng(11)
    if np.any(c_field.value(model.sample_points(rng, 200)) <= 0):
        raise ConstructionError("conformal factor must be positive on the chart")
    _validate_signature(model)
    return model


def _validate_signature(model, m=500, seed=7):
    """Sampled construction check: signature (-,+,..,+) and SPD spatial block."""
    rng = np.random.default_rng(seed)
    q = model.sample_points(rng, m)
    g = model.metric(q)
    eig = np.linalg.eigvalsh(g)
    if not (np.all(eig[:, 0] < 0) and np.all(eig[:, 1:] > 0)):
        raise ConstructionError(
            f"{model.name}: metric loses Lorentzian signature on the chart"
        )
    spatial = g[:, 1:, 1:]
    if np.any(np.linalg.eigvalsh(spatial) <= 0):
        raise ConstructionError(f"{model.name}: spatial block not positive definite")


# ---------------------------------------------------------------------------
# descriptor / name resolution

_NAMED = {
    "minkowski1": lambda: minkowski(n=1),
    "minkowski2": lambda: minkowski(n=2),
    "ultrastatic_hyperbolic": lambda: ultrastatic("hyperbolic", n=2),
    "ultrastatic_sphere": lambda: ultrastatic("sphere", n=2),
    "ultrastatic_hyperbolic1": lambda: ultrastatic("hyperbolic", n=1),
    "warped_cosh_sphere": lambda: warped("cosh", "sphere", n=2),
    "jet_neg": lambda: jet(),
    "perturbed_ultrastatic": lambda: perturbed(
        ultrastatic("hyperbolic", n=2), amplitude=0.02,
        center=(0.0, 0.1, 0.0), radius=(0.5, 0.15, 0.15)),
}


def catalog_names():
    return sorted(_NAMED)


def build_metric(spec):
    """Build a model from a catalog name or a descriptor dict."""
    if isinstance(spec, str):
        try:
            return _NAMED[spec]()
        except KeyError:
            raise ValidationError(
                f"unknown metric {spec!r}; catalog: {', '.join(catalog_names())}"
            ) from None
    if not isinstance(spec, dict):
        raise ValidationError("metric spec must be a name or a descriptor dict")
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "minkowski":
        return minkowski(**spec)
    if family == "ultrastatic":
        return ultrastatic(**spec)
    if family == "warped":
        return warped(**spec)
    if family == "jet":
        if "C" in spec:
            spec["C"] = np.asarray(spec["C"], dtype=float)
        return jet(**spec)
    if family == "perturbed":
        base = build_metric(spec.pop("base"))
        if "entries" in spec:
            spec["entries"] = [tuple(e) for e in spec["entries"]]
        return perturbed(base, **spec)
    raise ValidationError(f"unknown metric family {family!r}")
