"""Geodesic integration, exponential/logarithm maps, and causal classification.

The integrator is classical RK4 with a fixed base step (default 1e-3 times the
parameter range) and adaptive halving when the conserved norm g(qdot, qdot)
drifts; chart-boundary crossings are localized by bisection on the flow.  The
logarithm map is Newton shooting on the initial velocity with a finite
difference Jacobian, warm-startable and fully batched: all hot paths operate
on (B, dim) arrays.

Models that expose a closed-form exponential (flat; ultrastatic hyperbolic,
whose geodesics split into a linear time part and a Poincare-disk geodesic)
get fast paths; the generic numeric route is the reference implementation and
the two are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, IntegrationError, LogMapError, ValidationError
from .geometry import christoffel_batch

NORM_DRIFT_TOL = 1e-8
EXIT_TOL = 1e-8
MARGINAL_TOL = 1e-9
CHARACTER_TOL = 1e-10
# RK4 steps for unit-parameter exponential-map solves; geodesics here are
# short (chart-sized), so this already gives ~1e-12 positions.  The path
# tracer integrate_geodesic keeps the finer 1e-3-of-range default.
EXP_STEPS = 256


# ---------------------------------------------------------------------------
# tangent vectors and causal character

@dataclass(frozen=True)
class Tangent:
    base: np.ndarray
    components: np.ndarray
    g_norm2: float  # g(v, v)
    causal_character: str  # timelike | null | spacelike | zero
    time_orientation: int  # +1 future, -1 past, 0 undefined/spacelike

    def to_dict(self):
        return {
            "base": self.base.tolist(),
            "components": self.components.tolist(),
            "g_norm2": self.g_norm2,
            "causal_character": self.causal_character,
            "time_orientation": self.time_orientation,
        }


def causal_character(g_norm2, eucl_norm2, tol=CHARACTER_TOL):
    if eucl_norm2 == 0.0:
        return "zero"
    if abs(g_norm2) <= tol * eucl_norm2:
        return "null"
    return "timelike" if g_norm2 < 0 else "spacelike"


def tangent(model, base, components):
    base = np.asarray(base, dtype=float)
    v = np.asarray(components, dtype=float)
    g = model.metric(base)[0]
    nv = float(v @ g @ v)
    char = causal_character(nv, float(v @ v))
    orient = 0
    if char in ("timelike", "null"):
        orient = int(np.sign(v[0])) if v[0] != 0 else 0
    return Tangent(base=base, components=v, g_norm2=nv,
                   causal_character=char, time_orientation=orient)


# ---------------------------------------------------------------------------
# batched RK4 flow

def _rhs(model, state):
    d = model.dim
    q, v = state[:, :d], state[:, d:]
    G = christoffel_batch(model, q)
    acc = -np.einsum("bijk,bj,bk->bi", G, v, v)
    return np.concatenate([v, acc], axis=1)


def _rk4_step(model, state, h):
    """One RK4 step; h may be scalar or (B, 1) for per-row steps."""
    k1 = _rhs(model, state)
    k2 = _rhs(model, state + 0.5 * h * k1)
    k3 = _rhs(model, state + 0.5 * h * k2)
    k4 = _rhs(model, state + h * k3)
    return state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow(model, q0, v0, s_total, n_steps):
    """Integrate the geodesic flow for all rows over parameter s_total."""
    state = np.concatenate([np.atleast_2d(q0) * 1.0, np.atleast_2d(v0) * 1.0], axis=1)
    h = s_total / n_steps
    for _ in range(n_steps):
        state = _rk4_step(model, state, h)
    d = model.dim
    return state[:, :d], state[:, d:]


def exp_batch(model, p, w, n_steps=None, use_closed=True):
    """gamma_{p,w}(1) and its velocity for a batch of initial velocities w."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if use_closed and model.exp_closed is not None:
        return model.exp_closed(np.asarray(p, dtype=float), w)
    if n_steps is None:
        n_steps = EXP_STEPS
    p = np.broadcast_to(np.asarray(p, dtype=float), w.shape)
    return flow(model, p, w, 1.0, n_steps)


# ---------------------------------------------------------------------------
# geodesic path with boundary-exit localization

@dataclass
class GeodesicPath:
    initial: Tangent
    s: np.ndarray
    q: np.ndarray
    v: np.ndarray
    exit_backward: Optional[float]
    exit_forward: Optional[float]
    exit_faces: dict = field(default_factory=dict)
    norm_drift: float = 0.0

    def norms(self, model):
        g = model.metric(self.q)
        return np.einsum("bi,bij,bj->b", self.v, g, self.v)


def _face_of(model, q, tol=1e-6):
    for a in range(model.dim):
        axis = "t" if a == 0 else f"x{a}"
        if q[a] <= model.chart_lo[a] + tol:
            return f"{axis}-"
        if q[a] >= model.chart_hi[a] - tol:
            return f"{axis}+"
    return "interior"


def _march_to_exit(model, q0, v0, s_max, h):
    """Fixed-step march from (q0, v0); returns samples up to the chart exit and
    the bisection-localized exit parameter (None if s_max reached inside)."""
    state = np.concatenate([q0, v0])[None, :]
    d = model.dim
    ss, qs, vs = [0.0], [q0.copy()], [v0.copy()]
    s = 0.0
    n = int(np.ceil(s_max / h))
    for _ in range(n):
        step = min(h, s_max - s)
        if step <= 0:
            break
        nxt = _rk4_step(model, state, step)
        if not np.all(np.isfinite(nxt)):
            raise IntegrationError("geodesic state overflow")
        if not model.contains(nxt[0, :d])[0]:
            # bisect the crossing fraction within [0, step]
            lo_f, hi_f = 0.0, step
            while hi_f - lo_f > EXIT_TOL:
                mid = 0.5 * (lo_f + hi_f)
                trial = _rk4_step(model, state, mid)
                if model.contains(trial[0, :d])[0]:
                    lo_f = mid
                else:
                    hi_f = mid
            exit_state = _rk4_step(model, state, 0.5 * (lo_f + hi_f))
            s_exit = s + 0.5 * (lo_f + hi_f)
            ss.append(s_exit)
            qs.append(exit_state[0, :d].copy())
            vs.append(exit_state[0, d:].copy())
            return np.array(ss), np.array(qs), np.array(vs), s_exit
        state = nxt
        s += step
        ss.append(s)
        qs.append(state[0, :d].copy())
        vs.append(state[0, d:].copy())
    return np.array(ss), np.array(qs), np.array(vs), None


def integrate_geodesic(model, v, s_range=(-10.0, 10.0), base_step=None):
    """Trace the geodesic with initial data v over s_range; locate chart exits.

    Adaptive halving: if the conserved norm drifts beyond tolerance the march
    is redone with half the step; collapse below 1e-12 raises.
    """
    if isinstance(v, Tangent):
        tan = v
    else:
        raise ValidationError("integrate_geodesic expects a Tangent")
    if not model.contains(tan.base)[0]:
        raise DomainError("initial point outside chart domain")
    if float(tan.components @ tan.components) == 0.0:
        raise ValidationError("zero initial velocity")
    s_lo, s_hi = s_range
    span = max(s_hi, 0.0) - min(s_lo, 0.0)
    h = base_step if base_step is not None else 1e-3 * max(span, 1.0)
    norm0 = tan.g_norm2
    tol = NORM_DRIFT_TOL * (1.0 + float(tan.components @ tan.components))
    while True:
        if h < 1e-12:
            raise IntegrationError("step collapse below 1e-12 (near-singular chart)")
        sf, qf, vf, exit_fwd = _march_to_exit(
            model, tan.base, tan.components, max(s_hi, 0.0), h)
        sb, qb, vb, exit_bwd = _march_to_exit(
            model, tan.base, -tan.components, -min(s_lo, 0.0), h)
        s = np.concatenate([-sb[::-1], sf[1:]])
        q = np.concatenate([qb[::-1], qf[1:]])
        vel = np.concatenate([-vb[::-1], vf[1:]])
        g = model.metric(q)
        norms = np.einsum("bi,bij,bj->b", vel, g, vel)
        drift = float(np.max(np.abs(norms - norm0)))
        if drift <= tol:
            break
        h *= 0.5
    faces = {}
    if exit_fwd is not None:
        faces["forward"] = _face_of(model, qf[-1])
    if exit_bwd is not None:
        faces["backward"] = _face_of(model, qb[-1])
    return GeodesicPath(
        initial=tan, s=s, q=q, v=vel,
        exit_backward=None if exit_bwd is None else -float(exit_bwd),
        exit_forward=None if exit_fwd is None else float(exit_fwd),
        exit_faces=faces, norm_drift=drift,
    )


# ---------------------------------------------------------------------------
# exponential / logarithm maps

def exp_map(model, p, w, n_steps=None):
    """gamma_{p,w}(1); raises DomainError (carrying the exit parameter) if the
    geodesic leaves the chart before parameter 1."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    q, _ = exp_batch(model, p, w[None, :])
    if not model.contains(q[0])[0]:
        tan = tangent(model, p, w)
        path = integrate_geodesic(model, tan, s_range=(0.0, 1.0))
        raise DomainError(
            f"geodesic exits chart at s={path.exit_forward} before s=1")
    # interior: verify no transient excursion for curved numeric paths is
    # skipped here; the marched variant is available via integrate_geodesic.
    return q[0]


def log_map_batch(model, p, targets, guess=None, tol=1e-10, max_iter=50,
                  restarts=5, seed=0, n_steps=None, fd_eps=1e-7,
                  use_closed=True):
    """Newton shooting for w with exp_p(w) = target, batched.

    Returns (w, qdot, converged): initial velocities, terminal radial
    velocities of the connecting geodesics, and a convergence mask.
    """
    p = np.asarray(p, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    B, d = targets.shape
    if use_closed and model.log_closed is not None:
        w = model.log_closed(p, targets)
        _, qdot = exp_batch(model, p, w)
        return w, qdot, np.ones(B, dtype=bool)
    if guess is not None:
        w = np.array(guess, dtype=float)
    else:
        base = model.info.get("base")
        if base is not None and base.log_closed is not None:
            w = base.log_closed(p, targets)
        else:
            w = targets - p[None, :]
    rng = np.random.default_rng(seed)
    scale = float(np.max(np.abs(model.chart_hi - model.chart_lo)))
    converged = np.zeros(B, dtype=bool)
    qdot_out = np.zeros_like(w)
    for attempt in range(restarts + 1):
        active = ~converged
        if not np.any(active):
            break
        wa = w[active]
        ta = targets[active]
        for it in range(max_iter):
            q, qdot = exp_batch(model, p, wa, n_steps=n_steps)
            F = q - ta
            res = np.linalg.norm(F, axis=1)
            done = res < tol
            # assemble FD Jacobian for the not-done rows
            rows = ~done
            if not np.any(rows):
                break
            J = np.empty((rows.sum(), d, d))
            wr = wa[rows]
            qr = q[rows]
            for a in range(d):
                wp = wr.copy()
                wp[:, a] += fd_eps
                qp, _ = exp_batch(model, p, wp, n_steps=n_steps)
                J[:, :, a] = (qp - qr) / fd_eps
            try:
                dw = np.linalg.solve(J, -F[rows][:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                J = J + 1e-9 * np.eye(d)[None, :, :]
                dw = np.linalg.solve(J, -F[rows][:, :, None])[:, :, 0]
            # cap absurd steps to keep shooting inside a sane ball
            step_norm = np.linalg.norm(dw, axis=1, keepdims=True)
            cap = 2.0 * scale
            dw = np.where(step_norm > cap, dw * (cap / step_norm), dw)
            wa[rows] = wr + dw
        q, qdot = exp_batch(model, p, wa, n_steps=n_steps)
        ok = np.linalg.norm(q - ta, axis=1) < 10 * tol
        idx = np.where(active)[0]
        w[idx] = wa
        qdot_out[idx[ok]] = qdot[ok]
        converged[idx[ok]] = True
        if np.all(converged):
            break
        # random restart for the stragglers
        bad = np.where(~converged)[0]
        w[bad] = (targets[bad] - p[None, :]) + rng.normal(
            0.0, 0.05 * scale * (attempt + 1), (len(bad), d))
    return w, qdot_out, converged


@dataclass
class LogResult:
    vector: Tangent
    r: Optional[float]  # spacelike distance when the vector is spacelike
    terminal_velocity: np.ndarray


def log_map(model, p, q, **kw):
    """Inverse of exp_p; raises LogMapError on Newton no-convergence."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w, qdot, conv = log_map_batch(model, p, q[None, :], **kw)
    if not conv[0]:
        raise LogMapError("Newton shooting did not converge; target treated as unreachable")
    tan = tangent(model, p, w[0])
    r = float(np.sqrt(tan.g_norm2)) if tan.causal_character == "spacelike" else None
    return LogResult(vector=tan, r=r, terminal_velocity=qdot[0])


# ---------------------------------------------------------------------------
# causal classification

@dataclass
class CausalClass:
    label: str  # JPlus | JMinus | Exterior
    marginal: bool
    witness: dict

    def to_dict(self):
        return {"label": self.label, "marginal": self.marginal, "witness": self.witness}


def classify_causal(model, p, q, **kw):
    """Label q relative to the double null cone of p via the connecting vector."""
    res = log_map(model, p, q, **kw)
    v = res.vector
    e2 = float(v.components @ v.components)
    marginal = abs(v.g_norm2) <= MARGINAL_TOL * e2
    if v.causal_character == "spacelike":
        label = "Exterior"
    else:
        label = "JPlus" if v.components[0] > 0 else "JMinus"
    witness = {"log_vector": v.components.tolist(), "g_norm2": v.g_norm2}
    if res.r is not None:
        witness["r_p"] = res.r
    return CausalClass(label=label, marginal=marginal, witness=witness)


def _classify_flat(p, q):
    """Closed-form labels in the flat model (vectorized)."""
    dv = np.atleast_2d(q) - np.asarray(p)[None, :]
    m = -dv[:, 0] ** 2 + np.sum(dv[:, 1:] ** 2, axis=1)
    labels = np.where(m > 0, "Exterior", np.where(dv[:, 0] > 0, "JPlus", "JMinus"))
    return labels, m


# ---------------------------------------------------------------------------
# sampling the exterior of the double null cone

def sample_exterior(model, p, m, rng, r_frac=(0.2, 0.85), cone_margin=1e-3,
                    max_rounds=40):
    """Sample q in E_p as exp_p of spacelike vectors that stay in the chart.

    Points closer than cone_margin (chart units, estimated as
    g_p(w,w) / (2 |w|_eucl)) to the null cone are excluded and counted: the
    radial field degenerates there and the comparison statements are interior
    to E_p.  Returns q, w, r = g-length of w, grad r = terminal velocity / r,
    and the exclusion count.
    """
    p = np.asarray(p, dtype=float)
    d = model.dim
    gp = model.metric(p)[0]
    out_q, out_w, out_qdot = [], [], []
    excluded = 0
    need = m
    for _ in range(max_rounds):
        if need <= 0:
            break
        u = rng.normal(size=(2 * need + 8, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        nu = np.einsum("bi,ij,bj->b", u, gp, u)
        keep = nu > 1e-6
        u = u[keep][:need]
        if len(u) == 0:
            continue
        # conservative chart clip along the straight ray, then scale back
        with np.errstate(divide="ignore", invalid="ignore"):
            hi = (model.chart_hi[None, :] - 0.01 - p[None, :]) / u
            lo = (model.chart_lo[None, :] + 0.01 - p[None, :]) / u
            smax = np.min(np.where(u > 0, hi, np.where(u < 0, lo, np.inf)), axis=1)
        fr = r_frac[0] + (r_frac[1] - r_frac[0]) * rng.random(len(u))
        w = u * (fr * smax)[:, None]
        q, qdot = exp_batch(model, p, w)
        inside = model.contains(q)
        for _ in range(8):
            if np.all(inside):
                break
            w[~inside] *= 0.7
            q2, qd2 = exp_batch(model, p, w[~inside])
            q[~inside] = q2
            qdot[~inside] = qd2
            inside = model.contains(q)
        r2 = np.einsum("bi,ij,bj->b", w, gp, w)
        cone_dist = r2 / (2.0 * np.linalg.norm(w, axis=1) + 1e-300)
        near = cone_dist < cone_margin
        excluded += int(np.sum(near & inside))
        ok = inside & ~near
        out_q.append(q[ok])
        out_w.append(w[ok])
        out_qdot.append(qdot[ok])
        need = m - sum(len(a) for a in out_q)
    q = np.concatenate(out_q)[:m]
    w = np.concatenate(out_w)[:m]
    qdot = np.concatenate(out_qdot)[:m]
    r = np.sqrt(np.einsum("bi,ij,bj->b", w, gp, w))
    grad_r = qdot / r[:, None]
    return {"q": q, "w": w, "r": r, "grad_r": grad_r, "excluded_near_cone": excluded}


# ---------------------------------------------------------------------------
# cut-once check: null geodesics meet the double cone at most once

@dataclass
class CutOnceReport:
    p: np.ndarray
    n_samples: int
    seed: int
    n_grid: int
    max_components: int
    histogram: dict
    inconclusive: int

    def to_dict(self):
        return {
            "p": self.p.tolist(), "n_samples": self.n_samples, "seed": self.seed,
            "n_grid": self.n_grid, "max_components": self.max_components,
            "histogram": self.histogram, "inconclusive": self.inconclusive,
        }


def _count_components(member):
    m = np.asarray(member, dtype=bool)
    if not m.any():
        return 0
    starts = np.sum(m[1:] & ~m[:-1]) + int(m[0])
    return int(starts)


def _null_direction_at(model, q_batch, rng):
    """Future (random sign) null coordinate directions at each point."""
    B, d = q_batch.shape
    g = model.metric(q_batch)
    xi_sp = rng.normal(size=(B, d - 1))
    xi_sp /= np.linalg.norm(xi_sp, axis=1, keepdims=True)
    # solve g00 a^2 + 2 a g0s.xi + gss xi xi = 0 for the time component a
    g00 = g[:, 0, 0]
    b = 2.0 * np.einsum("bj,bj->b", g[:, 0, 1:], xi_sp)
    c = np.einsum("bi,bij,bj->b", xi_sp, g[:, 1:, 1:], xi_sp)
    disc = np.sqrt(np.maximum(b * b - 4 * g00 * c, 0.0))
    a = (-b + np.where(rng.random(B) < 0.5, disc, -disc)) / (2 * g00)
    xi = np.concatenate([a[:, None], xi_sp], axis=1)
    return xi


def cut_once_check(model, p, n_samples=1000, seed=0, n_grid=None):
    """Sampled check that null geodesics through E_p meet J+(p) u J-(p) in at
    most one parameter interval.  Failures show up as component counts >= 2 in
    the report; they are reported, never raised."""
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    ext = sample_exterior(model, p, n_samples, rng, r_frac=(0.25, 0.7))
    q0 = ext["q"]
    xi = _null_direction_at(model, q0, rng)
    flat = "flat" in model.tags
    if n_grid is None:
        n_grid = 1000 if flat else 160
    counts = np.zeros(len(q0), dtype=int)
    inconclusive = 0
    if flat:
        # straight rays; chord through the box, closed-form membership
        for i in range(len(q0)):
            smax = _ray_box_exit(model, q0[i], xi[i])
            smin = -_ray_box_exit(model, q0[i], -xi[i])
            ss = np.linspace(smin, smax, n_grid)
            z = q0[i][None, :] + ss[:, None] * xi[i][None, :]
            _, mnorm = _classify_flat(p, z)
            member = mnorm <= MARGINAL_TOL * np.sum((z - p) ** 2, axis=1)
            counts[i] = _count_components(member)
    else:
        Z = _chord_grid_batch(model, q0, xi, n_grid)  # (B, n_grid, d)
        member, inconclusive = _membership_batch(model, p, Z, rng)
        for i in range(Z.shape[0]):
            counts[i] = _count_components(member[i])
    hist = {int(k): int(v) for k, v in zip(*np.unique(counts, return_counts=True))}
    return CutOnceReport(
        p=p, n_samples=int(len(q0)), seed=int(seed), n_grid=int(n_grid),
        max_components=int(counts.max()) if len(counts) else 0,
        histogram=hist, inconclusive=inconclusive,
    )


def _membership_batch(model, p, Z, rng, audit_frac=0.05):
    """J+(p) u J-(p) membership for a (B, G, d) batch of points.

    When the model is a compact perturbation of a base with a closed-form
    logarithm, points whose base causal margin clears a band proportional to
    the bump amplitude are decided by the base sign; only the band is solved
    by (batched, warm-guessed) Newton shooting.  A seeded audit subsample of
    the clear region is re-solved and must agree, otherwise those entries are
    degraded to solved values and counted.  Models without that structure are
    solved pointwise.
    """
    B, G, d = Z.shape
    flatZ = Z.reshape(-1, d)
    base = model.info.get("base")
    bump = model.info.get("bump")
    inconclusive = 0
    if base is not None and base.log_closed is not None and bump is not None:
        w0 = base.log_closed(p, flatZ)
        gp0 = base.metric(p)[0]
        m0 = np.einsum("bi,ij,bj->b", w0, gp0, w0)
        e2 = np.einsum("bi,bi->b", w0, w0)
        band = (10.0 * abs(bump.amplitude) + 0.02) * (e2 + 1e-12)
        need = np.abs(m0) <= band
        audit = (~need) & (rng.random(len(m0)) < audit_frac)
        solve_idx = np.where(need | audit)[0]
        member = m0 <= MARGINAL_TOL * e2
        if len(solve_idx):
            w, _, conv = log_map_batch(model, p, flatZ[solve_idx],
                                       guess=w0[solve_idx], tol=1e-9,
                                       max_iter=10, restarts=1, n_steps=96)
            gp = model.metric(p)[0]
            nv = np.einsum("bi,ij,bj->b", w, gp, w)
            me = conv & (nv <= MARGINAL_TOL * np.einsum("bi,bi->b", w, w))
            in_audit = audit[solve_idx]
            disagree = int(np.sum(me[in_audit] != member[solve_idx][in_audit]))
            inconclusive += int(np.sum(~conv)) + disagree
            member[solve_idx] = np.where(conv, me, member[solve_idx])
        return member.reshape(B, G), inconclusive
    # generic fallback: warm-started chain along each ray
    member = np.zeros((B, G), dtype=bool)
    guess = None
    for k in range(G):
        w, _, conv = log_map_batch(model, p, Z[:, k, :], guess=guess,
                                   tol=1e-9, max_iter=8, restarts=1, n_steps=96)
        gp = model.metric(p)[0]
        nv = np.einsum("bi,ij,bj->b", w, gp, w)
        e2 = np.einsum("bi,bi->b", w, w)
        member[:, k] = conv & (nv <= MARGINAL_TOL * e2)
        inconclusive += int(np.sum(~conv))
        guess = w.copy()
    return member, inconclusive


def _ray_box_exit(model, q, xi):
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = (model.chart_hi - q) / xi
        lo = (model.chart_lo - q) / xi
        s = np.where(xi > 0, hi, np.where(xi < 0, lo, np.inf))
    return float(np.min(s))


def _chord_grid_batch(model, q0, xi, n_grid, h=0.02, s_max=12.0):
    """March all rays both ways with a fixed step, clip each to its inside
    chord, and resample n_grid points along it (linear interpolation in s).

    Exit localization here only needs grid resolution, not the 1e-8 bisection
    of integrate_geodesic: membership patterns are what is being counted.
    """
    B, d = q0.shape
    n_steps = int(np.ceil(s_max / h))
    traj = {}
    for sign in (+1.0, -1.0):
        state = np.concatenate([q0, sign * xi], axis=1)
        alive = np.ones(B, dtype=bool)
        span = np.zeros(B)
        qs = [q0.copy()]
        for k in range(n_steps):
            nxt = _rk4_step(model, state, h)
            inside = model.contains(nxt[:, :d]) & np.all(np.isfinite(nxt), axis=1)
            alive = alive & inside
            state[alive] = nxt[alive]
            span[alive] += h
            qs.append(state[:, :d].copy())
            if not alive.any():
                break
        traj[sign] = (np.stack(qs, axis=1), span)  # (B, K, d), (B,)
    Z = np.empty((B, n_grid, d))
    for i in range(B):
        qf, span_f = traj[+1.0][0][i], traj[+1.0][1][i]
        qb, span_b = traj[-1.0][0][i], traj[-1.0][1][i]
        kf = int(round(span_f / h))
        kb = int(round(span_b / h))
        s_nodes = np.concatenate([-h * np.arange(kb, 0, -1), h * np.arange(kf + 1)])
        qs = np.concatenate([qb[kb:0:-1], qf[:kf + 1]], axis=0)
        ss = np.linspace(s_nodes[0], s_nodes[-1], n_grid)
        for a in range(d):
            Z[i, :, a] = np.interp(ss, s_nodes, qs[:, a])
    return Z
