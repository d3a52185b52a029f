"""Desk-scale potential-recovery experiments: beam-driven boundary data,
point-value extraction at interior points, ratio statistics, and
Dirichlet-to-Neumann distinguishability of potentials.

The central probe drives the solver with f_lam = eta * U_lam on the lateral
boundary and samples the solution at the beam vertex p.  With the
normalization Y_0 = I the construction predicts u(p) -> 1 with a C/lam error
law, the gradient i lam xi at leading order, and a leading value independent
of the potential (V first enters the amplitude cascade one order down).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .beams import beam_eval, beam_propagate, fermi_chart
from .errors import ConfigurationError, ResolutionError
from .geodesics import integrate_geodesic, tangent
from .wavesolver import GridSpec, cfl_time_steps, dtn_map, make_boundary_data, \
    smooth_ramp, solve_ibvp, _boundary_structure, _face_points


def null_tangent(model, p, spatial_dir, future=True):
    """Null tangent at p with the given spatial direction (cylinder metrics)."""
    p = np.asarray(p, dtype=float)
    sp = np.asarray(spatial_dir, dtype=float)
    g = model.metric(p)[0]
    a = np.sqrt(sp @ g[1:, 1:] @ sp / -g[0, 0])
    comp = np.concatenate([[a if future else -a], sp])
    return tangent(model, p, comp)


def build_beam(model, p, spatial_dir, delta_prime=None, H0_scale=None,
               yz_step=2e-3, s_range=(-12.0, 12.0)):
    """Beam state along the null geodesic from p in the given direction."""
    tan = null_tangent(model, p, spatial_dir)
    path = integrate_geodesic(model, tan, s_range=s_range)
    frame = fermi_chart(model, path, delta_prime=delta_prime, yz_step=yz_step)
    if H0_scale is None:
        smax = max(abs(path.exit_backward or 1.0), abs(path.exit_forward or 1.0))
        H0_scale = 1.0 / (2.0 * smax)
    n = model.n
    state = beam_propagate(frame, H0=1j * H0_scale * np.eye(n))
    return state, path


def eta_profile(T1, eps):
    """Time cutoff: 1 below T1 + eps/2, 0 above T1 + eps."""
    def eta(t):
        t = np.asarray(t, dtype=float)
        u = np.clip((t - (T1 + 0.5 * eps)) / (0.5 * eps), 0.0, 1.0)
        return 1.0 - (u ** 3 * (10 - 15 * u + 6 * u * u))
    return eta


def precompute_beam_data(state, lam, eta, grid, T1=None, eps=None):
    """Tabulate f_lam = eta U_lam on all (t-node, boundary-node) pairs once;
    the returned callable does exact row lookup for the solver."""
    faces = _boundary_structure(grid)
    pts = {k: _face_points(grid, faces[k]) for k in sorted(faces)}
    all_pts = np.concatenate([pts[k] for k in sorted(faces)], axis=0)
    tn = grid.t_nodes()
    M = len(all_pts)
    chart = np.empty((len(tn) * M, grid.n + 1))
    chart[:, 0] = np.repeat(tn, M)
    chart[:, 1:] = np.tile(all_pts, (len(tn), 1))
    vals = beam_eval(state, lam, chart_points=chart).reshape(len(tn), M)
    vals = vals * eta(tn)[:, None]
    support_rows = np.where(np.abs(vals).max(axis=1) > 1e-300)[0]
    support = (float(tn[support_rows[0]]), float(tn[support_rows[-1]])) \
        if len(support_rows) else None
    if T1 is not None and eps is not None and support is not None:
        if support[1] >= T1 - eps:
            raise ConfigurationError(
                f"beam boundary data leaks to t = {support[1]:.4f} "
                f">= T1 - eps = {T1 - eps:.4f}")

    def f(t, pts_):
        m = int(round((t - tn[0]) / grid.h_t))
        return vals[m]

    return f, {"support": support, "max_abs": float(np.abs(vals).max())}


def _fit_power(lams, errs):
    lams = np.asarray(lams, dtype=float)
    errs = np.asarray(errs, dtype=float)
    good = errs > 0
    if good.sum() < 2:
        return 0.0, 0.0
    k, c = np.polyfit(np.log(lams[good]), np.log(errs[good]), 1)
    return float(k), float(np.exp(c))


@dataclass
class ProbeReport:
    p: np.ndarray
    lams: list
    values: list
    grad_probe: list
    fitted_exponent: float
    fitted_C: float
    xi: np.ndarray
    grad_rel_err_at_top: float
    meta: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {
            "p": self.p.tolist(), "lams": list(self.lams),
            "values_re": [float(np.real(v)) for v in self.values],
            "values_im": [float(np.imag(v)) for v in self.values],
            "abs_err": [float(abs(v - 1.0)) for v in self.values],
            "fitted_exponent": self.fitted_exponent,
            "fitted_C": self.fitted_C,
            "grad_rel_err_at_top": self.grad_rel_err_at_top,
            "meta": self.meta,
        }


def point_value_series(model, V, p, spatial_dir, lams, T1, eps,
                       x_bounds, T, ppw=24, delta_prime=0.5, H0_scale=1.0,
                       w_probe=None, safety_nt=1.05):
    """Drive the IBVP with beam data for each lam, sample u and its gradient
    at the beam vertex p, and fit the |u(p) - 1| ~ C / lam law.

    The grid is re-sized per lam so the finest beam keeps ppw points per
    wavelength; lam values whose grid would exceed the resolution budget are
    truncated with a warning in the report.
    """
    p = np.asarray(p, dtype=float)
    state, path = build_beam(model, p, spatial_dir, delta_prime=delta_prime,
                             H0_scale=H0_scale)
    eta = eta_profile(T1, eps)
    xi = state.frame.qdot[np.argmin(np.abs(state.frame.s))]
    if w_probe is None:
        w_probe = np.zeros(model.dim)
        w_probe[0] = 1.0
    values, grads, used = [], [], []
    meta = {"boundary": []}
    lam_ref = float(min(lams))
    for lam in lams:
        wavelength = 2 * np.pi / lam
        # second-order dispersion accumulates ~ lam (lam h)^2; keeping the
        # phase error ~ 1/lam across the ladder needs h ~ lam^-2
        ppw_eff = ppw * lam / lam_ref
        n_per_axis = []
        for a in range(model.n):
            span = x_bounds[1][a] - x_bounds[0][a]
            m = int(np.ceil(span * ppw_eff / wavelength)) + 1
            m += (m + 1) % 2  # odd count keeps the (centered) probe on a node
            n_per_axis.append(m)
        if max(n_per_axis) > 11000:
            meta["boundary"].append({"lam": lam, "skipped": "resolution budget"})
            continue
        nt_probe = GridSpec((-T, T), 10, x_bounds[0], x_bounds[1], tuple(n_per_axis))
        n_t = int(np.ceil(safety_nt * cfl_time_steps(model, nt_probe)))
        grid = GridSpec((-T, T), n_t, x_bounds[0], x_bounds[1], tuple(n_per_axis))
        f, info = precompute_beam_data(state, lam, eta, grid, T1=T1, eps=eps)
        meta["boundary"].append({"lam": lam, **info})
        # probes: p and the 2*dim stencil for the gradient
        probes = {"p": p[1:]}
        for a in range(model.n):
            for sgn, tag in ((+1, "+"), (-1, "-")):
                q = p[1:].copy()
                q[a] += sgn * grid.h_x[a]
                probes[f"x{a+1}{tag}"] = q
        fld = solve_ibvp(model, V, f, grid, probes=probes, ramp_width=0.05 * T)
        tn = grid.t_nodes()
        series = fld.probes["series"]

        def at_tp(ser):
            # quadratic interpolation in t at p[0]; the time node need not
            # land on p, and the O(lam h_t) snap error would dominate
            m = int(round((p[0] - tn[0]) / grid.h_t))
            m = min(max(m, 1), len(tn) - 2)
            th = (p[0] - tn[m]) / grid.h_t
            return (ser[m] * (1 - th ** 2) + ser[m + 1] * 0.5 * th * (th + 1)
                    + ser[m - 1] * 0.5 * th * (th - 1))

        def dt_at_tp(ser):
            m = int(round((p[0] - tn[0]) / grid.h_t))
            m = min(max(m, 1), len(tn) - 2)
            th = (p[0] - tn[m]) / grid.h_t
            return (ser[m + 1] * (th + 0.5) + ser[m - 1] * (th - 0.5)
                    - 2 * ser[m] * th) / grid.h_t

        up = at_tp(series["p"])
        grad = np.zeros(model.dim, dtype=complex)
        grad[0] = dt_at_tp(series["p"])
        for a in range(model.n):
            grad[1 + a] = (at_tp(series[f"x{a+1}+"]) - at_tp(series[f"x{a+1}-"])) \
                / (2 * grid.h_x[a])
        values.append(complex(up))
        grads.append(grad)
        used.append(lam)
    if len(used) < 4:
        raise ConfigurationError("fewer than four lam values resolved; fit needs >= 4")
    errs = [abs(v - 1.0) for v in values]
    expo, C = _fit_power(used, errs)
    g = model.metric(p)[0]
    w_xi = float(w_probe @ g @ xi)
    top = -1
    # <w, grad u> with the metric pairing: w^a g_ab (grad u)^b = w^a d_a u
    probe_val = np.imag(np.sum(w_probe * grads[top])) / used[top]
    rel = abs(probe_val - w_xi) / (abs(w_xi) + 1e-300)
    return ProbeReport(
        p=p, lams=used, values=values, grad_probe=[g_.tolist() for g_ in grads],
        fitted_exponent=expo, fitted_C=C, xi=xi,
        grad_rel_err_at_top=float(rel),
        meta={**meta, "w_probe": w_probe.tolist(), "w_xi": w_xi,
              "probe_val": float(probe_val)},
    )


# ---------------------------------------------------------------------------
# ratio statistics (the f-independent proportionality at p)

def omega_ratio(model, V1, V2, p, dictionary, grid, noise_floor=1e-8):
    """u^(1)(p) / u^(2)(p) across a dictionary of boundary data.

    dictionary: list of (name, f-callable).  Entries with |u^(2)(p)| below the
    noise floor are excluded and counted; if all fall below, the report is
    marked inconclusive.
    """
    p = np.asarray(p, dtype=float)
    ratios, names, skipped = [], [], []
    m0 = None
    for name, f in dictionary:
        out = {}
        for tag, V in (("1", V1), ("2", V2)):
            fld = solve_ibvp(model, V, f, grid, probes={"p": p[1:]})
            tn = grid.t_nodes()
            m0 = int(round((p[0] - tn[0]) / grid.h_t))
            out[tag] = complex(fld.probes["series"]["p"][m0])
        if abs(out["2"]) < noise_floor:
            skipped.append(name)
            continue
        ratios.append(out["1"] / out["2"])
        names.append(name)
    if not ratios:
        return {"inconclusive": True, "skipped": skipped}
    ratios = np.array(ratios)
    return {
        "inconclusive": False,
        "names": names,
        "ratios_re": np.real(ratios).tolist(),
        "ratios_im": np.imag(ratios).tolist(),
        "mean": complex(np.mean(ratios)),
        "spread": float(np.max(np.abs(ratios - np.mean(ratios)))) if len(ratios) > 1 else 0.0,
        "max_dev_from_one": float(np.max(np.abs(ratios - 1.0))),
        "skipped": skipped,
    }


# ---------------------------------------------------------------------------
# DtN distinguishability

def dtn_gap_probe(model, V1, V2, dictionary, grid):
    """max over the dictionary of ||Lambda_{V1} f - Lambda_{V2} f||_{L2(Sigma)}
    with two-grid Richardson error bars."""
    gaps, bars, names = [], [], []
    for name, f in dictionary:
        r1 = dtn_map(model, V1, f, grid)
        r2 = dtn_map(model, V2, f, grid)
        diff = 0.0
        for k in sorted(r1.dnu_samples):
            arr = np.abs(r1.dnu_samples[k] - r2.dnu_samples[k]) ** 2
            wt = np.ones(arr.shape[0]); wt[0] = wt[-1] = 0.5
            diff += np.sum(wt[:, None] * arr) * grid.h_t * r1._face_measure(k)
        gaps.append(float(np.sqrt(diff)))
        bars.append(float(np.hypot(r1.error_bar, r2.error_bar)))
        names.append(name)
    worst = int(np.argmax(gaps))
    return {
        "names": names, "gaps": gaps, "error_bars": bars,
        "gap": gaps[worst], "error_bar": bars[worst],
        "gap_over_bar": gaps[worst] / max(bars[worst], 1e-300),
    }


def in_recovery_domain(model, p, T0, T, n_boundary=400):
    """Membership in D = {p : closure(E_p) subset (T0, T) x M0} for product
    models, via the maximal spatial distance to the chart's spatial box."""
    p = np.asarray(p, dtype=float)
    if model.log_closed is None:
        raise ConfigurationError("membership test needs closed-form logs")
    lo, hi = model.chart_lo[1:], model.chart_hi[1:]
    n = model.n
    if n == 1:
        cand = np.array([[lo[0]], [hi[0]]])
    else:
        edges = []
        tt = np.linspace(0, 1, n_boundary // 4)
        for a in range(2):
            for val in (lo[a], hi[a]):
                pts = np.empty((len(tt), 2))
                pts[:, a] = val
                pts[:, 1 - a] = lo[1 - a] + (hi[1 - a] - lo[1 - a]) * tt
                edges.append(pts)
        cand = np.concatenate(edges)
    targets = np.concatenate([np.full((len(cand), 1), p[0]), cand], axis=1)
    w = model.log_closed(p, targets)
    g0 = model.metric(p)[0][1:, 1:]
    dmax = float(np.max(np.sqrt(np.einsum("bi,ij,bj->b", w[:, 1:], g0, w[:, 1:]))))
    return (T0 < p[0] - dmax) and (p[0] + dmax < T), dmax
