"""The acceptance suite: every quantitative exit criterion as a runnable
pipeline returning a pass/fail report.

Each criterion function is a pure function of (preset, seed) and returns a
dict with at least {"name", "passed", ...detail fields...}.  The CLI's
all-acceptance subcommand and the pytest suite both run these; presets scale
sample counts and grids ("full" pins the stated tolerances and counts,
"quick" shrinks work for smoke runs and the determinism double-run).
"""

from __future__ import annotations

import numpy as np

from . import carleman as cl
from . import convexity as cvx
from . import geodesics as geo
from . import geometry as gm
from . import metrics as mt
from . import recovery as rc
from . import wavesolver as ws
from .beams import beam_propagate, beam_residual, fermi_chart
from .fields import BumpField, FuncField, random_polynomial
from .reporting import _canonical

PRESETS = {
    "full": {
        "id_triples": 1000,
        "curv_samples": 10000,
        "hess_samples": 10000,
        "radial_samples": 1000,
        "beam_lams": (20.0, 40.0, 80.0, 160.0),
        "solver_nx": (201, 401, 801),
        "solver2d_nx": (31, 61, 121),
        "cut_samples": 1000,
        "cut_grid_flat": 1000,
        "cut_grid_perturbed": 160,
        "classify_pairs": 10000,
        "recover_lams": (20.0, 40.0, 80.0, 160.0),
        "recover_ppw": 40,
        "gap_nx": 801,
    },
    "quick": {
        "id_triples": 60,
        "curv_samples": 1500,
        "hess_samples": 800,
        "radial_samples": 200,
        "beam_lams": (20.0, 40.0),
        "solver_nx": (101, 201),
        "solver2d_nx": (21, 41),
        "cut_samples": 80,
        "cut_grid_flat": 300,
        "cut_grid_perturbed": 60,
        "classify_pairs": 1000,
        "recover_lams": (20.0, 40.0, 60.0, 80.0),
        "recover_ppw": 24,
        "gap_nx": 401,
    },
}


def _fit_order(hs, errs):
    """Convergence order: slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


# ---------------------------------------------------------------------------

def criterion_1_identity(preset, seed=0):
    """Pointwise conjugation identity: analytic residual <= 1e-10 relative on
    random polynomial triples; FD variant converges at second order."""
    mk = mt.minkowski(n=2)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(preset["id_triples"]):
        v = random_polynomial(3, 4, rng)
        ell = random_polynomial(3, 4, rng)
        sg = random_polynomial(3, 4, rng)
        q = rng.uniform(-0.8, 0.8, (1, 3))
        T = cl.carleman_terms(mk, ell, sg, v, q)
        worst = max(worst, float(np.max(T.relative_residual)))
    ok_analytic = worst <= 1e-10

    from .fields import FDField
    v = random_polynomial(3, 4, rng)
    ell = random_polynomial(3, 4, rng)
    sg = random_polynomial(3, 4, rng)
    q = rng.uniform(-0.5, 0.5, (16, 3))
    hs = [1e-2, 5e-3, 2.5e-3]
    errs = []
    for h in hs:
        T = cl.carleman_terms(mk, FDField(3, ell.value, h), FDField(3, sg.value, h),
                              FDField(3, v.value, h), q, div_mode="fd", fd_step=h)
        errs.append(float(np.max(T.relative_residual)))
    order = _fit_order(hs, errs)
    ok_fd = (errs[0] > errs[1] > errs[2]) and 1.6 <= order <= 2.4
    return {
        "name": "1 carleman identity",
        "passed": bool(ok_analytic and ok_fd),
        "worst_analytic_residual": worst,
        "fd_residuals": errs, "fd_order": order,
    }


def _null_path(model, p, sp_dir, s_range=(-12, 12)):
    tan = rc.null_tangent(model, p, sp_dir)
    return geo.integrate_geodesic(model, tan, s_range=s_range)


def criterion_2_riccati(preset, seed=0):
    """det(Im H) |det Y|^2 conserved to 1e-9 at h = 1e-3 over unit range on
    flat and ultrastatic beams; flat n=2 closed form matched to 1e-9."""
    mk = mt.minkowski(n=2, t_half=1.6, x_half=[0.85, 3.0])
    path = _null_path(mk, [0.0, 0.0, 0.0], [1.0, 0.0])
    frame = fermi_chart(mk, path, delta_prime=1.0, yz_step=1e-3)
    state = beam_propagate(frame)
    sel = (state.s >= 0) & (state.s <= 1.0)
    ss = state.s[sel]
    Yx = np.zeros((sel.sum(), 2, 2), complex)
    Yx[:, 0, 0] = 1.0
    Yx[:, 1, 1] = 1.0 + 2j * ss
    errY = float(np.max(np.abs(state.Y[sel] - Yx)))
    Hx = np.zeros_like(Yx)
    Hx[:, 0, 0] = 1j
    Hx[:, 1, 1] = 1j / (1 + 2j * ss)
    errH = float(np.max(np.abs(state.H[sel] - Hx)))
    erra = float(np.max(np.abs(state.a00[sel] - (1 + 2j * ss) ** -0.5)))
    drift_flat = float(np.max(np.abs(state.det_invariant[sel] - 1.0)))

    uh = mt.ultrastatic("hyperbolic", n=2)
    pathu = _null_path(uh, [0.0, -0.15, 0.0], [1.0, 0.05])
    frameu = fermi_chart(uh, pathu, delta_prime=0.8, yz_step=1e-3)
    stateu = beam_propagate(frameu)
    inv0 = stateu.det_invariant[np.argmin(np.abs(stateu.s))]
    selu = np.abs(stateu.s) <= 1.0
    drift_ultra = float(np.max(np.abs(stateu.det_invariant[selu] - inv0)))
    im_ok = True  # propagate raises if Im H loses positivity
    passed = (max(errY, errH, erra) <= 1e-9 and drift_flat <= 1e-9
              and drift_ultra <= 1e-9 and im_ok)
    return {
        "name": "2 riccati determinant invariant",
        "passed": bool(passed),
        "closed_form_errors": {"Y": errY, "H": errH, "a00": erra},
        "drift_flat": drift_flat, "drift_ultrastatic": drift_ultra,
    }


def criterion_3_curvature(preset, seed=0):
    m = preset["curv_samples"]
    mk = mt.minkowski(n=2)
    uh = mt.ultrastatic("hyperbolic", n=2)
    jm = mt.jet()
    checks = []
    for K, want in [(0.0, True), (0.1, False), (-0.1, False)]:
        rep = gm.curvature_bound_check(mk, K=K, n_samples=m, seed=seed)
        checks.append(("minkowski", K, rep.passed, want, rep.worst_margin))
    for K, want in [(-1.0, True), (-0.5, True), (0.0, True), (-1.1, False)]:
        rep = gm.curvature_bound_check(uh, K=K, n_samples=m, seed=seed)
        checks.append(("ultrastatic", K, rep.passed, want, rep.worst_margin))
    rep = gm.curvature_bound_check(jm, region=gm.Region.ball(np.zeros(3), 0.1),
                                   K=-0.5, n_samples=m, seed=seed)
    checks.append(("jet ball 0.1", -0.5, rep.passed, True, rep.worst_margin))
    passed = all(got == want for _, _, got, want, _ in checks)
    return {
        "name": "3 curvature bound",
        "passed": bool(passed),
        "checks": [
            {"model": mdl, "K": K, "passed": got, "expected": want, "worst": w}
            for mdl, K, got, want, w in checks
        ],
    }


def criterion_4_hessian(preset, seed=0):
    m = preset["hess_samples"]
    mk = mt.minkowski(n=2)
    uh = mt.ultrastatic("hyperbolic", n=2)
    rep_f = cvx.hessian_comparison_check(mk, np.zeros(3), K=0.0, n_samples=m,
                                         seed=seed, keep_records=True)
    eq = float(np.max(np.abs(rep_f.records["margin"])))
    p = np.array([0.0, 0.05, -0.02])
    rep_u = cvx.hessian_comparison_check(uh, p, K=-1.0, n_samples=m, seed=seed)
    rep_d = cvx.hessian_comparison_check(uh, p, K=0.5, n_samples=m, seed=seed)
    passed = (eq <= 1e-8 and rep_u.passed and rep_u.worst_margin >= -1e-6
              and not rep_d.passed and rep_d.worst_margin < 0)
    return {
        "name": "4 hessian comparison",
        "passed": bool(passed),
        "flat_equality_max": eq,
        "ultrastatic_worst": rep_u.worst_margin,
        "discrimination_worst": rep_d.worst_margin,
    }


def criterion_5_radial(preset, seed=0):
    m = preset["radial_samples"]
    out = {}
    ok = True
    for name, model, p in [
        ("minkowski", mt.minkowski(n=2), np.zeros(3)),
        ("ultrastatic", mt.ultrastatic("hyperbolic", n=2), np.array([0.0, 0.05, -0.02])),
    ]:
        r = cvx.radial_checks(model, p, n_samples=m, seed=seed)
        out[name] = r
        ok = ok and r["max_eikonal_residual"] <= 1e-6 and r["max_radial_residual"] <= 1e-6
    return {"name": "5 eikonal and radial geodesic", "passed": bool(ok), **out}


def criterion_6_beam_residual(preset, seed=0):
    lams = list(preset["beam_lams"])
    out = {}
    ok = True
    mk = mt.minkowski(n=2, t_half=1.6, x_half=[0.85, 3.0])
    path = _null_path(mk, [0.0, 0.0, 0.0], [1.0, 0.0])
    frame = fermi_chart(mk, path, delta_prime=2.0, yz_step=2e-3)
    state = beam_propagate(frame, H0=1j / (2 * 0.85) * np.eye(2))
    vals = []
    for lam in lams:
        rep, _ = beam_residual(mk, 1.0, state, lam, n_s=48)
        vals.append(rep["normalized_residual"])
    slope = float(np.polyfit(np.log(lams), np.log(vals), 1)[0])
    mono = all(vals[i + 1] < vals[i] for i in range(len(vals) - 1))
    out["flat"] = {"residuals": vals, "slope": slope, "monotone": mono}
    ok = ok and mono and slope <= -0.5

    uh = mt.ultrastatic("hyperbolic", n=2)
    pathu = _null_path(uh, [0.0, -0.15, 0.0], [1.0, 0.05])
    frameu = fermi_chart(uh, pathu, delta_prime=1.0, yz_step=2e-3)
    smax = max(abs(pathu.exit_backward), abs(pathu.exit_forward))
    stateu = beam_propagate(frameu, H0=1j / (2 * smax) * np.eye(2))
    valsu = []
    for lam in lams:
        rep, _ = beam_residual(uh, 0.0, stateu, lam, n_s=40)
        valsu.append(rep["normalized_residual"])
    slopeu = float(np.polyfit(np.log(lams), np.log(valsu), 1)[0])
    monou = all(valsu[i + 1] < valsu[i] for i in range(len(valsu) - 1))
    out["ultrastatic"] = {"residuals": valsu, "slope": slopeu, "monotone": monou}
    ok = ok and monou and slopeu <= -0.5
    return {"name": "6 beam residual decay", "passed": bool(ok), **out}


def _traveling_pulse(z, z0, w):
    u = (np.asarray(z, dtype=float) - z0) / w
    out = np.zeros_like(np.asarray(u, dtype=float))
    msk = (u > 0) & (u < 1)
    out[msk] = np.sin(np.pi * u[msk]) ** 4
    return out


def criterion_7_solver(preset, seed=0):
    mk = mt.minkowski(n=1, t_half=1.0, x_half=0.5)
    errs = []
    for nx in preset["solver_nx"]:
        probe = ws.GridSpec((-1.0, 1.0), 10, [-0.5], [0.5], (nx,))
        grid = ws.GridSpec((-1.0, 1.0), ws.cfl_time_steps(mk, probe), [-0.5], [0.5], (nx,))
        f = ws.make_boundary_data(
            grid, {"x1-": lambda t, pts: _traveling_pulse(np.full(len(pts), t), -0.9, 0.4)})
        fld = ws.solve_ibvp(mk, 0.0, f, grid, store_history=True, ramp_width=0.05)
        mmid = int(round(1.0 / grid.h_t))
        xs = grid.axes()[0]
        exact = _traveling_pulse(grid.t_nodes()[mmid] - (xs + 0.5), -0.9, 0.4)
        errs.append(float(np.max(np.abs(fld.history[mmid].real - exact))))
    hs = [1.0 / (nx - 1) for nx in preset["solver_nx"]]
    order_1d = _fit_order(hs, errs)

    # 1+2D manufactured solution on the ultrastatic hyperbolic cylinder:
    # u = (t+T)^3 cos(3x) sin(2y+0.4), Box u = u_tt - phi^-2 Lap u
    uh = mt.ultrastatic("hyperbolic", n=2, t_half=0.5, x_half=0.4)
    Tm, V0 = 0.5, 1.0

    def u_man(t, x, y):
        return (t + Tm) ** 3 * np.cos(3 * x) * np.sin(2 * y + 0.4)

    def F_man(t, pts):
        x, y = pts[:, 0], pts[:, 1]
        phi2 = (2.0 / (1.0 - x * x - y * y)) ** 2
        sp = np.cos(3 * x) * np.sin(2 * y + 0.4)
        return (6 * (t + Tm) + (13.0 / phi2 + V0) * (t + Tm) ** 3) * sp

    errs2 = []
    for nx in preset["solver2d_nx"]:
        probe = ws.GridSpec((-Tm, Tm), 10, [-0.4, -0.4], [0.4, 0.4], (nx, nx))
        grid = ws.GridSpec((-Tm, Tm), ws.cfl_time_steps(uh, probe),
                           [-0.4, -0.4], [0.4, 0.4], (nx, nx))
        faces = {}
        for face in ("x1-", "x1+", "x2-", "x2+"):
            faces[face] = lambda t, pts: u_man(t, pts[:, 0], pts[:, 1])
        f = ws.make_boundary_data(grid, faces)
        fld = ws.solve_ibvp(uh, V0, f, grid, source=F_man, store_history=True,
                            ramp_width=1e-9)
        mm = grid.mesh()
        exact = u_man(Tm, mm[:, 0], mm[:, 1]).reshape(grid.n_x)
        errs2.append(float(np.max(np.abs(fld.history[-1].real - exact))))
    hs2 = [0.8 / (nx - 1) for nx in preset["solver2d_nx"]]
    order_2d = _fit_order(hs2, errs2)

    # energy drift after switch-off (V = 0) and finite-speed leakage
    nx = 401
    grid = ws.GridSpec((-1.0, 1.0), 4000, [-0.5], [0.5], (nx,))
    f = ws.make_boundary_data(
        grid, {"x1-": lambda t, pts: _traveling_pulse(np.full(len(pts), t), -0.9, 0.25)})
    fld = ws.solve_ibvp(mk, 0.0, f, grid)
    tn = grid.t_nodes()
    E = fld.energy[1:][tn[1:] > -0.5]
    drift = float((E.max() - E.min()) / E.mean())

    probe = ws.GridSpec((-1.0, 1.0), 10, [-0.5], [0.5], (nx,))
    gridc = ws.GridSpec((-1.0, 1.0), ws.cfl_time_steps(mk, probe), [-0.5], [0.5], (nx,))
    f = ws.make_boundary_data(
        gridc, {"x1-": lambda t, pts: _traveling_pulse(np.full(len(pts), t), -0.9, 0.25)})
    fld = ws.solve_ibvp(mk, 0.0, f, gridc, store_history=True)
    tq = -0.4
    mq = int(round((tq + 1.0) / gridc.h_t))
    xs = gridc.axes()[0]
    cone = gridc.h_x[0] / gridc.h_t
    front = -0.5 + (tq + 0.9) * max(1.0, cone) + 3 * gridc.h_x[0]
    leak = float(np.max(np.abs(fld.history[mq][xs > front])))

    passed = (1.9 <= order_1d <= 2.1 and 1.9 <= order_2d <= 2.1
              and drift <= 1e-6 and leak <= 1e-12)
    return {
        "name": "7 wave solver",
        "passed": bool(passed),
        "order_1d": order_1d, "errors_1d": errs,
        "order_2d": order_2d, "errors_2d": errs2,
        "energy_drift": drift, "finite_speed_leak": leak,
    }


def criterion_8_gauge(preset, seed=0):
    # n = 1: exponent vanishes, transform is the identity
    rng = np.random.default_rng(seed)
    u = rng.normal(size=64)
    c = FuncField(2, f=lambda q: 1.0 + 0.3 * np.exp(-np.sum(q ** 2, axis=1)))
    w = ws.gauge_transform(c, u, 1, pts=rng.normal(size=(64, 2)))
    ok_n1 = bool(np.array_equal(u, w))

    # n = 2: conformal flat metric cg, manufactured refinement of (Box_g + V) w
    def cval(q):
        return 1.0 + 0.1 * np.exp(-np.sum(q * q, axis=1))

    def cgrad(q):
        e = 0.1 * np.exp(-np.sum(q * q, axis=1))
        return -2.0 * q * e[:, None]

    def chess(q):
        e = 0.1 * np.exp(-np.sum(q * q, axis=1))
        d = q.shape[1]
        return (4.0 * q[:, :, None] * q[:, None, :]
                - 2.0 * np.eye(d)[None]) * e[:, None, None]

    cf = FuncField(3, f=cval, df=cgrad, d2f=chess)
    base = mt.minkowski(n=2, t_half=0.5, x_half=0.5)
    cg = mt.conformal_scale(base, cf)
    Vind = ws.induced_potential(base, cf)
    res = []
    for nx in preset["solver2d_nx"]:
        probe = ws.GridSpec((-0.5, 0.5), 10, [-0.5, -0.5], [0.5, 0.5], (nx, nx))
        grid = ws.GridSpec((-0.5, 0.5), ws.cfl_time_steps(cg, probe),
                           [-0.5, -0.5], [0.5, 0.5], (nx, nx))
        faces = {}
        for face in ("x1-", "x1+", "x2-", "x2+"):
            faces[face] = lambda t, pts: np.cos(2 * t) * np.cos(pts[:, 0] + 0.3 * pts[:, 1])
        f = ws.make_boundary_data(grid, faces)
        fld = ws.solve_ibvp(cg, 0.0, f, grid, store_history=True, ramp_width=0.12)
        # transform w = c^{1/4} u on the stored history, then measure the
        # discrete (Box_g + V) w residual at a middle time slice
        tn = grid.t_nodes()
        mm = grid.mesh()
        mmid = len(tn) // 2
        slabs = []
        for k in (mmid - 1, mmid, mmid + 1):
            pts = np.concatenate([np.full((len(mm), 1), tn[k]), mm], axis=1)
            slabs.append((cval(pts) ** 0.25).reshape(grid.n_x) * fld.history[k].real)
        r = _discrete_box_residual(base, Vind, slabs, grid, tn[mmid])
        res.append(r)
    hs = [1.0 / (nx - 1) for nx in preset["solver2d_nx"]]
    order = _fit_order(hs, res)
    ok_n2 = 1.6 <= order <= 2.6
    return {
        "name": "8 gauge transform",
        "passed": bool(ok_n1 and ok_n2),
        "n1_identity": ok_n1, "residuals": res, "order": order,
    }


def _discrete_box_residual(model, V, slabs, grid, t_mid):
    """Interior max of (Box_g + V) w with 3-slab time stencil and centered
    space stencils (flat g)."""
    wm, w0, wp = slabs
    ht = grid.h_t
    utt = (wp - 2 * w0 + wm) / ht ** 2
    lap = np.zeros_like(w0)
    for axis in range(grid.n):
        sl_c = [slice(1, -1)] * grid.n
        sl_p = list(sl_c)
        sl_m = list(sl_c)
        sl_p[axis] = slice(2, None)
        sl_m[axis] = slice(0, -2)
        lap[tuple([slice(1, -1)] * grid.n)] += (
            w0[tuple(sl_p)] - 2 * w0[tuple(sl_c)] + w0[tuple(sl_m)]
        ) / grid.h_x[axis] ** 2
    mm = grid.mesh()
    pts = np.concatenate([np.full((len(mm), 1), t_mid), mm], axis=1)
    Vg = V(pts).reshape(grid.n_x)
    resid = utt - lap + Vg * w0
    inner = tuple(slice(2, -2) for _ in range(grid.n))
    return float(np.max(np.abs(resid[inner])))


def criterion_9_point_value(preset, seed=0):
    mk = mt.minkowski(n=1, t_half=1.2, x_half=0.5)
    p = np.array([0.3, 0.0])
    lams = list(preset["recover_lams"])
    out = {}
    ok = True
    for V in (0.0, 1.0):
        rep = rc.point_value_series(
            mk, V, p, [1.0], lams, T1=0.3, eps=0.1,
            x_bounds=([-0.5], [0.5]), T=1.2, delta_prime=0.5, H0_scale=1.0,
            ppw=preset["recover_ppw"])
        d = rep.to_dict()
        dec = all(d["abs_err"][i + 1] < d["abs_err"][i]
                  for i in range(len(d["abs_err"]) - 1))
        out[f"V={V}"] = {
            "abs_err": d["abs_err"], "exponent": rep.fitted_exponent,
            "decreasing": dec, "grad_rel_err": rep.grad_rel_err_at_top,
            "limit_abs_err": d["abs_err"][-1],
        }
        ok = ok and dec and rep.fitted_exponent <= -0.8 \
            and rep.grad_rel_err_at_top <= 0.10 and d["abs_err"][-1] <= 0.02
    return {"name": "9 point-value extraction", "passed": bool(ok), **out}


def criterion_10_dtn_gap(preset, seed=0):
    mk = mt.minkowski(n=1, t_half=1.2, x_half=0.5)
    nx = preset["gap_nx"]
    probe = ws.GridSpec((-1.2, 1.2), 10, [-0.5], [0.5], (nx,))
    grid = ws.GridSpec((-1.2, 1.2), ws.cfl_time_steps(mk, probe), [-0.5], [0.5], (nx,))
    dic = [
        ("pulseA", ws.make_boundary_data(
            grid, {"x1-": lambda t, pts: _traveling_pulse(np.full(len(pts), t), -0.7, 0.3)})),
        ("pulseB", ws.make_boundary_data(
            grid, {"x1+": lambda t, pts: _traveling_pulse(np.full(len(pts), t), -0.5, 0.3)})),
    ]
    bump = BumpField(dim=2, center=(0.0, 0.0), radius=(0.25, 0.18), amplitude=1.0)
    inside, dmax = rc.in_recovery_domain(mk, np.zeros(2), -1.2, 1.2)
    same = rc.dtn_gap_probe(mk, 0.0, 0.0, dic, grid)
    unit = rc.dtn_gap_probe(mk, lambda q: bump.value(q), 0.0, dic, grid)
    amps = [0.02, 0.04, 0.06, 0.08, 0.10]
    gaps = []
    for amp in amps:
        Va = (lambda a_: lambda q: a_ * bump.value(q))(amp)
        gaps.append(rc.dtn_gap_probe(mk, Va, 0.0, dic, grid)["gap"])
    A = np.vstack([amps, np.ones(len(amps))]).T
    coef, resid, *_ = np.linalg.lstsq(A, np.array(gaps), rcond=None)
    ss = float(np.sum((gaps - np.mean(gaps)) ** 2))
    r2 = 1.0 - (float(resid[0]) if len(resid) else 0.0) / ss
    passed = (inside and same["gap"] <= same["error_bar"]
              and unit["gap"] >= 10.0 * unit["error_bar"] and r2 >= 0.99)
    return {
        "name": "10 dtn distinguishability",
        "passed": bool(passed),
        "bump_in_D": inside, "spatial_radius": dmax,
        "same_gap": same["gap"], "same_bar": same["error_bar"],
        "unit_gap": unit["gap"], "unit_bar": unit["error_bar"],
        "gap_over_bar": unit["gap_over_bar"],
        "amps": amps, "gaps": gaps, "r2": r2,
    }


def criterion_11_causal(preset, seed=0):
    mk = mt.minkowski(n=2)
    rep_f = geo.cut_once_check(mk, np.zeros(3), n_samples=preset["cut_samples"],
                               seed=seed, n_grid=preset["cut_grid_flat"])
    pm = mt.build_metric("perturbed_ultrastatic")
    rep_p = geo.cut_once_check(pm, [0.0, 0.1, 0.0],
                               n_samples=preset["cut_samples"], seed=seed,
                               n_grid=preset["cut_grid_perturbed"])
    # classify vs the flat closed form on sampled pairs
    rng = np.random.default_rng(seed + 1)
    m = preset["classify_pairs"]
    P = mk.sample_points(rng, m, lo=mk.chart_lo * 0.8, hi=mk.chart_hi * 0.8)
    Q = mk.sample_points(rng, m, lo=mk.chart_lo * 0.8, hi=mk.chart_hi * 0.8)
    mism = 0
    labels_ref, _ = geo._classify_flat(np.zeros(3), Q - P)
    for i in range(m):
        cc = geo.classify_causal(mk, P[i], Q[i])
        if cc.label != labels_ref[i]:
            mism += 1
    passed = (rep_f.max_components <= 1 and rep_p.max_components <= 1
              and rep_p.inconclusive == 0 and mism == 0)
    return {
        "name": "11 causal structure",
        "passed": bool(passed),
        "flat_max_components": rep_f.max_components,
        "flat_histogram": rep_f.histogram,
        "perturbed_max_components": rep_p.max_components,
        "perturbed_histogram": rep_p.histogram,
        "perturbed_inconclusive": rep_p.inconclusive,
        "classify_mismatches": mism,
    }


def criterion_12_determinism(preset, seed=0):
    """Byte-identity of a rerun: serialize a subset of the suite twice."""
    import json

    def run_once():
        sub = {
            "c3": criterion_3_curvature(PRESETS["quick"], seed=seed),
            "c5": criterion_5_radial(PRESETS["quick"], seed=seed),
        }
        return json.dumps(_canonical(sub), sort_keys=True)

    b1 = run_once()
    b2 = run_once()
    return {
        "name": "12 determinism",
        "passed": bool(b1 == b2),
        "bytes": len(b1),
    }


ALL_CRITERIA = [
    criterion_1_identity,
    criterion_2_riccati,
    criterion_3_curvature,
    criterion_4_hessian,
    criterion_5_radial,
    criterion_6_beam_residual,
    criterion_7_solver,
    criterion_8_gauge,
    criterion_9_point_value,
    criterion_10_dtn_gap,
    criterion_11_causal,
    criterion_12_determinism,
]


def run_all(preset_name="full", seed=0, only=None, progress=None):
    preset = PRESETS[preset_name]
    results = []
    for fn in ALL_CRITERIA:
        name = fn.__name__
        if only and not any(tag in name for tag in only):
            continue
        rep = fn(preset, seed=seed)
        results.append(rep)
        if progress:
            progress(rep)
    return results
