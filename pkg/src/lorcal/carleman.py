"""Carleman weight, the pointwise conjugation identity, and positivity bounds.

The identity under test decomposes the conjugated wave operator applied to a
test function v with weight exp(ell) and a free multiplier sigma:

    (e^ell Box(e^-ell v))^2 / 2 = S^2/2 + 2<grad ell, grad v>^2 + P + R + div B

with
    S  = Box v + q v,        q = -<grad ell, grad ell> - Box ell - sigma
    st = sigma + Box ell     (written sigma-tilde below)
    P  = st <dv,dv> + 2 Hess ell(dv,dv) + (-st <dl,dl> + 2 Hess ell(dl,dl)) v^2
    R  = (div((Box ell) grad ell) - sigma st + sigma^2/2 + (Box sigma)/2) v^2
    B  = -(2<dl,dv> + sigma v) grad v + v^2/2 grad sigma
         + (<dv,dv> - (Box ell + <dl,dl>) v^2) grad ell

Sign conventions: Box f = -|g|^(-1/2) d_j(|g|^(1/2) g^jk d_k f), so
div grad f = -Box f.  The left side is evaluated literally (jets of
e^{-ell} v), the right side term by term, and div B by the coordinate product
rule from the field jets -- v, sigma to second order, ell to third.

The weight is ell = F(r_p) with F(r) = 4 log(r - rho) + tau (r - rho)^2, and
the positivity checks run on the shell U = { r - rho > 2 sqrt(eps) } with the
multiplier rule sigma-tilde = -2 F'(r) psi_{K}(r) / r.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .convexity import psi_derivatives, psi_value, radial_provider
from .errors import CapabilityError, ConfigurationError, DomainError
from .geodesics import sample_exterior
from .geometry import christoffel_batch, christoffel_derivative_batch


# ---------------------------------------------------------------------------
# weight function

@dataclass(frozen=True)
class WeightParams:
    """Bare (rho, tau) pair for evaluating the weight profile alone."""

    rho: float
    tau: float


@dataclass(frozen=True)
class CarlemanConfig:
    rho: float
    eps: float
    tau: Optional[float] = None  # set by calibration when absent
    a_rho: Optional[float] = None
    K: float = 0.0
    sigma_rule: str = "comparison"  # sigma-tilde = -2 F' psi / r

    def __post_init__(self):
        if not (self.rho > 0):
            raise ConfigurationError("rho must be positive")
        if not (0 < self.eps < self.rho):
            raise ConfigurationError("eps must lie in (0, rho)")
        if self.tau is not None and not (self.tau > 1.0 / self.eps):
            raise ConfigurationError("tau must exceed 1/eps")

    @property
    def shell_lo(self):
        return self.rho + 2.0 * np.sqrt(self.eps)


def carleman_weight(params, r):
    """(ell, F', F'') of the weight at radius r; domain error for r <= rho.

    params may be a full CarlemanConfig or a bare WeightParams pair.
    """
    r = np.asarray(r, dtype=float)
    rho = params.rho
    tau = params.tau
    if tau is None:
        raise ConfigurationError("config.tau is unset; run calibration first")
    if np.any(r <= rho):
        raise DomainError("carleman weight needs r > rho")
    d = r - rho
    ell = 4.0 * np.log(d) + tau * d ** 2
    F1 = 4.0 / d + 2.0 * tau * d
    F2 = -4.0 / d ** 2 + 2.0 * tau
    return ell, F1, F2


def weight_derivatives(params, r):
    """F', F'', F''', F'''' of the weight profile at radius r."""
    d = np.asarray(r, dtype=float) - params.rho
    tau = params.tau
    return (4.0 / d + 2.0 * tau * d,
            -4.0 / d ** 2 + 2.0 * tau,
            8.0 / d ** 3,
            -24.0 / d ** 4)


# ---------------------------------------------------------------------------
# the pointwise identity, term by term

@dataclass
class CarlemanTerms:
    S: np.ndarray
    q_potential: np.ndarray
    sigma: np.ndarray
    sigma_tilde: np.ndarray
    P: np.ndarray
    R: np.ndarray
    B: np.ndarray
    div_B: np.ndarray
    lhs: np.ndarray
    rhs_sum: np.ndarray

    @property
    def residual(self):
        return self.lhs - self.rhs_sum

    @property
    def relative_residual(self):
        return np.abs(self.residual) / (np.abs(self.lhs) + np.abs(self.rhs_sum) + 1.0)


def _field_jets(fld, q, order):
    out = [np.asarray(fld.value(q)), np.asarray(fld.grad(q)), np.asarray(fld.hess(q))]
    if order >= 3:
        out.append(np.asarray(fld.third(q)))
    return out


def carleman_terms(model, ell_field, sigma_field, v_field, q, div_mode="jets",
                   fd_step=1e-4):
    """Evaluate every named piece of the identity at the points q (B, d).

    Requires second-order jets of v and sigma and third-order jets of ell
    (CapabilityError otherwise).  All metric data comes from the model's
    analytic suppliers.

    div_mode chooses how the derived derivatives (grad Box ell inside R and
    div B) are formed: "jets" expands them through the product rule from the
    field jets (exact for analytic suppliers), "fd" central-differences the
    assembled composite fields with step fd_step, which is the honest
    finite-difference variant whose residual decays O(h^2).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    B_, d = q.shape
    if div_mode == "jets":
        try:
            ell, dell, hell, tell = _field_jets(ell_field, q, 3)
        except NotImplementedError as e:
            raise CapabilityError(f"ell field lacks third derivatives: {e}") from e
    else:
        ell, dell, hell = _field_jets(ell_field, q, 2)
        tell = None
    v, dv, hv = _field_jets(v_field, q, 2)
    sg, dsg, hsg = _field_jets(sigma_field, q, 2)

    g = model.metric(q)
    ginv = np.linalg.inv(g)
    dg = model.dmetric(q)
    G = christoffel_batch(model, q)
    dG = christoffel_derivative_batch(model, q)
    dginv = -np.einsum("bia,blac,bcm->blim", ginv, dg, ginv, optimize=True)
    trG = np.einsum("bkkj->bj", G)  # Gamma^k_{kj}

    def pair(da, db):
        return np.einsum("bij,bi,bj->b", ginv, da, db)

    def raised(da):
        return np.einsum("bij,bj->bi", ginv, da)

    def box(dF, hF):
        # Box f = -g^{ij}(d_i d_j f - G^k_{ij} d_k f)
        cov = hF - np.einsum("bkij,bk->bij", G, dF)
        return -np.einsum("bij,bij->b", ginv, cov)

    def hess_form(dF, hF, Xa, Xb):
        cov = hF - np.einsum("bkij,bk->bij", G, dF)
        return np.einsum("bi,bij,bj->b", Xa, cov, Xb)

    grad_l = raised(dell)
    grad_v = raised(dv)
    grad_s = raised(dsg)
    ll = pair(dell, dell)
    lv = pair(dell, dv)
    vv = pair(dv, dv)
    box_l = box(dell, hell)
    box_v = box(dv, hv)
    box_s = box(dsg, hsg)

    sigma_tilde = sg + box_l
    q_pot = -ll - box_l - sg
    S = box_v + q_pot * v
    P = (sigma_tilde * vv + 2.0 * hess_form(dell, hell, grad_v, grad_v)
         + (-sigma_tilde * ll + 2.0 * hess_form(dell, hell, grad_l, grad_l)) * v ** 2)

    c1 = 2.0 * lv + sg * v
    c3 = vv - (box_l + ll) * v ** 2
    Bvec = (-c1[:, None] * grad_v + 0.5 * (v ** 2)[:, None] * grad_s
            + c3[:, None] * grad_l)

    if div_mode == "jets":
        # gradient of Box ell (needs third derivatives of ell)
        cov_l = hell - np.einsum("bkij,bk->bij", G, dell)
        dbox_l = -(np.einsum("baij,bij->ba", dginv, cov_l)
                   + np.einsum("bij,baij->ba", ginv,
                               tell
                               - np.einsum("bakij,bk->baij", dG, dell)
                               - np.einsum("bkij,bak->baij", G, hell)))

        # div B = d_j B^j + Gamma^k_{kj} B^j, with d_j B^j by the product rule
        def d_raised(dF, hF):
            # d_a (grad F)^j = d_a g^{jk} d_k F + g^{jk} d_a d_k F
            return (np.einsum("bajk,bk->baj", dginv, dF)
                    + np.einsum("bjk,bak->baj", ginv, hF))

        d_grad_v = d_raised(dv, hv)
        d_grad_s = d_raised(dsg, hsg)
        d_grad_l = d_raised(dell, hell)

        def d_pair(dA, hA, dBf, hBf):
            # d_a <grad A, grad B>
            return (np.einsum("baij,bi,bj->ba", dginv, dA, dBf)
                    + np.einsum("bij,bai,bj->ba", ginv, hA, dBf)
                    + np.einsum("bij,bi,baj->ba", ginv, dA, hBf))

        d_lv = d_pair(dell, hell, dv, hv)
        d_vv = d_pair(dv, hv, dv, hv)
        d_ll = d_pair(dell, hell, dell, hell)
        d_c1 = 2.0 * d_lv + v[:, None] * dsg + sg[:, None] * dv
        d_c3 = d_vv - (dbox_l + d_ll) * (v ** 2)[:, None] \
            - ((box_l + ll) * 2.0 * v)[:, None] * dv
        djBj = (-np.einsum("bj,bj->b", d_c1, grad_v)
                - c1 * np.einsum("bjj->b", d_grad_v)
                + np.einsum("bj,bj->b", v[:, None] * dv, grad_s)
                + 0.5 * v ** 2 * np.einsum("bjj->b", d_grad_s)
                + np.einsum("bj,bj->b", d_c3, grad_l)
                + c3 * np.einsum("bjj->b", d_grad_l))
        div_B = djBj + np.einsum("bj,bj->b", trG, Bvec)
    else:
        # composite-field differencing: B and Box ell are re-assembled at
        # shifted points and differenced directly
        def box_ell_at(qs):
            dl = np.asarray(ell_field.grad(qs))
            hl = np.asarray(ell_field.hess(qs))
            Gs = christoffel_batch(model, qs)
            gs = np.linalg.inv(model.metric(qs))
            cov = hl - np.einsum("bkij,bk->bij", Gs, dl)
            return -np.einsum("bij,bij->b", gs, cov)

        def B_at(qs):
            gs = np.linalg.inv(model.metric(qs))
            dl = np.asarray(ell_field.grad(qs))
            dvs = np.asarray(v_field.grad(qs))
            dss = np.asarray(sigma_field.grad(qs))
            vs = np.asarray(v_field.value(qs))
            ss = np.asarray(sigma_field.value(qs))
            gl_ = np.einsum("bij,bj->bi", gs, dl)
            gv_ = np.einsum("bij,bj->bi", gs, dvs)
            gs_ = np.einsum("bij,bj->bi", gs, dss)
            lv_ = np.einsum("bi,bi->b", dl, gv_)
            vv_ = np.einsum("bi,bi->b", dvs, gv_)
            ll_ = np.einsum("bi,bi->b", dl, gl_)
            bl_ = box_ell_at(qs)
            return (-(2.0 * lv_ + ss * vs)[:, None] * gv_
                    + 0.5 * (vs ** 2)[:, None] * gs_
                    + (vv_ - (bl_ + ll_) * vs ** 2)[:, None] * gl_)

        h = fd_step
        dbox_l = np.empty((B_, d))
        djBj = np.zeros(B_)
        for a in range(d):
            qp = q.copy(); qp[:, a] += h
            qm = q.copy(); qm[:, a] -= h
            dbox_l[:, a] = (box_ell_at(qp) - box_ell_at(qm)) / (2 * h)
            djBj += (B_at(qp)[:, a] - B_at(qm)[:, a]) / (2 * h)
        div_B = djBj + np.einsum("bj,bj->b", trG, Bvec)

    div_boxl_gradl = pair(dbox_l, dell) - box_l ** 2
    R = (div_boxl_gradl - sg * sigma_tilde + 0.5 * sg ** 2 + 0.5 * box_s) * v ** 2

    # literal left-hand side via jets of u = e^{-ell} v
    du = dv - v[:, None] * dell
    hu = (hv - dv[:, None, :] * dell[:, :, None] - dv[:, :, None] * dell[:, None, :]
          - v[:, None, None] * hell
          + v[:, None, None] * dell[:, :, None] * dell[:, None, :])
    conj = box(du, hu) * 1.0  # this is e^{ell} Box(e^{-ell} v) after factoring
    lhs = 0.5 * conj ** 2

    rhs = 0.5 * S ** 2 + 2.0 * lv ** 2 + P + R + div_B
    return CarlemanTerms(S=S, q_potential=q_pot, sigma=sg,
                         sigma_tilde=sigma_tilde, P=P, R=R, B=Bvec,
                         div_B=div_B, lhs=lhs, rhs_sum=rhs)

# ---------------------------------------------------------------------------
# flat radial calculus for the remainder term R

def _flat_radial_profiles(config, r, n_spatial):
    """All radial profiles entering R on a flat chart, where Box r = -n/r.

    Returns dict with sigma-tilde, sigma, Box ell, their radial derivatives,
    and the assembled R coefficient (R = coeff * v^2).
    """
    F1, F2, F3, F4 = weight_derivatives(config, r)
    psi, dpsi, d2psi = psi_derivatives(config.K, r)
    n = float(n_spatial)
    box_r = -n / r
    dbox_r = n / r ** 2
    d2box_r = -2.0 * n / r ** 3

    pr = psi / r
    dpr = dpsi / r - psi / r ** 2
    d2pr = d2psi / r - 2.0 * dpsi / r ** 2 + 2.0 * psi / r ** 3

    st = -2.0 * F1 * pr
    dst = -2.0 * (F2 * pr + F1 * dpr)
    d2st = -2.0 * (F3 * pr + 2.0 * F2 * dpr + F1 * d2pr)

    box_l = -F2 + F1 * box_r
    dbox_l = -F3 + F2 * box_r + F1 * dbox_r
    d2box_l = -F4 + F3 * box_r + 2.0 * F2 * dbox_r + F1 * d2box_r

    sg = st - box_l
    dsg = dst - dbox_l
    d2sg = d2st - d2box_l

    box_sg = -d2sg + dsg * box_r
    div_boxl_gradl = dbox_l * F1 - box_l ** 2
    R_coeff = div_boxl_gradl - sg * st + 0.5 * sg ** 2 + 0.5 * box_sg
    return {
        "F1": F1, "F2": F2, "psi": psi, "sigma_tilde": st, "sigma": sg,
        "box_ell": box_l, "R_coeff": R_coeff,
    }


def _grad_block(g_inv, hess_r, u, F1, F2, sigma_tilde):
    """Matrix A of the gradient part of P + 2<dl,dv>^2 in the partials of v:
    A = sigma-tilde g^{-1} + 2 F' g^{-1} Hess r g^{-1} + 2(F'' + F'^2) u u^T."""
    uu = u[:, :, None] * u[:, None, :]
    mid = np.einsum("bij,bjk,bkl->bil", g_inv, hess_r, g_inv)
    return (sigma_tilde[:, None, None] * g_inv + 2.0 * F1[:, None, None] * mid
            + 2.0 * (F2 + F1 ** 2)[:, None, None] * uu)


def positivity_check(model, p, config, V_bound=0.0, n_samples=2000, seed=0):
    """Verify the positivity bounds of the weighted conjugation on the shell U.

    Flat models: calibrates c_rho as the sampled sup of |R| / (lambda^2 v^2),
    sets a_rho = max(|V|_inf^2, c_rho), tau = a_rho / eps (iterated to a fixed
    point since R depends on tau), then verifies on fresh samples both

        P + 2<dl,dv>^2            >= 2 tau (r-rho)^2 lambda^2 v^2
        P + 2<dl,dv>^2 + R        >= 2 a_rho v^2

    with lambda = tau + (r-rho)^-2.  Margins are evaluated on random v-jets
    and, sharper, through the minimum eigenvalue of the jet quadratic form.
    Curved models verify the first inequality only (R needs fourth-order
    radial jets); the report records which bounds ran.
    """
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    flat = "flat" in model.tags
    n_spatial = model.n

    def draw_shell(m, rng_):
        ext = sample_exterior(model, p, 3 * m, rng_, r_frac=(0.05, 0.95))
        keep = ext["r"] > config.shell_lo
        q = ext["q"][keep][:m]
        if len(q) < max(8, m // 10):
            raise ConfigurationError(
                "shell U = {r > rho + 2 sqrt(eps)} nearly empty on this chart")
        return q, ext["w"][keep][:m]

    prov = radial_provider(model, p)

    def radial(q, w):
        r, u, hess, bad = prov.at(q, guess=w)
        return r[~bad], u[~bad], hess[~bad], q[~bad]

    # -- calibration of c_rho and tau (flat only)
    v_inf = float(V_bound)
    calib = {"V_inf": v_inf}
    if flat:
        tau = 1.01 * max(1.0, v_inf ** 2) / config.eps
        cfg = CarlemanConfig(config.rho, config.eps, tau=tau, K=config.K)
        qcal, wcal = draw_shell(n_samples, rng)
        rcal, _, _, _ = radial(qcal, wcal)
        history = []
        for _ in range(4):
            prof = _flat_radial_profiles(cfg, rcal, n_spatial)
            lam = cfg.tau + (rcal - cfg.rho) ** -2
            c_hat = max(1.0, float(np.max(np.abs(prof["R_coeff"]) / lam ** 2)))
            a_rho = max(v_inf ** 2, c_hat)
            tau_new = a_rho / config.eps
            history.append({"c_rho_hat": c_hat, "a_rho": a_rho, "tau": tau_new})
            if abs(tau_new - cfg.tau) <= 1e-9 * cfg.tau:
                cfg = CarlemanConfig(config.rho, config.eps, tau=tau_new, K=config.K)
                break
            cfg = CarlemanConfig(config.rho, config.eps, tau=tau_new, K=config.K)
        calib["iterations"] = history
        a_rho = history[-1]["a_rho"]
    else:
        tau = config.tau if config.tau is not None else 1.01 * max(1.0, v_inf ** 2) / config.eps
        cfg = CarlemanConfig(config.rho, config.eps, tau=tau, K=config.K)
        a_rho = config.a_rho if config.a_rho is not None else max(1.0, v_inf ** 2)
    calib["tau"] = cfg.tau
    calib["a_rho"] = a_rho

    # -- verification on fresh samples
    rng2 = np.random.default_rng(seed + 1)
    q, w = draw_shell(n_samples, rng2)
    r, u, hess_r, q = radial(q, w)
    g = model.metric(q)
    g_inv = np.linalg.inv(g)
    _, F1, F2 = carleman_weight(cfg, r)
    psi = psi_value(cfg.K, r)
    st = -2.0 * F1 * psi / r
    lam = cfg.tau + (r - cfg.rho) ** -2
    A = _grad_block(g_inv, hess_r, u, F1, F2, st)
    c_v = (-st + 2.0 * F2) * F1 ** 2  # coefficient of v^2 in P + 2<dl,dv>^2

    # random v-jets
    B = len(q)
    vval = rng2.normal(size=B)
    vgrad = rng2.normal(size=(B, model.dim))
    quad = c_v * vval ** 2 + np.einsum("bi,bij,bj->b", vgrad, A, vgrad)
    rhs510 = 2.0 * cfg.tau * (r - cfg.rho) ** 2 * lam ** 2 * vval ** 2
    m510 = quad - rhs510
    tol510 = 1e-9 * (np.abs(quad) + np.abs(rhs510) + 1.0)
    eig_all = np.linalg.eigvalsh(A)
    eigA = eig_all[:, 0]
    eig_scale = np.abs(eig_all[:, -1]) + np.abs(c_v) + 1.0
    c510 = c_v - 2.0 * cfg.tau * (r - cfg.rho) ** 2 * lam ** 2
    eig510 = np.minimum(eigA, c510)
    eig510_ok = bool(np.all(eig510 >= -1e-9 * (eig_scale + np.abs(c510))))
    samp510_ok = bool(np.all(m510 >= -tol510))
    report = {
        "p": p.tolist(), "rho": config.rho, "eps": config.eps,
        "K": cfg.K, "seed": int(seed), "n_samples": int(B),
        "calibration": calib,
        "ineq_5_10": {
            "checked": True,
            "worst_margin": float(np.min(m510)),
            "sampled_passed": samp510_ok,
            "min_jet_eigenvalue": float(np.min(eig510)),
            "eig_passed": eig510_ok,
            # pass means the inequality holds for every v-jet at every sampled
            # point, which is exactly the eigenvalue certificate
            "passed": samp510_ok and eig510_ok,
        },
    }
    if flat:
        prof = _flat_radial_profiles(cfg, r, n_spatial)
        Rc = prof["R_coeff"]
        mcomb = quad + Rc * vval ** 2 - 2.0 * a_rho * vval ** 2
        tolc = 1e-9 * (np.abs(quad) + np.abs(Rc) * vval ** 2 + 2 * a_rho * vval ** 2 + 1.0)
        ccomb = c_v + Rc - 2.0 * a_rho
        eigc = np.minimum(eigA, ccomb)
        eigc_ok = bool(np.all(eigc >= -1e-9 * (eig_scale + np.abs(ccomb))))
        sampc_ok = bool(np.all(mcomb >= -tolc))
        report["ineq_combined"] = {
            "checked": True,
            "worst_margin": float(np.min(mcomb)),
            "sampled_passed": sampc_ok,
            "min_jet_eigenvalue": float(np.min(eigc)),
            "eig_passed": eigc_ok,
            "passed": sampc_ok and eigc_ok,
        }
    else:
        report["ineq_combined"] = {
            "checked": False,
            "reason": "remainder R needs fourth-order radial jets (flat charts only)",
        }
    return report
