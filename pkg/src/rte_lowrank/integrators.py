"""One-step maps: GAP, PSI, BUG, and the dense reference solver.

Each low-rank step is built from substep flows for the angular factor L, the
spatial factor K, and (for PSI/BUG) the coefficient matrix S.  Substeps are
solved by exponential action by default, or by implicit Euler.

The exponential action is computed two ways behind one interface: the generic
Taylor ``expmv`` when the scaled substep norm is moderate, and exact
structure-exploiting propagators when the collision stiffness 1/eps^2 makes a
polynomial method infeasible.  On the uniform periodic grid D_x is circulant,
so the K flow decouples into r x r blocks under an FFT in space; the L flow
decouples into n_mu x n_mu blocks under an eigendecomposition of the
antisymmetric r x r matrix A_x.  Both routes agree to the requested tolerance
and are cross-checked in the test suite.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DegenerateStateError, NumericalFailureError, SizeCapError
from .model import assemble_substeps, full_operator, operator_K, operator_L
from .state import LowRankState
from .wlinalg import (
    expmv,
    unvec,
    vec,
    weighted_inner,
    weighted_mgs,
    weighted_norm,
)

log = logging.getLogger(__name__)

REFERENCE_SIZE_CAP = 200_000

_PREPASS_COND = 1e8
_SIGMA_WARN_RATIO = 1e-13


@dataclass
class StepConfig:
    """Time step size and substep-solver selection.

    ``exponential_method`` chooses how exp(dt A) v is evaluated for the
    substep operators: "expmv" (generic Taylor), "structured" (exact
    FFT/eigendecomposition solve), or "auto" (expmv while the scaled substep
    norm is below ``structured_threshold``, structured beyond).
    """

    dt: float
    substep_solver: str = "exponential"
    expmv_tol: float = 1e-10
    linear_solve_tol: float = 1e-10
    exponential_method: str = "auto"
    structured_threshold: float = 100.0
    basis_pinning: bool = False
    debug: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        for name in ("expmv_tol", "linear_solve_tol"):
            tol = getattr(self, name)
            if not 0.0 < tol < 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2), got {tol}")
        if self.substep_solver not in ("exponential", "implicit_euler"):
            raise ValueError(f"unknown substep solver {self.substep_solver!r}")
        if self.exponential_method not in ("auto", "expmv", "structured"):
            raise ValueError(
                f"unknown exponential method {self.exponential_method!r}")


@dataclass
class SubstepTrace:
    """Debug record written after each substep."""

    step_index: int
    substep: str
    pre_norm: float
    post_norm: float
    orth_defect: Optional[float]
    replaced_columns: tuple
    seed: int


# ---------------------------------------------------------------------------
# orthonormalization with backward-stability mitigation
# ---------------------------------------------------------------------------

def _orthonormalize(a, w, seed=0):
    """Weighted QR of a factor matrix, robust to extreme column grading.

    Columns are pre-scaled to unit w-norm inside weighted_mgs; when the
    condition estimate of the scaled columns exceeds 1e8, a Householder QR
    prepass supplies an orthonormal frame first and the triangular factor is
    absorbed into the result.
    """
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    norms = np.sqrt((w[:, None] * a * a).sum(axis=0))
    scale = norms.max(initial=0.0)
    live = norms > np.finfo(float).eps * scale

    use_prepass = False
    if scale > 0 and live.all():
        a_s = a / norms
        gram = weighted_inner(a_s, a_s, w)
        ev = np.linalg.eigvalsh(gram)
        if ev[0] <= 0 or ev[-1] / ev[0] > _PREPASS_COND**2:
            use_prepass = True
    elif scale > 0:
        use_prepass = True

    if not use_prepass:
        return weighted_mgs(a, w, seed=seed)

    sq = np.sqrt(w)
    q_h, r_h = np.linalg.qr(sq[:, None] * a, mode="reduced")
    result = weighted_mgs(q_h / sq[:, None], w, seed=seed)
    result.r_factor = result.r_factor @ r_h
    return result


def _pin_angular_basis(v1, model, seed=0):
    """Rebuild v1 so column 1 is proportional to 1 and column 2 to mu."""
    n_mu, r = v1.shape
    w = model.wmu
    candidates = [np.ones(n_mu)]
    if r >= 2:
        candidates.append(model.quad.nodes.astype(float))
    candidates.extend(v1[:, j] for j in range(r))

    kept = []
    for cand in candidates:
        if len(kept) == r:
            break
        v = cand.astype(float).copy()
        ref = weighted_norm(v, w)
        for _ in range(2):
            for q in kept:
                v -= float(np.dot(q, w * v)) * q
        nrm = weighted_norm(v, w)
        if ref > 0 and nrm > 1e-8 * ref:
            kept.append(v / nrm)
    rng = np.random.default_rng(seed)
    while len(kept) < r:
        v = rng.standard_normal(n_mu)
        for q in kept:
            v -= float(np.dot(q, w * v)) * q
        nrm = weighted_norm(v, w)
        if nrm > 1e-10:
            kept.append(v / nrm)
    return np.column_stack(kept)


# ---------------------------------------------------------------------------
# structured exact substep propagators
# ---------------------------------------------------------------------------

def _expm_batch(mats):
    with np.errstate(over="ignore", invalid="ignore"):
        out = sla.expm(mats)
    if not np.all(np.isfinite(out)):
        raise NumericalFailureError("matrix exponential overflowed")
    return out


def _propagate_k_structured(model, sub, dt, k_mat):
    """Exact K flow via the FFT diagonalization of the circulant D_x.

    Each spatial Fourier mode q obeys the r x r system
    dK_q/dt = K_q G_q with G_q = -(d_q/eps) B_mu + (1/eps^2)(C_mu - I),
    where d_q are the (purely imaginary) eigenvalues of D_x.
    """
    n_x = model.grid.n_x
    r = sub.b_mu.shape[0]
    eps = model.eps
    d_col = np.asarray(model.diff.d_x[:, [0]].todense()).ravel()
    d_eig = np.fft.fft(d_col)[: n_x // 2 + 1]

    gen = (
        -(dt / eps) * d_eig[:, None, None] * sub.b_mu[None, :, :]
        + (dt / eps**2) * (sub.c_mu - np.eye(r))[None, :, :]
    )
    prop = _expm_batch(gen)
    k_hat = np.fft.rfft(k_mat, axis=0)
    k_hat = np.einsum("qi,qij->qj", k_hat, prop)
    return np.fft.irfft(k_hat, n=n_x, axis=0)


def _propagate_l_structured(model, sub, dt, l_mat):
    """Exact L flow via the eigendecomposition of the antisymmetric A_x.

    With A_x = U diag(-i g) U^H, the transformed columns of L U decouple into
    n_mu x n_mu systems H_j = -(i g_j / eps) diag(mu) + (1/eps^2)(W^T - I).
    """
    n_mu = model.quad.n_mu
    eps = model.eps
    a_skew = 0.5 * (sub.a_x - sub.a_x.T)
    gam, u = np.linalg.eigh(1j * a_skew)

    coll = (model.w_mu_matrix.T - np.eye(n_mu)) / eps**2
    gen = (
        (-1j * dt / eps) * gam[:, None, None]
        * np.diag(model.quad.nodes)[None, :, :]
        + dt * coll[None, :, :]
    )
    prop = _expm_batch(gen)
    lt = l_mat.astype(complex) @ u
    lt = np.einsum("jab,bj->aj", prop, lt)
    return np.real(lt @ u.conj().T)


def _s_generator(model, sub, sign):
    """Dense r^2 x r^2 generator of dS/dt = sign * G(S).

    G(S) = -(1/eps) A_x S B_mu + (1/eps^2)(S C_mu - S).
    """
    r = sub.a_x.shape[0]
    eps = model.eps
    gen = (
        -np.kron(sub.b_mu.T, sub.a_x) / eps
        + (np.kron(sub.c_mu.T, np.eye(r)) - np.eye(r * r)) / eps**2
    )
    return sign * gen


# ---------------------------------------------------------------------------
# substep solvers
# ---------------------------------------------------------------------------

def _l_norm_bound(model, sub, dt):
    mu_max = float(np.max(np.abs(model.quad.nodes)))
    return abs(dt) * (np.linalg.norm(sub.a_x, 2) * mu_max / model.eps
                      + 2.0 / model.eps**2)


def _k_norm_bound(model, sub, dt):
    dx_norm = 1.0 / model.grid.dx
    return abs(dt) * (np.linalg.norm(sub.b_mu, 2) * dx_norm / model.eps
                      + 2.0 / model.eps**2)


def _implicit_euler_sparse(op, dt, b):
    lhs = (sp.identity(op.dim, format="csr") - dt * op.matrix).tocsc()
    sol = spla.spsolve(lhs, b)
    if not np.all(np.isfinite(sol)):
        raise NumericalFailureError(f"implicit solve with {op.name} failed")
    return sol


def _solve_l_substep(model, sub, cfg, l_mat):
    if cfg.substep_solver == "implicit_euler":
        op = operator_L(model, sub)
        return unvec(_implicit_euler_sparse(op, cfg.dt, vec(l_mat)), l_mat.shape)
    method = cfg.exponential_method
    if method == "auto":
        method = ("expmv" if _l_norm_bound(model, sub, cfg.dt)
                  <= cfg.structured_threshold else "structured")
    if method == "expmv":
        op = operator_L(model, sub)
        return unvec(expmv(op, cfg.dt, vec(l_mat), cfg.expmv_tol), l_mat.shape)
    return _propagate_l_structured(model, sub, cfg.dt, l_mat)


def _solve_k_substep(model, sub, cfg, k_mat):
    if cfg.substep_solver == "implicit_euler":
        op = operator_K(model, sub)
        return unvec(_implicit_euler_sparse(op, cfg.dt, vec(k_mat)), k_mat.shape)
    method = cfg.exponential_method
    if method == "auto":
        method = ("expmv" if _k_norm_bound(model, sub, cfg.dt)
                  <= cfg.structured_threshold else "structured")
    if method == "expmv":
        op = operator_K(model, sub)
        return unvec(expmv(op, cfg.dt, vec(k_mat), cfg.expmv_tol), k_mat.shape)
    return _propagate_k_structured(model, sub, cfg.dt, k_mat)


def _solve_s_substep(model, sub, cfg, s_mat, sign, context):
    gen = _s_generator(model, sub, sign)
    r = s_mat.shape[0]
    if cfg.substep_solver == "implicit_euler":
        sol = np.linalg.solve(np.eye(r * r) - cfg.dt * gen, vec(s_mat))
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            prop = sla.expm(cfg.dt * gen)
            sol = prop @ vec(s_mat)
    if not np.all(np.isfinite(sol)):
        raise NumericalFailureError(
            f"{context} overflowed (eps={model.eps:g}, dt={cfg.dt:g})"
        )
    return unvec(sol, (r, r))


# ---------------------------------------------------------------------------
# one-step maps
# ---------------------------------------------------------------------------

def _record(trace, step_index, substep, pre, post, replaced, seed,
            basis=None, weights=None):
    if trace is None:
        return
    defect = None
    if basis is not None:
        gram = weighted_inner(basis, basis, weights)
        defect = float(np.max(np.abs(gram - np.eye(basis.shape[1]))))
    trace.append(SubstepTrace(step_index, substep, float(pre), float(post),
                              defect, tuple(sorted(replaced)), seed))


def _finish_factor(qr, label, step):
    if len(qr.replaced_columns) == qr.q.shape[1]:
        raise DegenerateStateError(
            f"all {qr.q.shape[1]} columns of the {label} factor collapsed at "
            f"step {step}; the state has lost its rank entirely"
        )


def gap_step(model, state, cfg, trace=None, step_index=0):
    """One step of the Galerkin alternating-projection scheme.

    First the angular factor is predicted: L = V S^T is propagated with the
    spatial basis frozen and re-orthonormalized to give the new V.  Then the
    spatial factor K = X S (V_old^T diag(w) V_new) is propagated in the new
    angular basis and re-orthonormalized to give the new X and S.
    """
    sub0 = assemble_substeps(model, state.x, state.v)

    l0 = state.v @ state.s.T
    l1 = _solve_l_substep(model, sub0, cfg, l0)
    qr_v = _orthonormalize(l1, model.wmu, seed=cfg.seed)
    _finish_factor(qr_v, "angular", step_index)
    v1 = qr_v.q
    if cfg.basis_pinning:
        v1 = _pin_angular_basis(v1, model, seed=cfg.seed)
    _record(trace, step_index, "L", weighted_norm(l0, model.wmu),
            weighted_norm(l1, model.wmu), qr_v.replaced_columns, cfg.seed,
            basis=v1, weights=model.wmu)

    k0 = state.x @ state.s @ weighted_inner(state.v, v1, model.wmu)
    sub1 = assemble_substeps(model, state.x, v1)
    k1 = _solve_k_substep(model, sub1, cfg, k0)
    qr_x = _orthonormalize(k1, model.wx, seed=cfg.seed)
    _finish_factor(qr_x, "spatial", step_index)
    _record(trace, step_index, "K", weighted_norm(k0, model.wx),
            weighted_norm(k1, model.wx), qr_x.replaced_columns, cfg.seed,
            basis=qr_x.q, weights=model.wx)

    return LowRankState(qr_x.q, qr_x.r_factor, v1)


def psi_step(model, state, cfg, trace=None, step_index=0):
    """One Lie splitting step of the projector-splitting integrator.

    The L substep matches GAP's; the coefficient matrix is then integrated
    backward in time (the known instability source for collisional problems),
    and the spatial factor is propagated in the predicted angular basis.
    """
    sub0 = assemble_substeps(model, state.x, state.v)

    l0 = state.v @ state.s.T
    l1 = _solve_l_substep(model, sub0, cfg, l0)
    qr_v = _orthonormalize(l1, model.wmu, seed=cfg.seed)
    _finish_factor(qr_v, "angular", step_index)
    v1 = qr_v.q
    if cfg.basis_pinning:
        v1 = _pin_angular_basis(v1, model, seed=cfg.seed)
    _record(trace, step_index, "L", weighted_norm(l0, model.wmu),
            weighted_norm(l1, model.wmu), qr_v.replaced_columns, cfg.seed,
            basis=v1, weights=model.wmu)

    s_tilde = weighted_inner(v1, l1, model.wmu).T
    sub1 = assemble_substeps(model, state.x, v1)
    s_hat = _solve_s_substep(
        model, sub1, cfg, s_tilde, sign=-1.0,
        context="backward coefficient substep: the flow grows like "
                "exp(dt/eps^2) when integrated backward; expected for small "
                "eps -- prefer the gap or bug scheme there")
    _record(trace, step_index, "S", float(np.linalg.norm(s_tilde)),
            float(np.linalg.norm(s_hat)), (), cfg.seed)

    k0 = state.x @ s_hat
    k1 = _solve_k_substep(model, sub1, cfg, k0)
    qr_x = _orthonormalize(k1, model.wx, seed=cfg.seed)
    _finish_factor(qr_x, "spatial", step_index)
    _record(trace, step_index, "K", weighted_norm(k0, model.wx),
            weighted_norm(k1, model.wx), qr_x.replaced_columns, cfg.seed,
            basis=qr_x.q, weights=model.wx)

    return LowRankState(qr_x.q, qr_x.r_factor, v1)


def bug_step(model, state, cfg, trace=None, step_index=0):
    """One step of the basis-update-and-Galerkin scheme.

    Both basis predictions start from the same initial state: the L substep
    (spatial basis frozen) yields V_new, the K substep (angular basis frozen)
    yields X_new.  The coefficient matrix is then projected into the new
    bases and integrated forward with the Galerkin-reduced dynamics.
    """
    sub0 = assemble_substeps(model, state.x, state.v)

    l0 = state.v @ state.s.T
    l1 = _solve_l_substep(model, sub0, cfg, l0)
    qr_v = _orthonormalize(l1, model.wmu, seed=cfg.seed)
    _finish_factor(qr_v, "angular", step_index)
    v1 = qr_v.q
    if cfg.basis_pinning:
        v1 = _pin_angular_basis(v1, model, seed=cfg.seed)
    _record(trace, step_index, "L", weighted_norm(l0, model.wmu),
            weighted_norm(l1, model.wmu), qr_v.replaced_columns, cfg.seed,
            basis=v1, weights=model.wmu)

    k0 = state.x @ state.s
    k1 = _solve_k_substep(model, sub0, cfg, k0)
    qr_x = _orthonormalize(k1, model.wx, seed=cfg.seed)
    _finish_factor(qr_x, "spatial", step_index)
    x1 = qr_x.q
    _record(trace, step_index, "K", weighted_norm(k0, model.wx),
            weighted_norm(k1, model.wx), qr_x.replaced_columns, cfg.seed,
            basis=x1, weights=model.wx)

    sub1 = assemble_substeps(model, x1, v1)
    s0 = (weighted_inner(x1, state.x, model.wx) @ state.s
          @ weighted_inner(state.v, v1, model.wmu))
    s1 = _solve_s_substep(model, sub1, cfg, s0, sign=1.0,
                          context="Galerkin coefficient substep")
    _record(trace, step_index, "S", float(np.linalg.norm(s0)),
            float(np.linalg.norm(s1)), (), cfg.seed)

    return LowRankState(x1, s1, v1)


def reference_step(model, f, cfg, size_cap=REFERENCE_SIZE_CAP):
    """Advance the full value matrix by exp(dt A) with the system operator."""
    f = np.asarray(f, dtype=float)
    dim = model.grid.n_x * model.quad.n_mu
    if dim > size_cap:
        raise SizeCapError(
            f"reference solve needs a {dim}-dimensional operator, above the "
            f"cap of {size_cap}; reduce n_x * n_mu or use a low-rank scheme"
        )
    op = full_operator(model)
    sol = expmv(op, cfg.dt, vec(f), cfg.expmv_tol)
    return unvec(sol, f.shape)


def integrate(model, initial, scheme, cfg, n_steps, coalesce_reference=True,
              size_cap=REFERENCE_SIZE_CAP):
    """Apply the chosen one-step map n_steps times.

    Returns (final, traces) where final is a LowRankState for the low-rank
    schemes or a dense matrix for the reference, and traces is a list of
    SubstepTrace records when cfg.debug is set (otherwise None).

    Since the system is linear and autonomous, the reference flow may be
    coalesced into a single exponential over n_steps * dt (the default).
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    trace = [] if cfg.debug else None

    if scheme == "reference":
        f = np.asarray(initial, dtype=float)
        dim = model.grid.n_x * model.quad.n_mu
        if dim > size_cap:
            raise SizeCapError(
                f"reference solve needs a {dim}-dimensional operator, above "
                f"the cap of {size_cap}"
            )
        if coalesce_reference:
            op = full_operator(model)
            sol = expmv(op, cfg.dt * n_steps, vec(f), cfg.expmv_tol)
            return unvec(sol, f.shape), trace
        for i in range(n_steps):
            try:
                f = reference_step(model, f, cfg, size_cap=size_cap)
            except NumericalFailureError as err:
                raise NumericalFailureError(
                    f"step {i + 1}/{n_steps}: {err}") from err
        return f, trace

    try:
        step_fn = {"gap": gap_step, "psi": psi_step, "bug": bug_step}[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}") from None

    state = initial
    for i in range(n_steps):
        try:
            state = step_fn(model, state, cfg, trace=trace, step_index=i)
        except (NumericalFailureError, DegenerateStateError) as err:
            raise type(err)(f"step {i + 1}/{n_steps}: {err}") from err
        if cfg.debug:
            for basis, w, label in ((state.x, model.wx, "spatial"),
                                    (state.v, model.wmu, "angular")):
                gram = weighted_inner(basis, basis, w)
                defect = float(np.max(np.abs(gram - np.eye(basis.shape[1]))))
                if defect > 1e-10:
                    log.warning("step %d: %s basis defect %.2e exceeds 1e-10",
                                i + 1, label, defect)
            sig = np.linalg.svd(state.s, compute_uv=False)
            if sig[0] > 0 and sig[-1] / sig[0] < _SIGMA_WARN_RATIO:
                log.warning(
                    "step %d: coefficient spectrum nearly rank deficient "
                    "(sigma_min/sigma_max = %.2e); consider lowering the rank",
                    i + 1, sig[-1] / sig[0],
                )
    return state, trace
