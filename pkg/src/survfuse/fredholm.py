"""Grid and basis solvers for the two second-kind integral equations.

The first equation defines the refined indicator h*(t,w) entering both the
no-censoring canonical gradient and the doubly robust fusion gradient; the
second defines the hazard-perturbation eta*(t,w) of the efficient gradient.
Both are discretized per covariate value with left-Riemann increments of the
nuisance CDFs, giving either a dense linear system over the grid or a least
squares problem over Chebyshev-times-indicator basis coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InspectionWindow
from .errors import SolverError
from .numerics import StepFunctionOnGrid, TimeGrid, solve_dense_linear
from .nuisance import NuisanceBundle

S_FLOOR = 1e-6          # survival floor inside the eta assembly
GRID_RESIDUAL_TOL = 1e-8


@dataclass
class FredholmProblem:
    """One integral-equation instance at a fixed covariate value.

    ratio_weights = (dP1/dPi(w), dP0/dPi(w)) switches on the covariate-shift
    variant of the h* equation; the default (1,1) is the exchangeable case.
    """

    pi: float
    t_star: float
    window: InspectionWindow
    nuisances: NuisanceBundle
    covariate: np.ndarray
    grid: TimeGrid
    ratio_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.pi <= 1.0:
            raise ValueError("pi must lie in (0,1]")
        if self.t_star <= 0:
            raise ValueError("t_star must be positive")
        self.covariate = np.asarray(self.covariate, dtype=float).ravel()
        t_max = self.grid.points[-1]
        if t_max <= max(self.window.c_upper, self.t_star):
            raise ValueError("grid must extend beyond max(c_upper, t_star)")
        # the discontinuity point and window edges must sit on the grid
        self.grid = self.grid.augmented([self.t_star, self.window.c_lower,
                                         self.window.c_upper])


@dataclass
class FredholmSolution:
    """Solved values on the grid plus derived quantities and certification."""

    kind: str                       # "h_star" | "eta_star"
    values: StepFunctionOnGrid
    derived: StepFunctionOnGrid     # H*(.,w) for h, Theta*(.,w) for eta
    gamma_w: float | None
    residual_sup: float
    method: str                     # "grid-linear" | "basis-ls"
    mu_w: float = 0.0
    diagnostics: dict = field(default_factory=dict)


@dataclass
class BasisSolution:
    """Chebyshev-times-indicator expansion of h* or eta* for one covariate."""

    kind: str
    alpha: np.ndarray               # coefficients on b_j(t) 1(t > t*)
    gamma: np.ndarray               # coefficients on b_j(t) 1(t <= t*)
    degree: int
    t_star: float
    span: tuple[float, float]
    values: StepFunctionOnGrid
    derived: StepFunctionOnGrid
    gamma_w: float | None
    residual_sup: float
    method: str = "basis-ls"
    mu_w: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def evaluate(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.span
        if np.any(t < lo) or np.any(t > hi):
            raise ValueError("query time outside grid span")
        cheb = _chebyshev_matrix(t, self.span, self.degree)
        gt = t > self.t_star
        out = np.where(gt, self.alpha @ cheb, self.gamma @ cheb)
        return out


# ---------------------------------------------------------------------------
# basis machinery


def _chebyshev_matrix(points: np.ndarray, span: tuple[float, float], degree: int) -> np.ndarray:
    """Chebyshev polynomials T_0..T_degree on the rescaled span; (degree+1, B)."""
    lo, hi = span
    x = 2.0 * (np.asarray(points, dtype=float) - lo) / (hi - lo) - 1.0
    out = np.empty((degree + 1, x.size))
    out[0] = 1.0
    if degree >= 1:
        out[1] = x
    for j in range(2, degree + 1):
        out[j] = 2.0 * x * out[j - 1] - out[j - 2]
    return out


def basis_matrix(points: np.ndarray, t_star: float, span: tuple[float, float],
                 degree: int) -> np.ndarray:
    """Stacked basis rows: (b_j 1(t>t*); b_j 1(t<=t*)) of shape (2(degree+1), B)."""
    cheb = _chebyshev_matrix(points, span, degree)
    gt = (np.asarray(points) > t_star).astype(float)
    return np.vstack([cheb * gt, cheb * (1.0 - gt)])


# ---------------------------------------------------------------------------
# shared assembly pieces (batched over covariate rows; leading axis n_w)


def _suffix_exclusive(v: np.ndarray) -> np.ndarray:
    """sum_{k > j} v_k along the last axis."""
    out = np.cumsum(v[..., ::-1], axis=-1)[..., ::-1]
    return out - v


def _prefix_exclusive(v: np.ndarray) -> np.ndarray:
    """sum_{k < j} v_k along the last axis."""
    return np.cumsum(v, axis=-1) - v


def h_center_weights(dF: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tail sums R_j = sum_{k>j} Q_k and centering weights c_m for the h system."""
    R = _suffix_exclusive(Q)
    cumF = np.cumsum(dF, axis=-1)
    c = R * cumF + _suffix_exclusive(dF * R)
    return R, c


def h_basis_design(PhiT: np.ndarray, dF: np.ndarray, Q: np.ndarray, pi: float,
                   r1: np.ndarray, r0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Design tensors for the basis least squares; returns (D, c).

    PhiT: (J, B) shared basis rows; dF, Q: (n_w, B); r1, r0: (n_w,).
    D has shape (n_w, J, B): row i holds the equation values L_j generated by
    basis function i at all grid points j.
    """
    R, c = h_center_weights(dF, Q)
    V = dF[:, None, :] * PhiT[None, :, :]                     # (n_w, J, B)
    PC = np.cumsum(V, axis=-1)                                # inclusive prefix
    TS = _suffix_exclusive(V * R[:, None, :])
    k = np.einsum("wjb,wb->wj", V, c)
    D = (pi * r1[:, None, None] * PhiT[None, :, :]
         + (1.0 - pi) * r0[:, None, None] * (R[:, None, :] * PC + TS - k[:, :, None]))
    return D, c


def eta_basis_design(PhiT: np.ndarray, dLam: np.ndarray, Qs: np.ndarray,
                     diag: np.ndarray, pi: float) -> np.ndarray:
    """Design for the eta system; diag = Gamma~ * S~ at grid points, (n_w, B)."""
    Rs = _suffix_exclusive(Qs)
    V = dLam[:, None, :] * PhiT[None, :, :]
    PC = np.cumsum(V, axis=-1)
    TS = _suffix_exclusive(V * Rs[:, None, :])
    D = (pi * diag[:, None, :] * PhiT[None, :, :]
         + (1.0 - pi) * (Rs[:, None, :] * PC + TS))
    return D


def lstsq_batch(D: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve min ||D^T theta - b|| per leading row; returns (coefs, residual_sup).

    Orthogonal factorization per row: the indicator-split polynomial designs
    are far too ill-conditioned for normal equations (the short branch's
    restricted polynomials are nearly collinear), with minimum-norm behavior
    on rank deficiency for free.
    """
    coefs = np.stack([np.linalg.lstsq(D[i].T, b[i], rcond=None)[0]
                      for i in range(D.shape[0])])
    resid = np.einsum("wj,wjb->wb", coefs, D) - b
    return coefs, np.max(np.abs(resid), axis=-1)


# ---------------------------------------------------------------------------
# per-problem nuisance arrays


def _h_arrays(problem: FredholmProblem) -> dict:
    pts = problem.grid.points
    w = problem.covariate
    ev = problem.nuisances.event
    insp = problem.nuisances.inspection
    F = ev.cdf(pts, w)
    Ft = np.clip(F, ev.zeta, 1.0 - ev.zeta)
    G = insp.cdf(pts, w)
    dF = np.diff(F, prepend=0.0)
    dG = np.diff(G, prepend=0.0)
    Q = dG / (Ft * (1.0 - Ft))
    mu = ev.mu(problem.t_star, w)
    b = (pts > problem.t_star).astype(float) - mu
    return {"pts": pts, "F": F, "dF": dF, "Q": Q, "mu": mu, "b": b}


def _eta_arrays(problem: FredholmProblem) -> dict:
    pts = problem.grid.points
    w = problem.covariate
    ev = problem.nuisances.event
    cens = problem.nuisances.censoring
    insp = problem.nuisances.inspection
    S = ev.survival(pts, w)
    F = ev.cdf(pts, w)
    Ft = np.clip(F, ev.zeta, 1.0 - ev.zeta)
    Lam = ev.cum_hazard(pts, w)
    dLam = np.diff(Lam, prepend=0.0)
    G = insp.cdf(pts, w)
    dG = np.diff(G, prepend=0.0)
    Qs = S * dG / Ft
    gam = np.maximum(cens.gamma(pts, w), cens.floor)
    diag = gam * np.maximum(S, S_FLOOR)
    s_star = ev.mu(problem.t_star, w)
    b = -s_star * (pts <= problem.t_star).astype(float)
    return {"pts": pts, "S": S, "dLam": dLam, "Qs": Qs, "diag": diag,
            "s_star": s_star, "b": b}


# ---------------------------------------------------------------------------
# public solvers


def solve_h_grid(problem: FredholmProblem) -> FredholmSolution:
    """Dense linear-system solve of the h* equation on the grid."""
    arr = _h_arrays(problem)
    dF, Q, b = arr["dF"], arr["Q"], arr["b"]
    r1, r0 = problem.ratio_weights
    R, c = h_center_weights(dF[None, :], Q[None, :])
    R, c = R[0], c[0]
    # R is nonincreasing, so R[max(j,m)] = min(R_j, R_m)
    Rmax = np.minimum(R[:, None], R[None, :])
    A = (1.0 - problem.pi) * r0 * (dF[None, :] * (Rmax - c[None, :]))
    A[np.diag_indices_from(A)] += problem.pi * r1
    diagnostics: dict = {}
    try:
        h = solve_dense_linear(A, b, diagnostics)
    except Exception as exc:
        raise SolverError(f"h* grid solve failed at w={problem.covariate}: {exc}") from exc
    residual = float(np.max(np.abs(A @ h - b)))
    if residual > GRID_RESIDUAL_TOL * max(1.0, float(np.max(np.abs(b)))):
        raise SolverError(
            f"h* residual {residual:.3e} above tolerance; diagnostics={diagnostics}")
    H = _prefix_exclusive(h * dF)
    gamma_w = float((1.0 - problem.pi) * np.sum(h * dF * c))
    return FredholmSolution(
        kind="h_star",
        values=StepFunctionOnGrid(problem.grid, h),
        derived=StepFunctionOnGrid(problem.grid, H),
        gamma_w=gamma_w,
        residual_sup=residual,
        method="grid-linear",
        mu_w=arr["mu"],
        diagnostics=diagnostics,
    )


def solve_h_basis(problem: FredholmProblem, degree: int = 10) -> BasisSolution:
    """Least-squares basis solve of the h* equation (2(degree+1) functions)."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    arr = _h_arrays(problem)
    span = problem.grid.span
    PhiT = basis_matrix(arr["pts"], problem.t_star, span, degree)
    r1, r0 = problem.ratio_weights
    D, c = h_basis_design(PhiT, arr["dF"][None, :], arr["Q"][None, :], problem.pi,
                          np.array([r1]), np.array([r0]))
    coefs, resid = lstsq_batch(D, arr["b"][None, :])
    coefs, residual = coefs[0], float(resid[0])
    h = coefs @ PhiT
    H = _prefix_exclusive(h * arr["dF"])
    gamma_w = float((1.0 - problem.pi) * np.sum(h * arr["dF"] * c[0]))
    J = degree + 1
    return BasisSolution(
        kind="h_star",
        alpha=coefs[:J], gamma=coefs[J:], degree=degree,
        t_star=problem.t_star, span=span,
        values=StepFunctionOnGrid(problem.grid, h),
        derived=StepFunctionOnGrid(problem.grid, H),
        gamma_w=gamma_w,
        residual_sup=residual,
        mu_w=arr["mu"],
    )


def solve_eta_grid(problem: FredholmProblem) -> FredholmSolution:
    """Dense linear-system solve of the eta* equation on the grid."""
    arr = _eta_arrays(problem)
    dLam, Qs, diag, b = arr["dLam"], arr["Qs"], arr["diag"], arr["b"]
    Rs = _suffix_exclusive(Qs[None, :])[0]
    Rmax = np.minimum(Rs[:, None], Rs[None, :])
    A = (1.0 - problem.pi) * (dLam[None, :] * Rmax)
    A[np.diag_indices_from(A)] += problem.pi * diag
    diagnostics: dict = {}
    try:
        eta = solve_dense_linear(A, b, diagnostics)
    except Exception as exc:
        raise SolverError(f"eta* grid solve failed at w={problem.covariate}: {exc}") from exc
    residual = float(np.max(np.abs(A @ eta - b)))
    if residual > GRID_RESIDUAL_TOL * max(1.0, float(np.max(np.abs(b)))):
        raise SolverError(
            f"eta* residual {residual:.3e} above tolerance; diagnostics={diagnostics}")
    Theta = _prefix_exclusive(eta * dLam)
    return FredholmSolution(
        kind="eta_star",
        values=StepFunctionOnGrid(problem.grid, eta),
        derived=StepFunctionOnGrid(problem.grid, Theta),
        gamma_w=None,
        residual_sup=residual,
        method="grid-linear",
        mu_w=arr["s_star"],
        diagnostics=diagnostics,
    )


def solve_eta_basis(problem: FredholmProblem, degree: int = 10) -> BasisSolution:
    """Least-squares basis solve of the eta* equation."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    arr = _eta_arrays(problem)
    span = problem.grid.span
    PhiT = basis_matrix(arr["pts"], problem.t_star, span, degree)
    D = eta_basis_design(PhiT, arr["dLam"][None, :], arr["Qs"][None, :],
                         arr["diag"][None, :], problem.pi)
    # precondition: the raw rows decay with Gamma*S, leaving the fit blind to
    # the tail; normalizing by the (capped) diagonal scale restores control
    dscale = np.maximum(arr["diag"], 1e-3)[None, :]
    coefs, _ = lstsq_batch(D / dscale[:, None, :], arr["b"][None, :] / dscale)
    resid_rows = np.einsum("j,jb->b", coefs[0], D[0]) - arr["b"]
    coefs, residual = coefs[0], float(np.max(np.abs(resid_rows)))
    eta = coefs @ PhiT
    Theta = _prefix_exclusive(eta * arr["dLam"])
    J = degree + 1
    return BasisSolution(
        kind="eta_star",
        alpha=coefs[:J], gamma=coefs[J:], degree=degree,
        t_star=problem.t_star, span=span,
        values=StepFunctionOnGrid(problem.grid, eta),
        derived=StepFunctionOnGrid(problem.grid, Theta),
        gamma_w=None,
        residual_sup=residual,
        mu_w=arr["s_star"],
    )


def kernel_K(t: float, s: float, problem: FredholmProblem,
             n_refine: int = 32768) -> float:
    """Kernel of the h* equation in second-kind form, by window quadrature.

    The window point set is refined to n_refine points because inspection
    densities may have unbounded derivatives at the window edges.
    """
    lo, hi = problem.grid.span
    if not (lo <= t <= hi and lo <= s <= hi):
        raise ValueError("t and s must lie within the grid span")
    if problem.pi == 1.0:
        return 0.0
    w = problem.covariate
    ev = problem.nuisances.event
    insp = problem.nuisances.inspection
    win = problem.window
    pts = problem.grid.points
    mask = (pts >= win.c_lower) & (pts <= win.c_upper)
    cpts = np.union1d(pts[mask], [min(max(t, win.c_lower), win.c_upper),
                                  min(max(s, win.c_lower), win.c_upper)])
    if n_refine > cpts.size:
        cpts = np.union1d(cpts, np.linspace(win.c_lower, win.c_upper, n_refine))
    g = insp.density(cpts, w)
    F = np.clip(ev.cdf(cpts, w), ev.zeta, 1.0 - ev.zeta)

    def _chopped(lo, hi, integrand):
        # integrate over [lo, hi] by restricting the point set, so the
        # indicator edges never fall inside a trapezoid cell
        if hi <= lo:
            return 0.0
        sel = (cpts >= lo) & (cpts <= hi)
        return float(np.trapezoid(integrand[sel], cpts[sel]))

    int1 = _chopped(max(s, win.c_lower), min(t, win.c_upper), g / (1.0 - F))
    int2 = _chopped(max(s, t, win.c_lower), win.c_upper, g / F)
    f_s = float(ev.density(np.asarray([s]), w)[0])
    return (1.0 - problem.pi) / problem.pi * f_s * (int1 - int2)


def evaluate_solution(sol, t: float) -> float:
    """Nearest-neighbor (grid) or analytic (basis) evaluation; strict 1(t>t*)."""
    if isinstance(sol, BasisSolution):
        return float(sol.evaluate(np.asarray([t]))[0])
    return float(sol.values(t))


# ---------------------------------------------------------------------------
# exact reduced solves, batched over covariate values
#
# Off the inspection window the kernel columns vanish (Q_k = 0), so rows of
# the dense system coincide within maximal index runs delimited by c_l, c_u,
# and t*. Deduplicating those runs gives a small system whose expanded
# solution is identical to the full-grid solve, at a fraction of the cost.
# Used by the estimator hot path; solve_h_grid/solve_eta_grid stay on the
# full assembly for certification.


@dataclass(frozen=True)
class GridPartition:
    """Window indices and constant-run segments for one (grid, window, t*)."""

    win_idx: np.ndarray          # indices with c_l < u_j <= c_u
    segments: tuple              # (start, stop) inclusive index runs off-window

    @classmethod
    def build(cls, points: np.ndarray, window: InspectionWindow, t_star: float) -> "GridPartition":
        inwin = (points > window.c_lower) & (points <= window.c_upper)
        win_idx = np.flatnonzero(inwin)
        out_idx = np.flatnonzero(~inwin)
        segs = []
        if out_idx.size:
            above = out_idx > (win_idx[-1] if win_idx.size else -1)
            gt = points[out_idx] > t_star
            key = above.astype(int) * 2 + gt.astype(int)
            brk = np.flatnonzero(np.diff(key) != 0) + 1
            brk = np.concatenate([[0], brk, [out_idx.size]])
            for a, b in zip(brk[:-1], brk[1:]):
                segs.append((int(out_idx[a]), int(out_idx[b - 1])))
        return cls(win_idx, tuple(segs))


def h_system_residual(h: np.ndarray, dF: np.ndarray, Q: np.ndarray, b: np.ndarray,
                      pi: float, r1: np.ndarray, r0: np.ndarray) -> np.ndarray:
    """Full-grid equation residuals L_j for candidate h, in O(B) per row."""
    H = _prefix_exclusive(h * dF)
    T = _suffix_exclusive(Q * H)
    G = np.sum(dF * T, axis=-1)
    return (pi * r1[:, None] * h + (1.0 - pi) * r0[:, None] * (T - G[:, None]) - b)


def solve_h_reduced_batch(part: GridPartition, dF: np.ndarray, Q: np.ndarray,
                          b: np.ndarray, pi: float, r1: np.ndarray,
                          r0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched exact solve of the h system in O(B) per covariate row.

    Differencing consecutive window rows of the dense system leaves a forward
    recurrence in the running pair (H, tail sum); the solution is affine in
    the two coupling scalars (the centering sum and the full window tail),
    which two end conditions pin down. Returns (h (n_w,B), gamma_w (n_w,)).
    """
    nw, B = dF.shape
    widx = part.win_idx
    if widx.size == 0:
        raise SolverError("no grid cells inside the inspection window")
    w0 = widx[0]
    wK = widx[-1]
    below = np.arange(B) < w0
    above = np.arange(B) > wK

    denom = pi * r1                      # (nw,)
    cpl = (1.0 - pi) * r0                # coefficient of (T_j - G)

    # affine channels [const, G, Tfull] for every running scalar
    def aff(const=0.0, g=0.0, t=0.0):
        out = np.zeros((nw, 3))
        out[:, 0] = const
        out[:, 1] = g
        out[:, 2] = t
        return out

    # below-window points: h_m = (b_m - cpl*(Tfull - G)) / denom
    hb_const = b[:, below] / denom[:, None]
    hb_g = np.broadcast_to((cpl / denom)[:, None], hb_const.shape)
    hb_t = -hb_g
    dF_below = dF[:, below]
    H0 = np.stack([np.sum(dF_below * hb_const, axis=-1),
                   np.sum(dF_below * hb_g, axis=-1),
                   np.sum(dF_below * hb_t, axis=-1)], axis=-1)

    Qw = Q[:, widx]
    dFw = dF[:, widx]
    bw = b[:, widx]
    K = widx.size

    h_ch = np.empty((nw, 3, K))
    H_cur = H0
    T_cur = aff(t=1.0)                   # T below the window equals Tfull
    G_out = aff()
    # G accumulates dF_l * T_l; the below-window part contributes Tfull * sum(dF)
    G_out[:, 2] += np.sum(dF_below, axis=-1)

    gain = cpl / denom
    h_prev = None
    dF_prev = None
    for r in range(K):
        if r > 0:
            H_cur = H_cur + h_prev * dF_prev[:, None]
        T_cur = T_cur - Qw[:, r][:, None] * H_cur
        # h_j = (b_j - cpl*(T_j - G))/denom, expanded over the channels
        h_r = -gain[:, None] * T_cur
        h_r[:, 0] += bw[:, r] / denom
        h_r[:, 1] += gain
        h_ch[:, :, r] = h_r
        G_out = G_out + dFw[:, r][:, None] * T_cur
        h_prev = h_r
        dF_prev = dFw[:, r]

    # end conditions: T_end = 0 and G_out = G
    # unknowns z = (G, Tfull); rows: T_cur(z) = 0; G_out(z) - z_G = 0
    M = np.empty((nw, 2, 2))
    rhs = np.empty((nw, 2))
    M[:, 0, 0] = T_cur[:, 1]
    M[:, 0, 1] = T_cur[:, 2]
    rhs[:, 0] = -T_cur[:, 0]
    M[:, 1, 0] = G_out[:, 1] - 1.0
    M[:, 1, 1] = G_out[:, 2]
    rhs[:, 1] = -G_out[:, 0]
    try:
        z = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"degenerate coupling system in reduced h solve: {exc}") from exc
    zg, zt = z[:, 0], z[:, 1]

    h = np.empty((nw, B))
    h[:, below] = hb_const + hb_g * zg[:, None] + hb_t * zt[:, None]
    h[:, widx] = h_ch[:, 0, :] + zg[:, None] * h_ch[:, 1, :] + zt[:, None] * h_ch[:, 2, :]
    ha = (b[:, above] + (cpl * zg)[:, None]) / denom[:, None]
    h[:, above] = ha

    resid = h_system_residual(h, dF, Q, b, pi, r1, r0)
    resid_sup = np.max(np.abs(resid), axis=-1)
    bad = resid_sup > GRID_RESIDUAL_TOL * np.maximum(1.0, np.max(np.abs(b), axis=-1))
    if np.any(bad):
        # rare conditioning trouble: redo the offending rows with the dense path
        hd, gd = solve_h_reduced_dense(part, dF[bad], Q[bad], b[bad], pi, r1[bad], r0[bad])
        h[bad] = hd
        zg = zg.copy()
        zg[bad] = gd / (1.0 - pi) if pi < 1.0 else 0.0
    gamma_w = (1.0 - pi) * zg
    return h, gamma_w


def solve_h_reduced_dense(part: GridPartition, dF: np.ndarray, Q: np.ndarray,
                          b: np.ndarray, pi: float, r1: np.ndarray,
                          r0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched exact solve of the h system via the deduplicated dense matrix.

    dF, Q, b: (n_w, B) nuisance increments and targets; r1, r0: (n_w,) ratio
    weights. Equivalent to solve_h_grid row-wise.
    """
    nw, B = dF.shape
    R, c = h_center_weights(dF, Q)
    widx = part.win_idx
    K = widx.size
    S = len(part.segments)
    n_red = K + S
    A = np.zeros((nw, n_red, n_red))
    bred = np.empty((nw, n_red))

    cs_dF = np.cumsum(dF, axis=-1)
    cs_dFR = np.cumsum(dF * R, axis=-1)
    cs_dFc = np.cumsum(dF * c, axis=-1)

    def seg_sum(cs, s):
        lo, hi = part.segments[s]
        left = cs[:, lo - 1] if lo > 0 else 0.0
        return cs[:, hi] - left

    Rw = R[:, widx]
    cw = c[:, widx]
    dFw = dF[:, widx]
    coef = (1.0 - pi) * r0            # (n_w,)

    # window rows x window cols
    Rmax = np.minimum(Rw[:, :, None], Rw[:, None, :])
    A[:, :K, :K] = coef[:, None, None] * (dFw[:, None, :] * (Rmax - cw[:, None, :]))
    bred[:, :K] = b[:, widx]

    seg_W = np.stack([seg_sum(cs_dF, s) for s in range(S)], axis=-1) if S else np.zeros((nw, 0))
    seg_TR = np.stack([seg_sum(cs_dFR, s) for s in range(S)], axis=-1) if S else np.zeros((nw, 0))
    seg_k = np.stack([seg_sum(cs_dFc, s) for s in range(S)], axis=-1) if S else np.zeros((nw, 0))
    first_win = widx[0] if K else B

    for s, (lo, hi) in enumerate(part.segments):
        below = hi < first_win
        rep = lo
        bred[:, K + s] = b[:, rep]
        if below:
            # window rows: every segment index m <= j, so R_max = R_j
            A[:, :K, K + s] = coef[:, None] * (Rw * seg_W[:, s][:, None] - seg_k[:, s][:, None])
            # segment row x window cols: every window m > rep, so R_max = R_m
            A[:, K + s, :K] = coef[:, None] * (dFw * (Rw - cw))
        else:
            A[:, :K, K + s] = coef[:, None] * (seg_TR[:, s] - seg_k[:, s])[:, None]
            A[:, K + s, :K] = coef[:, None] * (-dFw * cw)
        for s2, (lo2, hi2) in enumerate(part.segments):
            if hi2 < lo:      # column segment before the row rep: R_max = R at rep
                val = R[:, rep] * seg_W[:, s2] - seg_k[:, s2]
            else:             # at/after the row segment: R_max = R_m per column
                val = seg_TR[:, s2] - seg_k[:, s2]
            A[:, K + s, K + s2] = coef * val

    diag_term = pi * r1
    idx = np.arange(n_red)
    A[:, idx, idx] += diag_term[:, None]

    try:
        x = np.linalg.solve(A, bred[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"reduced h system singular: {exc}") from exc
    resid = np.max(np.abs(np.einsum("wij,wj->wi", A, x) - bred), axis=-1)
    if np.any(resid > GRID_RESIDUAL_TOL * np.maximum(1.0, np.max(np.abs(bred), axis=-1))):
        raise SolverError(f"reduced h residual too large: {resid.max():.3e}")

    h = np.empty((nw, B))
    if K:
        h[:, widx] = x[:, :K]
    for s, (lo, hi) in enumerate(part.segments):
        h[:, lo:hi + 1] = x[:, K + s][:, None]
    gamma_w = (1.0 - pi) * np.sum(h * dF * c, axis=-1)
    return h, gamma_w


def eta_system_residual(eta: np.ndarray, dLam: np.ndarray, Qs: np.ndarray,
                        diag: np.ndarray, b: np.ndarray, pi: float) -> np.ndarray:
    """Full-grid equation residuals of the eta system, O(B) per row."""
    Theta = _prefix_exclusive(eta * dLam)
    T = _suffix_exclusive(Qs * Theta)
    return pi * diag * eta + (1.0 - pi) * T - b


def solve_eta_reduced_batch(part: GridPartition, dLam: np.ndarray, Qs: np.ndarray,
                            diag: np.ndarray, b: np.ndarray, pi: float) -> np.ndarray:
    """Batched exact solve of the eta system in O(B) per covariate row.

    Same forward-recurrence structure as the h system but with one coupling
    scalar (the full window tail sum) and no centering term.
    """
    nw, B = dLam.shape
    widx = part.win_idx
    if widx.size == 0:
        raise SolverError("no grid cells inside the inspection window")
    w0 = widx[0]
    wK = widx[-1]
    below = np.arange(B) < w0
    above = np.arange(B) > wK
    pgd = pi * diag
    cpl = 1.0 - pi

    # channels [const, Tfull]
    eb_const = b[:, below] / pgd[:, below]
    eb_t = np.broadcast_to(-cpl / pgd[:, below], eb_const.shape) if cpl else np.zeros_like(eb_const)
    dL_below = dLam[:, below]
    Th0 = np.stack([np.sum(dL_below * eb_const, axis=-1),
                    np.sum(dL_below * eb_t, axis=-1)], axis=-1)

    K = widx.size
    qw = Qs[:, widx]
    dw = dLam[:, widx]
    bw = b[:, widx]
    pgw = pgd[:, widx]

    e_ch = np.empty((nw, 2, K))
    Th_cur = Th0
    T_cur = np.zeros((nw, 2))
    T_cur[:, 1] = 1.0
    e_prev = None
    d_prev = None
    for r in range(K):
        if r > 0:
            Th_cur = Th_cur + e_prev * d_prev[:, None]
        T_cur = T_cur - qw[:, r][:, None] * Th_cur
        e_r = -(cpl / pgw[:, r])[:, None] * T_cur
        e_r[:, 0] += bw[:, r] / pgw[:, r]
        e_ch[:, :, r] = e_r
        e_prev = e_r
        d_prev = dw[:, r]

    # end condition: T at the last window index must vanish
    denom_t = T_cur[:, 1]
    degenerate = np.abs(denom_t) < 1e-300
    zt = np.where(degenerate, 0.0, -T_cur[:, 0] / np.where(degenerate, 1.0, denom_t))

    eta = np.empty((nw, B))
    eta[:, below] = eb_const + eb_t * zt[:, None]
    eta[:, widx] = e_ch[:, 0, :] + zt[:, None] * e_ch[:, 1, :]
    eta[:, above] = b[:, above] / pgd[:, above]

    resid = eta_system_residual(eta, dLam, Qs, diag, b, pi)
    resid_sup = np.max(np.abs(resid), axis=-1)
    bad = resid_sup > GRID_RESIDUAL_TOL * np.maximum(1.0, np.max(np.abs(b), axis=-1))
    if np.any(bad):
        eta[bad] = solve_eta_reduced_dense(part, dLam[bad], Qs[bad], diag[bad],
                                           b[bad], pi)
    return eta


def solve_eta_reduced_dense(part: GridPartition, dLam: np.ndarray, Qs: np.ndarray,
                            diag: np.ndarray, b: np.ndarray, pi: float) -> np.ndarray:
    """Batched exact solve of the eta system via the deduplicated dense matrix.

    Window values solve a (K+2) system with the two scalars Theta(c_l) and
    the full window coupling integral; off-window values follow in closed
    form from the diagonal rows.
    """
    nw, B = dLam.shape
    widx = part.win_idx
    K = widx.size
    first_win = widx[0] if K else B
    below = np.arange(B) < first_win
    above = ~below
    if K:
        above = np.arange(B) > widx[-1]

    q = Qs[:, widx]
    d = dLam[:, widx]
    dg = diag[:, widx]
    Rq = np.cumsum(q[:, ::-1], axis=-1)[:, ::-1] - q     # sum_{k>pos} q_k
    qtot = np.sum(q, axis=-1)

    pgd = pi * diag
    a0 = np.sum((dLam * b / pgd)[:, below], axis=-1)
    a1 = np.sum((dLam / pgd)[:, below], axis=-1)

    n_red = K + 2
    A = np.zeros((nw, n_red, n_red))
    rhs = np.zeros((nw, n_red))
    # window rows
    Rqmax = np.minimum(Rq[:, :, None], Rq[:, None, :])
    A[:, :K, :K] = (1.0 - pi) * d[:, None, :] * Rqmax
    kk = np.arange(K)
    A[:, kk, kk] += pi * dg
    A[:, :K, K] = (1.0 - pi) * Rq          # theta0 column
    rhs[:, :K] = b[:, widx]
    # theta0 row: theta0 + (1-pi)*a1*T = a0
    A[:, K, K] = 1.0
    A[:, K, K + 1] = (1.0 - pi) * a1
    rhs[:, K] = a0
    # T row: T - qtot*theta0 - sum_m d_m Rq_m eta_m = 0
    A[:, K + 1, K + 1] = 1.0
    A[:, K + 1, K] = -qtot
    A[:, K + 1, :K] = -d * Rq
    try:
        x = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"reduced eta system singular: {exc}") from exc

    T = x[:, K + 1]
    eta = np.zeros((nw, B))
    if K:
        eta[:, widx] = x[:, :K]
    eta_below = (b - (1.0 - pi) * T[:, None]) / pgd
    eta[:, below] = eta_below[:, below]
    eta_above = b / pgd
    eta[:, above] = eta_above[:, above]
    return eta
