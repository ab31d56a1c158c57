"""Nuisance models: event-time, censoring, inspection density, density ratio.

Fitted variants are parametric MLE (linear-rate / log-linear exponential,
optional Weibull) plus a Nadaraya-Watson conditional density for the
inspection times. Oracle and deliberately misspecified variants mirror the
same interfaces so estimators never care where a bundle came from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FusedSample, InspectionWindow
from .errors import FitError, NumericError, PositivityError, SeparationError
from .numerics import StepFunctionOnGrid, cumtrapz_prefix

ZETA_NUM = 1e-4     # clip for F on the inspection window
EPS_GAMMA = 1e-3    # floor for the censoring survival in denominators
RATE_FLOOR = 1e-4   # floor for linear-rate families


def feature_map(W: np.ndarray) -> np.ndarray:
    """Covariates plus all pairwise products w_i * w_j (i < j)."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    cols = [W]
    d = W.shape[1]
    for i in range(d):
        for j in range(i + 1, d):
            cols.append((W[:, i] * W[:, j])[:, None])
    return np.hstack(cols)


def _design(W: np.ndarray) -> np.ndarray:
    X = feature_map(W)
    return np.hstack([np.ones((X.shape[0], 1)), X])


# ---------------------------------------------------------------------------
# rate functions


class RateFunction:
    def rates(self, W: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearRate(RateFunction):
    """rho(w) = max(floor, b0 + b' phi(w))."""

    beta: np.ndarray
    floor: float = RATE_FLOOR

    def rates(self, W):
        eta = _design(W) @ self.beta
        return np.maximum(self.floor, eta)


@dataclass(frozen=True)
class LogLinearRate(RateFunction):
    """rho(w) = exp(b0 + b' phi(w))."""

    beta: np.ndarray

    def rates(self, W):
        return np.exp(_design(W) @ self.beta)


@dataclass(frozen=True)
class ConstantRate(RateFunction):
    value: float

    def rates(self, W):
        W = np.atleast_2d(W)
        return np.full(W.shape[0], self.value)


# ---------------------------------------------------------------------------
# event-time and censoring models


class ParametricSurvivalModel:
    """Proportional power-time cumulative hazard: Lambda(t|w) = rho(w) * t^shape."""

    def __init__(self, rate_fn: RateFunction, shape: float = 1.0,
                 provenance: str = "fitted", degenerate: bool = False):
        self.rate_fn = rate_fn
        self.shape = float(shape)
        self.provenance = provenance
        self.degenerate = degenerate

    @property
    def coef_(self) -> np.ndarray | None:
        return getattr(self.rate_fn, "beta", None)

    def rate(self, w: np.ndarray) -> float:
        return float(self.rate_fn.rates(np.atleast_2d(w))[0])

    def rates(self, W: np.ndarray) -> np.ndarray:
        return self.rate_fn.rates(W)

    def _tpow(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.shape == 1.0:
            return t
        return np.power(np.maximum(t, 0.0), self.shape)

    def cum_hazard(self, t, w) -> np.ndarray:
        return self.rate(w) * self._tpow(t)

    def survival(self, t, w) -> np.ndarray:
        return np.exp(-self.cum_hazard(t, w))

    def cdf(self, t, w) -> np.ndarray:
        return -np.expm1(-self.cum_hazard(t, w))

    def hazard(self, t, w) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        rho = self.rate(w)
        if self.shape == 1.0:
            return np.full_like(t, rho, dtype=float)
        return rho * self.shape * np.power(np.maximum(t, 1e-300), self.shape - 1.0)

    def density(self, t, w) -> np.ndarray:
        return self.hazard(t, w) * self.survival(t, w)

    # batched over covariate rows: returns (n_w, n_t)
    def cum_hazard_batch(self, t: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.outer(self.rates(W), self._tpow(t))

    def survival_batch(self, t, W) -> np.ndarray:
        return np.exp(-self.cum_hazard_batch(t, W))

    def cdf_batch(self, t, W) -> np.ndarray:
        return -np.expm1(-self.cum_hazard_batch(t, W))

    def hazard_batch(self, t, W) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        rho = self.rates(W)
        if self.shape == 1.0:
            return np.broadcast_to(rho[:, None], (rho.size, t.size)).copy()
        tp = self.shape * np.power(np.maximum(t, 1e-300), self.shape - 1.0)
        return np.outer(rho, tp)

    def density_batch(self, t, W) -> np.ndarray:
        return self.hazard_batch(t, W) * self.survival_batch(t, W)


class ConditionalEventModel(ParametricSurvivalModel):
    """Event-time nuisance T|W with clip bound for F on the inspection window."""

    zeta = ZETA_NUM

    def mu(self, t_star: float, w) -> float:
        return float(self.survival(np.asarray([t_star]), w)[0])

    def clipped_cdf(self, t, w) -> np.ndarray:
        return np.clip(self.cdf(t, w), self.zeta, 1.0 - self.zeta)


class CensoringModel(ParametricSurvivalModel):
    """Censoring nuisance R|W; gamma(t|w) = P(R >= t | w), floored in denominators."""

    floor = EPS_GAMMA

    def gamma(self, t, w) -> np.ndarray:
        return self.survival(t, w)

    def gamma_batch(self, t, W) -> np.ndarray:
        return self.survival_batch(t, W)


# ---------------------------------------------------------------------------
# censored-likelihood fitting


def _newton(theta0, value_grad_hess, tol=1e-8, max_iter=100, label="model"):
    """Damped Newton ascent; returns (theta, trace) or raises FitError.

    Nonsmooth families (rate floors) can stall on an active-set kink where
    the likelihood is flat to round-off while the one-sided gradient stays
    finite; two consecutive stagnant line searches count as converged there.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    ll, grad, hess = value_grad_hess(theta)
    trace = []
    stagnant = 0
    for it in range(max_iter):
        gnorm = float(np.max(np.abs(grad)))
        trace.append((it, float(ll), gnorm))
        if gnorm < tol:
            return theta, trace
        H = -hess
        H[np.diag_indices_from(H)] += 1e-10 * max(1.0, np.trace(H) / H.shape[0])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        scale = 1.0
        improved = False
        for _ in range(40):
            cand = theta + scale * step
            ll_new, g_new, h_new = value_grad_hess(cand)
            if np.isfinite(ll_new) and ll_new > ll + 1e-10 * (1.0 + abs(ll)):
                theta, ll, grad, hess = cand, ll_new, g_new, h_new
                improved = True
                break
            scale *= 0.5
        if improved:
            stagnant = 0
            continue
        stagnant += 1
        if stagnant >= 2:
            return theta, trace
    raise FitError(f"{label}: no convergence in {max_iter} iterations; trace={trace[-3:]}")


def _fit_censored_exponential(X, y, delta, family, label):
    """MLE for a right-censored exponential/Weibull rate regression."""
    n, p = X.shape
    events = float(np.sum(delta))
    if events == 0:
        raise FitError(f"{label}: degenerate likelihood, no events observed")

    mean_rate = events / float(np.sum(y)) if np.sum(y) > 0 else 1.0

    if family == "exponential":
        theta0 = np.zeros(p)
        theta0[0] = np.log(max(mean_rate, 1e-8))

        def vgh(beta):
            eta = X @ beta
            lam = np.exp(np.clip(eta, -40, 40))
            ll = float(np.sum(delta * eta - lam * y))
            resid = delta - lam * y
            grad = X.T @ resid
            hess = -(X.T * (lam * y)) @ X
            return ll, grad, hess

        beta, trace = _newton(theta0, vgh, label=label)
        return LogLinearRate(beta), 1.0, trace

    if family == "linear-rate":
        theta0 = np.zeros(p)
        theta0[0] = mean_rate

        def vgh(beta):
            eta = X @ beta
            active = eta > RATE_FLOOR
            rho = np.maximum(eta, RATE_FLOOR)
            ll = float(np.sum(delta * np.log(rho) - rho * y))
            gcoef = (delta / rho - y) * active
            grad = X.T @ gcoef
            hess = -(X.T * (delta / rho**2 * active)) @ X
            return ll, grad, hess

        beta, trace = _newton(theta0, vgh, label=label)
        return LinearRate(beta), 1.0, trace

    if family == "weibull":
        y_safe = np.maximum(y, 1e-12)
        logy = np.log(y_safe)
        theta0 = np.zeros(p + 1)
        theta0[0] = np.log(max(mean_rate, 1e-8))

        def vgh(theta):
            beta, logk = theta[:-1], theta[-1]
            k = np.exp(logk)
            eta = X @ beta
            Lam = np.exp(np.clip(eta, -40, 40)) * np.power(y_safe, k)
            ll = float(np.sum(delta * (eta + logk + (k - 1.0) * logy) - Lam))
            klogy = k * logy
            grad = np.empty(p + 1)
            grad[:-1] = X.T @ (delta - Lam)
            grad[-1] = float(np.sum(delta * (1.0 + klogy) - Lam * klogy))
            hess = np.empty((p + 1, p + 1))
            hess[:-1, :-1] = -(X.T * Lam) @ X
            cross = X.T @ (Lam * klogy)
            hess[:-1, -1] = -cross
            hess[-1, :-1] = -cross
            hess[-1, -1] = float(np.sum(delta * klogy - Lam * klogy * (klogy + 1.0)))
            return ll, grad, hess

        theta, trace = _newton(theta0, vgh, label=label)
        return LogLinearRate(theta[:-1]), float(np.exp(theta[-1])), trace

    raise ValueError(f"unknown family {family!r}")


def fit_event_model(sample: FusedSample, family: str = "linear-rate") -> ConditionalEventModel:
    """Fit the event-time model on the S=1 rows of a fused sample."""
    rc = sample.source == 1
    if np.sum(rc) < 2:
        raise FitError("need at least two right-censored rows")
    X = _design(sample.covariates[rc])
    rate_fn, shape, _ = _fit_censored_exponential(
        X, sample.obs_time[rc], sample.event_ind[rc], family, "event model")
    return ConditionalEventModel(rate_fn, shape=shape, provenance=f"fitted-{family}")


def fit_censoring_model(sample: FusedSample, family: str = "linear-rate") -> CensoringModel:
    """Fit the censoring model on the S=1 rows (censoring plays the event role)."""
    rc = sample.source == 1
    if np.sum(rc) < 2:
        raise FitError("need at least two right-censored rows")
    delta_cens = 1.0 - sample.event_ind[rc]
    if np.sum(delta_cens) == 0:
        # Nothing was censored: Gamma is indistinguishable from 1.
        return CensoringModel(ConstantRate(1e-10), provenance=f"fitted-{family}",
                              degenerate=True)
    X = _design(sample.covariates[rc])
    rate_fn, shape, _ = _fit_censored_exponential(
        X, sample.obs_time[rc], delta_cens, family, "censoring model")
    return CensoringModel(rate_fn, shape=shape, provenance=f"fitted-{family}")


# ---------------------------------------------------------------------------
# inspection-time density


def _silverman(x: np.ndarray) -> float:
    n = x.size
    sd = float(np.std(x))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        spread = max(sd, 1.0)
    return 0.9 * spread * n ** (-0.2)


class InspectionDensityModel:
    """Interface: conditional density g(c|w) and CDF G(c|w) on a compact window."""

    window: InspectionWindow

    def density(self, c, w) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, c, w) -> np.ndarray:
        raise NotImplementedError

    def make_profile(self, points: np.ndarray):
        """Return f(w) -> (g, G) evaluated at fixed query points."""
        points = np.asarray(points, dtype=float)

        def profile(w):
            return self.density(points, w), self.cdf(points, w)

        return profile


class ShiftedBetaInspectionModel(InspectionDensityModel):
    """C = loc + scale * Beta(1, b(w)); the closed form used by oracle bundles."""

    def __init__(self, shape_fn, loc: float = 0.5, scale: float = 0.5,
                 provenance: str = "oracle"):
        self.shape_fn = shape_fn
        self.loc = float(loc)
        self.scale = float(scale)
        self.window = InspectionWindow(self.loc, self.loc + self.scale)
        self.provenance = provenance

    def _shape(self, w) -> float:
        return float(self.shape_fn(np.atleast_2d(w))[0])

    def density(self, c, w):
        c = np.asarray(c, dtype=float)
        b = self._shape(w)
        x = (c - self.loc) / self.scale
        inside = (x >= 0.0) & (x <= 1.0)
        xs = np.clip(x, 0.0, 1.0)
        # for b < 1 the density is unbounded at the upper edge (integrable
        # singularity); cap the evaluation point so pointwise values stay finite
        one_minus = np.maximum(1.0 - np.where(inside, xs, 0.0), 1e-12)
        g = b / self.scale * np.power(one_minus, b - 1.0)
        return np.where(inside, g, 0.0)

    def cdf(self, c, w):
        c = np.asarray(c, dtype=float)
        b = self._shape(w)
        x = np.clip((c - self.loc) / self.scale, 0.0, 1.0)
        return 1.0 - np.power(1.0 - x, b)


class UniformInspectionModel(InspectionDensityModel):
    """Flat density on [c_l, c_u]; the misspecified-g variant."""

    def __init__(self, window: InspectionWindow, provenance: str = "misspecified"):
        self.window = window
        self.provenance = provenance

    def density(self, c, w):
        c = np.asarray(c, dtype=float)
        lo, hi = self.window.c_lower, self.window.c_upper
        return np.where((c >= lo) & (c <= hi), 1.0 / (hi - lo), 0.0)

    def cdf(self, c, w):
        c = np.asarray(c, dtype=float)
        lo, hi = self.window.c_lower, self.window.c_upper
        return np.clip((c - lo) / (hi - lo), 0.0, 1.0)


class KernelInspectionModel(InspectionDensityModel):
    """Nadaraya-Watson conditional density with product kernels.

    Gaussian kernels on continuous coordinates, exact-match indicators on
    discrete ones (<= 10 distinct values). The density is renormalized over
    the window by trapezoid quadrature and set to zero outside it.
    """

    NORM_POINTS = 801
    DISCRETE_CARDINALITY = 10

    def __init__(self, c_data: np.ndarray, w_data: np.ndarray,
                 window: InspectionWindow, bandwidths: dict | None = None,
                 provenance: str = "fitted"):
        self.c_data = np.asarray(c_data, dtype=float)
        self.w_data = np.atleast_2d(np.asarray(w_data, dtype=float))
        self.window = window
        self.provenance = provenance
        n0, d = self.w_data.shape
        if n0 < 5:
            raise FitError("inspection density needs at least 5 current-status rows")
        bandwidths = bandwidths or {}
        self.h_c = float(bandwidths.get("c", _silverman(self.c_data)))
        self.discrete = np.array([np.unique(self.w_data[:, j]).size <= self.DISCRETE_CARDINALITY
                                  for j in range(d)])
        self.h_w = np.array([
            float(bandwidths.get(f"w{j + 1}", _silverman(self.w_data[:, j])))
            if not self.discrete[j] else np.nan
            for j in range(d)])
        self._grid = np.linspace(window.c_lower, window.c_upper, self.NORM_POINTS)
        # Gaussian kernel matrix in c, reused for every covariate value.
        z = (self._grid[:, None] - self.c_data[None, :]) / self.h_c
        self._kc = np.exp(-0.5 * z * z)
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def _weights(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float).ravel()
        logw = np.zeros(self.w_data.shape[0])
        for j in range(w.size):
            if self.discrete[j]:
                logw = np.where(self.w_data[:, j] == w[j], logw, -np.inf)
            else:
                z = (self.w_data[:, j] - w[j]) / self.h_w[j]
                logw = logw - 0.5 * z * z
        om = np.exp(logw)
        tot = om.sum()
        if tot <= 0:
            # No support at this w (unseen discrete level): fall back to uniform.
            return np.full(om.size, 1.0 / om.size)
        return om / tot

    def _profile_grid(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = np.asarray(w, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        om = self._weights(w)
        raw = self._kc @ om
        du = self._grid[1] - self._grid[0]
        z = float(np.sum(0.5 * (raw[:-1] + raw[1:]) * du))
        if z <= 0:
            raise FitError("inspection density degenerate at covariate value")
        g = raw / z
        G = cumtrapz_prefix(g, self._grid)
        G[-1] = 1.0
        self._cache[key] = (g, G)
        return g, G

    def density(self, c, w):
        g_grid, _ = self._profile_grid(w)
        c = np.asarray(c, dtype=float)
        out = np.interp(c, self._grid, g_grid)
        inside = (c >= self.window.c_lower) & (c <= self.window.c_upper)
        return np.where(inside, out, 0.0)

    def cdf(self, c, w):
        _, G_grid = self._profile_grid(w)
        c = np.asarray(c, dtype=float)
        return np.interp(c, self._grid, G_grid, left=0.0, right=1.0)


def fit_inspection_density(sample: FusedSample, bandwidths: dict | None = None,
                           window: InspectionWindow | None = None) -> KernelInspectionModel:
    """Nadaraya-Watson fit of g(c|w) on the S=0 rows."""
    cs = sample.source == 0
    if np.sum(cs) < 5:
        raise FitError("need at least 5 current-status rows to estimate g")
    if window is None:
        from .data import inspection_window
        window = inspection_window(sample)
    return KernelInspectionModel(sample.insp_time[cs], sample.covariates[cs],
                                 window, bandwidths)


# ---------------------------------------------------------------------------
# density ratio (covariate shift)


class DensityRatioModel:
    """dP_{1,W}/dP_{0,W}(w) clipped to [1/c0, c0]."""

    def __init__(self, c0: float = 20.0, provenance: str = "fitted"):
        self.c0 = float(c0)
        self.provenance = provenance

    def _raw(self, W: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ratio(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        return np.clip(self._raw(W), 1.0 / self.c0, self.c0)

    def reciprocal(self, W: np.ndarray) -> np.ndarray:
        return 1.0 / self.ratio(W)

    def clip_fraction(self, W: np.ndarray) -> float:
        W = np.atleast_2d(W)
        raw = self._raw(W)
        return float(np.mean((raw < 1.0 / self.c0) | (raw > self.c0)))


class ConstantDensityRatioModel(DensityRatioModel):
    def __init__(self, value: float = 1.0, c0: float = 20.0, provenance: str = "oracle"):
        super().__init__(c0, provenance)
        self.value = float(value)

    def _raw(self, W):
        return np.full(np.atleast_2d(W).shape[0], self.value)


class LogisticDensityRatioModel(DensityRatioModel):
    def __init__(self, beta: np.ndarray, n1: int, n0: int, c0: float = 20.0):
        super().__init__(c0, "fitted-logistic")
        self.beta = np.asarray(beta, dtype=float)
        self.n1 = int(n1)
        self.n0 = int(n0)

    def _raw(self, W):
        eta = np.clip(_design(np.atleast_2d(W)) @ self.beta, -40, 40)
        odds = np.exp(eta)
        return odds * (self.n0 / self.n1)


def fit_logistic(X: np.ndarray, y: np.ndarray, max_iter: int = 100,
                 tol: float = 1e-8, sep_norm: float = 50.0) -> np.ndarray:
    """Damped Newton MLE for logistic regression.

    Separation is flagged when the coefficient norm blows up while the
    likelihood keeps improving.
    """

    def loglik(beta):
        eta = X @ beta
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    beta = np.zeros(X.shape[1])
    ll = loglik(beta)
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -40, 40)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p)
        if float(np.max(np.abs(grad))) < tol * max(1.0, X.shape[0] / 100.0):
            return beta
        wvar = np.maximum(p * (1.0 - p), 1e-10)
        H = (X.T * wvar) @ X
        H[np.diag_indices_from(H)] += 1e-8 * max(1.0, np.trace(H) / H.shape[0])
        step = np.linalg.solve(H, grad)
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12:
                beta, ll = cand, ll_new
                break
            scale *= 0.5
        if float(np.linalg.norm(beta)) > sep_norm:
            raise SeparationError(
                "logistic fit diverging (possible separation); consider clipping-only fallback")
    return beta


def fit_density_ratio(sample: FusedSample, c0: float = 20.0) -> LogisticDensityRatioModel:
    """Estimate the covariate density ratio via logistic regression of S on phi(w)."""
    if sample.n1 == 0 or sample.n0 == 0:
        raise FitError("density ratio needs both sources present")
    X = _design(sample.covariates)
    beta = fit_logistic(X, (sample.source == 1).astype(float))
    return LogisticDensityRatioModel(beta, sample.n1, sample.n0, c0)


# ---------------------------------------------------------------------------
# bundles


@dataclass
class NuisanceBundle:
    """Everything a gradient evaluation needs, plus where it came from."""

    event: ConditionalEventModel
    censoring: CensoringModel
    inspection: InspectionDensityModel
    ratio: DensityRatioModel | None = None
    provenance: str = "fitted"


def fit_bundle(sample: FusedSample, family: str = "linear-rate",
               bandwidths: dict | None = None, with_ratio: bool = False) -> NuisanceBundle:
    """Fit all nuisances on a fused sample."""
    bundle = NuisanceBundle(
        event=fit_event_model(sample, family),
        censoring=fit_censoring_model(sample, family),
        inspection=fit_inspection_density(sample, bandwidths),
        ratio=fit_density_ratio(sample) if with_ratio else None,
        provenance=f"fitted-{family}",
    )
    return bundle


def oracle_bundle(dgp) -> NuisanceBundle:
    """Closed-form nuisances for a parametric data-generating process."""
    return NuisanceBundle(
        event=ConditionalEventModel(dgp.event_rate_fn(), provenance="oracle"),
        censoring=CensoringModel(dgp.censoring_rate_fn(), provenance="oracle"),
        inspection=ShiftedBetaInspectionModel(dgp.inspection_shape, dgp.insp_loc,
                                              dgp.insp_scale, provenance="oracle"),
        ratio=ConstantDensityRatioModel(1.0),
        provenance="oracle",
    )


def misspecified_bundle(dgp, which: str) -> NuisanceBundle:
    """Oracle bundle with one side deliberately broken.

    which="event": event model replaced by a covariate-free exponential whose
    rate is 0.6x the true marginal mean rate. which="inspection+censoring":
    g replaced by Uniform(c_l, c_u) and the censoring hazard by a wrong
    constant; the event model stays oracle.
    """
    oracle = oracle_bundle(dgp)
    if which == "event":
        bad_rate = 0.6 * dgp.mean_event_rate
        return NuisanceBundle(
            event=ConditionalEventModel(ConstantRate(bad_rate), provenance="misspecified-event"),
            censoring=oracle.censoring,
            inspection=oracle.inspection,
            ratio=oracle.ratio,
            provenance="misspec-event",
        )
    if which == "inspection+censoring":
        window = InspectionWindow(dgp.insp_loc, dgp.insp_loc + dgp.insp_scale)
        bad_rate = 0.6 * dgp.mean_censoring_rate
        return NuisanceBundle(
            event=oracle.event,
            censoring=CensoringModel(ConstantRate(bad_rate), provenance="misspecified-censoring"),
            inspection=UniformInspectionModel(window),
            ratio=oracle.ratio,
            provenance="misspec-gR",
        )
    raise ValueError("which must be 'event' or 'inspection+censoring'")


# ---------------------------------------------------------------------------


def truncated_expectation(h: StepFunctionOnGrid, event: ConditionalEventModel,
                          u: float, w: np.ndarray) -> float:
    """E[h(T,w) | T >= u, w] under the event model, by grid quadrature.

    h is held at its last grid value beyond the grid, so the tail mass
    S(t_max|w) contributes exactly; constants are reproduced for every u.
    """
    pts = h.grid.points
    lo, hi = h.grid.span
    if not lo <= u <= hi:
        raise ValueError("u outside grid span")
    s_u = float(event.survival(np.asarray([u]), w)[0])
    if s_u < event.zeta:
        raise PositivityError(f"S({u}|w)={s_u:.3g} below floor {event.zeta}")
    # trapezoid in h against exact CDF increments: reproduces constants exactly
    F = event.cdf(pts, w)
    k = int(np.searchsorted(pts, u, side="left"))
    if k == pts.size:
        k -= 1
    integral = 0.0
    if k < pts.size - 1:
        dF = np.diff(F[k:])
        integral = float(np.sum(0.5 * (h.values[k:-1] + h.values[k + 1:]) * dF))
    if pts[k] > u:
        F_u = float(event.cdf(np.asarray([u]), w)[0])
        integral += 0.5 * (float(h(u)) + h.values[k]) * (F[k] - F_u)
    s_max = float(event.survival(np.asarray([pts[-1]]), w)[0])
    integral += h.values[-1] * s_max
    if not np.isfinite(integral):
        raise NumericError("non-finite truncated expectation")
    return integral / s_u
