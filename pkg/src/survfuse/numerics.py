"""Shared numerical primitives: grids, quadrature, linear algebra, PAVA, RNG."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack as _lapack
from scipy.linalg import lu_factor, lu_solve

from .errors import NumericError, SingularSystemError

# Conditioning threshold above which a ridge term is added before re-solving.
COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid of nonnegative time points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise NumericError("grid contains non-finite points")
        if pts[0] < 0:
            raise ValueError("grid points must be >= 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")

    def __len__(self) -> int:
        return self.points.size

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    @classmethod
    def uniform(cls, t_max: float, n_points: int = 2000, t_min: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t_min, t_max, n_points))

    def augmented(self, extra: np.ndarray | list) -> "TimeGrid":
        """Grid with the extra points merged in (duplicates dropped)."""
        extra = np.asarray(extra, dtype=float).ravel()
        pts = np.union1d(self.points, extra)
        return TimeGrid(pts)

    def index_of(self, t: np.ndarray | float) -> np.ndarray | int:
        """Index of the nearest grid point to each query time."""
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.points, t)
        pos = np.clip(pos, 1, len(self) - 1)
        left = self.points[pos - 1]
        right = self.points[pos]
        idx = np.where(t - left <= right - t, pos - 1, pos)
        return idx if idx.ndim else int(idx)


@dataclass(frozen=True)
class StepFunctionOnGrid:
    """Function known at grid points, evaluated by nearest-neighbor lookup."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != self.grid.points.shape:
            raise ValueError("values must align with the grid")
        if not np.all(np.isfinite(vals)):
            raise NumericError("step function values must be finite")

    def __call__(self, t: np.ndarray | float) -> np.ndarray | float:
        lo, hi = self.grid.span
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < lo) or np.any(t_arr > hi):
            raise ValueError("query time outside grid span")
        out = self.values[self.grid.index_of(t_arr)]
        return out if out.ndim else float(out)


def trapezoid_integral(f_values: np.ndarray, grid: TimeGrid) -> float:
    """Trapezoid rule over the full grid; exact for affine integrands."""
    f = np.asarray(f_values, dtype=float)
    if f.shape != grid.points.shape:
        raise ValueError("integrand length must match the grid")
    if not np.all(np.isfinite(f)):
        raise NumericError("integrand contains non-finite values")
    du = grid.spacings
    return float(np.sum(0.5 * (f[:-1] + f[1:]) * du))


def cumtrapz_prefix(f: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Running trapezoid integral from the first grid point; f may be batched (..., B)."""
    du = np.diff(points)
    seg = 0.5 * (f[..., :-1] + f[..., 1:]) * du
    out = np.zeros(f.shape, dtype=float)
    np.cumsum(seg, axis=-1, out=out[..., 1:])
    return out


def cumtrapz_suffix(f: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Running trapezoid integral from each point to the last one."""
    pre = cumtrapz_prefix(f, points)
    return pre[..., -1:] - pre


def solve_dense_linear(A: np.ndarray, b: np.ndarray, diagnostics: dict | None = None) -> np.ndarray:
    """Solve Ax=b with partial pivoting; ridge fallback for near-singular systems.

    If the estimated condition number exceeds COND_LIMIT, a ridge of
    RIDGE_SCALE*trace(A)/dim is added and the solution flagged in
    ``diagnostics``. Exactly singular systems after regularization raise
    SingularSystemError.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if b.shape[0] != A.shape[0]:
        raise ValueError("b not conformable with A")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite entries in linear system")

    anorm = np.linalg.norm(A, 1)
    ridged = False
    rcond = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            lu, piv = lu_factor(A, check_finite=False)
            rcond, info = _lapack.dgecon(lu, anorm, norm="1")
            if info != 0:
                rcond = 0.0
        except Exception:
            rcond = 0.0

        if rcond <= 0.0 or 1.0 / max(rcond, np.finfo(float).tiny) > COND_LIMIT:
            ridged = True
            rho = RIDGE_SCALE * np.trace(A) / A.shape[0]
            if rho == 0.0:
                rho = RIDGE_SCALE
            A_r = A + rho * np.eye(A.shape[0])
            try:
                lu, piv = lu_factor(A_r, check_finite=False)
            except Exception as exc:
                raise SingularSystemError(f"system singular after ridge: {exc}") from exc
            rcond, info = _lapack.dgecon(lu, np.linalg.norm(A_r, 1), norm="1")
            if info != 0 or rcond == 0.0:
                raise SingularSystemError("system singular after ridge regularization")

    x = lu_solve((lu, piv), b, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution non-finite; system effectively singular")
    if ridged:
        # a ridged solve must still satisfy the original system's residual bound
        resid = float(np.max(np.abs(A @ x - b)))
        if resid > 1e-8 * (1.0 + float(np.max(np.abs(b)))):
            raise SingularSystemError(
                f"system effectively singular: ridged residual {resid:.3e}")
    if diagnostics is not None:
        diagnostics["ridged"] = ridged
        diagnostics["rcond"] = float(rcond)
    return x


def least_squares(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimize ||design @ beta - target||^2 via ridge-stabilized normal equations.

    Falls back to the minimum-norm solution on rank deficiency.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite entries in least-squares problem")
    G = X.T @ X
    scale = np.trace(G) / max(G.shape[0], 1)
    if scale == 0.0:
        scale = 1.0
    G[np.diag_indices_from(G)] += 1e-10 * scale
    rhs = X.T @ y
    try:
        beta = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
    if not np.all(np.isfinite(beta)):
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
    return beta


def pava_isotonic(y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit via pool-adjacent-violators.

    Ties are pooled left to right; the output preserves the weighted mean.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty input")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise ValueError("weights must match y")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")

    # Stack of blocks (mean, weight, count), merged while decreasing.
    means: list[float] = []
    wsums: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        wsums.append(float(wi))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wsums.pop(), counts.pop()
            m1, w1, c1 = means.pop(), wsums.pop(), counts.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wsums.append(wt)
            counts.append(c1 + c2)
    out = np.repeat(means, counts)
    return out


@dataclass(frozen=True)
class DistributionSpec:
    """One of the four families the data-generating process needs."""

    kind: str  # "uniform" | "bernoulli" | "exponential" | "beta"
    params: tuple = ()

    def __post_init__(self):
        kind = self.kind
        p = self.params
        if kind == "uniform":
            if p:
                raise ValueError("uniform takes no parameters")
        elif kind == "bernoulli":
            if len(p) != 1 or not (0.0 <= p[0] <= 1.0):
                raise ValueError("bernoulli needs p in [0,1]")
        elif kind == "exponential":
            if len(p) != 1 or p[0] <= 0:
                raise ValueError("exponential needs rate > 0")
        elif kind == "beta":
            if len(p) != 2 or p[0] <= 0 or p[1] <= 0:
                raise ValueError("beta needs a > 0 and b > 0")
            if p[0] != 1.0:
                raise ValueError("only Beta(1, b) is supported (inversion sampling)")
        else:
            raise ValueError(f"unknown distribution kind: {kind}")


@dataclass
class RngStream:
    """Reproducible uniform stream; all draws are inversions of uniforms.

    Streams are value types: derive one per (seed, stream id) and hand it to a
    single consumer. The same (seed, stream_id) always replays bit-identical
    draw sequences.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None) -> np.ndarray | float:
        return self._gen.random(size)

    def bernoulli(self, p: float, size=None) -> np.ndarray | float:
        u = self._gen.random(size)
        return (u < p).astype(float)

    def exponential(self, rate, size=None) -> np.ndarray | float:
        rate = np.asarray(rate, dtype=float)
        if np.any(rate <= 0):
            raise ValueError("exponential rate must be positive")
        u = self._gen.random(size if size is not None else rate.shape or None)
        return -np.log1p(-u) / rate

    def beta1(self, b, size=None) -> np.ndarray | float:
        """Beta(1, b) by inversion: 1 - (1-U)^(1/b)."""
        b = np.asarray(b, dtype=float)
        if np.any(b <= 0):
            raise ValueError("beta shape must be positive")
        u = self._gen.random(size if size is not None else b.shape or None)
        return 1.0 - np.power(1.0 - u, 1.0 / b)

    def subsample(self, n: int, m: int) -> np.ndarray:
        """m indices drawn from range(n) without replacement."""
        if not 0 < m <= n:
            raise ValueError("need 0 < m <= n")
        return self._gen.choice(n, size=m, replace=False)


def rng_draw(spec: DistributionSpec, stream: RngStream, size=None):
    """Draw from one of the supported families using the given stream."""
    if spec.kind == "uniform":
        return stream.uniform(size)
    if spec.kind == "bernoulli":
        return stream.bernoulli(spec.params[0], size)
    if spec.kind == "exponential":
        return stream.exponential(spec.params[0], size)
    if spec.kind == "beta":
        return stream.beta1(spec.params[1], size)
    raise ValueError(f"unknown distribution kind: {spec.kind}")
