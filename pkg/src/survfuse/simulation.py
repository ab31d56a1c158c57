"""Data-generating process, true-value oracle, and the replication engine."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import FusedSample
from .errors import SurvFuseError, ValidationError
from .numerics import RngStream
from .nuisance import (LinearRate, NuisanceBundle, fit_bundle, misspecified_bundle,
                       oracle_bundle)


@dataclass(frozen=True)
class DgpSpec:
    """Fully parametric generator: exponential event/censoring rates linear in
    (1, w1, w2, w1*w2), shifted-Beta inspection times, W1 ~ U(0,1),
    W2 ~ Bernoulli(w2_prob), and an RC:CS source split of rc_fraction:(rest).
    """

    event_coef: tuple = (0.8, 0.4, 0.0, 0.2)
    censoring_coef: tuple = (1.5, -0.2, -0.5, 0.0)
    inspection_shape_coef: tuple = (0.75, 0.5, 0.1, 0.0)
    insp_loc: float = 0.5
    insp_scale: float = 0.5
    w2_prob: float = 0.5
    rc_fraction: float = 1.0 / 3.0

    def _linear(self, coef, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        a0, a1, a2, a3 = coef
        return a0 + a1 * W[:, 0] + a2 * W[:, 1] + a3 * W[:, 0] * W[:, 1]

    def event_rate(self, W) -> np.ndarray:
        return self._linear(self.event_coef, W)

    def censoring_rate(self, W) -> np.ndarray:
        return self._linear(self.censoring_coef, W)

    def inspection_shape(self, W) -> np.ndarray:
        return self._linear(self.inspection_shape_coef, W)

    def event_rate_fn(self) -> LinearRate:
        a0, a1, a2, a3 = self.event_coef
        return LinearRate(np.array([a0, a1, a2, a3]), floor=1e-12)

    def censoring_rate_fn(self) -> LinearRate:
        a0, a1, a2, a3 = self.censoring_coef
        return LinearRate(np.array([a0, a1, a2, a3]), floor=1e-12)

    def _mean_rate(self, coef) -> float:
        a0, a1, a2, a3 = coef
        p = self.w2_prob
        return a0 + 0.5 * a1 + p * a2 + 0.5 * p * a3

    @property
    def mean_event_rate(self) -> float:
        return self._mean_rate(self.event_coef)

    @property
    def mean_censoring_rate(self) -> float:
        return self._mean_rate(self.censoring_coef)


DGP_REGISTRY = {"paper": DgpSpec()}


def _survival_integral(a: float, b: float, t_star: float) -> float:
    """int_0^1 exp(-(a + b*w) t*) dw in closed form."""
    if t_star == 0.0:
        return 1.0
    if b == 0.0:
        return math.exp(-a * t_star)
    return math.exp(-a * t_star) * (1.0 - math.exp(-b * t_star)) / (b * t_star)


def true_phi(dgp: DgpSpec, t_star: float) -> float:
    """Marginal survival P(T > t*) in closed form for the parametric DGP."""
    if t_star < 0:
        raise ValueError("t_star must be >= 0")
    a0, a1, a2, a3 = dgp.event_coef
    p = dgp.w2_prob
    return (p * _survival_integral(a0 + a2, a1 + a3, t_star)
            + (1.0 - p) * _survival_integral(a0, a1, t_star))


def generate_dataset(dgp: DgpSpec, n: int, stream: RngStream) -> FusedSample:
    """Draw a fused sample; first round(n*rc_fraction) rows are right-censored."""
    if n < 3:
        raise ValueError("need n >= 3 so both sources are non-empty")
    n1 = int(round(n * dgp.rc_fraction))
    n1 = min(max(n1, 1), n - 1)

    w1 = stream.uniform(n)
    w2 = stream.bernoulli(dgp.w2_prob, n)
    W = np.column_stack([w1, w2])
    T = stream.exponential(dgp.event_rate(W), n)
    R = stream.exponential(dgp.censoring_rate(W), n)
    C = dgp.insp_loc + dgp.insp_scale * stream.beta1(dgp.inspection_shape(W), n)

    source = np.zeros(n, dtype=int)
    source[:n1] = 1
    y = np.full(n, np.nan)
    dr = np.full(n, np.nan)
    c = np.full(n, np.nan)
    dc = np.full(n, np.nan)
    rc = source == 1
    y[rc] = np.minimum(T[rc], R[rc])
    dr[rc] = (T[rc] <= R[rc]).astype(float)
    cs = ~rc
    c[cs] = C[cs]
    dc[cs] = (T[cs] <= C[cs]).astype(float)
    return FusedSample(source, W, y, dr, c, dc)


@dataclass
class SimConfig:
    """Replication-study configuration (JSON-mirrorable)."""

    n_total: tuple = (300, 600, 1500)
    t_star: tuple = (0.2, 0.7, 0.9)
    replications: int = 500
    seed: int = 20240901
    estimators: tuple = ("cs", "rc", "dr", "eff")
    nuisance_mode: str = "fitted"   # fitted | oracle | misspec-event | misspec-gR
    alpha: float = 0.05
    dgp: str = "paper"
    family: str = "linear-rate"
    grid_points: int = 2000
    basis_degree: int = 10
    threads: int = 1
    failure_cap: float = 0.02

    KNOWN_MODES = ("fitted", "oracle", "misspec-event", "misspec-gR")
    KNOWN_ESTIMATORS = ("cs", "rc", "dr", "eff", "ivw")

    def __post_init__(self):
        self.n_total = tuple(int(v) for v in np.atleast_1d(self.n_total))
        self.t_star = tuple(float(v) for v in np.atleast_1d(self.t_star))
        self.estimators = tuple(self.estimators)
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if any(n < 30 for n in self.n_total):
            raise ValidationError("all n must be >= 30")
        if self.nuisance_mode not in self.KNOWN_MODES:
            raise ValidationError(f"unknown nuisance mode {self.nuisance_mode!r}")
        unknown = set(self.estimators) - set(self.KNOWN_ESTIMATORS)
        if unknown:
            raise ValidationError(f"unknown estimators: {sorted(unknown)}")
        if "ivw" in self.estimators and not {"cs", "rc"} <= set(self.estimators):
            raise ValidationError("ivw requires both cs and rc")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0,1)")
        if self.dgp not in DGP_REGISTRY:
            raise ValidationError(f"unknown dgp id {self.dgp!r}")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class SimReport:
    """Per-(estimator, n, t*) aggregate of a replication study."""

    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    invalid: bool = False

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "invalid": self.invalid,
                           "rows": self.rows}, sort_keys=True, indent=2)

    def csv_lines(self) -> list[str]:
        header = ("estimator,n,t_star,true_phi,mean_point,bias,mse,"
                  "mean_ci_length,coverage,replications,failures,not_identified")
        lines = [header]
        for r in self.rows:
            lines.append(",".join([
                r["estimator"], str(r["n"]), format(r["t_star"], ".12g"),
                format(r["true_phi"], ".12g"), _fmt(r["mean_point"]), _fmt(r["bias"]),
                _fmt(r["mse"]), _fmt(r["mean_ci_length"]), _fmt(r["coverage"]),
                str(r["replications"]), str(r["failures"]),
                str(r.get("not_identified", 0))]))
        return lines

    def cell(self, estimator: str, n: int, t_star: float) -> dict:
        for r in self.rows:
            if (r["estimator"] == estimator and r["n"] == n
                    and abs(r["t_star"] - t_star) < 1e-12):
                return r
        raise KeyError((estimator, n, t_star))


def _fmt(v) -> str:
    return "" if v is None else format(v, ".12g")


def _bundle_for_mode(mode: str, sample: FusedSample, dgp: DgpSpec,
                     family: str) -> NuisanceBundle:
    if mode == "oracle":
        return oracle_bundle(dgp)
    if mode == "misspec-event":
        return misspecified_bundle(dgp, "event")
    if mode == "misspec-gR":
        return misspecified_bundle(dgp, "inspection+censoring")
    return fit_bundle(sample, family=family)


def _one_replication(config: SimConfig, n: int, rep: int) -> dict:
    """Run every requested estimator at every t*.

    Cells are (point, lo, hi) on success, ("skip", reason) when the estimand
    is not identified for that estimator (expected, excluded from the failure
    cap), or ("fail", exception) on a genuine numeric failure.
    """
    from . import estimators as est
    from .errors import NotIdentifiedError

    dgp = DGP_REGISTRY[config.dgp]
    stream = RngStream(config.seed, stream_id=rep)
    sample = generate_dataset(dgp, n, stream)
    bundle = _bundle_for_mode(config.nuisance_mode, sample, dgp, config.family)

    out: dict = {}
    for t_star in config.t_star:
        cell: dict = {}
        results: dict = {}
        wanted = [e for e in config.estimators if e != "ivw"]
        for kind in wanted:
            try:
                if kind == "cs":
                    res = est.estimate_cs_only(sample, t_star, alpha=config.alpha,
                                               seed=(config.seed, rep))
                elif kind == "rc":
                    res = est.estimate_rc_only(sample, bundle, t_star, alpha=config.alpha)
                elif kind == "dr":
                    res = est.estimate_fusion_dr(sample, bundle, t_star, alpha=config.alpha,
                                                 grid_points=config.grid_points,
                                                 degree=config.basis_degree)
                elif kind == "eff":
                    res = est.estimate_fusion_eff(sample, bundle, t_star, alpha=config.alpha,
                                                  grid_points=config.grid_points,
                                                  degree=config.basis_degree)
                results[kind] = res
                cell[kind] = (res.point, res.ci[0], res.ci[1])
            except NotIdentifiedError:
                cell[kind] = ("skip", "not_identified")
            except SurvFuseError as exc:
                cell[kind] = ("fail", type(exc).__name__)
        if "ivw" in config.estimators:
            if "cs" in results and "rc" in results:
                try:
                    res = est.naive_ivw_combine(results["cs"], results["rc"])
                    cell["ivw"] = (res.point, res.ci[0], res.ci[1])
                except SurvFuseError as exc:
                    cell["ivw"] = ("fail", type(exc).__name__)
            elif cell.get("cs", ("fail",))[0] == "skip":
                cell["ivw"] = ("skip", "not_identified")
            else:
                cell["ivw"] = ("fail", "ivw inputs unavailable")
        out[t_star] = cell
    return out


def run_replications(config: SimConfig) -> SimReport:
    """Monte Carlo study shaped like the estimator-comparison table.

    With threads > 1 replications run in a process pool; results are keyed by
    replication index, so aggregation is order-independent and reports stay
    byte-reproducible.
    """
    dgp = DGP_REGISTRY[config.dgp]
    jobs = [(n, rep) for n in config.n_total for rep in range(config.replications)]
    results: dict = {}
    if config.threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = {key: pool.submit(_one_replication, config, *key) for key in jobs}
            for key, fut in futures.items():
                results[key] = fut.result()
    else:
        for key in jobs:
            results[key] = _one_replication(config, *key)
    raw: dict = {n: [results[(n, rep)] for rep in range(config.replications)]
                 for n in config.n_total}

    report = SimReport(config=asdict(config))
    invalid = False
    for n in config.n_total:
        for t_star in config.t_star:
            truth = true_phi(dgp, t_star)
            for kind in config.estimators:
                points, lengths, covered = [], [], []
                failures = 0
                skipped = 0
                for rep_out in raw[n]:
                    cell = rep_out[t_star].get(kind)
                    if cell is None or cell[0] == "fail":
                        failures += 1
                        continue
                    if cell[0] == "skip":
                        skipped += 1
                        continue
                    point, lo, hi = cell
                    points.append(point)
                    lengths.append(hi - lo)
                    covered.append(lo <= truth <= hi)
                used = len(points)
                row = {"estimator": kind, "n": n, "t_star": t_star, "true_phi": truth,
                       "replications": used, "failures": failures,
                       "not_identified": skipped}
                if used:
                    pts = np.asarray(points)
                    row["mean_point"] = float(np.mean(pts))
                    row["bias"] = float(np.mean(pts) - truth)
                    row["mse"] = float(np.mean((pts - truth) ** 2))
                    row["mean_ci_length"] = float(np.mean(lengths))
                    row["coverage"] = float(np.mean(covered))
                else:
                    row.update({"mean_point": None, "bias": None, "mse": None,
                                "mean_ci_length": None, "coverage": None})
                total = used + failures
                if total and failures / total > config.failure_cap:
                    invalid = True
                report.rows.append(row)
    report.invalid = invalid
    return report


@dataclass
class RateStudy:
    """log(MSE) vs log(n) points and fitted slope per estimator."""

    points: dict            # estimator -> list of (log_n, log_mse)
    slopes: dict            # estimator -> float
    intercepts: dict

    def csv_lines(self) -> list[str]:
        lines = ["estimator,log_n,log_mse,slope,intercept"]
        for kind, pts in sorted(self.points.items()):
            for ln, lm in pts:
                lines.append(f"{kind},{ln:.12g},{lm:.12g},"
                             f"{self.slopes[kind]:.12g},{self.intercepts[kind]:.12g}")
        return lines


def rate_study(config: SimConfig) -> RateStudy:
    """OLS slope of log MSE on log n per estimator, at a single t*."""
    if len(config.t_star) != 1:
        raise ValidationError("rate study runs at a single t*")
    if len(config.n_total) < 3:
        raise ValidationError("rate study needs at least 3 sample sizes")
    if config.replications < 200:
        raise ValidationError("rate study needs at least 200 replications")
    report = run_replications(config)
    if report.invalid:
        raise SurvFuseError("failure cap exceeded during rate study")
    t_star = config.t_star[0]
    points: dict = {}
    slopes: dict = {}
    intercepts: dict = {}
    for kind in config.estimators:
        pts = []
        for n in config.n_total:
            row = report.cell(kind, n, t_star)
            if row["mse"] is None or row["mse"] <= 0:
                continue
            pts.append((math.log(n), math.log(row["mse"])))
        if len(pts) < 3:
            raise SurvFuseError(f"not enough MSE points for {kind}")
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        slope, intercept = np.polyfit(x, y, 1)
        points[kind] = pts
        slopes[kind] = float(slope)
        intercepts[kind] = float(intercept)
    return RateStudy(points, slopes, intercepts)
