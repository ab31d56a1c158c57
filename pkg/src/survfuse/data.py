"""Data model for fused right-censored / current-status samples and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FusedObservation:
    """One record: source S, covariates, and the source-appropriate outcome pair.

    S=1 rows carry (obs_time Y, event_ind) from the right-censored sample;
    S=0 rows carry (insp_time C, status_ind) from the current-status sample.
    """

    source: int
    covariates: np.ndarray
    obs_time: float | None = None
    event_ind: int | None = None
    insp_time: float | None = None
    status_ind: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        if self.source not in (0, 1):
            raise ValidationError(f"source must be 0 or 1, got {self.source}")
        if self.source == 1:
            if self.obs_time is None or self.event_ind is None:
                raise ValidationError("S=1 row must carry obs_time and event_ind")
            if self.insp_time is not None or self.status_ind is not None:
                raise ValidationError("S=1 row must not carry inspection fields")
            if self.obs_time < 0:
                raise ValidationError("obs_time must be >= 0")
            if self.event_ind not in (0, 1):
                raise ValidationError("event_ind must be 0/1")
        else:
            if self.insp_time is None or self.status_ind is None:
                raise ValidationError("S=0 row must carry insp_time and status_ind")
            if self.obs_time is not None or self.event_ind is not None:
                raise ValidationError("S=0 row must not carry right-censored fields")
            if self.insp_time < 0:
                raise ValidationError("insp_time must be >= 0")
            if self.status_ind not in (0, 1):
                raise ValidationError("status_ind must be 0/1")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("covariates must be finite")


@dataclass
class FusedSample:
    """Immutable fused sample stored column-wise.

    Fields absent for a row's source are NaN. ``pi`` defaults to the empirical
    share of S=1 rows and can be pinned to a design value.
    """

    source: np.ndarray
    covariates: np.ndarray  # (n, d)
    obs_time: np.ndarray
    event_ind: np.ndarray
    insp_time: np.ndarray
    status_ind: np.ndarray
    pi_override: float | None = None
    _frozen: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=int)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        for name in ("obs_time", "event_ind", "insp_time", "status_ind"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.source.size
        if self.covariates.shape[0] != n:
            raise ValidationError("covariate rows must match sample size")
        for name in ("obs_time", "event_ind", "insp_time", "status_ind"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
        self._validate()
        if self.pi_override is not None and not 0.0 < self.pi_override < 1.0:
            raise ValidationError("pi override must lie in (0,1)")
        for arr in (self.source, self.covariates, self.obs_time, self.event_ind,
                    self.insp_time, self.status_ind):
            arr.setflags(write=False)
        self._frozen = True

    def _validate(self):
        bad: list[str] = []
        rc = self.source == 1
        cs = self.source == 0
        if not np.all(rc | cs):
            rows = np.flatnonzero(~(rc | cs))
            bad.append(f"source not 0/1 at rows {rows.tolist()}")

        def _check(mask, arr, name, want_present):
            present = np.isfinite(arr)
            rows = np.flatnonzero(mask & (present != want_present))
            if rows.size:
                state = "missing" if want_present else "unexpectedly present"
                bad.append(f"{name} {state} at rows {rows.tolist()}")

        _check(rc, self.obs_time, "y", True)
        _check(rc, self.event_ind, "delta_r", True)
        _check(rc, self.insp_time, "c", False)
        _check(rc, self.status_ind, "delta_c", False)
        _check(cs, self.insp_time, "c", True)
        _check(cs, self.status_ind, "delta_c", True)
        _check(cs, self.obs_time, "y", False)
        _check(cs, self.event_ind, "delta_r", False)

        for name, arr, mask in (("y", self.obs_time, rc), ("c", self.insp_time, cs)):
            rows = np.flatnonzero(mask & (arr < 0))
            if rows.size:
                bad.append(f"negative {name} at rows {rows.tolist()}")
        for name, arr, mask in (("delta_r", self.event_ind, rc), ("delta_c", self.status_ind, cs)):
            vals = arr[mask]
            rows = np.flatnonzero(mask)[~np.isin(vals, (0.0, 1.0))]
            if rows.size:
                bad.append(f"non-binary {name} at rows {rows.tolist()}")
        if not np.all(np.isfinite(self.covariates)):
            rows = np.flatnonzero(~np.all(np.isfinite(self.covariates), axis=1))
            bad.append(f"missing/non-finite covariates at rows {rows.tolist()}")
        if bad:
            raise ValidationError("; ".join(bad))

    def __setattr__(self, key, value):
        if getattr(self, "_frozen", False) and key != "_frozen":
            raise AttributeError("FusedSample is immutable")
        super().__setattr__(key, value)

    def __len__(self) -> int:
        return self.source.size

    @property
    def n(self) -> int:
        return self.source.size

    @property
    def n1(self) -> int:
        return int(np.sum(self.source == 1))

    @property
    def n0(self) -> int:
        return int(np.sum(self.source == 0))

    @property
    def covariate_dim(self) -> int:
        return self.covariates.shape[1]

    @property
    def pi(self) -> float:
        if self.pi_override is not None:
            return float(self.pi_override)
        return self.n1 / self.n

    @property
    def observations(self) -> list[FusedObservation]:
        out = []
        for i in range(self.n):
            if self.source[i] == 1:
                out.append(FusedObservation(1, self.covariates[i],
                                            obs_time=float(self.obs_time[i]),
                                            event_ind=int(self.event_ind[i])))
            else:
                out.append(FusedObservation(0, self.covariates[i],
                                            insp_time=float(self.insp_time[i]),
                                            status_ind=int(self.status_ind[i])))
        return out

    @classmethod
    def from_observations(cls, observations: list[FusedObservation],
                          pi_override: float | None = None) -> "FusedSample":
        if not observations:
            raise ValidationError("empty sample")
        d = observations[0].covariates.size
        n = len(observations)
        source = np.empty(n, dtype=int)
        W = np.empty((n, d))
        y = np.full(n, np.nan)
        dr = np.full(n, np.nan)
        c = np.full(n, np.nan)
        dc = np.full(n, np.nan)
        for i, ob in enumerate(observations):
            if ob.covariates.size != d:
                raise ValidationError(f"covariate dimension changes at row {i}")
            source[i] = ob.source
            W[i] = ob.covariates
            if ob.source == 1:
                y[i], dr[i] = ob.obs_time, ob.event_ind
            else:
                c[i], dc[i] = ob.insp_time, ob.status_ind
        return cls(source, W, y, dr, c, dc, pi_override=pi_override)

    def require_fusion(self):
        """Invariants needed by the fusion estimators."""
        if self.n1 < 2 or self.n0 < 2:
            raise ValidationError(
                f"fusion estimators need >=2 rows per source (n1={self.n1}, n0={self.n0})")
        if not 0.0 < self.pi < 1.0:
            raise ValidationError("pi must lie strictly in (0,1)")


@dataclass(frozen=True)
class InspectionWindow:
    """Compact support [c_lower, c_upper] of the inspection times."""

    c_lower: float
    c_upper: float

    def __post_init__(self):
        if not self.c_lower < self.c_upper:
            raise ValidationError(
                f"degenerate inspection window: c_l={self.c_lower} >= c_u={self.c_upper}")


REQUIRED_COLUMNS = ("source", "y", "delta_r", "c", "delta_c")


def _parse_cell(text: str, row: int, col: str, errors: list[str]) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        errors.append(f"row {row}: cannot parse {col}={text!r}")
        return np.nan


def ingest_csv(path, schema: dict | None = None,
               pi_override: float | None = None) -> FusedSample:
    """Read a fused sample from CSV.

    Expected header: ``source, w1..wd, y, delta_r, c, delta_c``; ``schema`` may
    remap any of those names (keys = canonical names, values = file columns;
    key "covariates" lists covariate columns in order). Emptiness of the
    outcome cells must match ``source``; offending rows are reported together.
    """
    schema = schema or {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        colmap = {}
        for name in REQUIRED_COLUMNS:
            col = schema.get(name, name)
            if col not in header:
                raise ValidationError(f"{path}: missing required column {col!r}")
            colmap[name] = header.index(col)
        if "covariates" in schema:
            wcols = list(schema["covariates"])
        else:
            wcols = sorted((h for h in header if h.startswith("w") and h[1:].isdigit()),
                           key=lambda h: int(h[1:]))
        if not wcols:
            raise ValidationError(f"{path}: no covariate columns found")
        widx = []
        for col in wcols:
            if col not in header:
                raise ValidationError(f"{path}: missing covariate column {col!r}")
            widx.append(header.index(col))

        rows = list(reader)

    n = len(rows)
    if n == 0:
        raise ValidationError(f"{path}: no data rows")
    errors: list[str] = []
    source = np.zeros(n, dtype=int)
    W = np.full((n, len(widx)), np.nan)
    y = np.full(n, np.nan)
    dr = np.full(n, np.nan)
    c = np.full(n, np.nan)
    dc = np.full(n, np.nan)
    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based with header
        if len(row) != len(header):
            errors.append(f"row {rownum}: expected {len(header)} cells, got {len(row)}")
            continue
        s = _parse_cell(row[colmap["source"]], rownum, "source", errors)
        if s not in (0.0, 1.0):
            errors.append(f"row {rownum}: source must be 0/1, got {row[colmap['source']]!r}")
            continue
        source[i] = int(s)
        for j, k in enumerate(widx):
            W[i, j] = _parse_cell(row[k], rownum, wcols[j], errors)
        y[i] = _parse_cell(row[colmap["y"]], rownum, "y", errors)
        dr[i] = _parse_cell(row[colmap["delta_r"]], rownum, "delta_r", errors)
        c[i] = _parse_cell(row[colmap["c"]], rownum, "c", errors)
        dc[i] = _parse_cell(row[colmap["delta_c"]], rownum, "delta_c", errors)
    if errors:
        raise ValidationError(f"{path}: " + "; ".join(errors))
    try:
        return FusedSample(source, W, y, dr, c, dc, pi_override=pi_override)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_csv(sample: FusedSample, path) -> None:
    """Serialize a sample; lossless round-trip at 12 significant digits."""
    d = sample.covariate_dim

    def fmt(v: float) -> str:
        return "" if not np.isfinite(v) else format(v, ".12g")

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source"] + [f"w{j + 1}" for j in range(d)]
                        + ["y", "delta_r", "c", "delta_c"])
        for i in range(sample.n):
            writer.writerow(
                [str(int(sample.source[i]))]
                + [format(v, ".12g") for v in sample.covariates[i]]
                + [fmt(sample.obs_time[i]), fmt(sample.event_ind[i]),
                   fmt(sample.insp_time[i]), fmt(sample.status_ind[i])])


def inspection_window(sample: FusedSample, trim: tuple[float, float] = (0.0, 1.0)) -> InspectionWindow:
    """Trim-quantile window of the observed inspection times (S=0 rows)."""
    cs_mask = sample.source == 0
    if np.sum(cs_mask) < 2:
        raise ValidationError("need at least two current-status rows for a window")
    lo, hi = trim
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError("trim must satisfy 0 <= lo < hi <= 1")
    c_vals = sample.insp_time[cs_mask]
    c_l = float(np.quantile(c_vals, lo))
    c_u = float(np.quantile(c_vals, hi))
    return InspectionWindow(c_l, c_u)
