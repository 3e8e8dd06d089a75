"""Observational data container, shift specification and analysis configuration."""
from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .learners import DEFAULT_ROSTER, LearnerSpec, parse_learner_line

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoleMap:
    covariates: tuple[str, ...]
    exposures: tuple[str, ...]
    outcome: str

    def __post_init__(self):
        names = list(self.covariates) + list(self.exposures) + [self.outcome]
        if len(set(names)) != len(names):
            raise ConfigError("column roles overlap or repeat: %s" % ", ".join(names))
        if not self.exposures:
            raise ConfigError("at least one exposure column is required")

    @property
    def columns(self) -> list[str]:
        return list(self.covariates) + list(self.exposures) + [self.outcome]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates W (n x q), exposures A (n x p) and outcome Y (n,).

    Arrays are made read-only so a Dataset can be shared between workers.
    """

    covariates: np.ndarray
    exposures: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple[str, ...]
    exposure_names: tuple[str, ...]
    outcome_name: str = "Y"
    dropped: int = 0

    def __post_init__(self):
        W = np.array(self.covariates, dtype=float, copy=True)
        A = np.array(self.exposures, dtype=float, copy=True)
        Y = np.array(self.outcome, dtype=float, copy=True).ravel()
        if W.ndim == 1:
            W = W.reshape(-1, 1) if W.size else W.reshape(len(Y), 0)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        n = len(Y)
        if n < 1:
            raise DataError("dataset has zero rows")
        if W.shape[0] != n or A.shape[0] != n:
            raise DataError("row counts differ: W %d, A %d, Y %d" % (W.shape[0], A.shape[0], n))
        if W.shape[1] != len(self.covariate_names) or A.shape[1] != len(self.exposure_names):
            raise DataError("column names do not match array shapes")
        names = list(self.covariate_names) + list(self.exposure_names) + [self.outcome_name]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        for block in (W, A, Y):
            if not np.all(np.isfinite(block)):
                raise DataError("non-finite values in dataset")
            block.setflags(write=False)
        object.__setattr__(self, "covariates", W)
        object.__setattr__(self, "exposures", A)
        object.__setattr__(self, "outcome", Y)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "exposure_names", tuple(self.exposure_names))

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def p(self) -> int:
        return self.exposures.shape[1]

    @property
    def q(self) -> int:
        return self.covariates.shape[1]

    def exposure_index(self, name: str) -> int:
        try:
            return self.exposure_names.index(name)
        except ValueError:
            raise DataError("unknown exposure %r" % name) from None

    def design(self, exposures: np.ndarray | None = None) -> np.ndarray:
        """Outcome-regression design: exposures first, then covariates."""
        A = self.exposures if exposures is None else exposures
        return np.hstack([A, self.covariates])

    def shifted_exposures(self, k: int, delta: float) -> np.ndarray:
        """Exposure matrix with column k replaced by A_k - delta."""
        A = np.array(self.exposures, copy=True)
        A[:, k] = A[:, k] - delta
        return A

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.covariates[rows],
            self.exposures[rows],
            self.outcome[rows],
            self.covariate_names,
            self.exposure_names,
            self.outcome_name,
        )

    def to_frame(self) -> pd.DataFrame:
        cols = {}
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.covariates[:, j]
        for j, name in enumerate(self.exposure_names):
            cols[name] = self.exposures[:, j]
        cols[self.outcome_name] = self.outcome
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class ShiftSpec:
    per_exposure_delta: Mapping[str, float]
    units: str = "raw"

    def __post_init__(self):
        if self.units not in ("raw", "sd_multiple"):
            raise ConfigError("shift units must be 'raw' or 'sd_multiple', got %r" % self.units)
        for name, d in self.per_exposure_delta.items():
            if not np.isfinite(d):
                raise ConfigError("shift for %s is not finite" % name)
        object.__setattr__(self, "per_exposure_delta", dict(self.per_exposure_delta))

    @classmethod
    def uniform(cls, names: Sequence[str], delta: float, units: str = "raw") -> "ShiftSpec":
        return cls({name: float(delta) for name in names}, units)

    def delta(self, name: str) -> float:
        return float(self.per_exposure_delta[name])

    def deltas(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.per_exposure_delta]
        if missing:
            raise ConfigError("no shift given for exposure(s): %s" % ", ".join(missing))
        return np.array([self.per_exposure_delta[n] for n in names], dtype=float)


@dataclass(frozen=True)
class AnalysisConfig:
    folds: int = 5
    max_depth: int = 2
    # None -> max(25, n // 20) of the data being searched
    min_obs: int | None = None
    significance_z: float = 1.96
    ratio_bounds: tuple[float, float] = (0.01, 100.0)
    roster: tuple[LearnerSpec, ...] = DEFAULT_ROSTER
    seed: int = 0
    inner_folds: int = 5
    max_thresholds: int = 1000
    ratio_method: str = "classification"
    direct_bins: int = 20
    outcome_scale: str = "auto"
    threads: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_obs is not None and self.min_obs < 10:
            raise ConfigError("min_obs must be >= 10")
        if not self.significance_z > 0:
            raise ConfigError("significance_z must be positive")
        lo, hi = self.ratio_bounds
        if not 0 < lo < 1 < hi:
            raise ConfigError("ratio_bounds must satisfy 0 < lo < 1 < hi")
        if not self.roster:
            raise ConfigError("learner roster is empty")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be >= 2")
        if self.ratio_method not in ("classification", "direct"):
            raise ConfigError("ratio_method must be 'classification' or 'direct'")
        if self.direct_bins < 5:
            raise ConfigError("direct_bins must be >= 5")
        if self.outcome_scale not in ("auto", "linear", "bounded_logit"):
            raise ConfigError("outcome_scale must be auto, linear or bounded_logit")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        object.__setattr__(self, "ratio_bounds", (float(lo), float(hi)))
        object.__setattr__(self, "roster", tuple(self.roster))

    def resolved_min_obs(self, n: int) -> int:
        if self.min_obs is not None:
            return self.min_obs
        return max(25, n // 20)

    def with_(self, **kw) -> "AnalysisConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "max_depth": self.max_depth,
            "min_obs": self.min_obs,
            "significance_z": self.significance_z,
            "ratio_bounds": list(self.ratio_bounds),
            "roster": [spec.to_dict() for spec in self.roster],
            "seed": self.seed,
            "inner_folds": self.inner_folds,
            "max_thresholds": self.max_thresholds,
            "ratio_method": self.ratio_method,
            "direct_bins": self.direct_bins,
            "outcome_scale": self.outcome_scale,
        }


def load_dataset(csv_path, roles: RoleMap) -> Dataset:
    """Read a CSV, keep the mapped columns and drop rows with missing values."""
    path = Path(csv_path)
    if not path.is_file():
        raise DataError("data file not found: %s" % path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError("cannot parse %s: %s" % (path, exc)) from exc
    absent = [c for c in roles.columns if c not in frame.columns]
    if absent:
        raise ConfigError("unmapped role: column(s) %s not in header" % ", ".join(absent))
    frame = frame[roles.columns]
    values = {}
    for col in roles.columns:
        raw = frame[col].str.strip()
        missing = raw.isin(["", "NA", "NaN", "nan", "null", "NULL"])
        parsed = pd.to_numeric(raw.where(~missing, None), errors="coerce")
        bad = parsed.isna() & ~missing
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError("non-numeric cell %r in column %s (row %d)" % (raw.iloc[row], col, row + 1))
        # to_numeric is not correctly rounded for long mantissas; numpy's parser is
        out = np.full(len(raw), np.nan)
        keep = ~missing.to_numpy()
        out[keep] = raw.to_numpy()[keep].astype(str).astype(float)
        values[col] = out
    table = pd.DataFrame(values)
    keep = np.isfinite(table.to_numpy()).all(axis=1)
    dropped = int((~keep).sum())
    if dropped:
        log.info("dropped %d rows with missing values", dropped)
    table = table[keep]
    if len(table) == 0:
        raise DataError("no rows left after dropping missing values")
    return Dataset(
        table[list(roles.covariates)].to_numpy(),
        table[list(roles.exposures)].to_numpy(),
        table[roles.outcome].to_numpy(),
        roles.covariates,
        roles.exposures,
        roles.outcome,
        dropped=dropped,
    )


def save_dataset(dataset: Dataset, csv_path) -> None:
    # default float formatting is the shortest repr, which round-trips exactly
    dataset.to_frame().to_csv(csv_path, index=False)


def resolve_shift(dataset: Dataset, spec: ShiftSpec) -> ShiftSpec:
    """Convert SD-multiple shifts to raw exposure units."""
    deltas = spec.deltas(dataset.exposure_names)
    if spec.units == "raw":
        return ShiftSpec(dict(zip(dataset.exposure_names, deltas)), "raw")
    sd = dataset.exposures.std(axis=0, ddof=1) if dataset.n > 1 else np.zeros(dataset.p)
    out = {}
    for k, name in enumerate(dataset.exposure_names):
        if not sd[k] > 0:
            raise DataError("exposure %s has zero variance; cannot scale shift by its SD" % name)
        out[name] = float(deltas[k] * sd[k])
    return ShiftSpec(out, "raw")


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in value.replace("\n", ",").split(",") if tok.strip())


@dataclass
class AnalysisSetup:
    """Everything read from one analysis config file."""

    roles: RoleMap
    shift: ShiftSpec
    config: AnalysisConfig
    data_path: Path | None = None
    extra: dict = field(default_factory=dict)


def parse_config(text: str, base_dir=None) -> AnalysisSetup:
    """Parse the flat key-value config ([columns], [shift], [search], [learners], [run])."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("malformed config: %s" % exc) from exc
    if not parser.has_section("columns"):
        raise ConfigError("config lacks a [columns] section")
    cols = parser["columns"]
    for role in ("covariates", "exposures", "outcome"):
        if not cols.get(role, "").strip():
            raise ConfigError("missing role: %s" % role)
    roles = RoleMap(_split_list(cols["covariates"]), _split_list(cols["exposures"]), cols["outcome"].strip())

    shift_sec = parser["shift"] if parser.has_section("shift") else {}
    units = shift_sec.get("units", "raw").strip()
    default = shift_sec.get("default")
    deltas = {}
    for name in roles.exposures:
        value = shift_sec.get(name, default)
        if value is None:
            raise ConfigError("no shift given for exposure %s" % name)
        try:
            deltas[name] = float(value)
        except ValueError:
            raise ConfigError("shift for %s is not a number: %r" % (name, value)) from None
    shift = ShiftSpec(deltas, units)

    kw: dict = {}
    search = parser["search"] if parser.has_section("search") else {}
    learn = parser["learners"] if parser.has_section("learners") else {}
    run = parser["run"] if parser.has_section("run") else {}
    try:
        for key, conv, sec in (
            ("max_depth", int, search),
            ("min_obs", int, search),
            ("significance_z", float, search),
            ("max_thresholds", int, search),
            ("inner_folds", int, learn),
            ("ratio_method", str, learn),
            ("direct_bins", int, learn),
            ("outcome_scale", str, learn),
            ("folds", int, run),
            ("seed", int, run),
            ("threads", int, run),
        ):
            if key in sec and str(sec[key]).strip():
                kw[key] = conv(str(sec[key]).strip())
        if "ratio_bounds" in learn:
            lo, hi = (float(v) for v in _split_list(learn["ratio_bounds"]))
            kw["ratio_bounds"] = (lo, hi)
    except ValueError as exc:
        raise ConfigError("bad config value: %s" % exc) from exc
    if "roster" in learn:
        lines = [ln.strip() for ln in learn["roster"].splitlines() if ln.strip()]
        if len(lines) == 1 and "," in lines[0]:
            lines = [tok.strip() for tok in lines[0].split(",") if tok.strip()]
        kw["roster"] = tuple(parse_learner_line(ln) for ln in lines)
    config = AnalysisConfig(**kw)

    data_path = None
    if run.get("data"):
        data_path = Path(run["data"].strip())
        if base_dir is not None and not data_path.is_absolute():
            data_path = Path(base_dir) / data_path
    return AnalysisSetup(roles, shift, config, data_path)


def load_config(path) -> AnalysisSetup:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found: %s" % path)
    return parse_config(path.read_text(), base_dir=path.parent)
