"""File formats, occurrence construction, covariate utilities and run
configuration.

Network data travel as long-format CSV: one row per observed cell,
1-based indices, dims declared in a leading comment. Absent cells are
unobserved. All outputs are UTF-8 with LF line endings and a canonical
(t, i, j) row order so round-trips are byte-stable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

from .nexmodel import DesignData
from .tensor3 import Tensor3

AdjacencyData = DesignData

SCENARIOS = ("raw", "padded1", "padded2")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class FormatError(ValueError):
    """Malformed data file."""


@dataclass(frozen=True)
class LongRecord:
    """One long-format row: cell indices, value, optional mask flag."""

    i: int
    j: int
    t: int
    value: int
    observed: int = 1
    week: int | None = None
    year: int | None = None


@dataclass(frozen=True)
class OccurrenceMatrix:
    """Binary taxa-by-time presence matrix tagged with its scenario."""

    values: np.ndarray
    scenario: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("occurrence must be a taxa x time matrix")
        if not np.all((values == 0.0) | (values == 1.0)):
            raise ValueError("occurrence must be binary")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


# ---------------------------------------------------------------------------
# long CSV network format
# ---------------------------------------------------------------------------


def _parse_comments(lines) -> tuple[dict, list[tuple[int, str]]]:
    meta = {}
    body = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if ":" in stripped:
                key, _, val = stripped.lstrip("#").partition(":")
                meta[key.strip()] = val.strip()
            continue
        body.append((lineno, stripped))
    return meta, body


_HEADERS = {
    ("i", "j", "t", "value"): (),
    ("i", "j", "t", "value", "observed"): ("observed",),
    ("i", "j", "t", "w", "r", "value"): ("w", "r"),
    ("i", "j", "t", "w", "r", "value", "observed"): ("w", "r", "observed"),
}


def read_long_csv(path) -> DesignData:
    """Read a long-format network CSV into a design-data container.

    Cells absent from the file are unobserved; a row with observed=0
    also marks its cell unobserved. Duplicate cells, non-binary values
    and ragged rows are errors naming the offending line.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        meta, body = _parse_comments(fh)
    if not body:
        raise FormatError(f"{path}: no header row")
    header_line, header_text = body[0]
    header = tuple(col.strip() for col in header_text.split(","))
    if header not in _HEADERS:
        raise FormatError(f"{path}: line {header_line}: unsupported header {header}")
    extras = _HEADERS[header]
    has_wr = "w" in extras
    has_observed = "observed" in extras

    if "dims" in meta:
        try:
            n, m, t = (int(x) for x in meta["dims"].split(","))
        except ValueError as exc:
            raise FormatError(f"{path}: bad dims comment {meta['dims']!r}") from exc
    else:
        n = m = t = 0  # infer from max indices below
    symmetric = meta.get("symmetric", "").lower() in ("1", "true", "yes")

    records = []
    for lineno, text in body[1:]:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != len(header):
            raise FormatError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(parts)}"
            )
        try:
            nums = [int(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: non-integer field") from exc
        if has_wr:
            i, j, tt, week, year = nums[:5]
            rest = nums[5:]
        else:
            i, j, tt = nums[:3]
            week = year = None
            rest = nums[3:]
        value = rest[0]
        observed = rest[1] if has_observed else 1
        if value not in (0, 1):
            raise FormatError(f"{path}: line {lineno}: value must be 0 or 1")
        if observed not in (0, 1):
            raise FormatError(f"{path}: line {lineno}: observed must be 0 or 1")
        if min(i, j, tt) < 1:
            raise FormatError(f"{path}: line {lineno}: indices are 1-based")
        records.append(
            (lineno, LongRecord(i=i, j=j, t=tt, value=value, observed=observed,
                                week=week, year=year))
        )

    if n == 0:
        if not records:
            raise FormatError(f"{path}: no dims comment and no rows")
        n = max(r.i for _, r in records)
        m = max(r.j for _, r in records)
        t = max(r.t for _, r in records)

    a = np.zeros((n, m, t))
    omega = np.zeros((n, m, t))
    week_of = np.zeros(t, dtype=np.int64) if has_wr else None
    year_of = np.zeros(t, dtype=np.int64) if has_wr else None
    seen = {}
    for lineno, rec in records:
        key = (rec.i, rec.j, rec.t)
        if key in seen:
            raise FormatError(
                f"{path}: line {lineno}: duplicate cell {key} "
                f"(first seen on line {seen[key]})"
            )
        seen[key] = lineno
        if rec.i > n or rec.j > m or rec.t > t:
            raise FormatError(
                f"{path}: line {lineno}: cell {key} outside dims ({n},{m},{t})"
            )
        if rec.observed:
            omega[rec.i - 1, rec.j - 1, rec.t - 1] = 1.0
            a[rec.i - 1, rec.j - 1, rec.t - 1] = float(rec.value)
        if has_wr:
            for arr, val in ((week_of, rec.week), (year_of, rec.year)):
                prior = arr[rec.t - 1]
                if prior and prior != val:
                    raise FormatError(
                        f"{path}: line {lineno}: conflicting week/year for t={rec.t}"
                    )
                arr[rec.t - 1] = val
    if has_wr:
        for name, arr in (("week", week_of), ("year", year_of)):
            if np.any(arr == 0):
                missing = int(np.argmin(arr > 0)) + 1
                raise FormatError(
                    f"{path}: {name} index unset for t={missing}; every time "
                    "slice needs at least one row"
                )

    return DesignData(
        a=Tensor3(a),
        omega=Tensor3(omega),
        week_of=week_of,
        year_of=year_of,
        symmetric=symmetric,
    )


def write_long_csv(data: DesignData, path) -> None:
    """Write observed cells in canonical (t, i, j) order."""
    n, m, t = data.dims
    has_wr = data.week_of is not None and data.year_of is not None
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dims: {n},{m},{t}\n")
        if data.symmetric:
            fh.write("# symmetric: true\n")
        if has_wr:
            fh.write("i,j,t,w,r,value\n")
        else:
            fh.write("i,j,t,value\n")
        omega = data.omega.values
        a = data.a.values
        for tt in range(t):
            rows, cols = np.nonzero(omega[:, :, tt])
            for i, j in zip(rows, cols):
                val = int(a[i, j, tt])
                if has_wr:
                    fh.write(
                        f"{i + 1},{j + 1},{tt + 1},{int(data.week_of[tt])},"
                        f"{int(data.year_of[tt])},{val}\n"
                    )
                else:
                    fh.write(f"{i + 1},{j + 1},{tt + 1},{val}\n")


def write_pi_csv(pi: Tensor3, path) -> None:
    """Write a real-valued probability tensor as long CSV (all cells)."""
    n, m, t = pi.dims
    values = pi.values
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dims: {n},{m},{t}\n")
        fh.write("i,j,t,pi\n")
        for tt in range(t):
            for i in range(n):
                for j in range(m):
                    fh.write(f"{i + 1},{j + 1},{tt + 1},{values[i, j, tt]!r}\n")


def read_pi_csv(path) -> Tensor3:
    """Read a long-format probability tensor written by write_pi_csv."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        meta, body = _parse_comments(fh)
    if "dims" not in meta:
        raise FormatError(f"{path}: missing dims comment")
    n, m, t = (int(x) for x in meta["dims"].split(","))
    values = np.full((n, m, t), np.nan)
    header = body[0][1]
    if tuple(c.strip() for c in header.split(",")) != ("i", "j", "t", "pi"):
        raise FormatError(f"{path}: unsupported header {header!r}")
    for lineno, text in body[1:]:
        parts = text.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 fields")
        i, j, tt = int(parts[0]), int(parts[1]), int(parts[2])
        values[i - 1, j - 1, tt - 1] = float(parts[3])
    if np.any(np.isnan(values)):
        raise FormatError(f"{path}: probability tensor has missing cells")
    return Tensor3(values)


# ---------------------------------------------------------------------------
# occurrence construction
# ---------------------------------------------------------------------------


def _neighbor_maps(t: int, week_of, year_of):
    """Previous/next week index (or -1) for each flat time, within year."""
    if week_of is None:
        weeks = np.arange(1, t + 1)
        years = np.ones(t, dtype=np.int64)
    else:
        weeks = np.asarray(week_of, dtype=np.int64)
        years = (
            np.asarray(year_of, dtype=np.int64)
            if year_of is not None
            else np.ones(t, dtype=np.int64)
        )
    lookup = {(int(years[idx]), int(weeks[idx])): idx for idx in range(t)}
    prev_of = np.full(t, -1, dtype=np.int64)
    next_of = np.full(t, -1, dtype=np.int64)
    for idx in range(t):
        prev_of[idx] = lookup.get((int(years[idx]), int(weeks[idx]) - 1), -1)
        next_of[idx] = lookup.get((int(years[idx]), int(weeks[idx]) + 1), -1)
    return prev_of, next_of


def _pad_occurrence(raw: np.ndarray, scenario: str, prev_of, next_of) -> np.ndarray:
    if scenario == "raw":
        return raw.copy()
    padded = raw.copy()
    t = raw.shape[1]
    for idx in range(t):
        prev_col = raw[:, prev_of[idx]] if prev_of[idx] >= 0 else 0.0
        next_col = raw[:, next_of[idx]] if next_of[idx] >= 0 else 0.0
        if scenario == "padded1":
            padded[:, idx] = np.maximum(padded[:, idx], np.maximum(prev_col, next_col))
        else:  # padded2: fill where both neighbors are present
            both = np.minimum(
                raw[:, prev_of[idx]] if prev_of[idx] >= 0 else np.zeros(raw.shape[0]),
                raw[:, next_of[idx]] if next_of[idx] >= 0 else np.zeros(raw.shape[0]),
            )
            padded[:, idx] = np.maximum(padded[:, idx], both)
    return padded


def build_occurrence(
    interactions: DesignData, scenario: str, plant_occ: np.ndarray | None = None
) -> tuple[OccurrenceMatrix, OccurrenceMatrix]:
    """Construct (plant, insect) presence matrices from interaction data.

    Plants (rows) are measured without error: a supplied matrix passes
    through unchanged, otherwise raw observed-in-some-interaction
    presence is used. Insects (columns) get the requested scenario:
    raw presence, dilation by one week each side (padded1), or raw plus
    fill where both neighboring weeks are present (padded2). Padding
    never crosses year boundaries.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    n, m, t = interactions.dims
    observed_edge = interactions.a.values * interactions.omega.values
    insect_raw = (observed_edge.sum(axis=0) > 0).astype(np.float64)  # (m, t)
    plant_raw = (observed_edge.sum(axis=1) > 0).astype(np.float64)  # (n, t)

    prev_of, next_of = _neighbor_maps(t, interactions.week_of, interactions.year_of)
    insect = _pad_occurrence(insect_raw, scenario, prev_of, next_of)

    if plant_occ is not None:
        plant_occ = np.asarray(plant_occ, dtype=np.float64)
        if plant_occ.shape != (n, t):
            raise ValueError(f"plant occurrence must be {(n, t)}, got {plant_occ.shape}")
        plant = OccurrenceMatrix(values=plant_occ, scenario="raw")
    else:
        plant = OccurrenceMatrix(values=plant_raw, scenario="raw")
    return plant, OccurrenceMatrix(values=insect, scenario=scenario)


def cooccurrence(plant: OccurrenceMatrix, insect: OccurrenceMatrix) -> Tensor3:
    """O[i, j, t] = plant i present and insect j present at time t."""
    p = plant.values
    q = insect.values
    if p.shape[1] != q.shape[1]:
        raise ValueError("plant and insect occurrence have different time spans")
    return Tensor3(p[:, None, :] * q[None, :, :])


def read_occurrence_csv(path) -> np.ndarray:
    """Read taxon,t,value rows into a binary taxa x time matrix."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        meta, body = _parse_comments(fh)
    header = tuple(c.strip() for c in body[0][1].split(","))
    if header != ("taxon", "t", "value"):
        raise FormatError(f"{path}: unsupported header {header}")
    rows = []
    for lineno, text in body[1:]:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise FormatError(f"{path}: line {lineno}: expected 3 fields")
        rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
    if "dims" in meta:
        n_taxa, t = (int(x) for x in meta["dims"].split(","))
    else:
        n_taxa = max(r[0] for r in rows)
        t = max(r[1] for r in rows)
    out = np.zeros((n_taxa, t))
    for taxon, tt, val in rows:
        if val not in (0, 1):
            raise FormatError(f"{path}: occurrence values must be binary")
        out[taxon - 1, tt - 1] = float(val)
    return out


def write_occurrence_csv(occ: OccurrenceMatrix, path) -> None:
    values = occ.values
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dims: {values.shape[0]},{values.shape[1]}\n")
        fh.write(f"# scenario: {occ.scenario}\n")
        fh.write("taxon,t,value\n")
        for tt in range(values.shape[1]):
            for taxon in np.nonzero(values[:, tt])[0]:
                fh.write(f"{taxon + 1},{tt + 1},1\n")


def read_covariates_csv(path, t: int) -> np.ndarray:
    """Read t,temperature rows into a length-t vector."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        _, body = _parse_comments(fh)
    header = tuple(c.strip() for c in body[0][1].split(","))
    if header != ("t", "temperature"):
        raise FormatError(f"{path}: unsupported header {header}")
    out = np.full(t, np.nan)
    for lineno, text in body[1:]:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 2 fields")
        tt = int(parts[0])
        if not 1 <= tt <= t:
            raise FormatError(f"{path}: line {lineno}: t={tt} out of range 1..{t}")
        out[tt - 1] = float(parts[1])
    if np.any(np.isnan(out)):
        missing = int(np.argmax(np.isnan(out))) + 1
        raise FormatError(f"{path}: missing temperature for t={missing}")
    return out


# ---------------------------------------------------------------------------
# growth degree days
# ---------------------------------------------------------------------------


def gdd(t_max, t_min, t_base: float = 0.0):
    """Clamped midpoint excess max(0, (t_max + t_min)/2 - t_base)."""
    t_max = np.asarray(t_max, dtype=np.float64)
    t_min = np.asarray(t_min, dtype=np.float64)
    if not (np.all(np.isfinite(t_max)) and np.all(np.isfinite(t_min))):
        raise ValueError("temperatures must be finite")
    out = np.maximum(0.0, (t_max + t_min) / 2.0 - t_base)
    return float(out) if out.ndim == 0 else out


def cumulative_gdd(series, year_of=None) -> np.ndarray:
    """Running sum of degree-day values, restarting at season boundaries."""
    series = np.asarray(series, dtype=np.float64)
    if year_of is None:
        return np.cumsum(series)
    year_of = np.asarray(year_of, dtype=np.int64)
    out = np.empty_like(series)
    for year in np.unique(year_of):
        sel = year_of == year
        out[sel] = np.cumsum(series[sel])
    return out


def build_time_distances(week_of, year_of) -> tuple[np.ndarray, np.ndarray]:
    """Within-season and across-year distance matrices on the flat grid."""
    weeks = np.asarray(week_of, dtype=np.float64)
    years = np.asarray(year_of, dtype=np.float64)
    if weeks.shape != years.shape:
        raise ValueError("week and year maps must conform")
    d1 = np.abs(weeks[:, None] - weeks[None, :])
    d2 = np.abs(years[:, None] - years[None, :])
    return d1, d2


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

SIM_DEFAULTS: dict = {
    "generator": "nex",
    "n": 20,
    "m": 25,
    "t": 40,
    "k_true": 5,
    "h_true": 2,
    "blocks": 4,
    "k_w": 0.04,
    "k_mu": 0.04,
    "sigma2": None,
    "mu0": -0.6,
    "mu_sd": 1.0,
    "a1": 2.0,
    "a2": 2.0,
    "seed": 0,
    "holdout": None,
}

MODEL_DEFAULTS: dict = {
    "variant": "bipartite",
    "h": 10,
    "k": 10,
    "k_w": 0.02,
    "k_w2": None,
    "k_mu": 0.02,
    "sigma2": None,
    "k_star": 7,
    "mu0": None,
    "mgp_k": [7.0, 6.0, 2.5, 7.5],
    "mgp_h": [7.0, 6.0, 3.0, 12.0],
    "dlf_h": 5,
    "dlf_a1": 2.0,
    "dlf_a2": 2.0,
    "eta0": 100.0,
    "sigma02": 1.0,
    "beta_mean": 0.0,
    "beta_sd": 1.0,
}

HMC_DEFAULTS: dict = {
    "warmup": 2000,
    "draws": 2000,
    "target_accept": 0.95,
    "max_leapfrog": 4096,
    "init_step_size": 0.1,
    "trajectory_length": 1.0,
    "chains": 1,
    "seed": 0,
    "divergence_threshold": 1000.0,
}

_SECTION_DEFAULTS = {"sim": SIM_DEFAULTS, "model": MODEL_DEFAULTS, "hmc": HMC_DEFAULTS}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration sections for one run."""

    sim: dict
    model: dict
    hmc: dict

    def resolved(self) -> dict:
        return {"sim": dict(self.sim), "model": dict(self.model), "hmc": dict(self.hmc)}

    def echo_yaml(self) -> str:
        return yaml.safe_dump(self.resolved(), sort_keys=True)


def _merge_section(name: str, given: dict) -> dict:
    defaults = _SECTION_DEFAULTS[name]
    merged = dict(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {name}.{key}")
        merged[key] = val
    return merged


def load_run_config(source) -> RunConfig:
    """Parse a YAML config (path or text); defaults fill absent keys.

    Unknown keys are rejected; the trait dimension may not exceed the
    exemplar dimension.
    """
    if not isinstance(source, str) or os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    for section in raw:
        if section not in _SECTION_DEFAULTS:
            raise ConfigError(f"unknown section {section!r}")
        if raw[section] is None:
            raw[section] = {}
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
    cfg = RunConfig(
        sim=_merge_section("sim", raw.get("sim", {})),
        model=_merge_section("model", raw.get("model", {})),
        hmc=_merge_section("hmc", raw.get("hmc", {})),
    )
    if cfg.model["h"] > cfg.model["k"]:
        raise ConfigError(
            f"model.h={cfg.model['h']} exceeds model.k={cfg.model['k']}; the "
            "trait dimension is bounded by the exemplar dimension"
        )
    for key in ("warmup", "draws", "chains"):
        if not isinstance(cfg.hmc[key], int) or isinstance(cfg.hmc[key], bool):
            raise ConfigError(f"hmc.{key} must be an integer")
    if cfg.sim["holdout"] is not None:
        holdout = cfg.sim["holdout"]
        if not isinstance(holdout, (list, tuple)) or not all(
            isinstance(x, int) for x in holdout
        ):
            raise ConfigError("sim.holdout must be a list of slice indices")
    return cfg
