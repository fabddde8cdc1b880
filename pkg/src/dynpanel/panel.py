"""Long-format panel ingestion, type coercion and grid completion."""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, InputOutputError

NA_VALUES = ["", "NA"]
_INT_RE = re.compile(r"^[+-]?\d+$")
_BOOL_TRUE = {"TRUE", "True", "true"}
_BOOL_FALSE = {"FALSE", "False", "false"}
KINDS = ("numeric", "integer", "boolean", "categorical")


@dataclass
class PanelData:
    """Balanced long-format panel sorted by group, then time.

    ``frame`` holds one row per (group, time) pair. Numeric, integer and
    boolean columns are float64 with NaN as the missing marker; categorical
    columns are unordered ``pd.Categorical`` with a fixed level list.
    ``time_index`` runs 1..T in time order.
    """

    frame: pd.DataFrame
    time: str
    group: Optional[str]
    groups: list
    times: np.ndarray
    kinds: dict[str, str]
    levels: dict[str, list[str]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.groups)

    @property
    def T(self) -> int:
        return len(self.times)

    @property
    def group_column(self) -> str:
        return self.group if self.group is not None else ".group"

    @property
    def variables(self) -> list[str]:
        return [c for c in self.frame.columns if c not in (self.time, self.group_column)]

    def grid(self, name: str) -> np.ndarray:
        """Column as an (N, T) float array; categorical columns give level codes."""
        col = self.frame[name]
        if self.kinds[name] == "categorical":
            codes = col.cat.codes.to_numpy().astype(float)
            codes[codes < 0] = np.nan
            vals = codes
        else:
            vals = col.to_numpy(dtype=float)
        return vals.reshape(self.N, self.T)

    def group_labels(self) -> list[str]:
        """Labels used in parameter names (``id38`` for numeric ids)."""
        out = []
        for g in self.groups:
            text = _fmt_value(g)
            if self.group is not None and _INT_RE.match(text):
                text = f"{self.group}{text}"
            out.append(text)
        return out

    def copy_with(self, frame: pd.DataFrame) -> "PanelData":
        return PanelData(frame, self.time, self.group, list(self.groups), self.times.copy(),
                         dict(self.kinds), {k: list(v) for k, v in self.levels.items()})


def _fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def _classify(name: str, raw: pd.Series) -> tuple[str, pd.Series, Optional[list[str]]]:
    """Coerce a column of strings (NaN = missing) to a typed column."""
    present = raw.dropna()
    tokens = present.astype(str)
    if (tokens.str.startswith("[") | tokens.str.startswith("{")).any():
        raise DataError(f"column {name!r}: list/nested values are not supported")
    if len(tokens) == 0:
        return "numeric", pd.Series(np.nan, index=raw.index, dtype=float), None
    uniq = set(tokens.unique())
    if uniq <= (_BOOL_TRUE | _BOOL_FALSE):
        vals = raw.map(lambda v: np.nan if pd.isna(v) else (1.0 if v in _BOOL_TRUE else 0.0))
        return "boolean", vals.astype(float), None
    if all(_INT_RE.match(t) for t in uniq):
        return "integer", raw.astype(float), None
    num = pd.to_numeric(present, errors="coerce")
    if not num.isna().any():
        if not np.isfinite(num.to_numpy(dtype=float)).all():
            raise DataError(f"column {name!r}: non-finite values are not supported")
        # astype(float) parses exactly, to_numeric may be off by an ulp
        return "numeric", raw.astype(float), None
    return "categorical", raw, None


def _from_typed_series(name: str, s: pd.Series) -> tuple[str, pd.Series]:
    if isinstance(s.dtype, pd.CategoricalDtype):
        return "categorical", s.astype(object).where(s.notna(), np.nan)
    if pd.api.types.is_bool_dtype(s.dtype):
        return "boolean", s.astype(float)
    if pd.api.types.is_integer_dtype(s.dtype):
        return "integer", s.astype(float)
    if pd.api.types.is_float_dtype(s.dtype):
        vals = s.to_numpy(dtype=float)
        if np.isinf(vals).any():
            raise DataError(f"column {name!r}: non-finite values are not supported")
        return "numeric", s.astype(float)
    if pd.api.types.is_datetime64_any_dtype(s.dtype):
        # classes are dropped, keep the storage value (days since epoch)
        days = (s - pd.Timestamp(0)).dt.days
        return "integer", days.astype(float)
    if s.dtype == object or pd.api.types.is_string_dtype(s.dtype):
        if s.map(lambda v: isinstance(v, (list, tuple, dict, set, np.ndarray))).any():
            raise DataError(f"column {name!r}: list columns are not supported")
        present = s.dropna()
        if len(present) and present.map(lambda v: isinstance(v, (bool, np.bool_))).all():
            return "boolean", s.map(lambda v: np.nan if pd.isna(v) else float(v)).astype(float)
        if len(present) and present.map(lambda v: isinstance(v, (int, float, np.number))).all():
            return _from_typed_series(name, pd.to_numeric(s))
        return "categorical", s.map(lambda v: v if pd.isna(v) else str(v))
    raise DataError(f"column {name!r}: unsupported column type {s.dtype}")


def _time_values(name: str, s: pd.Series) -> pd.Series:
    """Time column to numbers; non-numeric labels become sorted factor codes."""
    if s.isna().any():
        raise DataError(f"time column {name!r} has missing values")
    if isinstance(s.dtype, pd.CategoricalDtype) or s.dtype == object or pd.api.types.is_string_dtype(s.dtype):
        num = pd.to_numeric(s, errors="coerce")
        if not num.isna().any():
            s = num
        else:
            if s.map(lambda v: isinstance(v, (list, dict, tuple))).any():
                raise DataError(f"time column {name!r} is not orderable")
            try:
                levels = sorted(s.astype(str).unique())
            except TypeError as exc:
                raise DataError(f"time column {name!r} is not orderable") from exc
            lookup = {v: i + 1 for i, v in enumerate(levels)}
            return s.astype(str).map(lookup).astype(float)
    if pd.api.types.is_bool_dtype(s.dtype):
        raise DataError(f"time column {name!r} is not orderable")
    vals = pd.to_numeric(s, errors="coerce")
    if vals.isna().any() or not np.isfinite(vals.to_numpy(dtype=float)).all():
        raise DataError(f"time column {name!r} is not orderable")
    return vals.astype(float)


def _group_values(s: pd.Series) -> pd.Series:
    if s.isna().any():
        raise DataError("group column has missing values")
    if s.dtype == object or pd.api.types.is_string_dtype(s.dtype):
        num = pd.to_numeric(s, errors="coerce")
        if not num.isna().any() and all(_INT_RE.match(str(v)) for v in s.unique()):
            return num.astype(np.int64)
        return s.astype(str)
    if pd.api.types.is_float_dtype(s.dtype) and (s % 1 == 0).all():
        return s.astype(np.int64)
    if isinstance(s.dtype, pd.CategoricalDtype):
        return s.astype(str)
    return s


def panel_from_frame(
    df: pd.DataFrame,
    time: str,
    group: Optional[str] = None,
    *,
    _raw_strings: bool = False,
) -> PanelData:
    """Build a :class:`PanelData` from a data frame in long format."""
    if time not in df.columns:
        raise DataError(f"time column {time!r} not found in data")
    if group is not None and group not in df.columns:
        raise DataError(f"group column {group!r} not found in data")
    df = df.reset_index(drop=True)
    tvals = _time_values(time, df[time])
    gcol = group if group is not None else ".group"
    gvals = _group_values(df[group]) if group is not None else pd.Series(1, index=df.index)
    keys = pd.DataFrame({"g": gvals, "t": tvals})
    dup = keys.duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise DataError(
            f"duplicate row for group {keys.g.iloc[row]!r} at time {keys.t.iloc[row]:g} "
            f"(row {row + 2} of the data)"
        )
    times = np.sort(tvals.unique())
    if len(times) > 1:
        steps = np.diff(times)
        consecutive = np.allclose(steps, 1.0) and float(times[0]).is_integer()
    else:
        consecutive = True
    if not consecutive:
        warnings.warn(
            f"time column {time!r} is not a run of consecutive integers; "
            "re-indexing time points by rank"
        )
    groups = sorted(gvals.unique(), key=lambda v: (str(type(v)), v))

    kinds: dict[str, str] = {}
    columns: dict[str, pd.Series] = {}
    # a typed categorical keeps its declared level order, unused levels included
    declared = {n: [str(v) for v in df[n].cat.categories] for n in df.columns
                if isinstance(df[n].dtype, pd.CategoricalDtype) and n not in (time, group)}
    for name in df.columns:
        if name in (time, group):
            continue
        if _raw_strings:
            kind, col, _ = _classify(name, df[name])
        else:
            kind, col = _from_typed_series(name, df[name])
        kinds[name] = kind
        columns[name] = col

    full = pd.MultiIndex.from_product([groups, times], names=[gcol, time])
    body = pd.DataFrame(columns, index=df.index)
    body.index = pd.MultiIndex.from_arrays([gvals.to_numpy(), tvals.to_numpy()], names=[gcol, time])
    body = body.reindex(full)
    levels: dict[str, list[str]] = {}
    for name, kind in kinds.items():
        if kind == "categorical":
            s = body[name]
            present = s.dropna()
            lv = declared.get(name) or list(dict.fromkeys(present.astype(str)))
            levels[name] = lv
            body[name] = pd.Categorical(s.where(s.isna(), s.astype(str)), categories=lv)
        else:
            body[name] = body[name].astype(float)
    frame = body.reset_index()
    if not consecutive:
        rank = {v: i + 1 for i, v in enumerate(times)}
        frame[time] = frame[time].map(rank).astype(float)
        times = np.arange(1, len(times) + 1, dtype=float)
    if group is None:
        frame = frame.drop(columns=[gcol])
        frame.insert(0, gcol, 1)
    return PanelData(frame, time, group, list(groups), times, kinds, levels)


def load_panel(path: str | Path, time: str, group: Optional[str] = None) -> PanelData:
    """Read a CSV file (header row, comma separated, ``NA``/empty = missing)."""
    path = Path(path)
    if not path.exists():
        raise InputOutputError(f"data file not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=NA_VALUES)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    if time in raw.columns:
        raw[time] = _coerce_raw_key(raw[time])
    if group is not None and group in raw.columns:
        raw[group] = _coerce_raw_key(raw[group])
    return panel_from_frame(raw, time, group, _raw_strings=True)


def _coerce_raw_key(s: pd.Series) -> pd.Series:
    num = pd.to_numeric(s, errors="coerce")
    if s.notna().all() and not num.isna().any():
        return num
    return s


def to_frame(d: PanelData, include_group: bool = True) -> pd.DataFrame:
    """Typed frame with original group/time values (categoricals as strings)."""
    out = d.frame.copy()
    if d.group is None and not include_group:
        out = out.drop(columns=[d.group_column])
    return out


def _format_cell(v, kind: str) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)) or v is pd.NA:
        return "NA"
    if kind == "integer":
        return str(int(v))
    if kind == "boolean":
        return "TRUE" if v else "FALSE"
    if kind == "numeric":
        return repr(float(v))
    return str(v)


def write_panel(d: PanelData, path: str | Path) -> None:
    """Write the panel in the same CSV dialect :func:`load_panel` reads."""
    cols = ([d.group] if d.group is not None else []) + [d.time] + d.variables
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        frame = d.frame
        data = {c: frame[c].tolist() for c in cols}
        kinds = dict(d.kinds)
        kinds[d.time] = "integer" if np.all(np.mod(d.times, 1) == 0) else "numeric"
        if d.group is not None:
            kinds[d.group] = "raw"
        for i in range(len(frame)):
            w.writerow([_format_cell(data[c][i], kinds.get(c, "raw")) for c in cols])


def conform(newdata: pd.DataFrame, like: PanelData, allow_new_groups: bool = True) -> PanelData:
    """Coerce a new data frame to the schema of a training panel.

    Categorical levels must be a subset of the training levels; time points
    must lie inside the training range.
    """
    df = newdata.copy()
    if like.group is None and like.group_column not in df.columns:
        df[like.group_column] = 1
    for col in (like.time, like.group_column):
        if col not in df.columns:
            raise DataError(f"newdata lacks column {col!r}")
    for name, kind in like.kinds.items():
        if name not in df.columns:
            continue
        s = df[name]
        if kind == "categorical":
            present = s.dropna().astype(str)
            unknown = sorted(set(present) - set(like.levels[name]))
            if unknown:
                raise DataError(
                    f"column {name!r} has levels not present in the training data: {', '.join(unknown)}"
                )
            df[name] = s.map(lambda v: v if pd.isna(v) else str(v))
        else:
            if s.dtype == object:
                s = s.map(lambda v: np.nan if pd.isna(v) else (
                    1.0 if v in _BOOL_TRUE or v is True else 0.0 if v in _BOOL_FALSE or v is False else v))
            df[name] = pd.to_numeric(s, errors="raise").astype(float)
    tvals = _time_values(like.time, df[like.time])
    lo, hi = like.times.min(), like.times.max()
    if ((tvals < lo) | (tvals > hi)).any():
        raise DataError(
            "newdata contains time points outside the fitted range; forecasting beyond "
            "the observed time points is not supported"
        )
    df[like.time] = tvals
    group = like.group_column
    gvals = _group_values(df[group]) if like.group is not None else pd.Series(1, index=df.index)
    df[group] = gvals
    if df.duplicated([group, like.time]).any():
        raise DataError("newdata has duplicate (group, time) rows")
    groups = sorted(gvals.unique(), key=lambda v: (str(type(v)), v))
    if not allow_new_groups and set(groups) - set(like.groups):
        raise DataError("newdata contains groups not present in the training data")
    times = np.sort(tvals.unique())
    full = pd.MultiIndex.from_product([groups, times], names=[group, like.time])
    body = df.set_index([group, like.time]).reindex(full)
    for name, kind in like.kinds.items():
        if name not in body.columns:
            continue
        if kind == "categorical":
            body[name] = pd.Categorical(body[name], categories=like.levels[name])
    frame = body.reset_index()
    kinds = {k: v for k, v in like.kinds.items() if k in frame.columns}
    extra = [c for c in frame.columns if c not in kinds and c not in (group, like.time)]
    for c in extra:
        kind, col = _from_typed_series(c, frame[c])
        kinds[c] = kind
        frame[c] = col if kind != "categorical" else pd.Categorical(col)
    levels = {k: like.levels[k] for k in kinds if k in like.levels}
    for c in extra:
        if kinds[c] == "categorical":
            levels[c] = list(frame[c].cat.categories)
    return PanelData(frame, like.time, like.group, groups, times, kinds, levels)


def time_positions(d: PanelData, like: PanelData) -> np.ndarray:
    """0-based positions of ``d.times`` inside the training time grid."""
    lookup = {float(t): i for i, t in enumerate(like.times)}
    try:
        return np.array([lookup[float(t)] for t in d.times], dtype=int)
    except KeyError as exc:
        raise DataError(f"time point {exc.args[0]:g} is not part of the training time grid") from None


def forward_fill(grid: np.ndarray) -> np.ndarray:
    """Last observation carried forward along the time axis of an (N, T) array."""
    out = grid.copy()
    n, t = out.shape
    idx = np.where(~np.isnan(out), np.arange(t)[None, :], -1)
    np.maximum.accumulate(idx, axis=1, out=idx)
    rows = np.arange(n)[:, None]
    filled = out[rows, np.maximum(idx, 0)]
    return np.where(idx >= 0, filled, np.nan)


def complete_columns(d: PanelData, names: Sequence[str]) -> None:
    missing = [n for n in names if n not in d.kinds]
    if missing:
        raise DataError(f"variable(s) not found in data: {', '.join(missing)}")
