"""CSV ingestion, run configuration and report serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from threshreg import __version__
from threshreg.errors import InputError, MissingValue, ParseError, TooFewRows
from threshreg.model import Dataset

__all__ = [
    "RunConfig",
    "config_hash",
    "format_number",
    "load_csv",
    "provenance",
    "rows_to_tsv",
    "to_json",
    "to_tsv_rows",
]

_MISSING = {"", "na", "nan", "null", "none", "."}
_LAG_NAME = re.compile(r"^L(\d+)\.(.+)$")


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's output.

    Lagged columns are referred to as ``L<k>.<column>``; each one must be
    declared in ``lags`` as ``(column, k)``.  The first ``max(k)`` rows are
    dropped so every observation has its lags.
    """

    input_path: str | None = None
    response: str = "y"
    regressors: tuple[str, ...] = ()
    threshold_var: str = "q"
    lags: tuple[tuple[str, int], ...] = ()
    threshold_in_regressors: bool = True
    trim: float = 0.05
    grid_points: int | None = None
    kernel: str = "epanechnikov"
    bandwidth: float | None = None
    boot_reps: int = 399
    levels: tuple[float, ...] = (0.95,)
    quantile_points: int = 10
    seed: int = 0
    fmt: str = "tsv"
    out: str | None = None
    workers: int = 1
    # simulate only
    design: str | None = None
    n: int | None = None
    experiment: str = "size"
    reps: int = 1000
    gamma0: float | None = None
    delta_multipliers: tuple[float, ...] = (1.0, 2.0, 4.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.trim < 0.5:
            raise InputError("--trim must lie in [0, 0.5)")
        if self.grid_points is not None and self.grid_points < 3:
            raise InputError("--grid-points must be at least 3")
        if self.boot_reps < 1:
            raise InputError("--boot-reps must be positive")
        if any(not 0.0 < s < 1.0 for s in self.levels):
            raise InputError("--level values must lie in (0, 1)")
        if self.fmt not in ("tsv", "json"):
            raise InputError("--format must be tsv or json")
        if self.kernel not in ("epanechnikov", "gaussian"):
            raise InputError("--kernel must be epanechnikov or gaussian")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InputError("--bandwidth must be positive")
        for col, k in self.lags:
            if k < 1:
                raise InputError(f"lag of {col!r} must be at least 1")

    def hashed_fields(self) -> dict[str, Any]:
        """Fields that affect results; output location and worker count do not."""
        d = asdict(self)
        for key in ("out", "workers", "input_path"):
            d.pop(key)
        return d


def _file_digest(path: str | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: RunConfig) -> str:
    payload = {"config": config.hashed_fields(), "input_sha256": _file_digest(config.input_path)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config: RunConfig, **extra: Any) -> dict[str, Any]:
    out = {
        "version": __version__,
        "seed": config.seed,
        "config_hash": config_hash(config),
        "input_sha256": _file_digest(config.input_path),
    }
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _parse_cell(text: str, row: int, column: str) -> float:
    s = text.strip()
    if s.lower() in _MISSING:
        raise MissingValue(f"missing value in column {column!r} at row {row}", row, column)
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"non-numeric value {s!r} in column {column!r} at row {row}", row, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {s!r} in column {column!r} at row {row}", row, column)
    return v


def _read_columns(path: str, wanted: set[str]) -> dict[str, np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file: a header row is required", 1) from None
        except csv.Error as exc:
            raise ParseError(f"malformed header: {exc}", 1) from None
        unknown = sorted(wanted - set(header))
        if unknown:
            raise InputError(f"columns not found in header: {', '.join(unknown)}")
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header", 1)
        pos = {name: header.index(name) for name in sorted(wanted, key=header.index)}
        cols: dict[str, list[float]] = {name: [] for name in wanted}
        try:
            for row in reader:
                line = reader.line_num
                if not any(cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(f"row {line} has {len(row)} fields, header has {len(header)}", line)
                for name, j in pos.items():
                    cols[name].append(_parse_cell(row[j], line, name))
        except csv.Error as exc:
            raise ParseError(f"malformed CSV near row {reader.line_num}: {exc}", reader.line_num) from None
    return {name: np.asarray(v, dtype=np.float64) for name, v in cols.items()}


def load_csv(path: str | Path, config: RunConfig) -> Dataset:
    """Read a CSV file into a :class:`Dataset` laid out as ``[1, regressors, q]``.

    A threshold variable listed among ``regressors`` is moved to the last
    column.  Rows are numbered as in the file, header included, so the first
    data row is row 2.
    """
    lag_of = {f"L{k}.{col}": (col, k) for col, k in config.lags}
    names = [config.response, *config.regressors, config.threshold_var]
    for name in names:
        m = _LAG_NAME.match(name)
        if m and name not in lag_of:
            raise InputError(f"{name!r} looks like a lag; declare it with --lag {m.group(2)}:{m.group(1)}")
    base = {lag_of[n][0] if n in lag_of else n for n in names}
    raw = _read_columns(str(path), base)
    n_rows = len(next(iter(raw.values())))
    drop = max((k for _, k in config.lags), default=0)
    if n_rows - drop < 1:
        raise TooFewRows(f"{n_rows} data rows leave nothing after dropping {drop} for lags")

    def column(name: str) -> np.ndarray:
        if name in lag_of:
            col, k = lag_of[name]
            return raw[col][drop - k : n_rows - k]
        return raw[name][drop:]

    regs = [r for r in config.regressors if r != config.threshold_var]
    y = column(config.response)
    q = column(config.threshold_var)
    Z = np.column_stack([column(r) for r in regs]) if regs else None
    k = 1 + len(regs) + (1 if config.threshold_in_regressors else 0)
    if y.size < 2 * (k + 1):
        raise TooFewRows(f"{y.size} usable rows; at least {2 * (k + 1)} are needed for {k} regressors per regime")
    if config.threshold_in_regressors:
        return Dataset.from_columns(y, q, Z, names=("const", *regs, config.threshold_var))
    return Dataset.from_columns(y, q, Z, names=("const", *regs), q_in_regressors=False)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def format_number(x: Any) -> str:
    """Shortest round-trip text, so printed values equal library values exactly."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if x is None:
        return ""
    return str(x)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else format_number(v)
    return obj


def to_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _flatten(prefix: str, obj: Any, out: list[tuple[str, str]]) -> None:
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, (list, tuple, np.ndarray)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, format_number(obj)))


def to_tsv_rows(obj: dict[str, Any]) -> str:
    """Flatten a nested report into ``key<TAB>value`` lines."""
    rows: list[tuple[str, str]] = []
    _flatten("", obj, rows)
    return "key\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in rows)


def rows_to_tsv(header: list[str], rows: list[list[Any]]) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(format_number(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
