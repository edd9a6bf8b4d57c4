"""CSV ingestion with column roles, label encoding and a seeded train/test split."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FairnessWarning, SchemaError
from .mixture import MISSING_LEVEL

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


def _names(value, key) -> tuple:
    if value is None:
        return ()
    if isinstance(value, str):
        value = [value]
    if not all(isinstance(v, str) for v in value):
        raise SchemaError(f"schema field {key!r} must be a column name or a list of names")
    return tuple(value)


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles and split settings for a CSV dataset.

    ``other`` defaults to every column not named elsewhere. Non-numeric
    ``other`` columns are dummy encoded. ``positive_label`` turns a text
    response into 0/1. ``true_sensitive`` is only used for evaluation.
    ``merge_levels`` maps ``column -> {raw level: merged level}`` and is
    applied before encoding.
    """

    path: str
    response: str
    sensitive_continuous: tuple = ()
    sensitive_categorical: tuple = ()
    other: tuple | None = None
    split: float = 0.7
    seed: int = 0
    positive_label: str | None = None
    true_sensitive: str | None = None
    merge_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.response, str) or not self.response:
            raise SchemaError("schema needs a response column")
        object.__setattr__(self, "sensitive_continuous", _names(self.sensitive_continuous, "sensitive_continuous"))
        object.__setattr__(self, "sensitive_categorical", _names(self.sensitive_categorical, "sensitive_categorical"))
        if self.other is not None:
            object.__setattr__(self, "other", _names(self.other, "other"))
        if not self.sensitive_continuous and not self.sensitive_categorical:
            raise SchemaError("schema needs at least one sensitive-related column")
        if not 0.0 < float(self.split) < 1.0:
            raise SchemaError(f"split must lie in (0, 1), got {self.split}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise SchemaError("seed must be a nonnegative integer")
        roles = [(self.response,), self.sensitive_continuous, self.sensitive_categorical, self.other or ()]
        if self.true_sensitive:
            roles.append((self.true_sensitive,))
        seen = set()
        for group in roles:
            for name in group:
                if name in seen:
                    raise SchemaError(f"column {name!r} is assigned to more than one role")
                seen.add(name)
        if not isinstance(self.merge_levels, dict):
            raise SchemaError("merge_levels must map column names to level mappings")

    @classmethod
    def from_dict(cls, d: dict, path: str | None = None) -> "DatasetSchema":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise SchemaError(f"unknown schema fields: {sorted(unknown)}")
        d = dict(d)
        if path is not None:
            d["path"] = path
        if "path" not in d:
            raise SchemaError("schema needs a data path")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SchemaError(str(exc)) from None

    @classmethod
    def from_json(cls, file: str, path: str | None = None) -> "DatasetSchema":
        try:
            with open(file, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read schema {file}: {exc}") from None
        if not isinstance(d, dict):
            raise SchemaError("schema file must hold a JSON object")
        return cls.from_dict(d, path)


@dataclass
class Design:
    """One split of the dataset in model-ready form."""

    y: np.ndarray
    sens_cont: np.ndarray
    sens_levels: np.ndarray
    other: np.ndarray
    rows: np.ndarray
    true_sensitive: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.y.size

    def mixture_data(self):
        """Data in the layout of the mixture family implied by the column roles."""
        if self.sens_levels.shape[1] and self.sens_cont.shape[1]:
            return (self.sens_levels, self.sens_cont)
        if self.sens_levels.shape[1]:
            return self.sens_levels
        return self.sens_cont


@dataclass
class DesignPartition:
    train: Design
    test: Design
    level_maps: dict
    other_names: list
    arities: tuple
    dropped_rows: list
    warnings: list

    @property
    def family(self) -> str:
        if self.arities and self.train.sens_cont.shape[1]:
            return "hybrid"
        return "categorical" if self.arities else "gaussian"


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING_TOKENS


def _parse_float(cell: str):
    v = float(cell)
    return v if math.isfinite(v) else None


def _read(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise SchemaError(f"{path} is empty") from None
            body = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
                body.append((lineno, [c.strip() for c in row]))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from None
    return header, body


def _numeric_column(values) -> bool:
    for v in values:
        if _is_missing(v):
            continue
        try:
            float(v)
        except ValueError:
            return False
    return True


def load_csv(schema: DatasetSchema) -> DesignPartition:
    """Read, validate, encode and split the dataset described by ``schema``.

    Rows with a missing or non-finite value in a used column are dropped and
    their line numbers recorded. Text in a numeric column raises
    :class:`SchemaError` listing the offending lines. Categorical levels are
    coded ``0..m-1`` in sorted order of the training rows; a level first
    seen in the test rows gets the reserved code ``-1`` with a warning.
    """
    header, body = _read(schema.path)
    index = {name: j for j, name in enumerate(header)}
    if len(index) != len(header):
        raise SchemaError("duplicate column names in header")
    named = [schema.response, *schema.sensitive_continuous, *schema.sensitive_categorical]
    if schema.true_sensitive:
        named.append(schema.true_sensitive)
    if schema.other is not None:
        named.extend(schema.other)
    missing = [c for c in named if c not in index]
    if missing:
        raise SchemaError(f"columns not found in {schema.path}: {', '.join(missing)}")
    for col in schema.merge_levels:
        if col not in index:
            raise SchemaError(f"merge_levels refers to unknown column {col!r}")
    if schema.other is None:
        taken = set(named)
        other = [h for h in header if h not in taken]
    else:
        other = list(schema.other)

    def column(name):
        return [row[index[name]] for _, row in body]

    numeric_other = {c: _numeric_column(column(c)) for c in other}
    text_response = schema.positive_label is not None
    numeric_cols = ([] if text_response else [schema.response]) + list(schema.sensitive_continuous)
    numeric_cols += [c for c in other if numeric_other[c]]
    text_cols = list(schema.sensitive_categorical) + [c for c in other if not numeric_other[c]]
    if text_response:
        text_cols.append(schema.response)
    if schema.true_sensitive:
        text_cols.append(schema.true_sensitive)

    bad, dropped, kept = {}, [], []
    for lineno, row in body:
        ok = True
        for c in numeric_cols:
            cell = row[index[c]]
            if _is_missing(cell):
                ok = False
                continue
            try:
                if _parse_float(cell) is None:
                    ok = False
            except ValueError:
                bad.setdefault(c, []).append(lineno)
        for c in text_cols:
            if _is_missing(row[index[c]]):
                ok = False
        (kept if ok else dropped).append((lineno, row))
    if bad:
        detail = "; ".join(f"{c}: lines {', '.join(map(str, rows[:10]))}" for c, rows in bad.items())
        raise SchemaError(f"unparseable numeric values ({detail})")
    notes = []
    if dropped:
        notes.append(f"dropped {len(dropped)} rows with missing or non-finite values")
    n = len(kept)
    if n < 4:
        raise SchemaError(f"only {n} usable rows")

    def text(c, row):
        v = row[index[c]]
        return str(schema.merge_levels.get(c, {}).get(v, v))

    rng = np.random.default_rng(int(schema.seed))
    perm = rng.permutation(n)
    n_train = int(round(float(schema.split) * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])

    level_maps = {}
    for c in text_cols:
        if c == schema.response or c == schema.true_sensitive:
            continue
        level_maps[c] = {lv: j for j, lv in enumerate(sorted({text(c, kept[i][1]) for i in train_idx}))}
    if schema.true_sensitive:
        level_maps[schema.true_sensitive] = {
            lv: j for j, lv in enumerate(sorted({text(schema.true_sensitive, r) for _, r in kept}))
        }

    other_names = []
    for c in other:
        if numeric_other[c]:
            other_names.append(c)
        else:
            other_names.extend(f"{c}={lv}" for lv in list(level_maps[c])[1:])

    def build(idx, split_name):
        rows = [kept[i] for i in idx]
        if text_response:
            y = np.array([1.0 if text(schema.response, r) == schema.positive_label else 0.0 for _, r in rows])
        else:
            y = np.array([float(r[index[schema.response]]) for _, r in rows])
        cont = np.array([[float(r[index[c]]) for c in schema.sensitive_continuous] for _, r in rows]).reshape(
            len(rows), -1
        )
        levels = np.empty((len(rows), len(schema.sensitive_categorical)), dtype=int)
        for d, c in enumerate(schema.sensitive_categorical):
            for i, (_, r) in enumerate(rows):
                code = level_maps[c].get(text(c, r), MISSING_LEVEL)
                levels[i, d] = code
        unseen = {c for d, c in enumerate(schema.sensitive_categorical) if np.any(levels[:, d] == MISSING_LEVEL)}
        blocks = []
        for c in other:
            if numeric_other[c]:
                blocks.append(np.array([float(r[index[c]]) for _, r in rows])[:, None])
            else:
                codes = [level_maps[c].get(text(c, r), MISSING_LEVEL) for _, r in rows]
                if MISSING_LEVEL in codes:
                    unseen.add(c)
                m = len(level_maps[c])
                dummies = np.zeros((len(rows), max(m - 1, 0)))
                for i, code in enumerate(codes):
                    if code >= 1:
                        dummies[i, code - 1] = 1.0
                blocks.append(dummies)
        for c in sorted(unseen):
            msg = f"{split_name} rows contain levels of {c!r} unseen in training; coded as {MISSING_LEVEL}"
            warnings.warn(msg, FairnessWarning, stacklevel=3)
            notes.append(msg)
        other_mat = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
        truth = None
        if schema.true_sensitive:
            truth = np.array([level_maps[schema.true_sensitive][text(schema.true_sensitive, r)] for _, r in rows])
        return Design(y, cont, levels, other_mat, np.array([ln for ln, _ in rows]), truth)

    train = build(train_idx, "train")
    test = build(test_idx, "test")
    arities = tuple(len(level_maps[c]) for c in schema.sensitive_categorical)
    return DesignPartition(train, test, level_maps, other_names, arities, [ln for ln, _ in dropped], notes)


def write_csv(path, header, rows) -> None:
    """Write rows with floats in shortest round-trip form."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
