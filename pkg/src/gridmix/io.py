"""File formats: long-format choice CSV, result tables, config, JSON report.

All delimited output is comma-separated UTF-8 with LF line endings and a
header row, and floats are written with 17 significant digits so files
round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict

import numpy as np

from .errors import ValidationError
from .model import ChoiceDataset, Grid
from .simulate import SummaryRow

FLOAT_FMT = "%.17g"

_RESERVED = ("unit_id", "alt_id", "chosen")


def format_float(value):
    return FLOAT_FMT % float(value)


def _open_read(path):
    return open(path, newline="", encoding="utf-8")


def _open_write(path):
    return open(path, "w", newline="", encoding="utf-8")


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


def load_choice_csv(path, covariates, has_outside=False):
    """Load a long-format choice CSV into a dataset.

    Required columns: unit_id, alt_id, chosen (0/1), plus the declared
    covariate columns.  Rows of a unit may appear anywhere, but every unit
    must list the same alternatives in the same order.
    """
    covariates = tuple(covariates)
    if not covariates:
        raise ValidationError("declare at least one covariate column")
    with _open_read(path) as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header required") from None
        missing = [c for c in _RESERVED + covariates if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in _RESERVED + covariates}

        units = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"line {lineno}: expected {len(header)} fields")
            uid = row[col["unit_id"]]
            if uid not in units:
                units[uid] = []
                order.append(uid)
            values = []
            for name in covariates:
                raw = row[col[name]]
                try:
                    values.append(float(raw))
                except ValueError:
                    raise ValidationError(
                        f"line {lineno}: non-numeric value {raw!r} in column {name!r}"
                    ) from None
            chosen_raw = row[col["chosen"]].strip()
            if chosen_raw not in ("0", "1"):
                raise ValidationError(
                    f"line {lineno}: chosen must be 0 or 1, got {chosen_raw!r}"
                )
            units[uid].append((row[col["alt_id"]], values, int(chosen_raw)))

    if not order:
        raise ValidationError(f"{path}: no data rows")
    alt_ids = [alt for alt, _, _ in units[order[0]]]
    n_alts = len(alt_ids)
    x = np.empty((len(order), n_alts, len(covariates)))
    choices = np.zeros((len(order), n_alts))
    for i, uid in enumerate(order):
        rows = units[uid]
        if len(rows) != n_alts or [alt for alt, _, _ in rows] != alt_ids:
            raise ValidationError(
                f"unit {uid}: alternatives do not match the first unit's "
                f"({n_alts} rows expected)"
            )
        picks = sum(chosen for _, _, chosen in rows)
        if picks > 1:
            raise ValidationError(f"unit {uid}: multiple choices")
        if picks == 0 and not has_outside:
            raise ValidationError(
                f"unit {uid}: no chosen alternative and no outside option"
            )
        for j, (_, values, chosen) in enumerate(rows):
            x[i, j] = values
            choices[i, j] = chosen
    return ChoiceDataset(
        x=x, choices=choices, has_outside=has_outside,
        unit_ids=tuple(order), var_names=covariates,
    )


def write_choice_csv(path, dataset):
    """Write a dataset in the long format load_choice_csv reads."""
    names = dataset.var_names or tuple(
        f"x{k + 1}" for k in range(dataset.n_vars)
    )
    unit_ids = dataset.unit_ids or tuple(str(i + 1) for i in range(dataset.n_units))
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(_RESERVED + tuple(names))
        for i in range(dataset.n_units):
            for j in range(dataset.n_alts):
                out.writerow(
                    [unit_ids[i], str(j + 1), int(dataset.choices[i, j])]
                    + [format_float(v) for v in dataset.x[i, j]]
                )


def _dim_names(n_dims, names=None):
    if names is not None:
        names = tuple(names)
        if len(names) != n_dims:
            raise ValidationError("need one name per grid dimension")
        return names
    return tuple(f"coef{k + 1}" for k in range(n_dims))


def write_weights_csv(path, grid, theta, names=None):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (grid.n_points,):
        raise ValidationError("one weight per grid point required")
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(_dim_names(grid.n_dims, names) + ("weight",))
        for point, w in zip(grid.points, theta):
            out.writerow([format_float(v) for v in point] + [format_float(w)])


def load_weights_csv(path):
    points, weights = [], []
    with _open_read(path) as handle:
        reader = csv.reader(handle)
        next(reader)
        for row in reader:
            points.append([float(v) for v in row[:-1]])
            weights.append(float(row[-1]))
    return np.asarray(points), np.asarray(weights)


def write_cdf_csv(path, points, values, names=None):
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(_dim_names(points.shape[1], names) + ("cdf",))
        for point, value in zip(points, values):
            out.writerow([format_float(v) for v in point] + [format_float(value)])


def load_cdf_csv(path):
    return load_weights_csv(path)


def write_cv_csv(path, cv):
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(("mu", "mse", "se", "ll", "hit_rate"))
        for i, mu in enumerate(cv.mu_path):
            out.writerow([
                format_float(mu),
                format_float(cv.mean_mse[i]),
                format_float(cv.se_mse[i]),
                format_float(cv.mean_ll[i]),
                format_float(cv.mean_hit_rate[i]),
            ])


def load_cv_csv(path):
    with _open_read(path) as handle:
        reader = csv.reader(handle)
        next(reader)
        rows = [[float(v) for v in row] for row in reader]
    table = np.asarray(rows)
    return {
        "mu": table[:, 0], "mse": table[:, 1], "se": table[:, 2],
        "ll": table[:, 3], "hit_rate": table[:, 4],
    }

SUMMARY_COLUMNS = (
    "n", "r", "s", "estimator", "rmise", "l1", "pos", "true_pos", "sign",
    "mu", "rho", "failures",
)


def write_summary_csv(path, rows):
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(SUMMARY_COLUMNS)
        for row in rows:
            out.writerow([
                row.n_units, row.n_grid, row.n_support, row.estimator,
                format_float(row.rmise), format_float(row.l1),
                format_float(row.pos), format_float(row.true_pos),
                format_float(row.sign), format_float(row.mu),
                format_float(row.rho), row.failures,
            ])


def load_summary_csv(path):
    rows = []
    with _open_read(path) as handle:
        reader = csv.DictReader(handle)
        for record in reader:
            rows.append(SummaryRow(
                n_units=int(record["n"]), n_grid=int(record["r"]),
                n_support=int(record["s"]), estimator=record["estimator"],
                rmise=float(record["rmise"]), l1=float(record["l1"]),
                pos=float(record["pos"]), true_pos=float(record["true_pos"]),
                sign=float(record["sign"]), mu=float(record["mu"]),
                rho=float(record["rho"]), failures=int(record["failures"]),
            ))
    return rows


def write_theory_json(path, report):
    payload = asdict(report)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_theory_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def write_named_values(path, names, values):
    """Two-column (name, value) file, e.g. first-stage coefficients."""
    values = np.asarray(values, dtype=float).reshape(-1)
    names = tuple(names)
    if len(names) != values.size:
        raise ValidationError("need one name per value")
    with _open_write(path) as handle:
        out = _writer(handle)
        out.writerow(("name", "value"))
        for name, value in zip(names, values):
            out.writerow((name, format_float(value)))


def read_named_values(path):
    names, values = [], []
    with _open_read(path) as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["name", "value"]:
            raise ValidationError(f"{path}: expected header name,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"line {lineno}: expected two fields")
            try:
                values.append(float(row[1]))
            except ValueError:
                raise ValidationError(
                    f"line {lineno}: non-numeric value {row[1]!r}"
                ) from None
            names.append(row[0])
    return tuple(names), np.asarray(values)


def read_config(path):
    """Parse a key = value config file; # starts a comment line."""
    config = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValidationError(f"line {lineno}: empty key")
            config[key] = value.strip()
    return config
