"""File formats: calibration and survey CSVs, JSON documents, estimate reports.

All times in files are in years. Numbers are written with ``repr`` so
they round-trip exactly and never depend on the process locale.

Calibration CSV::

    duration_years,recent

Sample CSV (fields that do not apply to a record are left empty)::

    id,hiv_positive,rita_recent,has_prior,prior_time_years,prior_result

Prior tests CSV (for the shadow period)::

    has_prior,prior_time_years

Schema errors report the 1-based data row (the header is row 0) and the
column name.
"""

import csv
import io
import json
import math

import numpy as np

from .assay import RitaCharacteristics, TestRecentFunction
from .errors import DomainError, SchemaError
from .sample import Sample

CALIBRATION_HEADER = ("duration_years", "recent")
SAMPLE_HEADER = ("id", "hiv_positive", "rita_recent", "has_prior", "prior_time_years", "prior_result")
PRIOR_TESTS_HEADER = ("has_prior", "prior_time_years")
ESTIMATE_FIELDS = ("method", "lambda", "variance", "ci_lower", "ci_upper", "n", "n_pos", "n_rec",
                   "n_rec_pt", "flags")


def format_number(value):
    """Locale-independent text for a number; empty for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _open_text(path_or_text):
    """Read a path, or accept already loaded text wrapped in ``io.StringIO``."""
    if isinstance(path_or_text, io.StringIO):
        return path_or_text.getvalue()
    with open(path_or_text, newline="") as fh:
        return fh.read()


def _write_text(text, path):
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _rows(text, header):
    reader = csv.reader(io.StringIO(text))
    try:
        found = next(reader)
    except StopIteration:
        raise SchemaError("file is empty", row=0) from None
    found = tuple(h.strip() for h in found)
    if found != tuple(header):
        raise SchemaError(f"expected header {','.join(header)}, found {','.join(found)}", row=0)
    for i, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(row)}", row=i)
        yield i, dict(zip(header, (c.strip() for c in row)))


def _flag(value, row, column, allow_empty=False):
    if value == "" and allow_empty:
        return None
    if value in ("0", "1"):
        return value == "1"
    raise SchemaError(f"expected 0 or 1, found {value!r}", row=row, column=column)


def _float(value, row, column, allow_empty=False):
    if value == "" and allow_empty:
        return None
    try:
        x = float(value)
    except ValueError:
        raise SchemaError(f"expected a number, found {value!r}", row=row, column=column) from None
    if not math.isfinite(x):
        raise SchemaError(f"expected a finite number, found {value!r}", row=row, column=column)
    return x


# ------------------------------------------------------------ calibration


def read_calibration_csv(path):
    """Read calibration data as ``(durations, recent)`` arrays."""
    durations, recent = [], []
    for i, row in _rows(_open_text(path), CALIBRATION_HEADER):
        u = _float(row["duration_years"], i, "duration_years")
        if u < 0:
            raise SchemaError("duration must be nonnegative", row=i, column="duration_years")
        durations.append(u)
        recent.append(_flag(row["recent"], i, "recent"))
    if not durations:
        raise SchemaError("no calibration records", row=1)
    return np.array(durations, dtype=float), np.array(recent, dtype=bool)


def write_calibration_csv(durations, recent, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CALIBRATION_HEADER)
    for u, r in zip(np.asarray(durations, dtype=float), np.asarray(recent, dtype=bool)):
        writer.writerow((format_number(u), format_number(bool(r))))
    return _write_text(buf.getvalue(), path)


# ----------------------------------------------------------------- sample


def read_sample_csv(path, tau=None):
    """Read a cross-sectional survey into a :class:`Sample`.

    Raises
    ------
    SchemaError
        On a wrong header, a malformed value, a duplicate id, or a field
        filled in where it does not apply (for example a prior test time
        with ``has_prior=0``).
    """
    d, r, q, t, delta = [], [], [], [], []
    seen = set()
    for i, row in _rows(_open_text(path), SAMPLE_HEADER):
        rid = row["id"]
        if rid == "":
            raise SchemaError("missing id", row=i, column="id")
        if rid in seen:
            raise SchemaError(f"duplicate id {rid!r}", row=i, column="id")
        seen.add(rid)
        positive = _flag(row["hiv_positive"], i, "hiv_positive")
        if not positive:
            for col in ("rita_recent", "prior_time_years", "prior_result"):
                if row[col] != "":
                    raise SchemaError("must be empty for an HIV-negative record", row=i, column=col)
            if _flag(row["has_prior"], i, "has_prior", allow_empty=True):
                raise SchemaError("must be empty or 0 for an HIV-negative record", row=i,
                                  column="has_prior")
            d.append(False), r.append(False), q.append(False), t.append(np.nan), delta.append(False)
            continue
        recent = _flag(row["rita_recent"], i, "rita_recent")
        has_prior = _flag(row["has_prior"], i, "has_prior")
        if has_prior:
            time = _float(row["prior_time_years"], i, "prior_time_years")
            if time < 0:
                raise SchemaError("prior test time must be nonnegative", row=i,
                                  column="prior_time_years")
            result = _flag(row["prior_result"], i, "prior_result")
        else:
            for col in ("prior_time_years", "prior_result"):
                if row[col] != "":
                    raise SchemaError("must be empty when has_prior=0", row=i, column=col)
            time, result = np.nan, False
        d.append(True), r.append(recent), q.append(has_prior), t.append(time), delta.append(result)
    return Sample(d, r, q, t, delta, tau)


def write_sample_csv(sample, path=None, ids=None):
    """Write a :class:`Sample`; ids default to ``1..n``."""
    ids = range(1, sample.n + 1) if ids is None else ids
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SAMPLE_HEADER)
    for rid, d, r, q, t, delta in zip(ids, sample.hiv_positive, sample.recent, sample.has_prior,
                                      sample.prior_time, sample.prior_result):
        if not d:
            writer.writerow((rid, "0", "", "", "", ""))
        elif q:
            writer.writerow((rid, "1", format_number(bool(r)), "1", format_number(t),
                             format_number(bool(delta))))
        else:
            writer.writerow((rid, "1", format_number(bool(r)), "0", "", ""))
    return _write_text(buf.getvalue(), path)


def read_prior_tests_csv(path):
    """Read ``(Q, T)`` arrays for the shadow period.

    A file in the sample schema is also accepted; its HIV-positive
    records supply the prior tests.
    """
    text = _open_text(path)
    first = next(csv.reader(io.StringIO(text)), [])
    if tuple(h.strip() for h in first) == SAMPLE_HEADER:
        _, q, t, _ = read_sample_csv(io.StringIO(text)).positives()
        return q.copy(), t.copy()
    q, t = [], []
    for i, row in _rows(text, PRIOR_TESTS_HEADER):
        has = _flag(row["has_prior"], i, "has_prior")
        if has:
            time = _float(row["prior_time_years"], i, "prior_time_years")
            if time < 0:
                raise SchemaError("prior test time must be nonnegative", row=i,
                                  column="prior_time_years")
        else:
            if row["prior_time_years"] != "":
                raise SchemaError("must be empty when has_prior=0", row=i, column="prior_time_years")
            time = np.nan
        q.append(has), t.append(time)
    if not q:
        raise SchemaError("no prior test records", row=1)
    return np.array(q, dtype=bool), np.array(t, dtype=float)


def write_prior_tests_csv(q, t, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PRIOR_TESTS_HEADER)
    for has, time in zip(np.asarray(q, dtype=bool), np.asarray(t, dtype=float)):
        writer.writerow(("1", format_number(time)) if has else ("0", ""))
    return _write_text(buf.getvalue(), path)


# ------------------------------------------------------------------- JSON


def dump_json(doc, path=None):
    """Deterministic JSON text (sorted keys, NaN allowed)."""
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    return _write_text(text, path)


def load_json(path):
    text = _open_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", row=exc.lineno) from None
    if not isinstance(doc, dict):
        raise SchemaError("expected a JSON object at the top level")
    return doc


def _from_doc(builder, doc, what):
    try:
        return builder(doc)
    except KeyError as exc:
        raise SchemaError(f"{what}: missing field {exc.args[0]!r}", column=exc.args[0]) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{what}: {exc}") from None


def read_model(path):
    return _from_doc(TestRecentFunction.from_dict, load_json(path), "test-recent model")


def write_model(f, path=None):
    return dump_json(f.to_dict(), path)


def read_characteristics(path):
    return _from_doc(RitaCharacteristics.from_dict, load_json(path), "assay characteristics")


def write_characteristics(chars, path=None):
    return dump_json(chars.to_dict(), path)


def read_scenario(path, default_seed=None):
    """Read a scenario document into a :class:`~xsincidence.harness.ScenarioConfig`.

    ``default_seed`` fills in a missing ``seed`` section.
    """
    from .harness import ScenarioConfig

    doc = load_json(path)
    try:
        if "seed" not in doc and default_seed is not None:
            doc = dict(doc, seed=int(default_seed))
        return ScenarioConfig.from_dict(doc)
    except (DomainError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        message = str(exc)
        if not message.startswith("invalid scenario"):
            message = f"invalid scenario: {message}"
        raise SchemaError(message) from None


def write_scenario(config, path=None):
    return dump_json(config.to_dict(), path)


# -------------------------------------------------------------- estimates


def estimates_to_csv(estimates, path=None):
    """Estimate records as CSV, one row per estimate in the order given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ESTIMATE_FIELDS)
    for est in estimates:
        doc = est.to_dict()
        writer.writerow([doc["method"]] + [format_number(doc[k]) for k in ESTIMATE_FIELDS[1:-1]]
                        + [";".join(doc["flags"])])
    return _write_text(buf.getvalue(), path)


def estimates_to_json(estimates, path=None):
    return dump_json({"estimates": [est.to_dict() for est in estimates]}, path)
