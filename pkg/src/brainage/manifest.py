"""Cohort manifests, prediction tables, and pair-aware cohort splitting.

Both interchange formats are plain comma-separated text with fixed
headers. Manifest reading is total: the first malformed row aborts with
an error naming the line and column, before any computation downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputOutputError, ValidationError
from .stats import PredictionRecord

MANIFEST_HEADER = (
    "subject_id", "volume_path", "age_years", "sex", "site",
    "session", "pair_id", "zygosity",
)
PREDICTIONS_HEADER = (
    "subject_id", "session", "age_years", "predicted_age_years",
    "brain_pad_years",
)

_SEXES = {"M", "F", "NA"}
_ZYGOSITIES = {"MZ", "DZ", "NA"}


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    volume_path: str
    age_years: float
    sex: str = "NA"
    site: str = "NA"
    session: int = 1
    pair_id: str = "NA"
    zygosity: str = "NA"


def _row_error(line: int, column: str, reason: str) -> ValidationError:
    return ValidationError(f"manifest line {line}, column {column}: {reason}")


def _parse_row(fields: list[str], line: int) -> ManifestRow:
    if len(fields) != len(MANIFEST_HEADER):
        raise ValidationError(
            f"manifest line {line}: expected {len(MANIFEST_HEADER)} columns, "
            f"got {len(fields)}"
        )
    (subject_id, volume_path, age_s, sex, site, session_s,
     pair_id, zygosity) = (f.strip() for f in fields)
    if not subject_id:
        raise _row_error(line, "subject_id", "must be nonempty")
    if not volume_path:
        raise _row_error(line, "volume_path", "must be nonempty")
    try:
        age = float(age_s)
    except ValueError:
        raise _row_error(line, "age_years", f"not a number: {age_s!r}") from None
    if not np.isfinite(age) or not 0.0 < age < 120.0:
        raise _row_error(line, "age_years", f"{age_s} outside (0, 120)")
    if sex not in _SEXES:
        raise _row_error(line, "sex", f"{sex!r} not one of M, F, NA")
    if not site:
        raise _row_error(line, "site", "must be nonempty")
    try:
        session = int(session_s)
    except ValueError:
        raise _row_error(
            line, "session", f"not an integer: {session_s!r}"
        ) from None
    if zygosity not in _ZYGOSITIES:
        raise _row_error(line, "zygosity", f"{zygosity!r} not one of MZ, DZ, NA")
    return ManifestRow(subject_id, volume_path, age, sex, site, session,
                       pair_id or "NA", zygosity)


def read_manifest(path) -> list[ManifestRow]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValidationError(f"manifest {path} is empty") from None
            if tuple(h.strip() for h in header) != MANIFEST_HEADER:
                raise ValidationError(
                    "manifest header must be exactly "
                    f"{','.join(MANIFEST_HEADER)}, got {','.join(header)}"
                )
            rows = [_parse_row(fields, line) for line, fields
                    in enumerate(reader, start=2)]
    except OSError as exc:
        raise InputOutputError(f"cannot read manifest {path}: {exc}") from exc

    if not rows:
        raise ValidationError(f"manifest {path} has no data rows")

    seen = {}
    for i, row in enumerate(rows):
        key = (row.subject_id, row.session)
        if key in seen:
            raise ValidationError(
                f"manifest line {i + 2}: duplicate subject_id/session "
                f"{row.subject_id}/{row.session} (first at line {seen[key] + 2})"
            )
        seen[key] = i

    by_pair: dict[str, list[ManifestRow]] = {}
    for row in rows:
        if row.pair_id != "NA":
            by_pair.setdefault(row.pair_id, []).append(row)
    for pair_id, members in by_pair.items():
        subjects = sorted({m.subject_id for m in members})
        if len(members) != 2 or len(subjects) != 2:
            raise ValidationError(
                f"manifest: pair_id {pair_id} must cover exactly 2 rows with "
                f"distinct subjects, found {len(members)} rows over subjects "
                f"{subjects}"
            )
        zygs = {m.zygosity for m in members}
        if "NA" in zygs or len(zygs) != 1:
            raise ValidationError(
                f"manifest: pair_id {pair_id} needs one consistent zygosity "
                f"in {{MZ, DZ}}, found {sorted(zygs)}"
            )
    return rows


def write_manifest(rows, path) -> None:
    if not rows:
        raise ValidationError("refusing to write an empty manifest")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for row in rows:
                writer.writerow([
                    row.subject_id, row.volume_path, repr(float(row.age_years)),
                    row.sex, row.site, str(row.session), row.pair_id,
                    row.zygosity,
                ])
    except OSError as exc:
        raise InputOutputError(f"cannot write manifest {path}: {exc}") from exc


def read_predictions(path) -> list[PredictionRecord]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValidationError(f"predictions {path} is empty") from None
            if tuple(h.strip() for h in header) != PREDICTIONS_HEADER:
                raise ValidationError(
                    "predictions header must be exactly "
                    f"{','.join(PREDICTIONS_HEADER)}, got {','.join(header)}"
                )
            records = []
            for line, fields in enumerate(reader, start=2):
                if len(fields) != len(PREDICTIONS_HEADER):
                    raise ValidationError(
                        f"predictions line {line}: expected "
                        f"{len(PREDICTIONS_HEADER)} columns, got {len(fields)}"
                    )
                sid, session_s, age_s, pred_s, pad_s = (
                    f.strip() for f in fields
                )
                if not sid:
                    raise ValidationError(
                        f"predictions line {line}, column subject_id: "
                        "must be nonempty"
                    )
                try:
                    session = int(session_s)
                    age = float(age_s)
                    pred = float(pred_s)
                    pad = float(pad_s)
                except ValueError as exc:
                    raise ValidationError(
                        f"predictions line {line}: {exc}"
                    ) from None
                if not all(np.isfinite(v) for v in (age, pred, pad)):
                    raise ValidationError(
                        f"predictions line {line}: non-finite value"
                    )
                records.append(PredictionRecord(
                    subject_id=sid, chronological_age=age, predicted_age=pred,
                    brain_pad=pad, session=session,
                ))
    except OSError as exc:
        raise InputOutputError(f"cannot read predictions {path}: {exc}") from exc
    if not records:
        raise ValidationError(f"predictions {path} has no data rows")
    return records


def write_predictions(records, path) -> None:
    if not records:
        raise ValidationError("refusing to write an empty predictions table")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(PREDICTIONS_HEADER)
            for rec in records:
                pad = rec.brain_pad
                if pad is None:
                    pad = rec.predicted_age - rec.chronological_age
                writer.writerow([
                    rec.subject_id,
                    str(rec.session if rec.session is not None else 1),
                    repr(float(rec.chronological_age)),
                    repr(float(rec.predicted_age)),
                    repr(float(pad)),
                ])
    except OSError as exc:
        raise InputOutputError(
            f"cannot write predictions {path}: {exc}"
        ) from exc


def _split_units(rows):
    """Grouping units that must never straddle splits: twin pairs stay
    together, and so do all sessions of one subject."""
    units: dict[str, list[str]] = {}
    order: list[str] = []
    subject_unit: dict[str, str] = {}
    for row in rows:
        key = f"pair:{row.pair_id}" if row.pair_id != "NA" \
            else f"subject:{row.subject_id}"
        prior = subject_unit.get(row.subject_id)
        if prior is not None and prior != key:
            raise ValidationError(
                f"subject {row.subject_id} appears under conflicting pair "
                "assignments"
            )
        subject_unit[row.subject_id] = key
        if key not in units:
            units[key] = []
            order.append(key)
        if row.subject_id not in units[key]:
            units[key].append(row.subject_id)
    return [units[k] for k in order]


def _sizes_from_fractions(fractions, n_subjects):
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(not 0.0 < f < 1.0 for f in fr):
        raise ValidationError(
            f"fractions must be 3 values in (0, 1), got {fractions}"
        )
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fr)}")
    sizes = [int(np.floor(f * n_subjects)) for f in fr]
    # the largest fraction absorbs the rounding remainder
    sizes[int(np.argmax(fr))] += n_subjects - sum(sizes)
    return sizes


def split_cohort(rows, counts=None, fractions=None, seed: int = 0):
    """Split subjects into train/val/test id lists.

    Twin pairs and multi-session subjects are placed as a unit, via a
    seeded shuffle and greedy first-fit into the remaining capacities.
    Returns three lists of subject ids.
    """
    if (counts is None) == (fractions is None):
        raise ValidationError("provide exactly one of counts or fractions")
    units = _split_units(rows)
    n_subjects = sum(len(u) for u in units)
    if counts is not None:
        sizes = [int(c) for c in counts]
        if len(sizes) != 3 or any(s < 0 for s in sizes):
            raise ValidationError(
                f"counts must be 3 nonnegative integers, got {counts}"
            )
        if sum(sizes) != n_subjects:
            raise ValidationError(
                f"split counts sum to {sum(sizes)} but the cohort has "
                f"{n_subjects} subjects"
            )
    else:
        sizes = _sizes_from_fractions(fractions, n_subjects)

    rng = np.random.default_rng(seed)
    shuffled = [units[int(i)] for i in rng.permutation(len(units))]
    # pairs before singletons (stable within size): first-fit is then exact
    # for this two-size packing, so feasible counts never spuriously fail
    shuffled.sort(key=len, reverse=True)
    remaining = list(sizes)
    splits: list[list[str]] = [[], [], []]
    for unit in shuffled:
        for s in range(3):
            if remaining[s] >= len(unit):
                splits[s].extend(unit)
                remaining[s] -= len(unit)
                break
        else:
            raise ValidationError(
                "split infeasible: a grouping unit of size "
                f"{len(unit)} does not fit the remaining capacities "
                f"{remaining}"
            )
    return splits[0], splits[1], splits[2]
