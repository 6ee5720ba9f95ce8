"""Reading and writing meta-data CSV files, flat config files and JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DomainSample, MetaData, Violation, validate_metadata
from .errors import IngestError

HEADER = ["domain_id", "z1", "z2", "p", "y"]


@dataclass
class IngestReport:
    """What ingestion changed or noticed, row numbers being 1-based file lines."""

    swapped: list[tuple[str, int]] = field(default_factory=list)
    mixed_sign_ties: list[tuple[str, int]] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "swapped_rows": [{"domain_id": d, "line": line} for d, line in self.swapped],
            "mixed_sign_ties": [{"domain_id": d, "line": line} for d, line in self.mixed_sign_ties],
            "violations": [{"domain_id": v.domain_id, "row": v.row, "rule": v.rule} for v in self.violations],
        }


def _number(text: str, name: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"{name} is not a number: {text!r}", line) from None


def parse_metadata(text: str, strict: bool = True) -> tuple[MetaData, IngestReport]:
    """Parse CSV text with header ``domain_id,z1,z2,p,y``.

    Rows with ``|z1| < |z2|`` are stored as ``(z2, z1, 1 - p)`` and logged.
    Domains keep their order of first appearance.  With ``strict``, any
    validation violation raises; otherwise violations are returned in the
    report.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise IngestError("empty file", 1)
    if [h.strip() for h in header] != HEADER:
        raise IngestError(f"expected header {','.join(HEADER)}, got {','.join(header)}", 1)
    report = IngestReport()
    rows: dict[str, list[tuple[float, float, float, float]]] = {}
    for line, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != 5:
            raise IngestError(f"expected 5 fields, got {len(rec)}", line)
        domain = rec[0].strip()
        if not domain:
            raise IngestError("empty domain_id", line)
        z1, z2, p, y = (_number(rec[i].strip(), HEADER[i], line) for i in range(1, 5))
        if abs(z1) < abs(z2):
            z1, z2, p = z2, z1, 1.0 - p
            report.swapped.append((domain, line))
        elif abs(z1) == abs(z2) and z1 != z2:
            report.mixed_sign_ties.append((domain, line))
        rows.setdefault(domain, []).append((z1, z2, p, y))
    if not rows:
        raise IngestError("no observations", 2)
    samples = []
    for domain, obs in rows.items():
        arr = np.array(obs, dtype=float)
        samples.append(DomainSample(domain, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]))
    meta = MetaData(tuple(samples))
    report.violations = validate_metadata(meta)
    if strict and report.violations:
        first = report.violations[0]
        raise IngestError(f"{len(report.violations)} validation violation(s); first: {first}")
    return meta, report


def ingest(path, strict: bool = True) -> tuple[MetaData, IngestReport]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    return parse_metadata(path.read_text(encoding="utf-8"), strict)


def metadata_to_csv(meta: MetaData) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for s in meta:
        for i in range(len(s)):
            writer.writerow([s.id] + [repr(float(v[i])) for v in (s.z1, s.z2, s.p, s.y)])
    return buf.getvalue()


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; later keys win."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IngestError(f"expected 'key = value', got {raw!r}", line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise IngestError("empty key", line_no)
        out[key.replace("-", "_")] = value
    return out


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    """Deterministic JSON with non-finite floats written as strings."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _decode(obj):
    if isinstance(obj, str) and obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def loads(text: str):
    return _decode(json.loads(text))


def read_weights(path) -> dict[str, float]:
    """Domain weights from a ``domain_id,weight`` CSV."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["domain_id", "weight"]:
        raise IngestError("expected header domain_id,weight", 1)
    out = {}
    for line, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 2:
            raise IngestError("expected 2 fields", line)
        out[rec[0].strip()] = _number(rec[1].strip(), "weight", line)
    return out
