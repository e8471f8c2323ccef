"""Trace CSV and checksummed JSON checkpoints."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

from .adapt import IterationRecord

TRACE_COLUMNS = (
    "iter", "energy", "eps_E", "infidelity", "max_gradient", "circuit_id",
    "generator_id", "cnot_max", "cnot_per_circuit", "wall_ms",
)
CHECKPOINT_FORMAT = "forgevqe-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


def _g(x: float) -> str:
    return format(float(x), ".12g")


def _per_circuit(counts: dict) -> str:
    return ";".join(f"{k}:{v}" for k, v in sorted(counts.items()))


def trace_rows(records) -> list[list[str]]:
    return [[
        str(r.iteration), _g(r.energy), _g(r.eps_e), _g(r.infidelity), _g(r.max_gradient),
        r.circuit_id, r.generator_id, str(r.cnot_max), _per_circuit(r.cnot_per_circuit), _g(r.wall_ms),
    ] for r in records]


def write_csv(path: str | Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_trace(path: str | Path, records) -> None:
    """Trace CSV; the per-circuit column is always quoted."""
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace_rows(records):
        row[8] = '"' + row[8] + '"'
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> list[IterationRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path} is not a trace file")
        out = []
        for row in reader:
            per = dict(item.split(":") for item in row[8].split(";")) if row[8] else {}
            out.append(IterationRecord(
                iteration=int(row[0]), energy=float(row[1]), eps_e=float(row[2]),
                infidelity=float(row[3]), max_gradient=float(row[4]), circuit_id=row[5],
                generator_id=row[6], cnot_max=int(row[7]),
                cnot_per_circuit={k: int(v) for k, v in per.items()}, wall_ms=float(row[9]),
            ))
    return out


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def record_to_dict(r: IterationRecord) -> dict:
    d = asdict(r)
    d["cnot_per_circuit"] = dict(sorted(r.cnot_per_circuit.items()))
    return d


def record_from_dict(d: dict) -> IterationRecord:
    return IterationRecord(**d)


def checkpoint_bytes(state: dict, records, meta: dict | None = None) -> bytes:
    payload = {
        "meta": meta or {},
        "state": state,
        "records": [record_to_dict(r) for r in records],
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "checksum": hashlib.sha256(_canonical(payload)).hexdigest(),
        "payload": payload,
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False).encode() + b"\n"


def save_checkpoint(path: str | Path, state: dict, records, meta: dict | None = None) -> None:
    """Write atomically so an interrupted save never leaves a half file behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state, records, meta))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict, list, dict]:
    """``(state dict, records, meta)``; raises :class:`CheckpointError`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError(f"checkpoint {path} is truncated or not JSON") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    payload = doc.get("payload")
    try:
        digest = hashlib.sha256(_canonical(payload)).hexdigest()
    except (TypeError, ValueError):
        raise CheckpointError(f"checkpoint {path} payload is malformed") from None
    if digest != doc.get("checksum"):
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    try:
        records = [record_from_dict(d) for d in payload["records"]]
        return payload["state"], records, payload.get("meta", {})
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} payload is incomplete: {exc}") from None
