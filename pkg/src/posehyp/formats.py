"""Structured-text file formats.

Single-document files (anatomy model, pose dictionary, metric report, run
config) are JSON objects carrying ``schema`` and ``version`` fields.
Per-frame files (detections, hypotheses) are JSON Lines: a header line
followed by one record per line. Unknown fields are rejected and every
error names the line or field at fault.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import skeleton as sk
from .anatomy import AnatomyError, AnatomyModel, BoneLength, OccupancyGrid, PlaneField

VERSION = 1


class FormatError(ValueError):
    """Malformed document; the message names the offending position."""


class SchemaVersionError(FormatError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _describe(err: ValidationError, where: str) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{where}: field '{loc}': {e['msg']}")
    return "; ".join(parts)


def _parse_json(text: str, where: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{where}: malformed JSON at line {e.lineno} column {e.colno} (offset {e.pos}): {e.msg}") from None


def _check_header(doc: Any, schema: str, where: str):
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected a JSON object")
    if doc.get("schema") != schema:
        raise FormatError(f"{where}: field 'schema': expected {schema!r}, got {doc.get('schema')!r}")
    if doc.get("version") != VERSION:
        raise SchemaVersionError(f"{where}: field 'version': expected {VERSION}, got {doc.get('version')!r}")
    joints = doc.get("joints")
    if joints is not None and tuple(joints) != sk.JOINTS:
        raise FormatError(f"{where}: field 'joints': joint order does not match the skeleton")


def _validate(cls: type[BaseModel], doc: Any, where: str):
    try:
        return cls.model_validate(doc)
    except ValidationError as e:
        raise FormatError(_describe(e, where)) from None


def dumps(doc: Any) -> str:
    """Canonical serialisation: compact separators, insertion-ordered keys."""
    return json.dumps(doc, separators=(",", ":"), allow_nan=False)


def atomic_write(path, text: str, check: Callable[[Path], Any] | None = None):
    """Write ``text`` to ``path`` via a temporary file.

    ``check`` re-parses the temporary file before it replaces ``path``; on
    any failure the temporary file is removed and nothing is left behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        if check is not None:
            check(Path(tmp))
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# anatomy model

Vec3 = list[float]


class _PlaneRec(_Strict):
    cell: tuple[int, int]
    normal: tuple[float, float, float]
    offset: float
    T: tuple[Vec3, Vec3, Vec3]
    bounds: tuple[float, float, float, float]
    measure: float


class _LengthRec(_Strict):
    mean: float
    a: float
    b: float
    lo: float
    hi: float


class _GridRec(_Strict):
    n_theta: int = Field(ge=2)
    n_phi: int = Field(ge=2)


class _ModelDoc(_Strict):
    schema_: Literal["posehyp.anatomy"] = Field(alias="schema")
    version: Literal[1]
    joints: list[str]
    grid: _GridRec
    occupancy: dict[str, list[str]]
    planes: dict[str, list[_PlaneRec]]
    lengths: dict[str, _LengthRec]
    torsos: list[list[Vec3]]
    report: dict[str, Any] = {}


def model_to_doc(model: AnatomyModel) -> dict:
    g = model.grid
    occ = {
        fam: ["".join("1" if v else "0" for v in row) for row in m] for fam, m in g.masks.items()
    }
    planes = {}
    for fam, pf in model.planes.items():
        recs = []
        for i, j in np.argwhere(pf.fitted):
            recs.append(
                {
                    "cell": [int(i), int(j)],
                    "normal": pf.normal[i, j].tolist(),
                    "offset": float(pf.offset[i, j]),
                    "T": pf.T[i, j].tolist(),
                    "bounds": pf.bounds[i, j].tolist(),
                    "measure": float(pf.measure[i, j]),
                }
            )
        planes[fam] = recs
    return {
        "schema": "posehyp.anatomy",
        "version": VERSION,
        "joints": list(sk.JOINTS),
        "grid": {"n_theta": g.n_theta, "n_phi": g.n_phi},
        "occupancy": occ,
        "planes": planes,
        "lengths": {
            c: {"mean": bl.mean, "a": bl.a, "b": bl.b, "lo": bl.lo, "hi": bl.hi} for c, bl in model.lengths.items()
        },
        "torsos": model.torsos.tolist(),
        "report": model.report,
    }


def model_from_doc(doc: Any, where: str = "model") -> AnatomyModel:
    _check_header(doc, "posehyp.anatomy", where)
    d = _validate(_ModelDoc, doc, where)
    nt, nph = d.grid.n_theta, d.grid.n_phi
    masks = {}
    for fam, rows in d.occupancy.items():
        if fam not in sk.UPPER_FAMILIES:
            raise FormatError(f"{where}: field 'occupancy.{fam}': unknown family")
        if len(rows) != nt or any(len(r) != nph or set(r) - {"0", "1"} for r in rows):
            raise FormatError(f"{where}: field 'occupancy.{fam}': expected {nt} rows of {nph} bits")
        masks[fam] = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
    planes = {}
    for fam, recs in d.planes.items():
        if fam not in sk.LOWER_FAMILIES:
            raise FormatError(f"{where}: field 'planes.{fam}': unknown family")
        pf = PlaneField.empty(nt, nph)
        for k, r in enumerate(recs):
            i, j = r.cell
            if not (0 <= i < nt and 0 <= j < nph):
                raise FormatError(f"{where}: field 'planes.{fam}.{k}.cell': out of range")
            pf.fitted[i, j] = True
            pf.normal[i, j] = r.normal
            pf.offset[i, j] = r.offset
            pf.T[i, j] = r.T
            pf.bounds[i, j] = r.bounds
            pf.measure[i, j] = r.measure
        planes[fam] = pf
    torsos = np.array(d.torsos, dtype=float)
    lengths = {}
    for c, r in d.lengths.items():
        try:
            lengths[c] = BoneLength(**r.model_dump())
        except (AnatomyError, ValueError) as e:
            raise FormatError(f"{where}: field 'lengths.{c}': {e}") from None
    try:
        return AnatomyModel(OccupancyGrid(nt, nph, masks), planes, lengths, torsos, d.report)
    except (AnatomyError, ValueError) as e:
        raise FormatError(f"{where}: invariant violated: {e}") from None


def save_model(model: AnatomyModel, path):
    atomic_write(path, dumps(model_to_doc(model)) + "\n", load_model)


def load_model(path) -> AnatomyModel:
    text = Path(path).read_text(encoding="utf-8")
    return model_from_doc(_parse_json(text, str(path)), str(path))


# --------------------------------------------------------------------------
# pose dictionary


class _DictDoc(_Strict):
    schema_: Literal["posehyp.dictionary"] = Field(alias="schema")
    version: Literal[1]
    joints: list[str]
    mean: list[Vec3]
    atoms: list[list[Vec3]]
    labels: list[str]
    bone_lengths: list[float]


def dictionary_to_doc(dct) -> dict:
    return {
        "schema": "posehyp.dictionary",
        "version": VERSION,
        "joints": list(sk.JOINTS),
        "mean": dct.mean.tolist(),
        "atoms": dct.atoms.tolist(),
        "labels": list(dct.labels),
        "bone_lengths": dct.bone_lengths.tolist(),
    }


def dictionary_from_doc(doc, where="dictionary"):
    from .baseline import PoseDictionary

    _check_header(doc, "posehyp.dictionary", where)
    d = _validate(_DictDoc, doc, where)
    try:
        return PoseDictionary(
            np.array(d.mean, float), np.array(d.atoms, float).reshape(-1, sk.NUM_JOINTS, 3), tuple(d.labels),
            np.array(d.bone_lengths, float),
        )
    except ValueError as e:
        raise FormatError(f"{where}: invariant violated: {e}") from None


def save_dictionary(dct, path):
    atomic_write(path, dumps(dictionary_to_doc(dct)) + "\n", load_dictionary)


def load_dictionary(path):
    return dictionary_from_doc(_parse_json(Path(path).read_text(encoding="utf-8"), str(path)), str(path))


# --------------------------------------------------------------------------
# frame files


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    detections: sk.Detections2D
    gt3d: Optional[np.ndarray] = None
    gt2d: Optional[np.ndarray] = None
    action: Optional[str] = None

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.detections == other.detections
            and _opt_eq(self.gt3d, other.gt3d)
            and _opt_eq(self.gt2d, other.gt2d)
            and self.action == other.action
        )


def _opt_eq(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


class _Header(_Strict):
    schema_: str = Field(alias="schema")
    version: Literal[1]
    joints: list[str]


class _FrameRec(_Strict):
    frame_id: str
    points: list[Optional[tuple[float, float]]] = Field(min_length=15, max_length=15)
    scores: list[float] = Field(min_length=15, max_length=15)
    gt3d: Optional[list[tuple[float, float, float]]] = Field(default=None, min_length=15, max_length=15)
    gt2d: Optional[list[tuple[float, float]]] = Field(default=None, min_length=15, max_length=15)
    action: Optional[str] = None


def _jsonl_records(text: str, schema: str, where: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise FormatError(f"{where}: line 1: missing header")
    head = _parse_json(lines[0], f"{where}: line 1")
    _check_header(head, schema, f"{where}: line 1")
    _validate(_Header, head, f"{where}: line 1")
    for n, line in enumerate(lines[1:], start=2):
        yield n, _parse_json(line, f"{where}: line {n}")


def frames_to_text(frames) -> str:
    out = [dumps({"schema": "posehyp.frames", "version": VERSION, "joints": list(sk.JOINTS)})]
    seen = set()
    for fr in frames:
        if fr.frame_id in seen:
            raise FormatError(f"duplicate frame id {fr.frame_id!r}")
        seen.add(fr.frame_id)
        pts = [None if np.isnan(p).any() else [float(p[0]), float(p[1])] for p in fr.detections.points]
        rec = {"frame_id": fr.frame_id, "points": pts, "scores": fr.detections.scores.tolist()}
        if fr.gt3d is not None:
            rec["gt3d"] = np.asarray(fr.gt3d, float).tolist()
        if fr.gt2d is not None:
            rec["gt2d"] = np.asarray(fr.gt2d, float).tolist()
        if fr.action is not None:
            rec["action"] = fr.action
        out.append(dumps(rec))
    return "\n".join(out) + "\n"


def frames_from_text(text: str, where: str = "frames") -> list[FrameRecord]:
    frames, seen = [], set()
    for n, doc in _jsonl_records(text, "posehyp.frames", where):
        r = _validate(_FrameRec, doc, f"{where}: line {n}")
        if r.frame_id in seen:
            raise FormatError(f"{where}: line {n}: field 'frame_id': duplicate frame id {r.frame_id!r}")
        seen.add(r.frame_id)
        pts = np.array([[np.nan, np.nan] if p is None else p for p in r.points], float)
        try:
            det = sk.Detections2D(pts, np.array(r.scores, float))
        except ValueError as e:
            raise FormatError(f"{where}: line {n}: {e}") from None
        frames.append(
            FrameRecord(
                r.frame_id,
                det,
                None if r.gt3d is None else np.array(r.gt3d, float),
                None if r.gt2d is None else np.array(r.gt2d, float),
                r.action,
            )
        )
    return frames


def write_frames(frames, path):
    atomic_write(path, frames_to_text(frames), read_frames)


def read_frames(path) -> list[FrameRecord]:
    return frames_from_text(Path(path).read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------
# hypothesis files


class _CameraRec(_Strict):
    s: float
    R: tuple[Vec3, Vec3, Vec3]
    t: tuple[float, float]


class _Prov(_Strict):
    sample_index: int
    cluster_id: int


class _HypRec(_Strict):
    frame_id: str
    k: int = Field(ge=1)
    source: Literal["grid", "conditional", "mixed"]
    camera: _CameraRec
    context_digest: str
    poses: list[list[tuple[float, float, float]]]
    provenance: list[_Prov]


def camera_to_doc(cam: sk.CameraWP) -> dict:
    return {"s": cam.s, "R": cam.R.tolist(), "t": cam.t.tolist()}


def camera_from_doc(doc) -> sk.CameraWP:
    return sk.CameraWP(doc["s"], np.array(doc["R"], float), np.array(doc["t"], float))


@dataclass(frozen=True)
class HypothesisRecord:
    frame_id: str
    poses: np.ndarray
    provenance: tuple[tuple[int, int], ...]
    camera: sk.CameraWP
    context_digest: str
    source: str

    def __eq__(self, other):
        if not isinstance(other, HypothesisRecord):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and np.array_equal(self.poses, other.poses)
            and self.provenance == other.provenance
            and self.camera == other.camera
            and self.context_digest == other.context_digest
            and self.source == other.source
        )


def hypotheses_to_text(records) -> str:
    out = [dumps({"schema": "posehyp.hypotheses", "version": VERSION, "joints": list(sk.JOINTS)})]
    for r in records:
        out.append(
            dumps(
                {
                    "frame_id": r.frame_id,
                    "k": len(r.poses),
                    "source": r.source,
                    "camera": camera_to_doc(r.camera),
                    "context_digest": r.context_digest,
                    "poses": np.asarray(r.poses, float).tolist(),
                    "provenance": [{"sample_index": int(a), "cluster_id": int(b)} for a, b in r.provenance],
                }
            )
        )
    return "\n".join(out) + "\n"


def hypotheses_from_text(text: str, where: str = "hypotheses") -> list[HypothesisRecord]:
    out, seen = [], set()
    for n, doc in _jsonl_records(text, "posehyp.hypotheses", where):
        r = _validate(_HypRec, doc, f"{where}: line {n}")
        pos = f"{where}: line {n}"
        if r.frame_id in seen:
            raise FormatError(f"{pos}: field 'frame_id': duplicate frame id {r.frame_id!r}")
        seen.add(r.frame_id)
        if len(r.poses) != r.k or len(r.provenance) != r.k:
            raise FormatError(f"{pos}: field 'poses': expected {r.k} poses and provenance entries")
        if any(len(p) != sk.NUM_JOINTS for p in r.poses):
            raise FormatError(f"{pos}: field 'poses': every pose needs {sk.NUM_JOINTS} joints")
        try:
            cam = camera_from_doc(r.camera.model_dump())
        except ValueError as e:
            raise FormatError(f"{pos}: field 'camera': {e}") from None
        out.append(
            HypothesisRecord(
                r.frame_id,
                np.array(r.poses, float),
                tuple((p.sample_index, p.cluster_id) for p in r.provenance),
                cam,
                r.context_digest,
                r.source,
            )
        )
    return out


def write_hypotheses(records, path):
    atomic_write(path, hypotheses_to_text(records), read_hypotheses)


def read_hypotheses(path):
    return hypotheses_from_text(Path(path).read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------
# baseline fits


@dataclass(frozen=True)
class FitRecord:
    frame_id: str
    pose: np.ndarray
    camera: sk.CameraWP
    trace: tuple[float, ...]
    support: tuple[int, ...]
    valid: Optional[bool]

    def __eq__(self, other):
        if not isinstance(other, FitRecord):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and np.array_equal(self.pose, other.pose)
            and self.camera == other.camera
            and self.trace == other.trace
            and self.support == other.support
            and self.valid == other.valid
        )


class _FitRec(_Strict):
    frame_id: str
    pose: list[tuple[float, float, float]] = Field(min_length=15, max_length=15)
    camera: _CameraRec
    trace: list[float] = Field(min_length=1)
    support: list[int]
    valid: Optional[bool] = None


def fits_to_text(records) -> str:
    out = [dumps({"schema": "posehyp.fits", "version": VERSION, "joints": list(sk.JOINTS)})]
    for r in records:
        out.append(
            dumps(
                {
                    "frame_id": r.frame_id,
                    "pose": np.asarray(r.pose, float).tolist(),
                    "camera": camera_to_doc(r.camera),
                    "trace": [float(x) for x in r.trace],
                    "support": [int(i) for i in r.support],
                    "valid": r.valid,
                }
            )
        )
    return "\n".join(out) + "\n"


def fits_from_text(text: str, where: str = "fits") -> list[FitRecord]:
    out, seen = [], set()
    for n, doc in _jsonl_records(text, "posehyp.fits", where):
        pos = f"{where}: line {n}"
        r = _validate(_FitRec, doc, pos)
        if r.frame_id in seen:
            raise FormatError(f"{pos}: field 'frame_id': duplicate frame id {r.frame_id!r}")
        seen.add(r.frame_id)
        try:
            cam = camera_from_doc(r.camera.model_dump())
        except ValueError as e:
            raise FormatError(f"{pos}: field 'camera': {e}") from None
        out.append(FitRecord(r.frame_id, np.array(r.pose, float), cam, tuple(r.trace), tuple(r.support), r.valid))
    return out


def write_fits(records, path):
    atomic_write(path, fits_to_text(records), read_fits)


def read_fits(path):
    return fits_from_text(Path(path).read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------
# metric reports


class _ReportDoc(_Strict):
    schema_: Literal["posehyp.report"] = Field(alias="schema")
    version: Literal[1]
    metadata: dict[str, Any]
    summary: dict[str, Any]
    pck: dict[str, Any]
    frames: list[dict[str, Any]]


def report_to_text(report: dict) -> str:
    doc = {"schema": "posehyp.report", "version": VERSION, **report}
    return dumps(doc) + "\n"


def report_from_text(text: str, where: str = "report") -> dict:
    doc = _parse_json(text, where)
    _check_header(doc, "posehyp.report", where)
    d = _validate(_ReportDoc, doc, where)
    pck = d.pck
    for name, curve in pck.get("curves", {}).items():
        vals = np.asarray(curve, float)
        if np.any(vals < 0) or np.any(vals > 1) or np.any(np.diff(vals) < 0):
            raise FormatError(f"{where}: field 'pck.curves.{name}': fractions must lie in [0, 1] and not decrease")
    return {"metadata": d.metadata, "summary": d.summary, "pck": d.pck, "frames": d.frames}


def write_report(report: dict, path):
    atomic_write(path, report_to_text(report), read_report)


def read_report(path) -> dict:
    return report_from_text(Path(path).read_text(encoding="utf-8"), str(path))


def digest(obj) -> str:
    import hashlib

    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:16]
