"""On-disk formats: dataset and model binaries, JSON training config and reports.

Binary layouts (all integers little-endian, floats IEEE binary32):

dataset  ``b"FAWNDATA"`` | u8 version=1 | u32 count | count x record
record   u8 person_present, u8 robot_present, u8 p_ix, u8 p_iy, u8 r_ix, u8 r_iy
         (255 for absent fields) | f32[2*360*4] 5G CSI | f32[2*52*1] Wi-Fi CSI
model    ``b"FAWNMODL"`` | u8 version=1 | u16 count | count x
         (u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 data)
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import GRID_X, GRID_Y, SHAPE_5G, SHAPE_WIFI, CsiSample, SceneLabel
from .metrics import EvalReport
from .model import FawnParams, param_specs
from .training import TrainConfig

DATA_MAGIC = b"FAWNDATA"
MODEL_MAGIC = b"FAWNMODL"
VERSION = 1
ABSENT = 255

HEADER_LEN = 13
N_5G = int(np.prod(SHAPE_5G))
N_WIFI = int(np.prod(SHAPE_WIFI))
RECORD_LEN = 6 + 4 * N_5G + 4 * N_WIFI


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# --- dataset ------------------------------------------------------------------


def _label_bytes(label: SceneLabel) -> bytes:
    label.validate()
    p = label.person or (ABSENT, ABSENT)
    r = label.robot or (ABSENT, ABSENT)
    return bytes([int(label.person_present), int(label.robot_present), *p, *r])


def encode_dataset(samples: Sequence[CsiSample]) -> bytes:
    parts = [DATA_MAGIC, struct.pack("<BI", VERSION, len(samples))]
    for s in samples:
        if s.x5g.shape != SHAPE_5G or s.xwifi.shape != SHAPE_WIFI:
            raise FormatError(f"sample tensors {s.x5g.shape}/{s.xwifi.shape} do not match the layout")
        parts.append(_label_bytes(s.label))
        parts.append(s.x5g.astype("<f4").tobytes())
        parts.append(s.xwifi.astype("<f4").tobytes())
    return b"".join(parts)


def _decode_label(raw: bytes, offset: int) -> SceneLabel:
    pp, rp, pix, piy, rix, riy = raw
    cells = []
    for present, ix, iy, who in ((pp, pix, piy, "person"), (rp, rix, riy, "robot")):
        if present not in (0, 1):
            raise FormatError(f"byte offset {offset}: {who} presence flag {present} is not 0/1")
        if not present:
            cells.append(None)
            continue
        if not (ix < GRID_X and iy < GRID_Y):
            raise FormatError(f"byte offset {offset}: {who} cell ({ix}, {iy}) outside the grid")
        cells.append((ix, iy))
    return SceneLabel(*cells)


def decode_dataset(buf: bytes) -> list[CsiSample]:
    if len(buf) < HEADER_LEN:
        raise FormatError(f"byte offset {len(buf)}: truncated header ({len(buf)} of {HEADER_LEN} bytes)")
    if buf[:8] != DATA_MAGIC:
        raise FormatError(f"byte offset 0: bad magic {buf[:8]!r}")
    version, count = struct.unpack_from("<BI", buf, 8)
    if version != VERSION:
        raise FormatError(f"byte offset 8: unsupported version {version}")
    expected = HEADER_LEN + count * RECORD_LEN
    if len(buf) != expected:
        where = min(len(buf), expected)
        raise FormatError(f"byte offset {where}: file has {len(buf)} bytes, layout needs {expected}")
    out = []
    off = HEADER_LEN
    for _ in range(count):
        label = _decode_label(buf[off : off + 6], off)
        x5g = np.frombuffer(buf, "<f4", N_5G, off + 6).reshape(SHAPE_5G)
        xwifi = np.frombuffer(buf, "<f4", N_WIFI, off + 6 + 4 * N_5G).reshape(SHAPE_WIFI)
        out.append(CsiSample(x5g.astype(np.float64), xwifi.astype(np.float64), label))
        off += RECORD_LEN
    return out


def write_dataset(samples: Sequence[CsiSample], path) -> None:
    Path(path).write_bytes(encode_dataset(samples))


def read_dataset(path) -> list[CsiSample]:
    return decode_dataset(Path(path).read_bytes())


# --- model --------------------------------------------------------------------


def encode_model(params: FawnParams) -> bytes:
    specs = param_specs()
    missing = [name for name, _, _ in specs if name not in params]
    if missing:
        raise FormatError(f"missing parameters: {', '.join(missing)}")
    parts = [MODEL_MAGIC, struct.pack("<BH", VERSION, len(specs))]
    for name, shape, _ in specs:
        arr = np.asarray(params[name])
        if arr.shape != shape:
            raise FormatError(f"parameter {name}: shape {arr.shape}, expected {shape}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise FormatError(f"byte offset {self.off}: truncated while reading {what}")
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return vals

    def raw(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"byte offset {self.off}: truncated while reading {what}")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out


def decode_model(buf: bytes) -> FawnParams:
    rd = _Reader(buf)
    if rd.raw(8, "magic") != MODEL_MAGIC:
        raise FormatError("byte offset 0: bad magic")
    (version,) = rd.take("<B", "version")
    if version != VERSION:
        raise FormatError(f"byte offset 8: unsupported version {version}")
    (count,) = rd.take("<H", "parameter count")
    expected = {name: shape for name, shape, _ in param_specs()}
    params: FawnParams = {}
    for _ in range(count):
        at = rd.off
        (n,) = rd.take("<H", "name length")
        try:
            name = rd.raw(n, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"byte offset {at}: parameter name is not UTF-8") from exc
        if name not in expected:
            raise FormatError(f"byte offset {at}: unknown parameter {name!r}")
        if name in params:
            raise FormatError(f"byte offset {at}: duplicate parameter {name!r}")
        (rank,) = rd.take("<B", f"{name} rank")
        dims = rd.take(f"<{rank}I", f"{name} dims")
        if tuple(dims) != expected[name]:
            raise FormatError(f"byte offset {at}: parameter {name} has dims {tuple(dims)}, architecture needs {expected[name]}")
        size = int(np.prod(dims))
        data = np.frombuffer(rd.raw(4 * size, f"{name} data"), "<f4")
        params[name] = data.astype(np.float64).reshape(dims)
    if rd.off != len(buf):
        raise FormatError(f"byte offset {rd.off}: {len(buf) - rd.off} trailing bytes")
    missing = [k for k in expected if k not in params]
    if missing:
        raise FormatError(f"byte offset {rd.off}: missing parameters {', '.join(missing)}")
    return {name: params[name] for name in expected}


def save_model(params: FawnParams, path) -> None:
    Path(path).write_bytes(encode_model(params))


def load_model(path) -> FawnParams:
    return decode_model(Path(path).read_bytes())


# --- config -------------------------------------------------------------------

_CONFIG_KEYS = {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "seed", "split"}


def parse_config(doc: dict) -> TrainConfig:
    if not isinstance(doc, dict):
        raise ConfigError("$: config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"$.{unknown[0]}: unknown key")
    kw = {}
    for key in ("epochs", "batch_size", "seed"):
        if key in doc:
            v = doc[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"$.{key}: expected an integer, got {v!r}")
            kw[key] = v
    for key in ("lr", "beta1", "beta2", "eps"):
        if key in doc:
            v = doc[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"$.{key}: expected a finite number, got {v!r}")
            kw[key] = float(v)
    if "split" in doc:
        s = doc["split"]
        if not isinstance(s, list) or len(s) != 3 or not all(isinstance(f, (int, float)) and not isinstance(f, bool) for f in s):
            raise ConfigError(f"$.split: expected three numbers, got {s!r}")
        if abs(sum(s) - 1.0) > 1e-9:
            raise ConfigError(f"$.split: fractions sum to {sum(s)}, not 1")
        kw["split"] = tuple(float(f) for f in s)
    if kw.get("epochs", 1) < 1:
        raise ConfigError(f"$.epochs: must be >= 1, got {kw['epochs']}")
    if kw.get("batch_size", 1) < 1:
        raise ConfigError(f"$.batch_size: must be >= 1, got {kw['batch_size']}")
    if kw.get("seed", 0) < 0:
        raise ConfigError(f"$.seed: must be a non-negative integer, got {kw['seed']}")
    if kw.get("lr", 0.0) < 0:
        raise ConfigError(f"$.lr: must be >= 0, got {kw['lr']}")
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"$: {exc}") from exc


def read_config(path) -> TrainConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: not valid JSON ({exc})") from exc
    return parse_config(doc)


# --- report -------------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "f1_macro": report.f1_macro,
        "per_entity_f1": report.per_entity_f1,
        "confusion": report.confusion,
        "n_test": report.n_test,
        "errors": list(report.errors),
        "ecdf": [[e, f] for e, f in report.ecdf],
        "heatmap": report.heatmap,
        "history": report.history,
        "timing": report.timing,
        "flags": report.flags,
    }


def report_from_dict(doc: dict) -> EvalReport:
    try:
        return EvalReport(
            accuracy=float(doc["accuracy"]),
            f1_macro=float(doc["f1_macro"]),
            per_entity_f1={k: float(v) for k, v in doc["per_entity_f1"].items()},
            confusion={k: {kk: int(vv) for kk, vv in v.items()} for k, v in doc.get("confusion", {}).items()},
            errors=[float(e) for e in doc["errors"]],
            ecdf=[(float(e), float(f)) for e, f in doc["ecdf"]],
            heatmap=[[None if v is None else float(v) for v in row] for row in doc["heatmap"]],
            history=list(doc.get("history", [])),
            timing={k: float(v) for k, v in doc.get("timing", {}).items()},
            flags=list(doc.get("flags", [])),
            n_test=int(doc.get("n_test", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"report: malformed document ({exc!r})") from exc


def dump_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def write_report(report: EvalReport, path) -> None:
    dump_json(report_to_dict(report), path)


def read_report(path) -> EvalReport:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"report: not valid JSON ({exc})") from exc
    return report_from_dict(doc)
