"""Binary container for recorded samples and paired examples, plus CSV export.

Layout (little endian)::

    header   magic "TACD" | version u16 | kind u8 | domain u8 | count u32 | seed i64
             | bounds 4 x (lower f64, upper f64, steps u32) | x f64 | yaw f64
             | sensor hash 16B | config hash 16B | header crc32
    body     count fixed-size entries, each followed by its own crc32
    trailer  crc32 of the whole body

A record entry is id u32 | domain u8 | pose 6xf64 | joints 6xf64 | images 297B.
A pair entry is current record | target record | delta_x 6xf64.
"""

from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path

import numpy as np

from .dataset import DOMAINS, SAMPLED_DIMS, DimBounds, Dataset, PairedExample, PoseBounds, SampleRecord

MAGIC = b"TACD"
VERSION = 1
KIND_RECORDS, KIND_PAIRS = 0, 1
IMAGE_SHAPE = (3, 11, 9)
IMAGE_BYTES = int(np.prod(IMAGE_SHAPE))

_HEAD = struct.Struct("<4sHBBIq" + "ddI" * 4 + "dd16s16s")
_CRC = struct.Struct("<I")
_REC = struct.Struct(f"<IB6d6d{IMAGE_BYTES}s")
_DELTA = struct.Struct("<6d")


class DataFileError(ValueError):
    """Unreadable dataset file; ``offset`` is the byte where the problem was found."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


def _pack_record(rec: SampleRecord) -> bytes:
    images = np.ascontiguousarray(rec.images, dtype=np.uint8)
    if images.shape != IMAGE_SHAPE:
        raise ValueError(f"record {rec.record_id}: images have shape {images.shape}")
    return _REC.pack(int(rec.record_id), DOMAINS.index(rec.domain_tag),
                     *np.asarray(rec.pose, dtype=np.float64), *np.asarray(rec.joints, dtype=np.float64),
                     images.tobytes())


def _unpack_record(buf, offset) -> SampleRecord:
    fields = _REC.unpack_from(buf, offset)
    rid, dom = fields[0], fields[1]
    if dom >= len(DOMAINS):
        raise DataFileError(f"bad domain code {dom}", offset)
    images = np.frombuffer(fields[14], dtype=np.uint8).reshape(IMAGE_SHAPE).copy()
    return SampleRecord(np.array(fields[2:8]), np.array(fields[8:14]), images, DOMAINS[dom], rid)


def _header(kind, count, domain_tag, bounds: PoseBounds, seed, sensor_hash, config_hash) -> bytes:
    dims = []
    for name in SAMPLED_DIMS:
        d = getattr(bounds, name)
        dims += [d.lower, d.upper, d.steps]
    head = _HEAD.pack(MAGIC, VERSION, kind, DOMAINS.index(domain_tag), count, int(seed), *dims,
                      bounds.x_fixed, bounds.yaw_fixed, bytes(sensor_hash), bytes(config_hash))
    return head + _CRC.pack(zlib.crc32(head))


def dumps(data, meta: Dataset | None = None) -> bytes:
    """Serialize a Dataset (records) or a list of PairedExample.

    For pairs, ``meta`` (a Dataset, records ignored) supplies the header fields.
    """
    if isinstance(data, Dataset):
        kind, items = KIND_RECORDS, data.records
        meta = data
        entries = [_pack_record(r) for r in items]
    else:
        kind, items = KIND_PAIRS, list(data)
        if meta is None:
            meta = Dataset([], items[0].current.domain_tag if items else "sim")
        entries = [_pack_record(ex.current) + _pack_record(ex.target)
                   + _DELTA.pack(*np.asarray(ex.delta_x, dtype=np.float64)) for ex in items]
    body = b"".join(e + _CRC.pack(zlib.crc32(e)) for e in entries)
    head = _header(kind, len(items), meta.domain_tag, meta.bounds, meta.seed,
                   meta.sensor_hash, meta.config_hash)
    return head + body + _CRC.pack(zlib.crc32(body))


def loads(buf: bytes):
    """Inverse of :func:`dumps`. Raises DataFileError with the offending offset."""
    buf = memoryview(buf)
    hsize = _HEAD.size + _CRC.size
    if len(buf) < 6:
        raise DataFileError("file too short for a header", len(buf))
    if bytes(buf[:4]) != MAGIC:
        raise DataFileError(f"bad magic {bytes(buf[:4])!r}", 0)
    version = struct.unpack_from("<H", buf, 4)[0]
    if version != VERSION:
        raise DataFileError(f"unsupported version {version} (expected {VERSION})", 4)
    if len(buf) < hsize:
        raise DataFileError("truncated header", len(buf))
    fields = _HEAD.unpack_from(buf, 0)
    if _CRC.unpack_from(buf, _HEAD.size)[0] != zlib.crc32(buf[:_HEAD.size]):
        raise DataFileError("header checksum mismatch", _HEAD.size)
    _, _, kind, dom, count, seed = fields[:6]
    if kind not in (KIND_RECORDS, KIND_PAIRS):
        raise DataFileError(f"unknown payload kind {kind}", 6)
    if dom >= len(DOMAINS):
        raise DataFileError(f"bad domain code {dom}", 7)
    dims = fields[6:18]
    bounds = PoseBounds(*(DimBounds(dims[3 * i], dims[3 * i + 1], dims[3 * i + 2]) for i in range(4)),
                        x_fixed=fields[18], yaw_fixed=fields[19])
    esize = _REC.size if kind == KIND_RECORDS else 2 * _REC.size + _DELTA.size
    body_end = hsize + count * (esize + _CRC.size)
    if len(buf) < body_end + _CRC.size:
        raise DataFileError(f"truncated: {count} entries need {body_end + _CRC.size} bytes, "
                            f"file has {len(buf)}", len(buf))
    if len(buf) > body_end + _CRC.size:
        raise DataFileError("trailing bytes after checksum", body_end + _CRC.size)
    items = []
    off = hsize
    for i in range(count):
        stored = _CRC.unpack_from(buf, off + esize)[0]
        if stored != zlib.crc32(buf[off:off + esize]):
            raise DataFileError(f"checksum mismatch in entry {i}", off)
        if kind == KIND_RECORDS:
            items.append(_unpack_record(buf, off))
        else:
            cur = _unpack_record(buf, off)
            tgt = _unpack_record(buf, off + _REC.size)
            delta = np.array(_DELTA.unpack_from(buf, off + 2 * _REC.size))
            items.append(PairedExample(cur, tgt, delta))
        off += esize + _CRC.size
    if _CRC.unpack_from(buf, body_end)[0] != zlib.crc32(buf[hsize:body_end]):
        raise DataFileError("body checksum mismatch", body_end)
    if kind == KIND_PAIRS:
        return items
    return Dataset(items, DOMAINS[dom], bounds, bytes(fields[20]), bytes(fields[21]), seed)


def save(data, path, meta: Dataset | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps(data, meta))
    return path


def load(path):
    return loads(Path(path).read_bytes())


def export_csv(dataset: Dataset, path, config_hash: str | None = None) -> Path:
    """One row per record with pose, joints and per-finger reading sums; raw images are omitted."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "domain", "x", "y", "z", "roll", "pitch", "yaw",
                    *(f"q{i}" for i in range(6)), "sum_thumb", "sum_index", "sum_middle"])
        for r in dataset.records:
            sums = np.asarray(r.images, dtype=np.int64).reshape(3, -1).sum(axis=1)
            w.writerow([r.record_id, r.domain_tag, *(repr(float(v)) for v in r.pose),
                        *(repr(float(v)) for v in r.joints), *sums.tolist()])
    return path
