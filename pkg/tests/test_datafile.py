import struct
import zlib

import numpy as np
import pytest

from tacrefine.datafile import DataFileError, dumps, export_csv, load, loads, save
from tacrefine.dataset import Dataset, PairedExample, SampleRecord, default_bounds, pair_delta


def _dataset(n=4, domain="sim"):
    rng = np.random.default_rng(3)
    recs = [SampleRecord(rng.uniform(-0.1, 0.1, 6), rng.uniform(-0.3, 0.3, 6),
                         rng.integers(0, 256, (3, 11, 9), dtype=np.uint8), domain, i) for i in range(n)]
    return Dataset(recs, domain, default_bounds(7), bytes(range(16)), bytes(16), seed=42)


def test_roundtrip_records(tmp_path):
    ds = _dataset()
    path = save(ds, tmp_path / "a.tacd")
    back = load(path)
    assert back == ds
    assert back.bounds == ds.bounds and back.seed == 42 and back.sensor_hash == bytes(range(16))


def test_roundtrip_pairs():
    ds = _dataset()
    pairs = [PairedExample(a, b, pair_delta(a.pose, b.pose)) for a in ds.records for b in ds.records[:2]]
    back = loads(dumps(pairs, ds))
    assert len(back) == len(pairs)
    for x, y in zip(back, pairs):
        assert x.current == y.current and x.target == y.target and np.array_equal(x.delta_x, y.delta_x)


def test_empty_dataset_roundtrips():
    ds = Dataset([], "real_analogue")
    back = loads(dumps(ds))
    assert len(back) == 0 and back.domain_tag == "real_analogue"


def test_dumps_is_deterministic():
    assert dumps(_dataset()) == dumps(_dataset())


def test_corrupt_byte_reports_offset():
    blob = bytearray(dumps(_dataset()))
    head = 4 + 2 + 1 + 1 + 4 + 8 + 4 * 20 + 16 + 32 + 4
    pos = head + 200                         # inside the first entry's image bytes
    blob[pos] ^= 0xFF
    with pytest.raises(DataFileError) as err:
        loads(bytes(blob))
    assert err.value.offset == head          # entry 0 starts right after the header
    assert "entry 0" in str(err.value)


def test_corrupt_header_detected():
    blob = bytearray(dumps(_dataset()))
    blob[20] ^= 1
    with pytest.raises(DataFileError, match="header checksum"):
        loads(bytes(blob))


def test_truncated_file():
    blob = dumps(_dataset())
    with pytest.raises(DataFileError, match="truncated") as err:
        loads(blob[:-10])
    assert err.value.offset == len(blob) - 10


def test_trailing_bytes():
    with pytest.raises(DataFileError, match="trailing"):
        loads(dumps(_dataset()) + b"\0")


def test_bad_magic_and_version():
    blob = bytearray(dumps(_dataset()))
    with pytest.raises(DataFileError, match="magic"):
        loads(b"XXXX" + bytes(blob[4:]))
    blob[4:6] = struct.pack("<H", 9)
    with pytest.raises(DataFileError, match="version 9"):
        loads(bytes(blob))
    with pytest.raises(DataFileError):
        loads(b"")


def test_body_checksum_independent_oracle():
    blob = dumps(_dataset(2))
    head = 4 + 2 + 1 + 1 + 4 + 8 + 4 * 20 + 16 + 32 + 4
    body = blob[head:-4]
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(body)


def test_export_csv(tmp_path):
    ds = _dataset(3)
    path = export_csv(ds, tmp_path / "d.csv", config_hash="abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash: abc"
    assert len(lines) == 1 + 1 + 3
    first = lines[2].split(",")
    sums = [int(v) for v in first[-3:]]
    assert sums == [int(ds.records[0].images[i].sum()) for i in range(3)]
