import json
import math
import struct

import numpy as np
import pytest

from rdbound.bounds import LayerTerm, RdReport
from rdbound.errors import BadMagic, DuplicateName, TruncatedFile, VersionUnsupported
from rdbound.io import (
    decode_bundle,
    encode_bundle,
    read_bundle,
    read_idx,
    write_bundle,
    write_idx,
    write_report,
)
from rdbound.linalg import make_rng


def test_bundle_sizes(tmp_path):
    p = tmp_path / "e.rdmb"
    write_bundle(p, {})
    assert p.stat().st_size == 12
    write_bundle(p, {"w": [[7.0]]})
    assert p.stat().st_size == 41
    assert read_bundle(p)["w"].tolist() == [[7.0]]


def test_bundle_layout_is_little_endian():
    buf = encode_bundle([("ab", np.array([[1.5, -2.0]]))])
    assert buf[:4] == b"RDMB"
    assert struct.unpack("<IIIxx", buf[4:18]) == (1, 1, 2)
    assert buf[16:18] == b"ab"
    assert struct.unpack("<QQdd", buf[18:]) == (1, 2, 1.5, -2.0)


def test_bundle_round_trip_random(tmp_path):
    rng = make_rng(0)
    for i in range(100):
        b = {
            f"m{k}_é": rng.standard_normal((int(rng.integers(0, 5)), int(rng.integers(0, 5)))) * 10.0 ** rng.integers(-300, 300)
            for k in range(int(rng.integers(0, 5)))
        }
        p = tmp_path / f"{i}.rdmb"
        write_bundle(p, b)
        back = read_bundle(p)
        assert list(back) == list(b)
        for k in b:
            assert back[k].shape == b[k].shape
            assert back[k].tobytes() == b[k].tobytes()


def test_bundle_errors():
    good = encode_bundle({"w": [[1.0, 2.0]]})
    with pytest.raises(BadMagic):
        decode_bundle(b"XXXX" + good[4:])
    with pytest.raises(VersionUnsupported):
        decode_bundle(good[:4] + struct.pack("<I", 2) + good[8:])
    for cut in (3, 10, 15, len(good) - 1):
        with pytest.raises(TruncatedFile):
            decode_bundle(good[:cut])
    with pytest.raises(DuplicateName):
        encode_bundle([("a", [[1.0]]), ("a", [[2.0]])])
    one = encode_bundle({"a": [[1.0]]})[12:]
    with pytest.raises(DuplicateName):
        decode_bundle(b"RDMB" + struct.pack("<II", 1, 2) + one + one)


def test_idx_images_fixture(tmp_path):
    p = tmp_path / "img.idx"
    payload = bytes(range(0, 80, 10))
    p.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + payload)
    t = read_idx(p)
    assert t.dims == (2, 2, 2)
    assert t.data.tobytes() == payload
    cols = t.images_as_columns()
    assert cols.shape == (4, 2)
    np.testing.assert_array_equal(cols[:, 1] * 255, [40, 50, 60, 70])


def test_idx_labels_fixture_and_writer(tmp_path):
    p = tmp_path / "lab.idx"
    write_idx(p, [3, 1, 4])
    raw = p.read_bytes()
    magic, n = struct.unpack(">II", raw[:8])
    assert (magic, n) == (0x801, 3)
    t = read_idx(p)
    assert t.dims == (3,) and t.data.tolist() == list(raw[8:])


def test_idx_errors(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(struct.pack(">II", 0x802, 1) + b"\x00")
    with pytest.raises(BadMagic):
        read_idx(p)
    p.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\x00" * 7)
    with pytest.raises(TruncatedFile):
        read_idx(p)


def _term(l, d_eff):
    return LayerTerm(l, 3, 4, 2.5, 1, d_eff, 7 * d_eff, 1.0, 7 * d_eff - 1.0, 0.5, 9.0)


def _report(layers):
    return RdReport(
        eps_star=0.1 + 1e-17, d_r_total=math.pi, per_layer=layers, one_shot_bound=1 / 3,
        integral_bound=2 / 3, baselines=None, frobenius_norm=math.e, n=10, beta=1.0,
    )


def test_csv_rows(tmp_path):
    p = tmp_path / "r.csv"
    write_report(p, _report([]), "csv")
    assert p.read_text().splitlines() == ["layer,d_in,d_out,r_eff,d_eff,scale_a,lambda_max"]
    write_report(p, _report([_term(1, 0.1), _term(2, 0.2)]), "csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("Total,6,8,2,")


def test_json_precision(tmp_path):
    p = tmp_path / "r.json"
    rep = _report([_term(1, 1 / 7)])
    write_report(p, rep, "json")
    back = json.loads(p.read_text())
    assert back["d_r_total"] == rep.d_r_total
    assert back["one_shot_bound"] == rep.one_shot_bound
    assert back["per_layer"][0]["d_eff"] == 1 / 7
    assert back["per_layer"][0]["contribution"] == rep.per_layer[0].contribution


def test_json_rejects_nonfinite(tmp_path):
    rep = _report([])
    rep.d_r_total = math.inf
    with pytest.raises(ValueError):
        write_report(tmp_path / "x.json", rep, "json")


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        write_report(tmp_path / "x", _report([]), "xml")
