import json
import struct

import numpy as np
import pytest

from ncal.acquisition import CheckpointPredictions, score_candidates
from ncal.errors import BadMagic, FormatError, IndexMismatch, NonFiniteValue, TruncatedPayload
from ncal.io import (index_path, make_report, read_feature_dump, read_prediction_log,
                     read_records, read_report, report_result, write_feature_dump,
                     write_prediction_log, write_records, write_report)
from ncal.loop import ProtocolConfig, run_experiment
from ncal.pool import FeatureMatrix, PoolState


@pytest.fixture
def dump(tmp_path):
    fm = FeatureMatrix([[1.5, -2.0], [0.1, 3e-8], [7.0, 1e30]], [10, 4, 99])
    path = tmp_path / "f.ncf"
    write_feature_dump(path, fm, [0, -1, 2])
    return path, fm


def test_dump_roundtrip_bit_exact(dump, tmp_path):
    path, fm = dump
    got, labels = read_feature_dump(path)
    assert got.features.astype("<f4").tobytes() == fm.features.astype("<f4").tobytes()
    assert got.sample_ids.tolist() == [10, 4, 99] and labels.tolist() == [0, -1, 2]
    again = tmp_path / "g.ncf"
    write_feature_dump(again, got, labels)
    assert again.read_bytes() == path.read_bytes()
    assert index_path(again).read_bytes() == index_path(path).read_bytes()


def test_dump_layout(dump):
    path, _ = dump
    raw = path.read_bytes()
    assert raw[:4] == b"NCF1"
    assert struct.unpack("<III", raw[4:16]) == (1, 3, 2)
    assert len(raw) == 16 + 4 * 3 * 2
    assert index_path(path).read_text() == "10,0\n4,-1\n99,2\n"


def test_truncated(dump):
    path, _ = dump
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(TruncatedPayload):
        read_feature_dump(path)
    path.write_bytes(b"NCF1\x01\x00")
    with pytest.raises(TruncatedPayload):
        read_feature_dump(path)


def test_bad_magic_and_trailing(dump):
    path, _ = dump
    raw = path.read_bytes()
    path.write_bytes(b"NCF2" + raw[4:])
    with pytest.raises(BadMagic):
        read_feature_dump(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError):
        read_feature_dump(path)


def test_nonfinite_reports_position(tmp_path):
    payload = np.array([[1, 2, 3], [4, np.nan, 6]], dtype="<f4")
    path = tmp_path / "nan.ncf"
    path.write_bytes(b"NCF1" + struct.pack("<III", 1, 2, 3) + payload.tobytes())
    index_path(path).write_text("0,-1\n1,-1\n")
    with pytest.raises(NonFiniteValue) as e:
        read_feature_dump(path)
    assert (e.value.row, e.value.col, e.value.offset) == (1, 1, 16 + 4 * 4)


def test_index_mismatch(dump):
    path, _ = dump
    index_path(path).write_text("10,0\n4,-1\n")
    with pytest.raises(IndexMismatch):
        read_feature_dump(path)
    index_path(path).write_text("10,0\n4,x\n99,1\n")
    with pytest.raises(IndexMismatch):
        read_feature_dump(path)


@pytest.fixture
def preds():
    return CheckpointPredictions([3, 5, 8], [12, 2, 7], [[0, 1, 1], [2, 2, 2], [1, 0, 1]])


def test_prediction_log_roundtrip(tmp_path, preds):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_prediction_log(a, preds)
    lines = a.read_text().splitlines()
    assert lines[0] == "sample_id,epoch,predicted_class" and lines[1] == "2,3,2"
    got = read_prediction_log(a)
    assert got.final() == preds.final()
    write_prediction_log(b, got)
    assert a.read_bytes() == b.read_bytes()


def test_prediction_log_errors(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("id,epoch,y\n")
    with pytest.raises(FormatError):
        read_prediction_log(p)
    p.write_text("sample_id,epoch,predicted_class\n2,1,0\n1,1,0\n")
    with pytest.raises(FormatError):
        read_prediction_log(p)
    p.write_text("sample_id,epoch,predicted_class\n1,1,0\n1,2,0\n2,1,0\n2,3,0\n")
    with pytest.raises(FormatError):
        read_prediction_log(p)


def make_result(rng):
    x = rng.standard_normal((30, 4)) + 2 * np.eye(3, 4)[np.arange(30) % 3]
    fm = FeatureMatrix.from_array(x)
    pool = PoolState.initial(3, {i: i % 3 for i in range(12)}, range(12, 30))
    preds = CheckpointPredictions([0, 1, 2, 3], range(12, 30), rng.integers(0, 3, (18, 4)))
    return score_candidates(fm, pool, preds).with_selection(4)


def test_report_roundtrip(tmp_path, rng):
    res = make_result(rng)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_report(a, make_report(res, {"k": 4}))
    doc = read_report(a)
    write_report(b, doc)
    assert a.read_bytes() == b.read_bytes()
    back = report_result(doc)
    np.testing.assert_array_equal(back.score, res.score)
    # the fused score is auditable from the file alone
    for c in doc["candidates"]:
        assert c["score"] == pytest.approx((c["cmap_std"] + c["ff_std"]) / 2, abs=1e-12)


def test_report_rejects_bad_ranks(tmp_path, rng):
    doc = make_report(make_result(rng))
    doc["candidates"][0]["rank"] = doc["candidates"][1]["rank"]
    p = tmp_path / "r.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        read_report(p)
    p.write_text("{not json")
    with pytest.raises(FormatError):
        read_report(p)


def test_records_roundtrip(tmp_path):
    cfg = ProtocolConfig(num_classes=3, per_class=50, dim=4, epochs=5, hidden=8,
                         budget_fraction=0.2)
    results = run_experiment(cfg, ["random"], seeds=[0])
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_records(a, results)
    back = read_records(a)
    assert back == results
    write_records(b, back)
    assert a.read_bytes() == b.read_bytes()
