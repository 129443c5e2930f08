import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview import (
    DataValidationError,
    Domain,
    FeatureMap,
    load_dataset,
    read_feature_map,
    write_feature_map,
)
from crossview.feature_store import HEADER_SIZE

from conftest import make_map


def test_minimal_tensor_roundtrip(tmp_path):
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map([[[0.0]]]), path)
    assert path.stat().st_size == HEADER_SIZE + 4
    back = read_feature_map(path)
    assert back.data.shape == (1, 1, 1)
    assert back.data[0, 0, 0] == 0.0


def test_roundtrip_bit_exact(tmp_path, rng):
    data = rng.standard_normal((2, 3, 3)).astype(np.float32)
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map(data), path)
    back = read_feature_map(path)
    assert back.data.tobytes() == data.tobytes()


@settings(max_examples=60, deadline=None)
@given(
    shape=st.tuples(
        st.integers(1, 8), st.integers(1, 8), st.integers(1, 8)
    ),
    seed=st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(tmp_path_factory, shape, seed):
    data = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    path = tmp_path_factory.mktemp("fm") / "t.cvfm"
    write_feature_map(make_map(data), path)
    back = read_feature_map(path)
    assert back.data.shape == shape
    assert back.data.tobytes() == data.tobytes()


def test_rejects_nan_before_write(tmp_path):
    with pytest.raises(DataValidationError, match="non-finite"):
        make_map([[[np.nan]]])


def test_rejects_zero_dim():
    with pytest.raises(DataValidationError):
        FeatureMap(data=np.zeros((1, 0, 2), dtype=np.float32))


def test_wrong_magic(tmp_path):
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map([[[1.0]]]), path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataValidationError, match="unrecognized format"):
        read_feature_map(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map(np.ones((2, 3, 3), dtype=np.float32)), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(DataValidationError, match="truncated"):
        read_feature_map(path)


def test_nonfinite_payload_rejected(tmp_path):
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map([[[1.0]]]), path)
    raw = bytearray(path.read_bytes())
    raw[HEADER_SIZE : HEADER_SIZE + 4] = np.array([np.inf], "<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(DataValidationError, match="non-finite"):
        read_feature_map(path)


def test_header_single_byte_corruptions_rejected(tmp_path):
    # Every single-byte corruption of magic or dims must be rejected: the
    # reader checks magic bytes and requires the payload length to match
    # the header dims exactly.
    path = tmp_path / "t.cvfm"
    write_feature_map(make_map(np.ones((2, 3, 3), dtype=np.float32)), path)
    good = path.read_bytes()
    corrupt = tmp_path / "bad.cvfm"
    for offset in list(range(0, 4)) + list(range(8, 20)):
        raw = bytearray(good)
        raw[offset] = (raw[offset] + 1) % 256
        corrupt.write_bytes(bytes(raw))
        with pytest.raises(DataValidationError):
            read_feature_map(corrupt)


def _write_manifest(tmp_path, entries, dataset_name="ds"):
    doc = {"dataset_name": dataset_name, "entries": entries}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def _tensor(tmp_path, name):
    p = tmp_path / name
    write_feature_map(make_map([[[1.0]]]), p)
    return name


def test_load_dataset(tmp_path):
    rows = []
    for i, dom in enumerate(["drone", "drone", "satellite", "satellite"]):
        name = _tensor(tmp_path, f"t{i}.cvfm")
        rows.append(
            {"image_id": f"img{i}", "domain": dom, "location_id": f"loc{i % 2}",
             "tensor_path": name}
        )
    manifest = load_dataset(_write_manifest(tmp_path, rows))
    assert len(manifest.entries) == 4
    assert len(manifest.by_domain(Domain.DRONE)) == 2
    assert len(manifest.by_domain(Domain.SATELLITE)) == 2
    fmap = manifest.load_map(manifest.entries[0])
    assert fmap.image_id == "img0"
    assert fmap.location_id == "loc0"


def test_duplicate_image_id(tmp_path):
    name = _tensor(tmp_path, "t.cvfm")
    rows = [
        {"image_id": "dup", "domain": "drone", "location_id": "a", "tensor_path": name},
        {"image_id": "dup", "domain": "satellite", "location_id": "a", "tensor_path": name},
    ]
    with pytest.raises(DataValidationError, match="dup"):
        load_dataset(_write_manifest(tmp_path, rows))


def test_missing_tensor_file(tmp_path):
    rows = [{"image_id": "a", "domain": "drone", "location_id": "x",
             "tensor_path": "nope.cvfm"}]
    with pytest.raises(DataValidationError, match="nope.cvfm"):
        load_dataset(_write_manifest(tmp_path, rows))


def test_unknown_domain(tmp_path):
    name = _tensor(tmp_path, "t.cvfm")
    rows = [{"image_id": "a", "domain": "airplane", "location_id": "x",
             "tensor_path": name}]
    with pytest.raises(DataValidationError, match="airplane"):
        load_dataset(_write_manifest(tmp_path, rows))
