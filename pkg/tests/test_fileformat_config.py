"""Dataset container, run manifests and config loading."""
import json
import struct

import numpy as np
import pytest

from spiralstorm.config import AppConfig, ConfigError, KEYS, load_config, parse_value
from spiralstorm.fileformat import MAGIC, DatasetFile, FormatError, RunManifest, file_digest


@pytest.fixture
def dataset(rng):
    return DatasetFile(
        "images",
        {"frames": rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5)),
         "weights": rng.standard_normal(7).astype(np.float32),
         "index": np.arange(6, dtype=np.int32).reshape(2, 3),
         "mask": np.array([True, False, True])},
        attrs={"grid_size": 4, "note": "x"},
        provenance={"seed": 3, "config_hash": "abc"})


def test_round_trip_bit_exact(tmp_path, dataset):
    path = tmp_path / "a.ssd"
    dataset.write(path)
    back = DatasetFile.read(path, kind="images")
    assert back.kind == "images"
    assert back.attrs == dataset.attrs and back.provenance == dataset.provenance
    assert back.arrays["frames"].tobytes() == dataset.arrays["frames"].astype("<c16").tobytes()
    # narrower dtypes are widened, values preserved exactly
    assert back.arrays["weights"].dtype == np.float64
    np.testing.assert_array_equal(back.arrays["weights"], dataset.arrays["weights"])
    np.testing.assert_array_equal(back.arrays["index"], dataset.arrays["index"])
    assert back.arrays["mask"].dtype == bool
    assert back.to_bytes() == dataset.to_bytes()


def test_header_layout(dataset):
    data = dataset.to_bytes()
    assert data[:8] == MAGIC
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    assert header["endianness"] == "little"
    frames = next(e for e in header["arrays"] if e["name"] == "frames")
    assert frames["shape"] == [3, 4, 5] and frames["nbytes"] == 3 * 4 * 5 * 16
    assert len(data) == 16 + hlen + header["payload_bytes"]


def test_payload_digest_ignores_attrs(dataset):
    other = DatasetFile(dataset.kind, dataset.arrays, {"different": 1})
    assert other.payload_digest() == dataset.payload_digest()


def test_corruption_detected(tmp_path, dataset):
    data = bytearray(dataset.to_bytes())
    flipped = bytearray(data)
    flipped[-3] ^= 0xFF
    with pytest.raises(FormatError, match="digest"):
        DatasetFile.from_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        DatasetFile.from_bytes(bytes(data[:-8]))
    with pytest.raises(FormatError, match="magic"):
        DatasetFile.from_bytes(b"NOTMAGIC" + bytes(data[8:]))
    with pytest.raises(FormatError):
        DatasetFile.from_bytes(bytes(data[:20]))


def test_wrong_kind_rejected(tmp_path, dataset):
    path = tmp_path / "a.ssd"
    dataset.write(path)
    with pytest.raises(FormatError, match="kspace"):
        DatasetFile.read(path, kind="kspace")
    with pytest.raises(FormatError):
        DatasetFile("volume", {})


def test_manifest_verify(tmp_path, dataset):
    path = tmp_path / "a.ssd"
    dataset.write(path)
    m = RunManifest("recon", config={"lam": 0.1})
    m.add_output(path)
    m.write(tmp_path / "manifest.json")
    back = RunManifest.read(tmp_path / "manifest.json")
    assert back.outputs == {str(path): file_digest(path)}
    assert back.verify() == []
    path.write_bytes(path.read_bytes() + b"\0")
    assert back.verify() == [f"digest mismatch: {path}"]
    path.unlink()
    assert back.verify() == [f"missing: {path}"]


def test_manifest_config_hash_is_stable():
    a = RunManifest("x", config={"b": 1, "a": [1, 2]}).to_dict()["config_hash"]
    b = RunManifest("y", config={"a": [1, 2], "b": 1}).to_dict()["config_hash"]
    assert a == b


# config

def test_default_config_round_trips_through_ini(tmp_path):
    cfg = AppConfig()
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_ini())
    assert load_config(path) == cfg


def test_every_field_is_a_key():
    import dataclasses
    cfg = AppConfig()
    for section in ("phantom", "acquisition", "recon"):
        for f in dataclasses.fields(getattr(cfg, section)):
            assert KEYS[f.name][0] == section


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[recon]\nlam = 0.1\nlamda = 0.2\n")
    with pytest.raises(ConfigError, match=r"c\.ini:3: unknown key 'lamda'"):
        load_config(path)


def test_key_in_wrong_section(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[phantom]\nlam = 0.1\n")
    with pytest.raises(ConfigError, match=r":2: key 'lam' belongs in \[recon\]"):
        load_config(path)


def test_unknown_section_and_bad_value(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[solver]\nlam = 0.1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(path)
    path.write_text("[recon]\ncg_iters = many\n")
    with pytest.raises(ConfigError, match=r":2: cg_iters: cannot parse"):
        load_config(path)


def test_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[recon]\nlam = 0.1\n")
    cfg = load_config(path, {"lam": "0.2", "n-frames": "10", "navigator_every": "none"})
    assert cfg.recon.lam == 0.2
    assert cfg.phantom.n_frames == 10
    assert cfg.acquisition.navigator_every is None
    with pytest.raises(ConfigError, match="--lamda"):
        load_config(None, {"lamda": "1"})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"coil_compression": "1.5"})
    with pytest.raises(ConfigError):
        load_config(None, {"spirals_per_frame": "2000"})


def test_parse_value_types():
    assert parse_value("cg_iters", " 7 ") == 7
    assert parse_value("navigator_every", "None") is None
    assert parse_value("navigator_every", "6") == 6
    with pytest.raises(ConfigError):
        parse_value("nope", "1")
