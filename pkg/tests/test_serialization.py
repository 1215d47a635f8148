"""Field-file round trips, canonical hashing, atomic writes, and the PGM
renderer byte contract."""

import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cftle.grids import DomainBox, GridSpec, ScalarField
from cftle.render import render_pgm, write_pgm
from cftle.serialization import (FormatError, canonical_json, config_hash,
                                 read_field, write_field)

BOX = DomainBox(0.0, 2.0, 0.0, 1.0)


def _field(values, mask=None):
    values = np.asarray(values, dtype=float)
    grid = GridSpec(BOX, values.shape[1], values.shape[0])
    return ScalarField(grid=grid, values=values, mask=mask)


class TestFieldFile:
    def test_roundtrip_bitexact(self, tmp_path):
        rng = np.random.default_rng(30)
        field = _field(rng.normal(size=(5, 9)))
        path = str(tmp_path / "f.field")
        write_field(path, field, quantity="sigma", t0=0.0, t_a=15.0)
        back, header = read_field(path)
        assert np.array_equal(back.values, field.values)
        assert back.grid == field.grid
        assert header["quantity"] == "sigma"
        assert header["t_a"] == 15.0

    def test_invalid_nodes_roundtrip(self, tmp_path):
        values = np.zeros((4, 6))
        values[1, 2] = np.nan
        values[3, 5] = -np.inf
        field = _field(values)
        path = str(tmp_path / "f.field")
        write_field(path, field, quantity="sigma", t0=0.0, t_a=1.0)
        back, _ = read_field(path)
        assert not back.mask[1, 2] and not back.mask[3, 5]
        assert back.mask.sum() == 22

    def test_payload_length_checked(self, tmp_path):
        field = _field(np.zeros((4, 6)))
        path = str(tmp_path / "f.field")
        write_field(path, field, quantity="sigma", t0=0.0, t_a=1.0)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-8])
        with pytest.raises(FormatError):
            read_field(path)

    def test_missing_marker_rejected(self, tmp_path):
        path = str(tmp_path / "f.field")
        open(path, "wb").write(b'{"kind": "field"}\n')
        with pytest.raises(FormatError):
            read_field(path)

    def test_bad_json_rejected(self, tmp_path):
        path = str(tmp_path / "f.field")
        open(path, "wb").write(b"{oops\n---BINARY---\n" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_field(path)

    def test_payload_is_little_endian_c_order(self, tmp_path):
        values = np.arange(12, dtype=float).reshape(3, 4)
        field = _field(values)
        path = str(tmp_path / "f.field")
        write_field(path, field, quantity="q", t0=0.0, t_a=1.0)
        raw = open(path, "rb").read()
        payload = raw.split(b"---BINARY---\n", 1)[1]
        decoded = np.frombuffer(payload, dtype="<f8").reshape(3, 4)
        assert np.array_equal(decoded, values)

    def test_missing_directories_created(self, tmp_path):
        field = _field(np.zeros((3, 4)))
        target = tmp_path / "sub" / "f.field"
        write_field(str(target), field, quantity="q", t0=0.0, t_a=1.0)
        assert target.exists()

    def test_write_is_atomic(self, tmp_path):
        # a failing write must not leave partial files behind; block the
        # path with a regular file where a directory is needed
        field = _field(np.zeros((3, 4)))
        (tmp_path / "blocker").write_bytes(b"")
        target = tmp_path / "blocker" / "f.field"
        with pytest.raises(OSError):
            write_field(str(target), field, quantity="q", t0=0.0, t_a=1.0)
        leftovers = [p for p in os.listdir(tmp_path) if p != "blocker"]
        assert leftovers == []


class TestCanonicalJson:
    def test_key_order_insensitive(self):
        a = canonical_json({"b": 1, "a": [2, 3]})
        b = canonical_json({"a": [2, 3], "b": 1})
        assert a == b

    def test_compact(self):
        assert " " not in canonical_json({"a": 1, "b": [1, 2]})

    def test_hash_stable_and_sensitive(self):
        base = {"grid": {"nx": 41, "ny": 21}, "t_a": 15.0}
        assert config_hash(base) == config_hash(dict(reversed(base.items())))
        changed = {"grid": {"nx": 41, "ny": 21}, "t_a": -15.0}
        assert config_hash(base) != config_hash(changed)
        assert len(config_hash(base)) == 16


class TestRender:
    def test_header_and_size(self):
        field = _field(np.linspace(0, 1, 24).reshape(4, 6))
        data = render_pgm(field)
        assert data.startswith(b"P5\n6 4\n255\n")
        assert len(data) == len(b"P5\n6 4\n255\n") + 24

    def test_deterministic(self):
        rng = np.random.default_rng(31)
        field = _field(rng.normal(size=(5, 9)))
        assert render_pgm(field) == render_pgm(field)

    def test_constant_field_mid_gray(self):
        field = _field(np.full((4, 6), 3.7))
        data = render_pgm(field)
        pixels = data[len(b"P5\n6 4\n255\n"):]
        assert set(pixels) == {128}

    def test_y_axis_up(self):
        # top pixel row must be the y_max grid row
        values = np.zeros((4, 6))
        values[3, :] = 1.0  # highest-y row bright
        field = _field(values)
        pixels = render_pgm(field)[len(b"P5\n6 4\n255\n"):]
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(4, 6)
        assert set(img[0]) == {255}
        assert set(img[-1]) == {0}

    def test_invalid_pixels_black(self):
        values = np.ones((4, 6))
        values[2, 3] = np.nan
        field = _field(values)
        pixels = render_pgm(field)[len(b"P5\n6 4\n255\n"):]
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(4, 6)
        assert img[4 - 1 - 2, 3] == 0

    def test_ridge_burn(self):
        values = np.linspace(0, 1, 24).reshape(4, 6)
        ridge = np.zeros((4, 6), dtype=bool)
        ridge[1, 1] = True
        field = _field(values)
        pixels = render_pgm(field, ridge_mask=ridge)[len(b"P5\n6 4\n255\n"):]
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(4, 6)
        assert img[4 - 1 - 1, 1] == 255

    def test_explicit_range_clips(self):
        field = _field(np.array([[0.0, 5.0, 10.0]] * 3))
        pixels = render_pgm(field, vmin=0.0, vmax=5.0)[len(b"P5\n3 3\n255\n"):]
        img = np.frombuffer(pixels, dtype=np.uint8).reshape(3, 3)
        assert img[0, 2] == 255  # clipped at the top of the range

    @given(st.integers(0, 2 ** 31 - 1))
    def test_all_bytes_in_range(self, seed):
        rng = np.random.default_rng(seed)
        field = _field(rng.normal(size=(3, 5)) * rng.uniform(0, 100))
        data = render_pgm(field)
        assert len(data) == len(b"P5\n5 3\n255\n") + 15

    def test_write_pgm_file(self, tmp_path):
        field = _field(np.linspace(0, 1, 24).reshape(4, 6))
        path = str(tmp_path / "f.pgm")
        write_pgm(path, field)
        assert open(path, "rb").read() == render_pgm(field)
