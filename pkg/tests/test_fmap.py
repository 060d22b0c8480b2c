"""Feature-map container, binary format, and projection."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partgraph.errors import ParseError, ValidationError
from partgraph.fmap import (
    FeatureMap,
    grid_positions,
    project_unit,
    read_fmap,
    write_fmap,
)


def roundtrip(fmap: FeatureMap) -> tuple[bytes, FeatureMap]:
    buf = io.BytesIO()
    write_fmap(fmap, buf)
    data = buf.getvalue()
    return data, read_fmap(io.BytesIO(data))


def make_map(values, image_id="img0", layer=0, px=(224, 224)) -> FeatureMap:
    return FeatureMap(
        image_id=image_id,
        layer_index=layer,
        values=np.asarray(values, dtype=np.float32),
        image_width_px=px[0],
        image_height_px=px[1],
    )


class TestProjection:
    def test_center_of_unit_grid(self):
        p = project_unit(0, 0, 1, 1)
        assert (p.x, p.y) == (0.5, 0.5)

    def test_quadrant_center(self):
        p = project_unit(0, 0, 2, 2)
        assert (p.x, p.y) == (0.25, 0.25)

    def test_hand_computed_cell(self):
        p = project_unit(6, 13, 14, 14)
        assert p.x == pytest.approx(13.5 / 14, abs=1e-15)
        assert p.y == pytest.approx(6.5 / 14, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            project_unit(2, 0, 2, 2)
        with pytest.raises(ValidationError):
            project_unit(0, -1, 2, 2)

    @given(h=st.integers(1, 32), w=st.integers(1, 32))
    def test_strictly_monotone_and_interior(self, h, w):
        xs = [project_unit(0, c, h, w).x for c in range(w)]
        ys = [project_unit(r, 0, h, w).y for r in range(h)]
        assert all(b > a for a, b in zip(xs, xs[1:]))
        assert all(b > a for a, b in zip(ys, ys[1:]))
        assert all(0.0 < v < 1.0 for v in xs + ys)

    def test_grid_positions_matches_scalar(self):
        grid = grid_positions(3, 5)
        for r in range(3):
            for c in range(5):
                p = project_unit(r, c, 3, 5)
                assert grid[r * 5 + c, 0] == p.x
                assert grid[r * 5 + c, 1] == p.y


class TestBinaryFormat:
    def test_smallest_legal_file(self):
        data, back = roundtrip(make_map(np.zeros((1, 1, 1)), image_id="a"))
        assert len(data) < 64
        assert back.values.shape == (1, 1, 1)
        assert back.values[0, 0, 0] == 0.0

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        fmap = make_map(rng.normal(size=(3, 4, 5)), image_id="bird_007", layer=2)
        data, back = roundtrip(fmap)
        assert back.image_id == fmap.image_id
        assert back.layer_index == fmap.layer_index
        assert (back.image_width_px, back.image_height_px) == (224, 224)
        assert np.array_equal(
            back.values.view(np.uint32), fmap.values.view(np.uint32)
        )
        # write(read(bytes)) reproduces the byte stream
        buf = io.BytesIO()
        write_fmap(back, buf)
        assert buf.getvalue() == data

    def test_bad_magic(self):
        data, _ = roundtrip(make_map(np.zeros((1, 1, 1))))
        with pytest.raises(ParseError, match="bad magic"):
            read_fmap(io.BytesIO(b"FMAQ" + data[4:]))

    def test_truncated_payload(self):
        data, _ = roundtrip(make_map(np.ones((2, 2, 2))))
        with pytest.raises(ParseError, match="truncated"):
            read_fmap(io.BytesIO(data[:-3]))

    def test_zero_dims_rejected(self):
        data, _ = roundtrip(make_map(np.ones((1, 1, 1))))
        # patch the channel count field (after magic+version+idlen+id+layer)
        idx = 4 + 1 + 4 + len(b"img0") + 4
        broken = data[:idx] + b"\x00\x00\x00\x00" + data[idx + 4 :]
        with pytest.raises(ParseError, match="zero dimension"):
            read_fmap(io.BytesIO(broken))

    def test_non_finite_rejected(self):
        data, _ = roundtrip(make_map(np.ones((1, 1, 1))))
        broken = data[:-4] + np.float32(np.inf).tobytes()
        with pytest.raises(ParseError, match="non-finite"):
            read_fmap(io.BytesIO(broken))

    def test_trailing_bytes_rejected(self):
        data, _ = roundtrip(make_map(np.ones((1, 1, 1))))
        with pytest.raises(ParseError, match="trailing"):
            read_fmap(io.BytesIO(data + b"x"))

    def test_constructor_rejects_nan(self):
        with pytest.raises(ValidationError):
            make_map(np.full((1, 1, 1), np.nan))


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(1, 4),
    h=st.integers(1, 64),
    w=st.integers(1, 64),
    seed=st.integers(0, 2**31),
    ident=st.text(min_size=0, max_size=12),
)
def test_roundtrip_property(c, h, w, seed, ident):
    rng = np.random.default_rng(seed)
    values = rng.normal(scale=10.0, size=(c, h, w)).astype(np.float32)
    fmap = make_map(values, image_id=ident, layer=int(seed % 7), px=(640, 480))
    _, back = roundtrip(fmap)
    assert back.image_id == fmap.image_id
    assert back.layer_index == fmap.layer_index
    assert np.array_equal(back.values.view(np.uint32), fmap.values.view(np.uint32))
