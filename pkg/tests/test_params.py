import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from koopvd.params import (ConfigError, ShapeConvention, TireParams, VehicleParams, dump_params, load_params,
                           parse_kv_text, save_params)

positive = st.floats(min_value=1e-3, max_value=1e5, allow_nan=False, allow_infinity=False)


def test_defaults_are_valid(vp, tp):
    assert vp.m_v == 1300.0
    assert tp.shape_convention is ShapeConvention.SIN
    assert vp.drag_factor == pytest.approx(0.5 * 0.3 * 1.225 * 2.2)


@pytest.mark.parametrize("field", [f.name for f in dataclasses.fields(VehicleParams)])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_vehicle_rejects_nonpositive(field, bad):
    with pytest.raises(ConfigError, match=field):
        VehicleParams(**{field: bad})


def test_tire_rejects_bad_coefficients():
    with pytest.raises(ConfigError):
        TireParams(lateral=(8.0, 1.3, -1.0, 0.0))
    with pytest.raises(ConfigError):
        TireParams(longitudinal=(1.0, 2.0, 3.0))


def test_parse_kv_comments_and_errors():
    assert parse_kv_text("a = 1  # note\n\n# only comment\nb=2") == {"a": "1", "b": "2"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv_text("a = 1\na = 2")
    with pytest.raises(ConfigError, match="expected"):
        parse_kv_text("just words")


def test_load_rejects_unknown_keys(tmp_path):
    p = tmp_path / "p.cfg"
    p.write_text("m_v = 1500\nwheelbase = 2.6\n")
    with pytest.raises(ConfigError, match="wheelbase"):
        load_params(p)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_params(tmp_path / "missing.cfg")


def test_partial_file_keeps_defaults(tmp_path):
    p = tmp_path / "p.cfg"
    p.write_text("m_v = 1500\nshape_convention = cos_as_printed\n")
    vp, tp = load_params(p)
    assert vp.m_v == 1500.0 and vp.J_zz == VehicleParams().J_zz
    assert tp.shape_convention is ShapeConvention.COS_AS_PRINTED


@given(m=positive, j=positive, d=positive, e=st.floats(-5, 1), conv=st.sampled_from(list(ShapeConvention)))
def test_params_roundtrip(tmp_path_factory, m, j, d, e, conv):
    vp = VehicleParams(m_v=m, J_zz=j)
    tp = TireParams(lateral=(8.0, 1.3, d, e), shape_convention=conv)
    path = tmp_path_factory.mktemp("rt") / "p.cfg"
    save_params(path, vp, tp)
    assert load_params(path) == (vp, tp)
    assert dump_params(*load_params(path)) == dump_params(vp, tp)
