import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nutriloop.errors import ContractViolation
from nutriloop.nutrients import (
    CORE_FIELDS,
    NutrientField,
    NutrientSchema,
    NutrientVector,
    load_default_schema,
    nv_add,
    nv_sub,
)

from conftest import nv


def test_schema_has_exactly_40_unique_fields(schema):
    assert len(schema) == 40
    assert len(set(schema.names)) == 40


def test_schema_contains_core_fields(schema):
    for name in CORE_FIELDS:
        assert name in schema


def test_schema_units_and_groups_valid(schema):
    for f in schema.fields:
        assert f.unit in ("kcal", "g", "mg", "mcg")
        assert f.group in ("macronutrient", "mineral", "vitamin")


def test_schema_rejects_wrong_count():
    fields = [NutrientField(f"f{i}", "g", "mineral") for i in range(39)]
    with pytest.raises(ContractViolation):
        NutrientSchema(fields)


def test_micronutrient_subset_excludes_core(schema):
    micro = schema.micronutrient_names
    assert "sodium" not in micro
    assert "iron" in micro
    assert "vitamin_c" in micro


def test_nv_add_basic(schema):
    assert nv_add(nv(schema, energy=650), nv(schema, energy=700)) == nv(schema, energy=1350)


def test_nv_add_identity_with_all_masked_zero(schema):
    a = nv(schema, energy=500, protein=30)
    zero = NutrientVector.zeros(schema)
    assert nv_add(a, zero) == a


def test_nv_add_mask_union(schema):
    a = nv(schema, protein=20)
    b = nv(schema, protein=5, iron=8)
    out = nv_add(a, b)
    assert out.get("protein") == 25
    assert out.get("iron") == 8


def test_nv_sub_basic(schema):
    assert nv_sub(nv(schema, energy=2000), nv(schema, energy=650)) == nv(schema, energy=1350)


def test_nv_sub_signed_residual(schema):
    out = nv_sub(nv(schema, energy=500), nv(schema, energy=700))
    assert out.get("energy") == -200


def test_nv_sub_self_cancellation(schema):
    a = nv(schema, energy=123.5, iron=4)
    out = nv_sub(a, a)
    assert np.array_equal(out.mask, a.mask)
    assert all(v == 0 for v in out.to_dict().values())


def test_nv_sub_mask_follows_a(schema):
    a = nv(schema, energy=100)
    b = nv(schema, energy=40, protein=10)
    out = nv_sub(a, b)
    assert out.get("energy") == 60
    assert not out.present("protein")


def test_schema_mismatch_raises(schema):
    core = [NutrientField(n, schema.unit(n), schema.field(n).group) for n in CORE_FIELDS]
    other_fields = core + [NutrientField(f"x{i}", "g", "mineral") for i in range(34)]
    other = NutrientSchema(other_fields)
    with pytest.raises(ContractViolation):
        nv_add(nv(schema, energy=1), NutrientVector.zeros(other))


def test_vector_is_immutable(schema):
    a = nv(schema, energy=100)
    with pytest.raises(AttributeError):
        a.values = np.zeros(40)
    with pytest.raises(ValueError):
        a.values[0] = 5.0


def test_masked_values_stored_as_zero(schema):
    a = NutrientVector(schema, np.full(40, 7.0), np.zeros(40, dtype=bool))
    assert a.values.sum() == 0.0


_amounts = st.dictionaries(
    st.sampled_from(load_default_schema().names),
    st.integers(min_value=0, max_value=2**30).map(float),
    max_size=10,
)


@given(a=_amounts, b=_amounts)
@settings(max_examples=200, deadline=None)
def test_nv_add_commutative(a, b):
    schema = load_default_schema()
    va, vb = nv(schema, **a), nv(schema, **b)
    assert nv_add(va, vb) == nv_add(vb, va)


@given(a=_amounts, b=_amounts, c=_amounts)
@settings(max_examples=200, deadline=None)
def test_nv_add_associative(a, b, c):
    schema = load_default_schema()
    va, vb, vc = nv(schema, **a), nv(schema, **b), nv(schema, **c)
    assert nv_add(nv_add(va, vb), vc) == nv_add(va, nv_add(vb, vc))


@given(
    a=st.lists(st.integers(min_value=0, max_value=2**30).map(float), min_size=40, max_size=40),
    b=st.lists(st.integers(min_value=0, max_value=2**30).map(float), min_size=40, max_size=40),
)
@settings(max_examples=200, deadline=None)
def test_add_then_sub_roundtrip_full_masks(a, b):
    schema = load_default_schema()
    full = np.ones(40, dtype=bool)
    va = NutrientVector(schema, np.array(a), full)
    vb = NutrientVector(schema, np.array(b), full)
    assert nv_sub(nv_add(va, vb), vb) == va
