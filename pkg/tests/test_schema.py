import pytest

from tempograph.schema import (
    MATRES,
    TBDENSE,
    DatasetProfile,
    SchemaError,
    profile,
    register_profile,
)


@pytest.mark.parametrize("prof", [TBDENSE, MATRES], ids=lambda p: p.name)
def test_inverse_is_involution(prof):
    for lab in prof.labels:
        assert prof.inverse(prof.inverse(lab)) == lab


def test_inverse_table():
    assert TBDENSE.inverse("BEFORE").name == "AFTER"
    assert TBDENSE.inverse("AFTER").name == "BEFORE"
    assert TBDENSE.inverse("INCLUDES").name == "IS_INCLUDED"
    assert TBDENSE.inverse("IS_INCLUDED").name == "INCLUDES"
    assert TBDENSE.inverse("SIMULTANEOUS").name == "SIMULTANEOUS"
    assert TBDENSE.inverse("VAGUE").name == "VAGUE"
    assert TBDENSE.inverse("NONE").name == "NONE"
    assert TBDENSE.inverse(TBDENSE.inverse("INCLUDES")).name == "INCLUDES"


def test_unknown_label_is_schema_error():
    with pytest.raises(SchemaError):
        TBDENSE.inverse(99)
    with pytest.raises(SchemaError):
        MATRES.inverse("INCLUDES")


def test_canonical():
    assert TBDENSE.is_canonical("BEFORE")
    assert not TBDENSE.is_canonical("AFTER")
    assert TBDENSE.is_canonical("VAGUE")
    assert TBDENSE.is_canonical("SIMULTANEOUS")
    with pytest.raises(SchemaError):
        TBDENSE.is_canonical("NONE")


@pytest.mark.parametrize("prof", [TBDENSE, MATRES], ids=lambda p: p.name)
def test_exactly_one_direction_canonical(prof):
    for lab in prof.labels[1:]:
        inv = prof.inverse(lab)
        if inv == lab:
            assert prof.is_canonical(lab)
        else:
            assert prof.is_canonical(lab) != prof.is_canonical(inv)


def test_profiles():
    tb = profile("tbdense")
    assert tb.n_relations == 6
    assert set(tb.names[1:]) == {"BEFORE", "AFTER", "INCLUDES", "IS_INCLUDED", "SIMULTANEOUS", "VAGUE"}
    mat = profile("matres")
    assert mat.n_relations == 4
    assert set(mat.names[1:]) == {"BEFORE", "AFTER", "SIMULTANEOUS", "VAGUE"}
    assert profile("tbdense").names == profile("tbdense").names
    for prof in (tb, mat):
        assert prof.labels[0].name == "NONE"
        assert [lab.id for lab in prof.labels] == list(range(len(prof)))
    with pytest.raises(SchemaError):
        profile("timebank")


def test_register_and_roundtrip():
    p = register_profile("before-after", ["BEFORE", "AFTER"])
    assert DatasetProfile.from_dict(p.to_dict()) is p
    with pytest.raises(SchemaError):
        register_profile("bad", ["BEFORE"])  # inverse missing
    with pytest.raises(SchemaError):
        DatasetProfile.from_dict({"name": "tbdense", "labels": ["NONE", "AFTER", "BEFORE"]})
