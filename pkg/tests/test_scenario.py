import pytest

from randbell.scenario import CapExceededError, Scenario


def test_from_string_parses_settings():
    sc = Scenario.from_string("3x2x2")
    assert sc.num_parties == 3
    assert sc.settings == (3, 2, 2)
    assert sc.label == "3x2x2"


@pytest.mark.parametrize("bad", ["", "2x", "2x0", "ax2", "2x-1"])
def test_from_string_rejects_malformed(bad):
    with pytest.raises(ValueError):
        Scenario.from_string(bad)


@pytest.mark.parametrize(
    "settings, d, strategies, rows",
    [((2, 2), 2, 16, 16), ((2, 2, 2), 2, 64, 64), ((2, 2), 3, 81, 36)],
)
def test_sizes(settings, d, strategies, rows):
    sc = Scenario(len(settings), d, settings)
    assert sc.num_strategies == strategies
    assert sc.num_marginal_rows == rows


def test_cap_reports_required_count():
    with pytest.raises(CapExceededError) as info:
        Scenario(3, 2, (10, 10, 10))
    assert info.value.required == 2**30
    assert info.value.cap == 10**7


def test_table_shape():
    assert Scenario(3, 2, (3, 2, 2)).table_shape == (3, 2, 2, 2, 2, 2)


def test_party_count_must_match():
    with pytest.raises(ValueError):
        Scenario(3, 2, (2, 2))
