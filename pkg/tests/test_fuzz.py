import pytest

from src.config import Settings
from src.fuzz import SUITES, SuiteResult, TrialFailure, replay_command, run_suite


@pytest.fixture
def small():
    return Settings(samples=15, max_nodes=3, word_length=5, depth=5, seed=7, workers=2)


def test_summary_line_format():
    """Test the summary line"""
    result = SuiteResult(suite='finite-rewrites', trials=4, seed=7, unknown=1)
    assert result.summary_line() == "PASS suite=finite-rewrites n=4 seed=7 failures=0 unknown=1"
    result.failures.append(TrialFailure(2, "broken"))
    assert result.summary_line().startswith("FAIL suite=finite-rewrites")


def test_unknown_suite_is_rejected(small):
    """Test that unknown suite names raise ValueError"""
    with pytest.raises(ValueError, match="Unknown suite"):
        run_suite('roundtrip-everything', 1, small)


def test_suites_are_registered():
    """Test the suite names and their descriptive aliases"""
    assert {'prop3', 'roundtrip-5', 'roundtrip-6', 'oracle'} <= set(SUITES)
    assert SUITES['prop3'] is SUITES['finite-rewrites']
    assert SUITES['roundtrip-5'] is SUITES['roundtrip-polarized']
    assert SUITES['roundtrip-6'] is SUITES['roundtrip-finite']


def test_prop3_suite_passes(small):
    """Test the finite-path rewrite suite under its short name"""
    result = run_suite('prop3', 2, small)
    assert result.passed
    assert result.summary_line().startswith("PASS suite=prop3 n=2 seed=7")


def test_replay_command_carries_every_bound():
    """Test that the replay line fixes all bounds that shape a trial"""
    bounds = Settings(samples=9, max_nodes=3, word_length=5, depth=4, seed=11, conversion_budget=100, workers=2)
    assert replay_command('oracle', bounds, 4) == (
        "python -m src.cli --max-nodes 3 --word-length 5 --depth 4 --budget 100 --workers 2 "
        "fuzz --suite oracle --seed 11 --trees 9 --trial 4")


def test_finite_rewrite_suite_passes(small):
    """Test the finite-path rewrite suite"""
    result = run_suite('finite-rewrites', 2, small)
    assert result.passed
    assert result.decided + result.unknown == 2
    assert result.summary_line().startswith("PASS suite=finite-rewrites n=2 seed=7")


def test_oracle_suite_passes(small):
    """Test the oracle suite"""
    result = run_suite('oracle', 5, small)
    assert result.passed
    assert result.decided + result.unknown == 5


def test_single_trial_replay(small):
    """Test replaying a single trial"""
    result = run_suite('oracle', 5, small, only_trial=3)
    assert result.decided + result.unknown == 1


def test_suites_are_deterministic(small):
    """Test that a seed fixes the suite outcome"""
    first = run_suite('oracle', 4, small)
    second = run_suite('oracle', 4, small)
    assert (first.decided, first.unknown) == (second.decided, second.unknown)


@pytest.mark.slow
def test_polarized_round_trip_suite(small):
    """Test the polarized round-trip suite"""
    assert run_suite('roundtrip-polarized', 2, small).passed


@pytest.mark.slow
def test_finite_round_trip_suite(small):
    """Test the finite-path round-trip suite"""
    result = run_suite('roundtrip-finite', 2, small)
    assert result.passed
    assert result.decided + result.unknown == 2
