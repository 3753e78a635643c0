import pytest

from src.cli import run
from src.config import Settings
from src.fuzz import replay_command
from src.tree_automata import parse_tree_automaton

TREE_TEXT = """ap: p q
root: v0
node v0 {p}
node v1 {q}
edge e0 v0 -> v1
edge e1 v1 -> v1
"""

REACH_P = """ap: p
states: q priority=1 component=C
type C existential
init: q
q, {} -> (<> 1 q)
q, {p} -> true
"""

OVERLAPPING = """ap: p
states: t1 priority=0 component=T1
states: t2 priority=0 component=T2
states: e priority=1 component=E
type E existential
order: T1 < E
order: T2 < E
init: e
t1, {} -> true
t1, {p} -> true
t2, {} -> true
t2, {p} -> true
e, {} -> (<> 1 t1) | ((<> 1 t2) & (<> 1 e))
e, {p} -> (<> 1 t1) | ((<> 1 t2) & (<> 1 e))
"""

TOGGLE_TEXT = """states: s0 s1
alphabet: {a}
init: s0
mode: dfa
accepting: s0
s0 --{a}--> s1
s1 --{a}--> s0
"""


@pytest.fixture(autouse=True)
def quiet_env(monkeypatch):
    for name in ("GRADEDLOGIC_SAMPLES", "GRADEDLOGIC_SEED", "GRADEDLOGIC_MAX_NODES"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def tree_file(tmp_path):
    path = tmp_path / "t.tree"
    path.write_text(TREE_TEXT, encoding="utf-8")
    return str(path)


@pytest.fixture
def automaton_file(tmp_path):
    path = tmp_path / "reach.gta"
    path.write_text(REACH_P, encoding="utf-8")
    return str(path)


def test_mc_holds(tree_file, capsys):
    """Test a holding verdict"""
    assert run(['mc', '--logic', 'ctlsf', tree_file, 'E wX p']) == 0
    assert capsys.readouterr().out.startswith("PASS\n✓ ")


def test_mc_fails(tree_file, capsys):
    """Test a failing verdict"""
    assert run(['mc', '--logic', 'polcctlp', tree_file, 'q']) == 1
    assert capsys.readouterr().out.startswith("FAIL\n✗ ")


def test_mc_outside_fragment_is_usage_error(tree_file):
    """Test that formulas outside the fragment are usage errors"""
    assert run(['mc', '--logic', 'polcctlp', tree_file, 'A F p']) == 3


def test_formula_parse_error(capsys):
    """Test the exit code of a parse error"""
    assert run(['check-fragment', '--as', 'polcctlp', 'E (p U']) == 3
    assert "✗" in capsys.readouterr().err


def test_check_fragment(capsys):
    """Test fragment membership"""
    assert run(['check-fragment', '--as', 'polcctlp', 'E F p']) == 0
    assert run(['check-fragment', '--as', 'polcctlp', 'A F p']) == 1
    assert "is not in PolCCtlP" in capsys.readouterr().out


def test_unknown_option_is_usage_error():
    """Test that unknown options are usage errors"""
    assert run(['mc', '--bogus']) == 3


def test_validate_tree(tree_file, capsys):
    """Test validating a tree"""
    assert run(['validate', tree_file]) == 0
    assert "2 nodes and 2 edges" in capsys.readouterr().out


def test_validate_automaton_subclass(tmp_path, automaton_file, capsys):
    """Test validating an automaton against a subclass"""
    assert run(['validate', '--subclass', 'HLGT', automaton_file]) == 0
    graded = tmp_path / "graded.gta"
    graded.write_text(REACH_P.replace("(<> 1 q)", "(<> 2 q)"), encoding="utf-8")
    assert run(['validate', '--subclass', 'HWGT', str(graded)]) == 1
    assert "must have grade 1" in capsys.readouterr().out


def test_cfree_reports_counter(tmp_path, capsys):
    """Test that cfree prints the counter"""
    path = tmp_path / "toggle.wa"
    path.write_text(TOGGLE_TEXT, encoding="utf-8")
    assert run(['cfree', str(path)]) == 1
    out = capsys.readouterr().out
    assert out.startswith("FAIL\n✗ counter: ")
    assert "n=2" in out


def test_mutex_single_part(automaton_file, capsys):
    """Test mutex on a single lower part"""
    assert run(['mutex', automaton_file]) == 0
    assert "certified" in capsys.readouterr().out


def test_translate_writes_output(tmp_path, capsys):
    """Test writing a translated automaton"""
    target = tmp_path / "ef.gta"
    code = run(['--max-nodes', '3', 'translate', '--from', 'polcctlp', '--to', '2hlgt',
                '--validate', '--samples', '10', '-o', str(target), 'E F p'])
    assert code == 0
    assert parse_tree_automaton(target.read_text(encoding="utf-8")).ap == frozenset({'p'})
    out = capsys.readouterr().out
    assert out.startswith("PASS\ntranslation: polcctlp -> 2hlgt")
    assert "validation: samples=10" in out


def test_translate_rejects_missing_direction(automaton_file):
    """Test that unsupported directions are usage errors"""
    assert run(['translate', '--from', 'polcctlp', '--to', 'polcctlp', 'E F p']) == 3


def test_normalize(capsys):
    """Test normalizing into the polarized grammar"""
    assert run(['normalize', '--target', 'polcctlstar', 'A G p']) == 0
    assert capsys.readouterr().out.splitlines()[1] == "!E (true U !p)"


def test_fuzz_summary(capsys):
    """Test the fuzz summary line"""
    code = run(['--max-nodes', '3', 'fuzz', '--suite', 'oracle', '--samples', '3', '--seed', '7', '--trees', '10'])
    assert code == 0
    assert capsys.readouterr().out.startswith("PASS suite=oracle n=3 seed=7 failures=0")


def test_validate_writes_dot(tree_file, tmp_path):
    """Test writing a tree as DOT"""
    target = tmp_path / "t.dot"
    assert run(['validate', '--dot', str(target), tree_file]) == 0
    assert target.read_text(encoding="utf-8").startswith("digraph tree {")


def test_fuzz_accepts_short_suite_names(capsys):
    """Test running the finite-path rewrite suite as prop3"""
    code = run(['--max-nodes', '3', 'fuzz', '--suite', 'prop3', '--samples', '2', '--seed', '7', '--trees', '5'])
    assert code == 0
    assert capsys.readouterr().out.startswith("PASS suite=prop3 n=2 seed=7 failures=0")


def test_replay_line_reruns_the_trial(capsys):
    """Test that a printed replay line is a working command line"""
    bounds = Settings(samples=10, max_nodes=3, word_length=5, depth=5, seed=7, workers=2)
    args = replay_command('oracle', bounds, 2).split()[3:]
    assert args[:2] == ['--max-nodes', '3']
    assert run(args) == 0
    assert capsys.readouterr().out.startswith("PASS suite=oracle")


def test_translate_rejects_overlapping_lower_parts(tmp_path, capsys):
    """Test that a refuted mutual exclusion fails the hwgtcf translation"""
    path = tmp_path / "overlap.gta"
    path.write_text(OVERLAPPING, encoding="utf-8")
    assert run(['--max-nodes', '3', 'translate', '--from', 'hwgtcf', '--to', 'ctlsf', str(path)]) == 1
    captured = capsys.readouterr()
    assert captured.out.startswith("FAIL")
    assert "agree on a sampled tree" in captured.err


def test_validate_rejects_duplicate_node(tmp_path, capsys):
    """Test that a repeated node line is a validation error"""
    path = tmp_path / "dup.tree"
    path.write_text(TREE_TEXT + "node v1 {p}\n", encoding="utf-8")
    assert run(['validate', str(path)]) == 3
    assert "Node v1 is declared twice" in capsys.readouterr().err
