import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from src.config import Settings
from src.errors import AlphabetMismatch, ParseError, SubclassViolation, TransientComponent
from src.regular_tree import RegularTree, random_tree
from src.tree_automata import (
    EXIT,
    P_FALSE,
    P_TRUE,
    AtomRef,
    ComponentType,
    Exclusion,
    PAnd,
    POr,
    Subclass,
    accept_2hlgt,
    accept_2hlgt_bounded,
    accept_hwgt,
    atom_holds_at_root,
    box,
    check_counter_free_components,
    check_mutual_exclusion,
    cnf,
    diamond,
    dnf,
    dual_automaton,
    linearize,
    lower_parts,
    parse_tree_automaton,
    random_2hlgt,
    serialize_tree_automaton,
    subclass_diagnostics,
    up,
    validate_subclass,
    with_initial_condition,
)

EMPTY, P = frozenset(), frozenset({'p'})

EXISTENTIAL_LOOP = """ap: p
states: q priority=1 component=C
type C existential
init: q
q, {} -> (<> 1 q)
q, {p} -> (<> 1 q)
"""

UNIVERSAL_LOOP = """ap: p
states: q priority=0 component=C
type C universal
init: q
q, {} -> (# 1 q)
q, {p} -> (# 1 q)
"""

REACH_P = """// some node labelled p is reachable
ap: p
states: q priority=1 component=C
type C existential
init: q
q, {} -> (<> 1 q)
q, {p} -> true
"""

ANYTHING = """ap: p
states: t priority=0 component=T
init: t
t, {} -> true
t, {p} -> true
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

COMPLEMENTARY_PARTS = """ap: p
states: tp priority=0 component=TP
states: tn priority=0 component=TN
states: tt priority=0 component=TT
states: e priority=1 component=E
type E existential
order: TP < E
order: TN < E
order: TT < E
init: e
tp, {} -> false
tp, {p} -> true
tn, {} -> true
tn, {p} -> false
tt, {} -> true
tt, {p} -> true
e, {} -> ((# 1 tp) & (<> 1 tn)) | ((<> 1 tt) & (<> 1 e))
e, {p} -> ((# 1 tp) & (<> 1 tn)) | ((<> 1 tt) & (<> 1 e))
"""

TOGGLE = """ap: p
states: q0 priority=1 component=C
states: q1 priority=1 component=C
type C existential
init: q0
q0, {} -> (<> 1 q1)
q0, {p} -> (<> 1 q1)
q1, {} -> (<> 1 q0)
q1, {p} -> (<> 1 q0)
"""


def tree(labels, edges, root='v0'):
    return RegularTree.build(['p'], labels, edges, root=root)


@pytest.fixture
def empty_loop():
    return tree({'v0': EMPTY}, [('e0', 'v0', 'v0')])


@pytest.fixture
def p_loop():
    return tree({'v0': P}, [('e0', 'v0', 'v0')])


@pytest.fixture
def p_below():
    """v0{} -> v1{p}, v1 loops"""
    return tree({'v0': EMPTY, 'v1': P}, [('e0', 'v0', 'v1'), ('e1', 'v1', 'v1')])


@pytest.fixture
def p_only_at_root():
    """v0{p} -> v1{}, v1 loops"""
    return tree({'v0': P, 'v1': EMPTY}, [('e0', 'v0', 'v1'), ('e1', 'v1', 'v1')])


def test_dnf_distributes():
    """Test distributing conjunction over disjunction"""
    a, b, c = (AtomRef(diamond(name)) for name in 'abc')
    assert dnf(PAnd(POr(a, b), c)) == [frozenset({diamond('a'), diamond('c')}),
                                       frozenset({diamond('b'), diamond('c')})]


def test_dnf_of_true_is_one_empty_clause():
    """Test the normal form of true"""
    assert dnf(P_TRUE) == [frozenset()]


def test_cnf_is_dual_of_dnf():
    """Test CNF clauses"""
    a, b = AtomRef(box('a')), AtomRef(box('b'))
    assert cnf(POr(a, b)) == [frozenset({box('a'), box('b')})]
    assert cnf(PAnd(a, b)) == [frozenset({box('a')}), frozenset({box('b')})]


def test_atoms_need_positive_grade():
    """Test that atom grades start at 1"""
    with pytest.raises(ValueError, match="at least 1"):
        diamond('q', 0)


def test_atom_text():
    """Test the text form of atoms"""
    assert str(diamond('q', 2)) == "(<> 2 q)"
    assert str(box('q')) == "(# 1 q)"
    assert str(up('q')) == "(up q)"


def test_existential_singleton_is_linear():
    """Test that an existential singleton is HLGT"""
    a = parse_tree_automaton(EXISTENTIAL_LOOP)
    validate_subclass(a, Subclass.HLGT)
    validate_subclass(a, 'HWGT')


def test_graded_self_atom_is_not_hesitant():
    """Test that a same-component atom must have grade 1"""
    a = parse_tree_automaton(EXISTENTIAL_LOOP.replace("(<> 1 q)", "(<> 2 q)"))
    validate_subclass(a, Subclass.WGT)
    with pytest.raises(SubclassViolation, match="must have grade 1"):
        validate_subclass(a, Subclass.HWGT)


def test_conjunctive_self_atoms_are_not_existential():
    """Test that conjoined self atoms break the existential shape"""
    a = parse_tree_automaton(EXISTENTIAL_LOOP.replace("-> (<> 1 q)", "-> (<> 1 q) & (# 1 q)"))
    with pytest.raises(SubclassViolation, match="conjunctively related"):
        validate_subclass(a, Subclass.HWGT)


def test_upward_atoms_need_two_way():
    """Test that up atoms need a two-way automaton"""
    a = parse_tree_automaton(EXISTENTIAL_LOOP.replace("init: q", "init: q\ntwo_way: false")
                             .replace("q, {p} -> (<> 1 q)", "q, {p} -> (up q)"))
    assert any("one-way" in d for d in subclass_diagnostics(a, Subclass.GTA))


def test_atoms_must_point_downwards():
    """Test that atoms may not reach a higher component"""
    text = OVERLAPPING.replace("t1, {} -> true", "t1, {} -> (<> 1 e)")
    diagnostics = subclass_diagnostics(parse_tree_automaton(text), Subclass.GTA)
    assert any("not below T1" in d for d in diagnostics)


def test_two_state_component_is_not_linear():
    """Test that linear automata have singleton components"""
    a = parse_tree_automaton(TOGGLE)
    validate_subclass(a, Subclass.HWGT)
    assert any("not a singleton" in d for d in subclass_diagnostics(a, Subclass.HLGT))


def test_parse_rejects_bad_modality():
    """Test that unknown modalities raise ParseError"""
    with pytest.raises(ParseError):
        parse_tree_automaton(EXISTENTIAL_LOOP.replace("(<> 1 q)", "(<< 1 q)"))


def test_serialized_automaton_parses_back():
    """Test writing an automaton and reading it back"""
    a = parse_tree_automaton(OVERLAPPING)
    assert parse_tree_automaton(serialize_tree_automaton(a)) == a


def test_universal_loop_accepts_everything(empty_loop, p_below):
    """Test the even universal loop"""
    a = parse_tree_automaton(UNIVERSAL_LOOP)
    assert accept_hwgt(a, empty_loop)
    assert accept_hwgt(a, p_below)


def test_existential_loop_rejects_everything(empty_loop, p_loop):
    """Test the odd existential loop"""
    a = parse_tree_automaton(EXISTENTIAL_LOOP)
    assert not accept_hwgt(a, empty_loop)
    assert not accept_hwgt(a, p_loop)


def test_reachability_automaton(empty_loop, p_below):
    """Test acceptance of the reachability automaton"""
    a = parse_tree_automaton(REACH_P)
    assert accept_hwgt(a, p_below)
    assert not accept_hwgt(a, empty_loop)


def test_transient_true_accepts_everything(empty_loop, p_below):
    """Test a transient state going to true"""
    a = parse_tree_automaton(ANYTHING)
    assert accept_hwgt(a, empty_loop)
    assert accept_hwgt(a, p_below)


def test_tree_alphabet_must_fit():
    """Test that the tree alphabet must fit the automaton"""
    wide = RegularTree.build(['p', 'q'], {'v0': EMPTY}, [('e0', 'v0', 'v0')])
    with pytest.raises(AlphabetMismatch):
        accept_hwgt(parse_tree_automaton(REACH_P), wide)


def test_initial_condition_true(empty_loop):
    """Test the initial condition true"""
    a = with_initial_condition(parse_tree_automaton(EXISTENTIAL_LOOP), P_TRUE)
    assert accept_hwgt(a, empty_loop)


def test_initial_condition_moves_to_children(p_only_at_root, p_below):
    """Test an initial condition over child atoms"""
    a = parse_tree_automaton(REACH_P)
    shifted = with_initial_condition(a, AtomRef(diamond('q')))
    assert accept_hwgt(a, p_only_at_root)
    assert not accept_hwgt(shifted, p_only_at_root)
    assert accept_hwgt(shifted, p_below)


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=30, deadline=None)
def test_initial_condition_false_rejects_everything(seed):
    """Test the initial condition false"""
    a = with_initial_condition(random_2hlgt(seed, ['p'], two_way=False), P_FALSE)
    assert not accept_hwgt(a, random_tree(seed, 4, ['p']))


def test_dual_complements_reachability(empty_loop, p_below):
    """Test the dual of the reachability automaton"""
    dual = dual_automaton(parse_tree_automaton(REACH_P))
    assert dual.component('C').kind is ComponentType.UNIVERSAL
    assert accept_hwgt(dual, empty_loop)
    assert not accept_hwgt(dual, p_below)


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=40, deadline=None)
def test_dual_complements_random_automata(seed):
    """Test that duals complement random automata"""
    a = random_2hlgt(seed, ['p'], two_way=False)
    t = random_tree(seed + 1, 4, ['p'])
    assert accept_hwgt(dual_automaton(a), t) != accept_hwgt(a, t)


def test_singleton_components_are_counter_free():
    """Test that singleton components never count"""
    for seed in range(10):
        assert check_counter_free_components(random_2hlgt(seed, ['p'], two_way=False))


def test_toggling_component_is_not_counter_free():
    """Test the counter witness of a toggling component"""
    result = check_counter_free_components(parse_tree_automaton(TOGGLE))
    assert not result
    assert set(result.witnesses) == {('C', 'q0'), ('C', 'q1')}
    word, n, state = result.witnesses[('C', 'q0')]
    assert n == 2


def test_lower_parts_of_overlapping_component():
    """Test collecting the lower parts of a component"""
    a = parse_tree_automaton(OVERLAPPING)
    assert lower_parts(a, a.component('E')) == (frozenset({diamond('t1')}), frozenset({diamond('t2')}))
    b = parse_tree_automaton(EXISTENTIAL_LOOP)
    assert lower_parts(b, b.component('C')) == (frozenset(),)


def test_linearized_component_reads_annotations():
    """Test linearizing a component over its annotations"""
    a = parse_tree_automaton(OVERLAPPING)
    lin = linearize(a, 'E', 'e')
    assert lin.annotations == {'__c0': frozenset({diamond('t1')}), '__c1': frozenset({diamond('t2')})}
    assert len(lin.automaton.alphabet) == 8
    assert lin.automaton.successors('e', frozenset({'__c0'})) == {EXIT}
    assert lin.automaton.successors('e', frozenset({'__c1'})) == {'e'}
    assert lin.automaton.successors('e', frozenset()) == frozenset()
    assert lin.automaton.mode == 'nca'


def test_certificates_drop_impossible_annotations():
    """Test that certified pairs never share a letter"""
    a = parse_tree_automaton(OVERLAPPING + "certificate: (<> 1 t1) (<> 1 t2)\n")
    lin = linearize(a, 'E', 'e')
    assert len(lin.automaton.alphabet) == 6
    assert all(not {'__c0', '__c1'} <= letter for letter in lin.automaton.alphabet)


def test_transient_components_are_not_linearized():
    """Test that transient components cannot be linearized"""
    with pytest.raises(TransientComponent):
        linearize(parse_tree_automaton(OVERLAPPING), 'T1', 't1')


def test_mutual_exclusion_vacuous_for_single_part():
    """Test that a single lower part is exclusive"""
    result = check_mutual_exclusion(parse_tree_automaton(REACH_P), Settings(samples=5))
    assert result.status is Exclusion.CERTIFIED


def test_mutual_exclusion_refuted_by_overlap():
    """Test refuting exclusion of two parts that both hold"""
    result = check_mutual_exclusion(parse_tree_automaton(OVERLAPPING), Settings(samples=5, max_nodes=3))
    assert result.status is Exclusion.REFUTED
    witness_tree, c1, c2 = result.witness
    assert {c1, c2} == {frozenset({diamond('t1')}), frozenset({diamond('t2')})}
    assert result.samples == 1
    assert set(result.pairings) == {(x, y) for x in c1 for y in c2}


def test_mutual_exclusion_keeps_a_tree_for_every_pairing():
    """Test that each refuted pairing can be replayed on its own witness tree"""
    a = parse_tree_automaton(COMPLEMENTARY_PARTS)
    result = check_mutual_exclusion(a, Settings(samples=60, max_nodes=3))
    assert result.status is Exclusion.REFUTED
    _, c1, c2 = result.witness
    assert set(result.pairings) == {(x, y) for x in c1 for y in c2}
    for (x, y), witness_tree in result.pairings.items():
        assert atom_holds_at_root(a, witness_tree, x) == atom_holds_at_root(a, witness_tree, y)
    first, second = result.pairings.values()
    assert first != second


def test_mutual_exclusion_trusts_certificates():
    """Test that certificates skip sampling"""
    a = parse_tree_automaton(OVERLAPPING + "certificate: (<> 1 t1) (<> 1 t2)\n")
    assert check_mutual_exclusion(a, Settings(samples=5)).status is Exclusion.CERTIFIED


def test_random_automata_are_two_way_linear():
    """Test that random automata are 2HLGT"""
    for seed in range(20):
        validate_subclass(random_2hlgt(seed, ['p', 'q']), Subclass.HLGT2)


@pytest.mark.slow
@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=25, deadline=None)
def test_one_way_acceptance_matches_formula_acceptance(seed):
    """Test weak-game acceptance against the translated formula"""
    a = random_2hlgt(seed, ['p'], two_way=False)
    t = random_tree(seed, 4, ['p'])
    assert accept_2hlgt(a, t) == accept_hwgt(a, t)


@pytest.mark.slow
@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=25, deadline=None)
def test_bounded_game_never_contradicts(seed):
    """Test that the bounded game never contradicts the exact one"""
    a = random_2hlgt(seed, ['p'])
    t = random_tree(seed, 3, ['p'])
    verdict = accept_2hlgt_bounded(a, t, 5)
    if verdict.decided:
        assert verdict.holds == accept_2hlgt(a, t)
