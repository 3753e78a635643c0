import itertools
from dataclasses import replace

import pytest

from src.errors import NotCounterFree, NotInFragment, NotLooping, ParseError
from src.logic import (
    FALSE,
    TRUE,
    And,
    Eventually,
    Fragment,
    Globally,
    Next,
    Not,
    Prop,
    Until,
    WeakNext,
    check_fragment,
)
from src.word_automata import (
    FiniteWordAutomaton,
    OmegaWordAutomaton,
    bounded_formula_equiv,
    bounded_language_equiv,
    complement_looping,
    counter_free_by_words,
    determinize,
    determinize_safety,
    dfa_to_ltlf,
    evaluate_finite,
    evaluate_lasso,
    is_counter_free,
    is_looping,
    looping_automaton_to_ltl,
    ltl_to_looping_automaton,
    ltlf_to_nfa,
    minimize_dfa,
    parse_word_automaton,
    pastify,
    serialize_word_automaton,
    transition_monoid,
    valuations,
)

p, q = Prop('p'), Prop('q')
EMPTY, P, Q = frozenset(), frozenset({'p'}), frozenset({'q'})

TOGGLE_TEXT = """states: s0 s1
alphabet: {a}
init: s0
mode: dfa
accepting: s0
s0 --{a}--> s1
s1 --{a}--> s0
"""


@pytest.fixture
def toggle():
    """Two states swapped by the single letter a"""
    return FiniteWordAutomaton(states=(0, 1), alphabet=('a',), transitions={(0, 'a'): {1}, (1, 'a'): {0}},
                               initial=0, accepting={0}, deterministic=True)


@pytest.fixture
def no_p_safety():
    """Universal Büchi automaton that rejects once p is seen"""
    return OmegaWordAutomaton(states=('ok', 'bad'), alphabet=(EMPTY, P),
                              transitions={('ok', EMPTY): {'ok'}, ('ok', P): {'bad'},
                                           ('bad', EMPTY): {'bad'}, ('bad', P): {'bad'}},
                              initial='ok', accepting={'ok'}, mode='uba')


@pytest.fixture
def q_reached():
    """Nondeterministic coBüchi automaton that accepts once q is seen"""
    return OmegaWordAutomaton(states=('wait', 'done'), alphabet=(EMPTY, Q),
                              transitions={('wait', EMPTY): {'wait'}, ('wait', Q): {'done'},
                                           ('done', EMPTY): {'done'}, ('done', Q): {'done'}},
                              initial='wait', accepting={'wait'}, mode='nca')


def words(props, max_len):
    letters = valuations(props)
    for n in range(1, max_len + 1):
        yield from itertools.product(letters, repeat=n)


def test_one_state_monoid_is_trivial():
    """Test the transition monoid of a one-state automaton"""
    a = FiniteWordAutomaton(states=(0,), alphabet=('a', 'b'), transitions={(0, 'a'): {0}, (0, 'b'): {0}},
                            initial=0, accepting={0})
    assert len(transition_monoid(a)) == 1


def test_toggle_monoid_is_cyclic_of_order_two(toggle):
    """Test that the toggle generates a group of order two"""
    monoid = transition_monoid(toggle)
    assert len(monoid) == 2
    a = monoid.generators['a']
    assert a != 0
    assert monoid.product(a, a) == 0
    assert monoid.table[a, a] == 0


def test_toggle_is_not_counter_free(toggle):
    """Test the counter witness of the toggle"""
    freeness = is_counter_free(toggle)
    assert not freeness
    assert freeness.witness == (('a',), 2, 0)
    assert not counter_free_by_words(toggle)


def test_parsed_toggle_is_not_counter_free():
    """Test counter-freeness on a parsed automaton"""
    a = parse_word_automaton(TOGGLE_TEXT)
    assert a.deterministic
    assert not is_counter_free(a)


def test_ltl_automata_are_counter_free():
    """Test that automata of LTL formulas are counter-free"""
    for phi in (Until(p, q), Globally(Not(p)), Eventually(And(p, Next(q)))):
        dfa = minimize_dfa(determinize(ltlf_to_nfa(phi)))
        assert is_counter_free(dfa)
        assert counter_free_by_words(dfa)


@pytest.mark.slow
def test_counter_freeness_agrees_with_word_check_on_small_automata():
    """Test is_counter_free against the literal word check on every DFA with up to 3 states over {a, b}"""
    checked = 0
    for n in (1, 2, 3):
        states = tuple(range(n))
        keys = [(s, letter) for s in states for letter in ('a', 'b')]
        for targets in itertools.product(states, repeat=len(keys)):
            a = FiniteWordAutomaton(states=states, alphabet=('a', 'b'),
                                    transitions={key: {t} for key, t in zip(keys, targets)},
                                    initial=0, accepting={0}, deterministic=True)
            assert bool(is_counter_free(a)) == counter_free_by_words(a), a.transitions
            checked += 1
    assert checked == 1 + 2 ** 4 + 3 ** 6


def test_safety_shape_is_looping(no_p_safety):
    """Test recognizing a looping safety automaton"""
    assert is_looping(no_p_safety)
    assert no_p_safety.sink() == 'bad'


def test_all_accepting_is_degenerate_looping():
    """Test the all-accepting automaton"""
    a = OmegaWordAutomaton(states=('s',), alphabet=(EMPTY,), transitions={('s', EMPTY): {'s'}},
                           initial='s', accepting={'s'}, mode='uba')
    assert is_looping(a)
    assert a.sink() is None


def test_escaping_rejecting_state_is_not_looping():
    """Test that a rejecting state must be a sink"""
    a = OmegaWordAutomaton(states=('x', 'y', 'z'), alphabet=(EMPTY,),
                           transitions={('x', EMPTY): {'y'}, ('y', EMPTY): {'z'}, ('z', EMPTY): {'x'}},
                           initial='x', accepting={'x', 'y'}, mode='nca')
    assert not is_looping(a)
    with pytest.raises(NotLooping):
        a.accepts_lasso((), (EMPTY,))


def test_lasso_acceptance(no_p_safety, q_reached):
    """Test acceptance of ultimately periodic words"""
    assert no_p_safety.accepts_lasso((), (EMPTY,))
    assert not no_p_safety.accepts_lasso((EMPTY, EMPTY), (P, EMPTY))
    assert q_reached.accepts_lasso((EMPTY,), (EMPTY, Q))
    assert not q_reached.accepts_lasso((), (EMPTY,))


def test_complement_swaps_language(no_p_safety):
    """Test complementing a looping automaton"""
    dual = complement_looping(no_p_safety)
    assert dual.mode == 'nca'
    assert dual.accepts_lasso((P,), (EMPTY,))
    assert not dual.accepts_lasso((), (EMPTY,))


def test_first_letter_semantics():
    """Test that a proposition reads the first letter"""
    nfa = ltlf_to_nfa(p)
    assert nfa.accepts((P,))
    assert nfa.accepts((P, EMPTY))
    assert not nfa.accepts((EMPTY, P))


def test_strong_and_weak_next_on_single_letters():
    """Test X and wX on one-letter words"""
    strong, weak = ltlf_to_nfa(Next(p)), ltlf_to_nfa(WeakNext(p))
    for letter in (EMPTY, P):
        assert not strong.accepts((letter,))
        assert weak.accepts((letter,))
    assert strong.accepts((EMPTY, P))
    assert not weak.accepts((EMPTY, EMPTY))


def test_empty_word_is_never_accepted():
    """Test that the empty word is rejected"""
    assert not ltlf_to_nfa(TRUE).accepts(())


def test_nfa_matches_finite_evaluation():
    """Test formula automata against direct evaluation"""
    for phi in (Until(p, q), Globally(Not(p)), Eventually(And(p, WeakNext(q)))):
        nfa = ltlf_to_nfa(phi, ['p', 'q'])
        for word in words(['p', 'q'], 4):
            assert nfa.accepts(word) == evaluate_finite(phi, word)


def test_minimize_keeps_minimal_automaton():
    """Test minimizing an already minimal DFA"""
    dfa = minimize_dfa(determinize(ltlf_to_nfa(Eventually(p))))
    again = minimize_dfa(dfa)
    assert len(again.states) == len(dfa.states) == 2
    assert bounded_language_equiv(dfa, again, 8) == (True, None)


def test_determinize_single_state():
    """Test the subset construction on one state"""
    nfa = FiniteWordAutomaton(states=('s',), alphabet=(EMPTY, P), transitions={('s', P): {'s'}},
                              initial='s', accepting={'s'})
    assert bounded_language_equiv(nfa, determinize(nfa), 6)[0]


def test_bounded_equiv_returns_shortest_difference():
    """Test that bounded comparison returns a shortest separating word"""
    same, witness = bounded_language_equiv(ltlf_to_nfa(p, ['p']), ltlf_to_nfa(Not(p), ['p']), 4)
    assert not same
    assert len(witness) == 1


def test_determinized_automata_keep_their_language():
    """Test that determinizing keeps the language"""
    nfa = ltlf_to_nfa(Until(p, Next(q)))
    assert bounded_language_equiv(nfa, minimize_dfa(determinize(nfa)), 8)[0]


def test_safety_formula_to_automaton():
    """Test compiling a safety formula"""
    a = ltl_to_looping_automaton(Globally(Not(p)))
    assert a.mode == 'uba'
    assert is_looping(a)
    assert len(a.states) == 2
    assert a.accepts_lasso((), (EMPTY,))
    assert not a.accepts_lasso((EMPTY,), (P,))


def test_cosafety_formula_to_automaton():
    """Test compiling a co-safety formula"""
    a = ltl_to_looping_automaton(Eventually(q))
    assert a.mode == 'nca'
    assert len(a.states) == 2
    assert a.accepts_lasso((EMPTY, Q), (EMPTY,))
    assert not a.accepts_lasso((), (EMPTY,))


def test_looping_conversion_needs_safe_or_cosafe():
    """Test that only safe or co-safe formulas compile"""
    with pytest.raises(NotInFragment):
        ltl_to_looping_automaton(Globally(Eventually(p)))


def test_safety_automaton_to_formula(no_p_safety, settings):
    """Test converting a safety automaton back to LTL"""
    psi = looping_automaton_to_ltl(no_p_safety, settings)
    assert check_fragment(psi, Fragment.SAFE_LTL)
    assert bounded_formula_equiv(psi, Globally(Not(p)), ['p'], 4) == (True, None)


def test_cosafety_automaton_to_formula(q_reached, settings):
    """Test converting a co-safety automaton back to LTL"""
    psi = looping_automaton_to_ltl(q_reached, settings)
    assert check_fragment(psi, Fragment.COSAFE_LTL)
    assert bounded_formula_equiv(psi, Eventually(q), ['q'], 4)[0]


def test_universal_automaton_without_sink_is_true(settings):
    """Test that a universal automaton without a sink is true"""
    a = OmegaWordAutomaton(states=('s',), alphabet=(EMPTY, P), transitions={('s', EMPTY): {'s'}, ('s', P): {'s'}},
                           initial='s', accepting={'s'}, mode='uba')
    assert looping_automaton_to_ltl(a, settings) == TRUE


def test_counting_automaton_is_refused(settings):
    """Test that counting automata have no LTL formula"""
    a = OmegaWordAutomaton(states=('even', 'odd', 'bad'), alphabet=(EMPTY, P),
                           transitions={('even', P): {'odd'}, ('odd', P): {'even'},
                                        ('even', EMPTY): {'even'}, ('odd', EMPTY): {'bad'},
                                        ('bad', EMPTY): {'bad'}, ('bad', P): {'bad'}},
                           initial='even', accepting={'even', 'odd'}, mode='uba')
    with pytest.raises(NotCounterFree):
        looping_automaton_to_ltl(a, settings)


def test_buchi_automata_are_not_converted(no_p_safety):
    """Test that only looping automata are converted"""
    with pytest.raises(NotLooping):
        looping_automaton_to_ltl(replace(no_p_safety, mode='nba'))


def test_determinize_safety_keeps_language(q_reached):
    """Test determinizing a nondeterministic safety automaton"""
    nondeterministic = OmegaWordAutomaton(
        states=('wait', 'guess', 'done'), alphabet=(EMPTY, Q),
        transitions={('wait', EMPTY): {'wait', 'guess'}, ('wait', Q): {'wait', 'done'},
                     ('guess', Q): {'done'}, ('done', EMPTY): {'done'}, ('done', Q): {'done'}},
        initial='wait', accepting={'wait', 'guess'}, mode='nca')
    deterministic = determinize_safety(nondeterministic)
    assert deterministic.deterministic
    for prefix, loop in [((), (EMPTY,)), ((Q,), (EMPTY,)), ((EMPTY,), (EMPTY, Q))]:
        assert deterministic.accepts_lasso(prefix, loop) == q_reached.accepts_lasso(prefix, loop)


def test_dfa_to_ltlf_matches_dfa():
    """Test the DFA to LTLf conversion"""
    dfa = minimize_dfa(determinize(ltlf_to_nfa(Until(p, And(q, WeakNext(FALSE))), ['p', 'q'])))
    phi = dfa_to_ltlf(dfa, ['p', 'q'])
    for word in words(['p', 'q'], 4):
        assert evaluate_finite(phi, word) == dfa.accepts(word)


def test_pastify_cosafe_formula():
    """Test turning a co-safe formula into F of a past formula"""
    psi = Eventually(And(p, Next(q)))
    past = pastify(psi)
    assert isinstance(past, Eventually)
    assert check_fragment(past.operand, Fragment.PURE_PAST)
    for word in words(['p', 'q'], 4):
        assert evaluate_finite(past, word) == evaluate_finite(psi, word)


def test_pastify_safe_formula():
    """Test turning a safe formula into G of a past formula"""
    past = pastify(Globally(Not(p)))
    assert isinstance(past, Globally)
    for word in words(['p'], 4):
        assert evaluate_finite(past, word) == (P not in word)


def test_lasso_evaluation():
    """Test evaluating G F p on a lasso"""
    assert evaluate_lasso(Globally(Eventually(p)), (), (EMPTY, P))
    assert not evaluate_lasso(Eventually(Globally(p)), (), (EMPTY, P))


def test_parse_rejects_unknown_state():
    """Test that transitions must use declared states"""
    with pytest.raises(ParseError):
        parse_word_automaton("states: s0\nalphabet: {a}\ninit: s9\nmode: nfa\naccepting: s0\n")


def test_serialized_automaton_parses_back(no_p_safety):
    """Test writing an automaton and reading it back"""
    again = parse_word_automaton(serialize_word_automaton(no_p_safety))
    assert again.mode == 'uba'
    assert again.transitions == no_p_safety.transitions
    assert again.initial == 'ok'
