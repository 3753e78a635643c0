import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from src.config import Settings
from src.errors import NotInFragment
from src.logic import (
    TRUE,
    All,
    Count,
    Eventually,
    Exists,
    Fragment,
    Globally,
    Next,
    Prop,
    Since,
    Until,
    WeakNext,
    Yesterday,
    random_formula,
    to_nnf,
)
from src.regular_tree import duplicate_node, random_tree, relabel_edges
from src.semantics import (
    Outcome,
    brute_force_ctlsf,
    brute_force_polcctlp,
    check_equiv_sampled,
    check_valid_sampled,
    mc_ctlsf,
    mc_polcctlp,
)

p, q = Prop('p'), Prop('q')


def test_all_globally_on_p_loop(loop_p):
    """Test A G p on a p self-loop"""
    assert mc_polcctlp(loop_p, All(Globally(p))).holds


def test_counting_children(two_p_children):
    """Test the graded successor operator"""
    assert mc_polcctlp(two_p_children, Count(2, p)).holds
    assert not mc_polcctlp(two_p_children, Count(3, p)).holds


def test_until_and_since_at_root(p_then_q):
    """Test until below and since at the root"""
    assert mc_polcctlp(p_then_q, Exists(Until(p, q))).holds
    assert not mc_polcctlp(p_then_q, Since(p, q)).holds


def test_past_below_root(p_then_q):
    """At v1 the history is p then q"""
    assert mc_polcctlp(p_then_q, Exists(Next(Since(q, p)))).holds
    assert mc_polcctlp(p_then_q, Exists(Next(Yesterday(p)))).holds
    assert not mc_polcctlp(p_then_q, Exists(Next(Yesterday(q)))).holds


def test_polarized_checker_rejects_all_eventually(loop_p):
    """Test that A F is outside the polarized checker"""
    with pytest.raises(NotInFragment):
        mc_polcctlp(loop_p, All(Eventually(p)))


def test_finite_paths_end_anywhere(loop_p):
    """Test that finite paths may stop after the first node"""
    assert mc_ctlsf(loop_p, All(WeakNext(p))).holds
    assert not mc_ctlsf(loop_p, All(Next(p))).holds


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=30, deadline=None)
def test_exists_weak_next_always_holds(seed):
    """Test that E wX holds on every tree"""
    assert mc_ctlsf(random_tree(seed, 5, ['q']), Exists(WeakNext(q))).holds


def test_finite_until(p_then_q):
    """Test until under finite-path semantics"""
    assert mc_ctlsf(p_then_q, Exists(Until(p, q))).holds
    assert not mc_ctlsf(p_then_q, All(Until(p, q))).holds


def test_path_formula_is_read_universally(loop_p):
    """Test that a bare path formula is read as A"""
    assert mc_ctlsf(loop_p, Globally(p)).holds


def test_finite_eventually_differs_between_quantifiers(branching_p):
    """Test E F and A F on finite paths"""
    assert mc_ctlsf(branching_p, Exists(Eventually(p))).holds
    assert not mc_ctlsf(branching_p, All(Eventually(p))).holds


def test_bounded_safety_stays_unknown(loop_p):
    """Test that a truncated unfolding cannot certify safety"""
    verdict = brute_force_polcctlp(loop_p, All(Globally(p)), 4)
    assert verdict.outcome is Outcome.UNKNOWN
    assert verdict.bound == 4


def test_bounded_reachability(loop_p, p_then_q):
    """Test the bounded oracle on reachability"""
    assert brute_force_polcctlp(loop_p, Exists(Eventually(q)), 4).outcome is Outcome.UNKNOWN
    assert brute_force_polcctlp(p_then_q, Exists(Eventually(q)), 2).outcome is Outcome.HOLDS


def test_path_oracle_weak_next(p_then_q):
    """Test the path oracle on weak next"""
    assert brute_force_ctlsf(p_then_q, Exists(WeakNext(p)), 1).outcome is Outcome.HOLDS


def test_path_oracle_cannot_refute_unreached_eventually(loop_empty):
    """Test that the path oracle leaves unreached eventualities open"""
    assert brute_force_ctlsf(loop_empty, Exists(Eventually(p)), 5).outcome is Outcome.UNKNOWN


def test_path_oracle_needs_positive_length(loop_p):
    """Test path length validation"""
    with pytest.raises(ValueError):
        brute_force_ctlsf(loop_p, p, 0)


def test_sampled_validity(settings):
    """Test sampled validity of E wX p"""
    assert check_valid_sampled(Exists(WeakNext(p)), 'finite', settings).holds


def test_sampled_equivalence_finds_separator():
    """Test that sampling separates E F p from E X p"""
    verdict = check_equiv_sampled(Exists(Eventually(p)), Exists(Next(p)), 'infinite', Settings(samples=200))
    assert not verdict.holds
    tree, description = verdict.counterexample
    assert mc_polcctlp(tree, Exists(Eventually(p))).holds != mc_polcctlp(tree, Exists(Next(p))).holds
    assert description.startswith("sample ")


def test_sampled_equivalence_checks_fragment(settings):
    """Test fragment checks before sampling"""
    with pytest.raises(NotInFragment):
        check_equiv_sampled(All(Eventually(p)), TRUE, 'infinite', settings)


def test_unknown_semantics(settings):
    """Test that only finite and infinite semantics exist"""
    with pytest.raises(ValueError, match="Unknown semantics"):
        check_equiv_sampled(p, p, 'lasso', settings)


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=40, deadline=None)
def test_edge_ids_do_not_matter(seed):
    """Test that renaming edges keeps every verdict"""
    rng = np.random.default_rng(seed)
    tree = random_tree(seed, 5, ['p', 'q'])
    phi = random_formula(rng, Fragment.POL_CCTL_P, 4, ['p', 'q'])
    psi = random_formula(rng, Fragment.CCTL_STAR_F, 3, ['p', 'q'])
    renamed = relabel_edges(tree)
    assert mc_polcctlp(tree, phi).holds == mc_polcctlp(renamed, phi).holds
    assert mc_ctlsf(tree, psi).holds == mc_ctlsf(renamed, psi).holds


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=40, deadline=None)
def test_graded_bisimilar_copies_agree(seed):
    """Test that copying a node keeps every verdict"""
    rng = np.random.default_rng(seed)
    tree = random_tree(seed, 5, ['p', 'q'])
    phi = random_formula(rng, Fragment.POL_CCTL, 4, ['p', 'q'])
    copy = duplicate_node(tree, tree.nodes[-1])
    assert mc_polcctlp(tree, phi).holds == mc_polcctlp(copy, phi).holds


@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=40, deadline=None)
def test_nnf_keeps_finite_truth(seed):
    """Test that NNF keeps finite-path verdicts"""
    rng = np.random.default_rng(seed)
    tree = random_tree(seed, 4, ['p', 'q'])
    phi = random_formula(rng, Fragment.CCTL_STAR_F, 4, ['p', 'q'])
    assert mc_ctlsf(tree, phi).holds == mc_ctlsf(tree, to_nnf(phi)).holds


@pytest.mark.slow
@given(seed=st.integers(min_value=0, max_value=100_000))
@hyp_settings(max_examples=40, deadline=None)
def test_bounded_oracles_never_contradict(seed):
    """Test the bounded oracles against the exact checkers"""
    rng = np.random.default_rng(seed)
    tree = random_tree(seed, 4, ['p', 'q'])
    phi = random_formula(rng, Fragment.POL_CCTL_P, 3, ['p', 'q'])
    psi = random_formula(rng, Fragment.CCTL_STAR_F, 3, ['p', 'q'])
    bounded = brute_force_polcctlp(tree, phi, 6)
    if bounded.decided:
        assert bounded.holds == mc_polcctlp(tree, phi).holds
    path_bounded = brute_force_ctlsf(tree, psi, 5)
    if path_bounded.decided:
        assert path_bounded.holds == mc_ctlsf(tree, psi).holds
