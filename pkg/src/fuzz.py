import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from src.config import Settings, get_settings
from src.errors import ConversionBudgetExceeded, NormalizationIncomplete, NotCounterFree
from src.logic import Formula, Fragment, finite_path_equivalences, print_formula, random_formula
from src.regular_tree import random_tree, serialize_tree
from src.semantics import (
    brute_force_ctlsf,
    brute_force_polcctlp,
    check_equiv_sampled,
    mc_ctlsf,
    mc_polcctlp,
)
from src.translate import (
    ctlsf_to_hwgtcf,
    hlgt2_to_polcctlp,
    hwgtcf_to_ctlsf,
    polcctlp_to_2hlgt,
)
from src.tree_automata import accept_2hlgt_bounded, random_2hlgt, serialize_tree_automaton

logger = logging.getLogger(__name__)

PROPS = ('p', 'q')
FORMULA_DEPTH = 3


@dataclass
class TrialFailure:
    trial: int
    description: str
    artifacts: Dict[str, str] = field(default_factory=dict)


@dataclass
class SuiteResult:
    suite: str
    trials: int
    seed: int
    failures: List[TrialFailure] = field(default_factory=list)
    unknown: int = 0
    decided: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} suite={self.suite} n={self.trials} seed={self.seed} "
                f"failures={len(self.failures)} unknown={self.unknown}")


class _Unknown(Exception):
    pass


def _equivalent(phi: Formula, psi: Formula, sem: str, settings: Settings, trial: int, label: str) -> Optional[TrialFailure]:
    verdict = check_equiv_sampled(phi, psi, sem, settings)
    if verdict.holds:
        return None
    tree, description = verdict.counterexample
    return TrialFailure(trial, f"{label}: {description}", {
        "left.formula": print_formula(phi) + "\n",
        "right.formula": print_formula(psi) + "\n",
        "counterexample.tree": serialize_tree(tree),
    })


def _finite_rewrite_trial(rng: np.random.Generator, settings: Settings, trial: int) -> List[TrialFailure]:
    a, b, c = (random_formula(rng, Fragment.CCTL_STAR_F, FORMULA_DEPTH, PROPS) for _ in range(3))
    failures = []
    for name, lhs, rhs in finite_path_equivalences(a, b, c):
        failure = _equivalent(lhs, rhs, 'finite', settings, trial, name)
        if failure is not None:
            failures.append(failure)
    return failures


def _roundtrip_polarized_trial(rng: np.random.Generator, settings: Settings, trial: int) -> List[TrialFailure]:
    failures = []
    phi = random_formula(rng, Fragment.POL_CCTL_P, FORMULA_DEPTH, PROPS)
    back = hlgt2_to_polcctlp(polcctlp_to_2hlgt(phi))
    failure = _equivalent(phi, back, 'infinite', settings, trial, "formula round trip")
    if failure is not None:
        failures.append(failure)
    automaton = random_2hlgt((settings.seed, trial), PROPS, max_states=4)
    chi = hlgt2_to_polcctlp(automaton)
    for i in range(settings.samples):
        tree = random_tree((settings.seed, trial, i), settings.max_nodes, PROPS)
        game = accept_2hlgt_bounded(automaton, tree, settings.depth)
        if game.decided and game.holds != mc_polcctlp(tree, chi).holds:
            failures.append(TrialFailure(trial, f"automaton game disagrees with its formula on tree {i}", {
                "automaton.gta": serialize_tree_automaton(automaton),
                "formula.formula": print_formula(chi) + "\n",
                "counterexample.tree": serialize_tree(tree),
            }))
            break
    return failures


def _roundtrip_finite_trial(rng: np.random.Generator, settings: Settings, trial: int) -> List[TrialFailure]:
    phi = random_formula(rng, Fragment.CCTL_STAR_F, FORMULA_DEPTH, PROPS)
    try:
        back = hwgtcf_to_ctlsf(ctlsf_to_hwgtcf(phi, settings), settings)
    except (ConversionBudgetExceeded, NormalizationIncomplete, NotCounterFree) as e:
        logger.warning("Trial %d skipped for %s: %s", trial, print_formula(phi), e)
        raise _Unknown(str(e)) from e
    failure = _equivalent(phi, back, 'finite', settings, trial, "formula round trip")
    return [] if failure is None else [failure]


def _oracle_trial(rng: np.random.Generator, settings: Settings, trial: int) -> List[TrialFailure]:
    tree = random_tree((settings.seed, trial), settings.max_nodes, PROPS)
    failures = []
    checks = (
        (Fragment.POL_CCTL_P, mc_polcctlp, lambda phi: brute_force_polcctlp(tree, phi, settings.depth)),
        (Fragment.CCTL_STAR_F, mc_ctlsf, lambda phi: brute_force_ctlsf(tree, phi, settings.word_length)),
    )
    decided = 0
    for fragment, exact, bounded in checks:
        phi = random_formula(rng, fragment, FORMULA_DEPTH, PROPS)
        verdict = bounded(phi)
        if not verdict.decided:
            continue
        decided += 1
        if verdict.holds != exact(tree, phi).holds:
            failures.append(TrialFailure(trial, f"bounded oracle contradicts the {fragment.value} checker", {
                "formula.formula": print_formula(phi) + "\n",
                "counterexample.tree": serialize_tree(tree),
            }))
    if not failures and decided == 0:
        raise _Unknown("both oracles undecided")
    return failures


SUITES: Dict[str, Callable[[np.random.Generator, Settings, int], List[TrialFailure]]] = {
    'prop3': _finite_rewrite_trial,
    'roundtrip-5': _roundtrip_polarized_trial,
    'roundtrip-6': _roundtrip_finite_trial,
    'oracle': _oracle_trial,
    # descriptive aliases
    'finite-rewrites': _finite_rewrite_trial,
    'roundtrip-polarized': _roundtrip_polarized_trial,
    'roundtrip-finite': _roundtrip_finite_trial,
}


_REPLAY_OPTIONS = (
    ("--max-nodes", "max_nodes"),
    ("--word-length", "word_length"),
    ("--depth", "depth"),
    ("--budget", "conversion_budget"),
    ("--workers", "workers"),
)


def replay_command(suite: str, settings: Settings, trial: int) -> str:
    """Command line that reruns one trial under the same bounds, environment notwithstanding"""
    bounds = " ".join(f"{flag} {getattr(settings, field)}" for flag, field in _REPLAY_OPTIONS)
    return (f"python -m src.cli {bounds} fuzz --suite {suite} --seed {settings.seed} "
            f"--trees {settings.samples} --trial {trial}")

def run_suite(name: str, trials: int, settings: Optional[Settings] = None,
              only_trial: Optional[int] = None) -> SuiteResult:
    """Run a differential suite; trial i draws from its own generator seeded by (seed, i)"""
    settings = settings or get_settings()
    if name not in SUITES:
        raise ValueError(f"Unknown suite {name}, expected one of {sorted(SUITES)}")
    trial_fn = SUITES[name]
    result = SuiteResult(suite=name, trials=trials, seed=settings.seed)
    indices = range(trials) if only_trial is None else [only_trial]
    for i in indices:
        rng = np.random.default_rng((settings.seed, i))
        try:
            failures = trial_fn(rng, settings, i)
        except _Unknown:
            result.unknown += 1
            continue
        result.decided += 1
        result.failures.extend(failures)
        if failures:
            logger.info("Suite %s: trial %d failed", name, i)
    logger.info("Suite %s finished: %d failures, %d unknown", name, len(result.failures), result.unknown)
    return result
