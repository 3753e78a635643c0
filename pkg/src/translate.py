import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import networkx as nx

from src.config import Settings, get_settings
from src.errors import NotCounterFree, NotMutuallyExclusive, PastContentPresent, SplitFailure
from src.logic import (
    ROOT,
    All,
    And,
    Bottom,
    Count,
    Exists,
    Formula,
    Fragment,
    Next,
    Not,
    Or,
    Prop,
    Since,
    Top,
    Until,
    WeakNext,
    WeakUntil,
    Yesterday,
    conj,
    disj,
    letter_formula,
    neg,
    normalize_ctlsf,
    polarized_core,
    print_formula,
    props_of,
    require_fragment,
    size,
    state_markers,
    subformulas,
    substitute,
    transform,
)
from src.regular_tree import RegularTree, random_tree, serialize_tree
from src.semantics import mc_ctlsf, mc_polcctlp
from src.tree_automata import (
    P_FALSE,
    P_TRUE,
    Atom,
    AtomRef,
    Component,
    ComponentType,
    Exclusion,
    GradedTreeAutomaton,
    Modality,
    Pbf,
    PFalse,
    POr,
    PTrue,
    Subclass,
    accept_2hlgt_bounded,
    accept_hwgt,
    atom,
    box,
    check_counter_free_components,
    check_mutual_exclusion,
    diamond,
    dual_automaton,
    linearize,
    pbf_atoms,
    pconj,
    pdisj,
    serialize_tree_automaton,
    substitute_atom,
    up,
    validate_subclass,
)
from src.word_automata import determinize, looping_automaton_to_ltl, ltlf_to_nfa, make_absorbing, minimize_dfa, valuations

logger = logging.getLogger(__name__)

Letter = frozenset


def _by_letter(ap: List[str], per_letter: Dict[Letter, Formula]) -> Formula:
    """⋁ over letters of ψ_σ ∧ f_σ, letters with the same f_σ merged"""
    groups: Dict[Formula, List[Letter]] = {}
    for letter, f in per_letter.items():
        groups.setdefault(f, []).append(letter)
    ordered = sorted(groups.items(), key=lambda kv: print_formula(kv[0]))
    return disj(*(conj(letter_formula(letters, ap), f) for f, letters in ordered))


def _pbf_formula(theta: Pbf, atom_formula: Callable[[Atom], Formula]) -> Formula:
    if isinstance(theta, PTrue):
        return Top()
    if isinstance(theta, PFalse):
        return Bottom()
    if isinstance(theta, AtomRef):
        return atom_formula(theta.atom)
    parts = (_pbf_formula(theta.left, atom_formula), _pbf_formula(theta.right, atom_formula))
    return disj(*parts) if isinstance(theta, POr) else conj(*parts)


def _graded(x: Atom, target: Formula) -> Formula:
    if x.modality is Modality.DIAMOND:
        return Count(x.k, target)
    if x.modality is Modality.BOX:
        return Not(Count(x.k, neg(target)))
    return Yesterday(target)


class _PolcctlpTranslation:
    """χ(q) for every state of a 2HLGT, built lowest component first"""

    def __init__(self, a: GradedTreeAutomaton):
        validate_subclass(a, Subclass.HLGT2)
        self.a = a
        self.ap = sorted(a.ap)
        self.chi: Dict[str, Formula] = {}

    def atom(self, x: Atom) -> Formula:
        return _graded(x, self.chi[x.state])

    def split(self, q: str, letter: Letter, theta: Pbf) -> Tuple[Pbf, Pbf]:
        own = {x for x in pbf_atoms(theta) if x.state == q}
        if not own:
            return theta, theta
        if len(own) > 1:
            raise SplitFailure(q, letter)
        (x,) = own
        # stay reads the own atom as true, leave as false
        return substitute_atom(theta, x, P_TRUE), substitute_atom(theta, x, P_FALSE)

    def gammas(self, q: str) -> Tuple[Formula, Formula]:
        flagged = any(k[2] is not None for k in self.a.keys_for(q))
        stay: Dict[Letter, Formula] = {}
        leave: Dict[Letter, Formula] = {}
        for letter in self.a.letters:
            if flagged:
                at_root = [self.pbf(t) for t in self.split(q, letter, self.a.delta(q, letter, True))]
                below = [self.pbf(t) for t in self.split(q, letter, self.a.delta(q, letter, False))]
                pair = [r if r == b else disj(conj(ROOT, r), conj(neg(ROOT), b)) for r, b in zip(at_root, below)]
            else:
                pair = [self.pbf(t) for t in self.split(q, letter, self.a.delta(q, letter))]
            stay[letter], leave[letter] = pair
        return _by_letter(self.ap, stay), _by_letter(self.ap, leave)

    def pbf(self, theta: Pbf) -> Formula:
        return _pbf_formula(theta, self.atom)

    def run(self) -> Formula:
        for component in self.a.bottom_up():
            (q,) = component.states
            gamma, gamma_exit = self.gammas(q)
            if component.kind is ComponentType.TRANSIENT:
                self.chi[q] = gamma_exit
            elif component.kind is ComponentType.EXISTENTIAL:
                self.chi[q] = Exists(Until(gamma, gamma_exit))
            elif component.kind is ComponentType.UNIVERSAL:
                self.chi[q] = All(WeakUntil(gamma, gamma_exit))
            else:
                self.chi[q] = Since(gamma, gamma_exit)
            logger.debug("χ(%s): %d nodes", q, size(self.chi[q]))
        if isinstance(self.a.initial, str):
            return self.chi[self.a.initial]
        return self.pbf(self.a.initial)


def hlgt2_to_polcctlp(a: GradedTreeAutomaton) -> Formula:
    return _PolcctlpTranslation(a).run()


def _kind_for(f: Formula, positive: bool) -> ComponentType:
    if isinstance(f, Exists) and isinstance(f.operand, Until):
        return ComponentType.EXISTENTIAL if positive else ComponentType.UNIVERSAL
    if isinstance(f, Since):
        return ComponentType.UPWARD
    return ComponentType.TRANSIENT


class _AutomatonBuilder:
    """Shared bookkeeping: states created on demand, components ordered by completion"""

    def __init__(self, ap):
        self.ap = sorted(ap)
        self.letters = valuations(self.ap)
        self.names: Dict[tuple, str] = {}
        self.transitions: Dict[Tuple[str, Letter, Optional[bool]], Pbf] = {}
        self.priority: Dict[str, int] = {}
        self.finished: List[Component] = []
        self.count = 0

    def fresh(self) -> str:
        name = f"q{self.count}"
        self.count += 1
        return name

    def finish(self, states, kind: ComponentType) -> None:
        odd = kind in (ComponentType.EXISTENTIAL, ComponentType.UPWARD)
        for q in states:
            self.priority[q] = 1 if odd else 0
        self.finished.append(Component(f"C{len(self.finished)}", frozenset(states), kind))

    def automaton(self, initial, certificates=frozenset()) -> GradedTreeAutomaton:
        states = tuple(q for c in self.finished for q in c.states)
        order = {(lower.name, upper.name) for i, upper in enumerate(self.finished) for lower in self.finished[:i]}
        two_way = any(k[2] is not None for k in self.transitions) or any(
            x.modality is Modality.UP for theta in self.transitions.values() for x in pbf_atoms(theta))
        return GradedTreeAutomaton(ap=frozenset(self.ap), states=states, initial=initial,
                                   transitions=dict(self.transitions), priority=dict(self.priority),
                                   components=tuple(self.finished), order=frozenset(order), two_way=two_way,
                                   certificates=frozenset(certificates))


class _PolcctlpAutomaton(_AutomatonBuilder):
    """One singleton component per (subformula, polarity) of the polarized core"""

    def state(self, f: Formula, positive: bool) -> str:
        key = (f, positive)
        if key in self.names:
            return self.names[key]
        q = self.fresh()
        self.names[key] = q
        for letter in self.letters:
            at_root = self.local(f, positive, letter, True)
            below = self.local(f, positive, letter, False)
            if at_root == below:
                self.transitions[(q, letter, None)] = below
            else:
                self.transitions[(q, letter, True)] = at_root
                self.transitions[(q, letter, False)] = below
        self.finish([q], _kind_for(f, positive))
        return q

    def local(self, f: Formula, positive: bool, letter: Letter, at_root: bool) -> Pbf:
        """PBF read at a node with this letter that holds iff f (or ¬f) holds there"""
        if isinstance(f, (Top, Bottom)):
            return P_TRUE if isinstance(f, Top) == positive else P_FALSE
        if isinstance(f, Prop):
            return P_TRUE if (f.name in letter) == positive else P_FALSE
        if isinstance(f, Not):
            return self.local(f.operand, not positive, letter, at_root)
        if isinstance(f, (Or, And)):
            join = pdisj if isinstance(f, Or) == positive else pconj
            return join(self.local(f.left, positive, letter, at_root), self.local(f.right, positive, letter, at_root))
        if isinstance(f, Count):
            return self.graded(f.operand, f.n, positive)
        if isinstance(f, Yesterday):
            if at_root:
                return P_FALSE if positive else P_TRUE
            return atom(up(self.state(f.operand, positive)))
        if isinstance(f, Since):
            if at_root:
                back = P_FALSE if positive else P_TRUE
            else:
                back = atom(up(self.state(f, positive)))
            return self.unroll(f.left, f.right, back, positive, letter, at_root)
        body = f.operand
        if isinstance(body, Next):
            return self.graded(body.operand, 1, positive)
        me = atom(diamond(self.state(f, True))) if positive else atom(box(self.state(f, False)))
        return self.unroll(body.left, body.right, me, positive, letter, at_root)

    def graded(self, operand: Formula, k: int, positive: bool) -> Pbf:
        if positive:
            return atom(diamond(self.state(operand, True), k))
        return atom(box(self.state(operand, False), k))

    def unroll(self, left: Formula, right: Formula, again: Pbf, positive: bool, letter, at_root) -> Pbf:
        """right ∨ (left ∧ again), or its dual right̄ ∧ (left̄ ∨ again)"""
        now_right = self.local(right, positive, letter, at_root)
        now_left = self.local(left, positive, letter, at_root)
        if positive:
            return pdisj(now_right, pconj(now_left, again))
        return pconj(now_right, pdisj(now_left, again))


def polcctlp_to_2hlgt(phi: Formula) -> GradedTreeAutomaton:
    require_fragment(phi, Fragment.POL_CCTL_P)
    builder = _PolcctlpAutomaton(props_of(phi))
    initial = builder.state(polarized_core(phi), True)
    result = builder.automaton(initial)
    validate_subclass(result, Subclass.HLGT2)
    logger.info("polcctlp_to_2hlgt: %d states, two-way %s", len(result.states), result.two_way)
    return result


def _has_past(phi: Formula) -> bool:
    return any(isinstance(f, (Yesterday, Since)) for f in subformulas(phi))


def hlgt_to_polcctl(a: GradedTreeAutomaton) -> Formula:
    validate_subclass(a, Subclass.HLGT)
    result = hlgt2_to_polcctlp(a)
    if _has_past(result):
        raise PastContentPresent(f"translation of a one-way automaton uses past: {print_formula(result)}")
    return result


def polcctl_to_hlgt(phi: Formula) -> GradedTreeAutomaton:
    if _has_past(phi):
        raise PastContentPresent(f"formula uses past operators: {print_formula(phi)}")
    require_fragment(phi, Fragment.POL_CCTL)
    result = polcctlp_to_2hlgt(phi)
    if result.two_way:
        raise PastContentPresent("automaton for a past-free formula uses upward moves")
    return result


@dataclass
class _PathComponent:
    dfa: object
    markers: Dict[str, Formula]
    positive: bool
    names: Dict[int, str] = field(default_factory=dict)
    live: frozenset = frozenset()


class _CtlsfAutomaton(_AutomatonBuilder):
    """HWGT for a normalized finite-path formula: one existential (or dual universal) component per E"""

    def __init__(self, ap):
        super().__init__(ap)
        self.paths: Dict[Tuple[Formula, bool], _PathComponent] = {}
        self.complements: List[Tuple[str, str]] = []

    def transient(self, f: Formula, positive: bool) -> str:
        key = ('state', f, positive)
        if key in self.names:
            return self.names[key]
        q = self.fresh()
        self.names[key] = q
        for letter in self.letters:
            self.transitions[(q, letter, None)] = self.local(f, positive, letter)
        self.finish([q], ComponentType.TRANSIENT)
        twin = self.names.get(('state', f, not positive))
        if twin is not None:
            self.complements.append((q, twin))
        return q

    def local(self, f: Formula, positive: bool, letter: Letter) -> Pbf:
        if isinstance(f, (Top, Bottom)):
            return P_TRUE if isinstance(f, Top) == positive else P_FALSE
        if isinstance(f, Prop):
            return P_TRUE if (f.name in letter) == positive else P_FALSE
        if isinstance(f, Not):
            return self.local(f.operand, not positive, letter)
        if isinstance(f, (Or, And)):
            join = pdisj if isinstance(f, Or) == positive else pconj
            return join(self.local(f.left, positive, letter), self.local(f.right, positive, letter))
        if isinstance(f, Count):
            q = self.transient(f.operand, positive)
            return atom(diamond(q, f.n) if positive else box(q, f.n))
        if isinstance(f, Exists):
            path = self.path(f.operand, positive)
            return self.step(path, path.dfa.initial, letter)
        raise TypeError(f"Unexpected node {f!r} in a normalized formula")

    def path(self, psi: Formula, positive: bool) -> _PathComponent:
        key = (psi, positive)
        if key in self.paths:
            return self.paths[key]
        skeleton, markers = state_markers(psi)
        nfa = ltlf_to_nfa(skeleton, props=sorted(markers))
        dfa = minimize_dfa(make_absorbing(determinize(nfa)))
        graph = dfa.to_graph()
        live = set(dfa.accepting)
        for q in dfa.accepting:
            live |= nx.ancestors(graph, q)
        component = _PathComponent(dfa=dfa, markers=markers, positive=positive, live=frozenset(live))
        frontier = [dfa.initial]
        seen = {dfa.initial}
        while frontier:
            d = frontier.pop()
            for letter in dfa.alphabet:
                t = dfa.delta(d, letter)
                if t in live and t not in dfa.accepting and t not in component.names:
                    component.names[t] = self.fresh()
                if t not in seen:
                    seen.add(t)
                    frontier.append(t)
        self.paths[key] = component
        for d, q in sorted(component.names.items()):
            for letter in self.letters:
                self.transitions[(q, letter, None)] = self.step(component, d, letter)
        if component.names:
            self.finish(list(component.names.values()),
                        ComponentType.EXISTENTIAL if positive else ComponentType.UNIVERSAL)
        twin = self.paths.get((psi, not positive))
        if twin is not None:
            self.complements.extend((component.names[d], twin.names[d]) for d in component.names)
        logger.debug("Path component for %s: %d states", print_formula(psi), len(component.names))
        return component

    def step(self, component: _PathComponent, d, letter: Letter) -> Pbf:
        """Move of DFA state d on this node: guard on the marker valuation, then continue or stop"""
        dfa, positive = component.dfa, component.positive
        options = []
        for valuation in dfa.alphabet:
            target = dfa.delta(d, valuation)
            if target in dfa.accepting:
                after = P_TRUE if positive else P_FALSE
            elif target not in component.live:
                after = P_FALSE if positive else P_TRUE
            else:
                q = component.names[target]
                after = atom(diamond(q)) if positive else atom(box(q))
            literals = [self.local(chi, (name in valuation) == positive, letter)
                        for name, chi in sorted(component.markers.items())]
            if positive:
                options.append(pconj(*literals, after))
            else:
                options.append(pdisj(*literals, after))
        return pdisj(*options) if positive else pconj(*options)

    def certificates(self) -> frozenset:
        pairs = set()
        grades: Dict[str, set] = {}
        for theta in self.transitions.values():
            for x in pbf_atoms(theta):
                grades.setdefault(x.state, set()).add(x.k)
        for s, t in self.complements:
            for k in grades.get(s, set()) | grades.get(t, set()):
                pairs.add(frozenset({diamond(s, k), box(t, k)}))
                pairs.add(frozenset({box(s, k), diamond(t, k)}))
        return frozenset(pairs)


def ctlsf_to_hwgtcf(phi: Formula, settings: Optional[Settings] = None) -> GradedTreeAutomaton:
    require_fragment(phi, Fragment.CCTL_STAR_F)
    normal = normalize_ctlsf(phi, settings)
    builder = _CtlsfAutomaton(props_of(phi))
    top = builder.transient(normal, True)
    result = builder.automaton(top, builder.certificates())
    validate_subclass(result, Subclass.HWGT)
    logger.info("ctlsf_to_hwgtcf: %d states in %d components", len(result.states), len(result.components))
    return result


def _weak(phi: Formula) -> Formula:
    return transform(phi, lambda f: WeakNext(f.operand) if isinstance(f, Next) else f)


class _CtlsfTranslation:
    """χ(q) for every state of a HWGT_cf: letters for transient states, looping automata otherwise"""

    def __init__(self, a: GradedTreeAutomaton, settings: Settings):
        validate_subclass(a, Subclass.HWGT)
        freeness = check_counter_free_components(a)
        if not freeness:
            raise NotCounterFree(next(iter(freeness.witnesses.values())))
        exclusion = check_mutual_exclusion(a, settings)
        if exclusion.status is Exclusion.REFUTED:
            raise NotMutuallyExclusive(exclusion.witness)
        self.a = a
        self.dual = dual_automaton(a)
        self.settings = settings
        self.ap = sorted(a.ap)
        self.chi: Dict[str, Formula] = {}

    def atom(self, x: Atom, complemented: bool = False) -> Formula:
        target = self.chi[x.state]
        return _graded(x, neg(target) if complemented else target)

    def universal(self, automaton: GradedTreeAutomaton, component: Component, q: str, complemented: bool) -> Formula:
        """A f(ψ_B): lower parts substituted exactly, X read weakly on finite paths"""
        lin = linearize(automaton, component.name, q)
        psi = looping_automaton_to_ltl(lin.automaton, self.settings)
        mapping = {name: disj(*(self.atom(x, complemented) for x in sorted(part)))
                   for name, part in lin.annotations.items()}
        return All(_weak(substitute(psi, mapping)))

    def run(self) -> Formula:
        for component in self.a.bottom_up():
            for q in sorted(component.states):
                if component.kind is ComponentType.TRANSIENT:
                    per_letter = {letter: _pbf_formula(self.a.delta(q, letter), self.atom) for letter in self.a.letters}
                    self.chi[q] = _by_letter(self.ap, per_letter)
                elif component.kind is ComponentType.UNIVERSAL:
                    self.chi[q] = self.universal(self.a, component, q, False)
                else:
                    dual = self.dual.component(component.name)
                    self.chi[q] = neg(self.universal(self.dual, dual, q, True))
                logger.debug("χ(%s): %d nodes", q, size(self.chi[q]))
        if isinstance(self.a.initial, str):
            return self.chi[self.a.initial]
        return _pbf_formula(self.a.initial, self.atom)


def hwgtcf_to_ctlsf(a: GradedTreeAutomaton, settings: Optional[Settings] = None) -> Formula:
    return _CtlsfTranslation(a, settings or get_settings()).run()


@dataclass(frozen=True)
class ValidationSummary:
    samples: int
    agreements: int
    undecided: int = 0
    counterexample: Optional[RegularTree] = None

    @property
    def holds(self) -> bool:
        return self.counterexample is None


def compare_languages(left: Callable[[RegularTree], Optional[bool]], right: Callable[[RegularTree], Optional[bool]],
                      ap, settings: Optional[Settings] = None) -> ValidationSummary:
    """Run both deciders on sampled trees; None means undecided and never counts as disagreement"""
    settings = settings or get_settings()
    props = sorted(ap) or ['p']

    def sample(i: int) -> Tuple[Optional[bool], Optional[bool], RegularTree]:
        tree = random_tree((settings.seed, i), settings.max_nodes, props)
        return left(tree), right(tree), tree

    outcomes: Dict[int, Tuple[Optional[bool], Optional[bool], RegularTree]] = {}
    with ThreadPoolExecutor(max_workers=settings.workers) as executor:
        futures = {executor.submit(sample, i): i for i in range(settings.samples)}
        for future in as_completed(futures):
            outcomes[futures[future]] = future.result()
    agreements = undecided = 0
    counterexample = None
    for i in sorted(outcomes):
        x, y, tree = outcomes[i]
        if x is None or y is None:
            undecided += 1
        elif x == y:
            agreements += 1
        elif counterexample is None:
            counterexample = tree
    if undecided:
        logger.warning("%d of %d validation samples were undecided", undecided, settings.samples)
    return ValidationSummary(samples=settings.samples, agreements=agreements, undecided=undecided,
                             counterexample=counterexample)


DIRECTIONS = {
    ('2hlgt', 'polcctlp'): 'automaton',
    ('hwgtcf', 'ctlsf'): 'automaton',
    ('polcctlp', '2hlgt'): 'formula',
    ('ctlsf', 'hwgtcf'): 'formula',
}


@dataclass
class TranslationReport:
    source: str
    target: str
    input_digest: str
    output: Union[Formula, GradedTreeAutomaton]
    chi: Dict[str, Formula] = field(default_factory=dict)
    validation: Optional[ValidationSummary] = None

    def output_text(self) -> str:
        if isinstance(self.output, GradedTreeAutomaton):
            return serialize_tree_automaton(self.output)
        return print_formula(self.output) + "\n"

    def render(self) -> str:
        lines = [f"translation: {self.source} -> {self.target}", f"input sha256: {self.input_digest}"]
        for q, f in sorted(self.chi.items(), key=lambda kv: (len(kv[0]), kv[0])):
            lines.append(f"chi {q}: {print_formula(f)}")
        if self.validation is not None:
            v = self.validation
            lines.append(f"validation: samples={v.samples} agreements={v.agreements} undecided={v.undecided}")
            if v.counterexample is not None:
                lines.append("counterexample tree:")
                lines.extend("  " + line for line in serialize_tree(v.counterexample).splitlines())
        lines.append("output:")
        lines.extend("  " + line for line in self.output_text().splitlines())
        return "\n".join(lines) + "\n"


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _membership(a: GradedTreeAutomaton, one_way: bool, settings: Settings) -> Callable[[RegularTree], Optional[bool]]:
    if one_way:
        return lambda t: accept_hwgt(a, t)
    return lambda t: accept_2hlgt_bounded(a, t, settings.depth).value


def translate_artifact(source: str, target: str, artifact: Union[Formula, GradedTreeAutomaton],
                       validate: bool = False, settings: Optional[Settings] = None) -> TranslationReport:
    """Run one translation and collect the per-state formulas and, on request, a sampled check"""
    settings = settings or get_settings()
    if (source, target) not in DIRECTIONS:
        raise ValueError(f"No translation from {source} to {target}, expected one of {sorted(DIRECTIONS)}")
    logger.info("Translating %s to %s", source, target)
    chi: Dict[str, Formula] = {}
    if source == '2hlgt':
        digest = _digest(serialize_tree_automaton(artifact))
        translation = _PolcctlpTranslation(artifact)
        output = translation.run()
        chi = translation.chi
    elif source == 'hwgtcf':
        digest = _digest(serialize_tree_automaton(artifact))
        translation = _CtlsfTranslation(artifact, settings)
        output = translation.run()
        chi = translation.chi
    elif source == 'polcctlp':
        digest = _digest(print_formula(artifact))
        output = polcctlp_to_2hlgt(artifact)
    else:
        digest = _digest(print_formula(artifact))
        output = ctlsf_to_hwgtcf(artifact, settings)
    report = TranslationReport(source=source, target=target, input_digest=digest, output=output, chi=chi)
    if validate:
        automaton, formula = (artifact, output) if DIRECTIONS[(source, target)] == 'automaton' else (output, artifact)
        finite = 'hwgtcf' in (source, target)
        check = mc_ctlsf if finite else mc_polcctlp
        report.validation = compare_languages(
            _membership(automaton, finite, settings),
            lambda t: check(t, formula).holds,
            automaton.ap | props_of(formula),
            settings,
        )
        logger.info("Validation finished: %d agreements of %d samples", report.validation.agreements,
                    report.validation.samples)
    return report
