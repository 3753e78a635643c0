import itertools
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Hashable, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from lark import Lark, Transformer, UnexpectedInput, v_args

from src.config import Settings, get_settings
from src.errors import (
    ConversionBudgetExceeded,
    GradedLogicError,
    NotCounterFree,
    NotInFragment,
    NotLooping,
    ParseError,
)
from src.logic import (
    FALSE,
    ROOT,
    TRUE,
    And,
    Bottom,
    Eventually,
    Formula,
    Fragment,
    Globally,
    Next,
    Not,
    Or,
    Prop,
    Release,
    Since,
    Top,
    Until,
    WeakNext,
    WeakUntil,
    Yesterday,
    check_fragment,
    conj,
    disj,
    letter_formula,
    props_of,
    size,
    subformulas,
    to_nnf,
    transform,
)

logger = logging.getLogger(__name__)

State = Hashable
Letter = Hashable


def sort_key(x) -> tuple:
    """Deterministic order for states and letters of mixed shape"""
    if isinstance(x, (frozenset, set)):
        return (0,) + tuple(sorted(sort_key(e) for e in x))
    if isinstance(x, tuple):
        return (1,) + tuple(sort_key(e) for e in x)
    if isinstance(x, (int, np.integer)):
        return (2, int(x), "")
    return (3, 0, str(x))


def valuations(props: Iterable[str]) -> Tuple[FrozenSet[str], ...]:
    props = sorted(props)
    return tuple(frozenset(c) for r in range(len(props) + 1) for c in itertools.combinations(props, r))


@dataclass(frozen=True)
class FiniteWordAutomaton:
    """Automaton over finite words; deterministic automata are complete"""
    states: Tuple[State, ...]
    alphabet: Tuple[Letter, ...]
    transitions: Dict[Tuple[State, Letter], FrozenSet[State]]
    initial: State
    accepting: FrozenSet[State]
    deterministic: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'states', tuple(sorted(set(self.states), key=sort_key)))
        object.__setattr__(self, 'alphabet', tuple(sorted(set(self.alphabet), key=sort_key)))
        object.__setattr__(self, 'accepting', frozenset(self.accepting))
        object.__setattr__(self, 'transitions',
                           {k: frozenset(v) for k, v in self.transitions.items() if v})
        declared = set(self.states)
        if self.initial not in declared:
            raise ValueError(f"Initial state {self.initial} is not declared")
        if not self.accepting <= declared:
            raise ValueError(f"Accepting states {sorted(self.accepting - declared, key=sort_key)} are not declared")
        for (source, letter), targets in self.transitions.items():
            if source not in declared or not targets <= declared:
                raise ValueError(f"Transition from {source} on {letter} references undeclared states")
        if self.deterministic:
            for q in self.states:
                for a in self.alphabet:
                    if len(self.successors(q, a)) != 1:
                        raise ValueError(f"Deterministic automaton has {len(self.successors(q, a))} "
                                         f"successors for {q} on {a}")

    def successors(self, q: State, a: Letter) -> FrozenSet[State]:
        return self.transitions.get((q, a), frozenset())

    def step(self, current: Iterable[State], a: Letter) -> FrozenSet[State]:
        return frozenset(t for q in current for t in self.successors(q, a))

    def delta(self, q: State, a: Letter) -> State:
        (target,) = self.successors(q, a)
        return target

    def accepts(self, word: Sequence[Letter]) -> bool:
        current = frozenset({self.initial})
        for a in word:
            current = self.step(current, a)
        return bool(current & self.accepting)

    def to_graph(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph(initial=self.initial)
        for q in self.states:
            graph.add_node(q, accepting=q in self.accepting)
        for (q, a), targets in self.transitions.items():
            for t in targets:
                graph.add_edge(q, t, letter=a)
        return graph

    def to_dot(self) -> str:
        lines = ["digraph automaton {", f'  "__start" [shape=point]; "__start" -> "{self.initial}";']
        for q, data in self.to_graph().nodes(data=True):
            shape = "doublecircle" if data["accepting"] else "circle"
            lines.append(f'  "{q}" [shape={shape}];')
        for q, t, data in self.to_graph().edges(data=True):
            lines.append(f'  "{q}" -> "{t}" [label="{_letter_text(data["letter"])}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


MODES = ('nba', 'uba', 'nca')


@dataclass(frozen=True)
class OmegaWordAutomaton(FiniteWordAutomaton):
    """Büchi or coBüchi automaton; `accepting` is the pattern set F"""
    mode: str = 'nba'

    def __post_init__(self):
        super().__post_init__()
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode {self.mode}, expected one of {MODES}")

    @property
    def branching(self) -> str:
        return 'universal' if self.mode == 'uba' else 'nondeterministic'

    @property
    def acceptance(self) -> str:
        return 'cobuchi' if self.mode == 'nca' else 'buchi'

    @property
    def ap(self) -> FrozenSet[str]:
        return frozenset(p for a in self.alphabet if isinstance(a, frozenset) for p in a)

    def sink(self) -> Optional[State]:
        outside = [q for q in self.states if q not in self.accepting]
        return outside[0] if len(outside) == 1 else None

    def accepts(self, word):
        raise TypeError("Omega automata accept lassos, use accepts_lasso")

    def accepts_lasso(self, prefix: Sequence[Letter], loop: Sequence[Letter]) -> bool:
        """Acceptance of prefix·loop^ω for looping automata"""
        if not is_looping(self):
            raise NotLooping("accepts_lasso needs a looping automaton")
        reached = _sink_reached(self, prefix, loop)
        return reached if self.mode == 'nca' else not reached


def _sink_reached(a: OmegaWordAutomaton, prefix, loop) -> bool:
    sink = a.sink()
    if sink is None:
        return False
    current = frozenset({a.initial})
    if sink in current:
        return True
    for letter in prefix:
        current = a.step(current, letter)
        if sink in current:
            return True
    seen = set()
    while current not in seen:
        seen.add(current)
        for letter in loop:
            current = a.step(current, letter)
            if sink in current:
                return True
    return False


@dataclass
class TransitionMonoid:
    states: Tuple[State, ...]
    generators: Dict[Letter, int]
    elements: List[np.ndarray]
    words: List[Tuple[Letter, ...]]
    _index: Dict[bytes, int] = field(default_factory=dict, repr=False)
    _table: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.elements)

    def product(self, i: int, j: int) -> int:
        return self._index[_bool_product(self.elements[i], self.elements[j]).tobytes()]

    @property
    def table(self) -> np.ndarray:
        if self._table is None:
            m = len(self.elements)
            self._table = np.array([[self.product(i, j) for j in range(m)] for i in range(m)], dtype=np.int64)
        return self._table


def _bool_product(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x.astype(np.int64) @ y.astype(np.int64)) > 0


def letter_matrices(a: FiniteWordAutomaton) -> Dict[Letter, np.ndarray]:
    idx = {q: i for i, q in enumerate(a.states)}
    matrices = {}
    for letter in a.alphabet:
        m = np.zeros((len(a.states), len(a.states)), dtype=bool)
        for q in a.states:
            for t in a.successors(q, letter):
                m[idx[q], idx[t]] = True
        matrices[letter] = m
    return matrices


def transition_monoid(a: FiniteWordAutomaton) -> TransitionMonoid:
    if not a.alphabet:
        raise ValueError("Transition monoid needs at least one letter")
    matrices = letter_matrices(a)
    identity = np.eye(len(a.states), dtype=bool)
    elements, words, index = [identity], [()], {identity.tobytes(): 0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for letter in a.alphabet:
            product = _bool_product(elements[i], matrices[letter])
            key = product.tobytes()
            if key not in index:
                index[key] = len(elements)
                elements.append(product)
                words.append(words[i] + (letter,))
                queue.append(index[key])
    generators = {letter: index[matrices[letter].tobytes()] for letter in a.alphabet}
    logger.debug("Transition monoid over %d states has %d elements", len(a.states), len(elements))
    return TransitionMonoid(states=a.states, generators=generators, elements=elements, words=words, _index=index)


@dataclass(frozen=True)
class CounterFreeness:
    holds: bool
    witness: Optional[Tuple[Tuple[Letter, ...], int, State]] = None

    def __bool__(self) -> bool:
        return self.holds


def is_counter_free(a: FiniteWordAutomaton) -> CounterFreeness:
    """A path on w^n from q back to q forces a path on w from q back to q"""
    if not a.alphabet:
        return CounterFreeness(True)
    monoid = transition_monoid(a)
    for element, word in zip(monoid.elements, monoid.words):
        power, n, seen = element, 1, set()
        while power.tobytes() not in seen:
            seen.add(power.tobytes())
            for q in range(len(a.states)):
                if power[q, q] and not element[q, q]:
                    return CounterFreeness(False, (word, n, a.states[q]))
            power = _bool_product(power, element)
            n += 1
    return CounterFreeness(True)


def counter_free_by_words(a: FiniteWordAutomaton, max_word: int = 4, max_power: int = 6) -> bool:
    """Literal check of the counter condition over short words"""
    for length in range(1, max_word + 1):
        for word in itertools.product(a.alphabet, repeat=length):
            for q in a.states:
                if q in _run(a, {q}, word):
                    continue
                for n in range(2, max_power + 1):
                    if q in _run(a, {q}, word * n):
                        return False
    return True


def _run(a: FiniteWordAutomaton, start: Iterable[State], word: Sequence[Letter]) -> FrozenSet[State]:
    current = frozenset(start)
    for letter in word:
        current = a.step(current, letter)
    return current


def is_looping(a: OmegaWordAutomaton) -> bool:
    """At most one state outside the pattern set, and it loops on every letter"""
    outside = [q for q in a.states if q not in a.accepting]
    if not outside:
        return True
    if len(outside) > 1:
        return False
    sink = outside[0]
    return all(a.successors(sink, letter) == frozenset({sink}) for letter in a.alphabet)


def complement_looping(a: OmegaWordAutomaton) -> OmegaWordAutomaton:
    """Same graph and pattern set read dually: nondeterministic coBüchi <-> universal Büchi"""
    if a.mode not in ('nca', 'uba'):
        raise NotLooping(f"Only nca and uba automata are complemented by dualization, got {a.mode}")
    return replace(a, mode='uba' if a.mode == 'nca' else 'nca')


def _subset_construction(alphabet, start: FrozenSet[State], step: Callable, accepting: Callable) -> FiniteWordAutomaton:
    ids = {start: 0}
    queue = deque([start])
    transitions = {}
    while queue:
        current = queue.popleft()
        for letter in alphabet:
            target = step(current, letter)
            if target not in ids:
                ids[target] = len(ids)
                queue.append(target)
            transitions[(ids[current], letter)] = frozenset({ids[target]})
    return FiniteWordAutomaton(
        states=tuple(ids.values()),
        alphabet=tuple(alphabet),
        transitions=transitions,
        initial=0,
        accepting=frozenset(i for s, i in ids.items() if accepting(s)),
        deterministic=True,
    )


def determinize(a: FiniteWordAutomaton) -> FiniteWordAutomaton:
    """Complete subset construction; the empty set is the dead state"""
    result = _subset_construction(a.alphabet, frozenset({a.initial}), a.step, lambda s: bool(s & a.accepting))
    logger.debug("Determinized %d states into %d", len(a.states), len(result.states))
    return result


def reverse(a: FiniteWordAutomaton) -> FiniteWordAutomaton:
    """Deterministic automaton for the mirror language"""
    backward: Dict[Tuple[State, Letter], set] = {}
    for (q, letter), targets in a.transitions.items():
        for t in targets:
            backward.setdefault((t, letter), set()).add(q)
    step = lambda current, letter: frozenset(s for q in current for s in backward.get((q, letter), ()))
    return _subset_construction(a.alphabet, frozenset(a.accepting), step, lambda s: a.initial in s)


def minimize_dfa(a: FiniteWordAutomaton) -> FiniteWordAutomaton:
    """Moore refinement on the reachable part; states renumbered in BFS order"""
    if not a.deterministic:
        raise ValueError("minimize_dfa needs a deterministic automaton")
    reachable = [a.initial]
    seen = {a.initial}
    for q in reachable:
        for letter in a.alphabet:
            t = a.delta(q, letter)
            if t not in seen:
                seen.add(t)
                reachable.append(t)
    block = {q: int(q in a.accepting) for q in reachable}
    while True:
        signatures = {q: (block[q],) + tuple(block[a.delta(q, letter)] for letter in a.alphabet) for q in reachable}
        numbering: Dict[tuple, int] = {}
        refined = {q: numbering.setdefault(signatures[q], len(numbering)) for q in reachable}
        if len(numbering) == len(set(block.values())):
            break
        block = refined
    order = {}
    queue = deque([block[a.initial]])
    order[block[a.initial]] = 0
    representative = {}
    for q in reachable:
        representative.setdefault(block[q], q)
    transitions = {}
    while queue:
        b = queue.popleft()
        q = representative[b]
        for letter in a.alphabet:
            tb = block[a.delta(q, letter)]
            if tb not in order:
                order[tb] = len(order)
                queue.append(tb)
            transitions[(order[b], letter)] = frozenset({order[tb]})
    result = FiniteWordAutomaton(
        states=tuple(order.values()),
        alphabet=a.alphabet,
        transitions=transitions,
        initial=0,
        accepting=frozenset(order[block[q]] for q in reachable if q in a.accepting),
        deterministic=True,
    )
    logger.debug("Minimized %d states into %d", len(a.states), len(result.states))
    return result


def make_absorbing(a: FiniteWordAutomaton) -> FiniteWordAutomaton:
    """Accepting states loop on every letter: the language becomes L·Σ*"""
    transitions = {k: v for k, v in a.transitions.items() if k[0] not in a.accepting}
    for q in a.accepting:
        for letter in a.alphabet:
            transitions[(q, letter)] = frozenset({q})
    return replace(a, transitions=transitions)


def sink_prefix_dfa(a: OmegaWordAutomaton) -> FiniteWordAutomaton:
    """Minimal DFA of the finite words along which some run enters the sink"""
    if not is_looping(a):
        raise NotLooping(f"Automaton with {len(a.states)} states is not looping")
    sink = a.sink()
    nfa = FiniteWordAutomaton(states=a.states, alphabet=a.alphabet, transitions=a.transitions,
                              initial=a.initial, accepting=frozenset() if sink is None else frozenset({sink}))
    return minimize_dfa(make_absorbing(determinize(nfa)))


def determinize_safety(a: OmegaWordAutomaton) -> OmegaWordAutomaton:
    """Deterministic looping automaton of the same mode and language"""
    if a.mode not in ('nca', 'uba'):
        raise NotLooping(f"Expected a universal Büchi or nondeterministic coBüchi automaton, got {a.mode}")
    return _looping_from_prefix_dfa(sink_prefix_dfa(a), a.mode)


def bounded_language_equiv(a: FiniteWordAutomaton, b: FiniteWordAutomaton, max_len: int,
                           alphabet: Optional[Sequence[Letter]] = None) -> Tuple[bool, Optional[Tuple[Letter, ...]]]:
    """Compare finite-word languages on all words up to max_len; witness is a shortest difference"""
    alphabet = sorted(set(alphabet if alphabet is not None else set(a.alphabet) | set(b.alphabet)), key=sort_key)
    start = (frozenset({a.initial}), frozenset({b.initial}))
    frontier = [(start, ())]
    seen = {start}
    for length in range(max_len + 1):
        next_frontier = []
        for (sa, sb), word in frontier:
            if bool(sa & a.accepting) != bool(sb & b.accepting):
                return False, word
            if length == max_len:
                continue
            for letter in alphabet:
                pair = (a.step(sa, letter), b.step(sb, letter))
                if pair not in seen:
                    seen.add(pair)
                    next_frontier.append((pair, word + (letter,)))
        frontier = next_frontier
    return True, None


def _ltl_core(psi: Formula) -> Formula:
    def rule(f: Formula) -> Formula:
        if isinstance(f, Eventually):
            return Until(TRUE, f.operand)
        if isinstance(f, Globally):
            return Release(FALSE, f.operand)
        if isinstance(f, WeakUntil):
            return Release(f.right, Or(f.left, f.right))
        return f

    return to_nnf(transform(psi, rule))


Clause = FrozenSet[Formula]
Dnf = FrozenSet[Clause]
DNF_TRUE: Dnf = frozenset({frozenset()})
DNF_FALSE: Dnf = frozenset()


def _antichain(clauses: Iterable[Clause]) -> Dnf:
    clauses = sorted(set(clauses), key=len)
    kept: List[Clause] = []
    for c in clauses:
        if not any(k <= c for k in kept):
            kept.append(c)
    return frozenset(kept)


def _dnf_and(x: Dnf, y: Dnf) -> Dnf:
    return _antichain(c1 | c2 for c1 in x for c2 in y)


def _dnf_or(x: Dnf, y: Dnf) -> Dnf:
    return _antichain(x | y)


def _obligation(f: Formula) -> Dnf:
    if isinstance(f, Top):
        return DNF_TRUE
    if isinstance(f, Bottom):
        return DNF_FALSE
    if isinstance(f, And):
        return _dnf_and(_obligation(f.left), _obligation(f.right))
    if isinstance(f, Or):
        return _dnf_or(_obligation(f.left), _obligation(f.right))
    return frozenset({frozenset({f})})


class _Progression:
    """Obligations for the next position and the verdict if the word ends here"""

    def __init__(self):
        self._prog: Dict[Tuple[Formula, Letter], Dnf] = {}
        self._end: Dict[Tuple[Formula, Letter], bool] = {}

    def prog(self, f: Formula, letter: FrozenSet[str]) -> Dnf:
        key = (f, letter)
        if key not in self._prog:
            self._prog[key] = self._compute_prog(f, letter)
        return self._prog[key]

    def _compute_prog(self, f: Formula, letter) -> Dnf:
        if isinstance(f, (Top, Bottom, Prop, Not)):
            return DNF_TRUE if self.end(f, letter) else DNF_FALSE
        if isinstance(f, And):
            return _dnf_and(self.prog(f.left, letter), self.prog(f.right, letter))
        if isinstance(f, Or):
            return _dnf_or(self.prog(f.left, letter), self.prog(f.right, letter))
        if isinstance(f, (Next, WeakNext)):
            return _obligation(f.operand)
        if isinstance(f, Until):
            stay = _dnf_and(self.prog(f.left, letter), _obligation(f))
            return _dnf_or(self.prog(f.right, letter), stay)
        if isinstance(f, Release):
            stay = _dnf_or(self.prog(f.left, letter), _obligation(f))
            return _dnf_and(self.prog(f.right, letter), stay)
        raise NotInFragment(Fragment.LTLF.value, str(f))

    def end(self, f: Formula, letter) -> bool:
        key = (f, letter)
        if key not in self._end:
            self._end[key] = self._compute_end(f, letter)
        return self._end[key]

    def _compute_end(self, f: Formula, letter) -> bool:
        if isinstance(f, Top):
            return True
        if isinstance(f, Bottom):
            return False
        if isinstance(f, Prop):
            return f.name in letter
        if isinstance(f, Not):
            return not self.end(f.operand, letter)
        if isinstance(f, And):
            return self.end(f.left, letter) and self.end(f.right, letter)
        if isinstance(f, Or):
            return self.end(f.left, letter) or self.end(f.right, letter)
        if isinstance(f, Next):
            return False
        if isinstance(f, WeakNext):
            return True
        if isinstance(f, (Until, Release)):
            return self.end(f.right, letter)
        raise NotInFragment(Fragment.LTLF.value, str(f))


END = "end"


def ltlf_to_nfa(psi: Formula, props: Optional[Iterable[str]] = None) -> FiniteWordAutomaton:
    """NFA for the non-empty finite words satisfying psi (strong X, weak wX)"""
    if not check_fragment(psi, Fragment.LTLF):
        raise NotInFragment(Fragment.LTLF.value, str(psi))
    core = _ltl_core(psi)
    alphabet = valuations(props_of(psi) | frozenset(props or ()))
    progression = _Progression()
    start: Clause = frozenset({core})
    ids = {start: 0}
    queue = deque([start])
    transitions: Dict[Tuple[State, Letter], set] = {}
    end_id = -1
    while queue:
        clause = queue.popleft()
        for letter in alphabet:
            successors = set()
            nxt = DNF_TRUE
            for f in clause:
                nxt = _dnf_and(nxt, progression.prog(f, letter))
                if not nxt:
                    break
            for target in nxt:
                if target not in ids:
                    ids[target] = len(ids)
                    queue.append(target)
                successors.add(ids[target])
            if all(progression.end(f, letter) for f in clause):
                successors.add(end_id)
            transitions[(ids[clause], letter)] = successors
    result = FiniteWordAutomaton(
        states=tuple(ids.values()) + (end_id,),
        alphabet=alphabet,
        transitions=transitions,
        initial=0,
        accepting=frozenset({end_id}),
    )
    logger.debug("ltlf_to_nfa: %d obligation states for %s", len(ids), psi)
    return result


def _strengthen(psi: Formula) -> Formula:
    return transform(psi, lambda f: Next(f.operand) if isinstance(f, WeakNext) else f)


def prefix_dfa(cosafe: Formula, props: Iterable[str]) -> FiniteWordAutomaton:
    """Minimal DFA of the finite words having a prefix that settles the co-safe formula"""
    nfa = ltlf_to_nfa(_strengthen(cosafe), props)
    return minimize_dfa(make_absorbing(determinize(nfa)))


def _looping_from_prefix_dfa(dfa: FiniteWordAutomaton, mode: str) -> OmegaWordAutomaton:
    return OmegaWordAutomaton(
        states=dfa.states,
        alphabet=dfa.alphabet,
        transitions=dfa.transitions,
        initial=dfa.initial,
        accepting=frozenset(dfa.states) - dfa.accepting,
        deterministic=True,
        mode=mode,
    )


def ltl_to_looping_automaton(psi: Formula) -> OmegaWordAutomaton:
    """Universal Büchi automaton for SafeLtl, nondeterministic coBüchi for CosafeLtl"""
    props = props_of(psi)
    if check_fragment(psi, Fragment.COSAFE_LTL):
        return _looping_from_prefix_dfa(prefix_dfa(psi, props), 'nca')
    if check_fragment(psi, Fragment.SAFE_LTL):
        return _looping_from_prefix_dfa(prefix_dfa(to_nnf(Not(psi)), props), 'uba')
    raise NotInFragment(f"{Fragment.SAFE_LTL.value} or {Fragment.COSAFE_LTL.value}", str(psi))


def safe_dual(cosafe: Formula) -> Formula:
    """Negation of a co-safe formula as a safe one (X is self-dual on infinite words)"""
    return _strengthen(to_nnf(Not(cosafe)))


def looping_automaton_to_ltl(a: OmegaWordAutomaton, settings: Optional[Settings] = None,
                             validate: bool = True) -> Formula:
    """SafeLtl for a universal Büchi, CosafeLtl for a nondeterministic coBüchi looping automaton"""
    settings = settings or get_settings()
    if a.mode not in ('nca', 'uba'):
        raise NotLooping(f"Expected a universal Büchi or nondeterministic coBüchi automaton, got {a.mode}")
    if not is_looping(a):
        raise NotLooping(f"Automaton with {len(a.states)} states is not looping")
    freeness = is_counter_free(a)
    if not freeness:
        raise NotCounterFree(freeness.witness)
    props = sorted(a.ap)
    if a.sink() is None:
        return FALSE if a.mode == 'nca' else TRUE
    dfa = sink_prefix_dfa(a)
    freeness = is_counter_free(dfa)
    if not freeness:
        raise NotCounterFree(freeness.witness)
    prefix = reach_formula(dfa, props, budget=settings.conversion_budget)
    result = prefix if a.mode == 'nca' else safe_dual(prefix)
    if validate:
        same, witness = bounded_language_equiv(dfa, prefix_dfa(prefix, props), settings.word_length,
                                               alphabet=dfa.alphabet)
        if not same:
            raise GradedLogicError(f"Converted formula disagrees with the automaton on prefix {witness}")
        logger.info("looping_automaton_to_ltl: validated %d-node formula up to length %d",
                    size(result), settings.word_length)
    return result


@dataclass(frozen=True)
class _Letters(Formula):
    """Current letter belongs to the set"""
    letters: FrozenSet[Letter]


@dataclass(frozen=True)
class _Opaque(Formula):
    """Formula of the enclosing level carried unchanged through a lifted level"""
    formula: Formula


@dataclass(frozen=True)
class _Dfa:
    key: int
    states: Tuple[State, ...]
    letters: FrozenSet[Letter]
    delta: Dict[Tuple[State, Letter], State] = field(compare=False, hash=False)

    def restrict(self, letters: FrozenSet[Letter], key: int) -> '_Dfa':
        return _Dfa(key=key, states=self.states, letters=letters, delta=self.delta)


@dataclass(frozen=True)
class _Divisor:
    """Local divisor of a DFA at a non-permuting letter c"""
    letter: Letter
    rest: '_Dfa'
    lifted: '_Dfa'
    all_maps: FrozenSet[Tuple[State, ...]]


class _ReachBuilder:
    """Formulas for 'from state q some position is reached in state r with target[r] there'

    Every formula built over a sub-alphabet only moves past positions whose letter is in
    that sub-alphabet, so the first foreign letter bounds it without any relativization.
    """

    def __init__(self, budget: int):
        self.budget = budget
        self.created = 0
        self._keys = itertools.count()
        self._restrictions: Dict[Tuple[int, FrozenSet], _Dfa] = {}
        self._divisors: Dict[Tuple[int, Letter], _Divisor] = {}
        self._memo: Dict[tuple, Formula] = {}
        self._lift_memo: Dict[Tuple[int, Formula], Formula] = {}
        self._dag: Dict[Tuple[int, State], bool] = {}

    def wrap(self, dfa: FiniteWordAutomaton) -> _Dfa:
        delta = {(q, letter): dfa.delta(q, letter) for q in dfa.states for letter in dfa.alphabet}
        return _Dfa(key=next(self._keys), states=dfa.states, letters=frozenset(dfa.alphabet), delta=delta)

    def _count(self, f: Formula) -> Formula:
        self.created += 1
        if self.created > self.budget:
            raise ConversionBudgetExceeded(self.created, self.budget)
        return f

    def letters(self, letters: Iterable[Letter]) -> Formula:
        letters = frozenset(letters)
        return FALSE if not letters else self._count(_Letters(letters))

    def next_(self, f: Formula) -> Formula:
        return FALSE if isinstance(f, Bottom) else self._count(Next(f))

    def until(self, a: Formula, b: Formula) -> Formula:
        if isinstance(b, Bottom) or isinstance(a, Bottom):
            return b
        return self._count(Until(a, b))

    def restrict(self, d: _Dfa, letters: FrozenSet[Letter]) -> _Dfa:
        key = (d.key, letters)
        if key not in self._restrictions:
            self._restrictions[key] = d.restrict(letters, next(self._keys))
        return self._restrictions[key]

    def _is_dag_from(self, d: _Dfa, q: State) -> bool:
        key = (d.key, q)
        if key not in self._dag:
            graph = nx.DiGraph()
            graph.add_node(q)
            for s in nx.descendants(self._graph(d), q) | {q}:
                for letter in d.letters:
                    t = d.delta[(s, letter)]
                    if t != s:
                        graph.add_edge(s, t)
            self._dag[key] = nx.is_directed_acyclic_graph(graph)
        return self._dag[key]

    @staticmethod
    def _graph(d: _Dfa) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(d.states)
        graph.add_edges_from((s, d.delta[(s, letter)]) for s in d.states for letter in d.letters)
        return graph

    def reach(self, d: _Dfa, q: State, targets: Dict[State, Formula]) -> Formula:
        key = (d.key, q, tuple(targets[s] for s in d.states))
        if key in self._memo:
            return self._memo[key]
        if self._is_dag_from(d, q):
            result = self._reach_dag(d, q, targets)
        else:
            result = self._reach_divisor(d, q, targets)
        self._memo[key] = result
        return result

    def _reach_dag(self, d: _Dfa, q: State, targets: Dict[State, Formula]) -> Formula:
        by_target: Dict[State, List[Letter]] = {}
        for letter in sorted(d.letters, key=sort_key):
            by_target.setdefault(d.delta[(q, letter)], []).append(letter)
        exits = [conj(self.letters(by_target[r]), self.next_(self.reach(d, r, targets)))
                 for r in sorted(by_target, key=sort_key) if r != q]
        return self.until(self.letters(by_target.get(q, ())), disj(targets[q], *exits))

    def _pick_letter(self, d: _Dfa) -> Letter:
        best = None
        for letter in sorted(d.letters, key=sort_key):
            image = len({d.delta[(s, letter)] for s in d.states})
            if image < len(d.states) and (best is None or image < best[0]):
                best = (image, letter)
        if best is None:
            raise NotCounterFree(self._permutation_witness(d))
        return best[1]

    @staticmethod
    def _permutation_witness(d: _Dfa):
        for letter in sorted(d.letters, key=sort_key):
            for q in d.states:
                cycle, s = 1, d.delta[(q, letter)]
                while s != q and cycle <= len(d.states):
                    s = d.delta[(s, letter)]
                    cycle += 1
                if s == q and cycle > 1:
                    return (letter,), cycle, q
        return None

    def divisor(self, d: _Dfa, c: Letter) -> _Divisor:
        key = (d.key, c)
        if key in self._divisors:
            return self._divisors[key]
        rest_letters = d.letters - {c}
        landing = tuple(sorted({d.delta[(s, c)] for s in d.states}, key=sort_key))
        seen = {landing}
        queue = deque([landing])
        while queue:
            h = queue.popleft()
            for letter in rest_letters:
                moved = tuple(d.delta[(x, letter)] for x in h)
                if moved not in seen:
                    seen.add(moved)
                    queue.append(moved)
        maps = frozenset(tuple(d.delta[(x, c)] for x in h) for h in seen)
        position = {s: i for i, s in enumerate(landing)}
        delta = {(s, f): f[position[s]] for s in landing for f in maps}
        lifted = _Dfa(key=next(self._keys), states=landing, letters=maps, delta=delta)
        result = _Divisor(letter=c, rest=self.restrict(d, rest_letters), lifted=lifted, all_maps=maps)
        self._divisors[key] = result
        logger.debug("Local divisor: %d states, letter %s, %d lifted letters", len(d.states), c, len(maps))
        return result

    def _reach_divisor(self, d: _Dfa, q: State, targets: Dict[State, Formula]) -> Formula:
        c = self._pick_letter(d)
        div = self.divisor(d, c)
        at_c = self.letters({c})
        after_c = {s: _Opaque(self.next_(self.reach(div.rest, s, targets))) for s in div.lifted.states}
        cont = {s: self.lift(div, d, self.reach(div.lifted, s, after_c)) for s in div.lifted.states}
        combined = {p: disj(targets[p], conj(at_c, cont[d.delta[(p, c)]])) for p in d.states}
        return self.reach(div.rest, q, combined)

    def lift(self, div: _Divisor, d: _Dfa, f: Formula) -> Formula:
        """Read a formula over blocks 'c-free word then c' at the c positions of the base word"""
        key = (div.lifted.key, f)
        if key in self._lift_memo:
            return self._lift_memo[key]
        at_c = self.letters({div.letter})
        free = self.letters(div.rest.letters)
        if isinstance(f, (Top, Bottom)):
            result = f
        elif isinstance(f, _Opaque):
            result = f.formula
        elif isinstance(f, And):
            result = conj(self.lift(div, d, f.left), self.lift(div, d, f.right))
        elif isinstance(f, Or):
            result = disj(self.lift(div, d, f.left), self.lift(div, d, f.right))
        elif isinstance(f, Next):
            result = self.next_(self.until(free, conj(at_c, self.lift(div, d, f.operand))))
        elif isinstance(f, Until):
            result = self.until(disj(free, conj(at_c, self.lift(div, d, f.left))),
                                conj(at_c, self.lift(div, d, f.right)))
        elif isinstance(f, _Letters):
            if f.letters >= div.all_maps:
                result = self.next_(self.until(free, at_c))
            else:
                blocks = []
                for block_map in sorted(f.letters, key=sort_key):
                    landing = [self.reach(div.rest, s, self._landing_targets(d, div, t))
                               for s, t in zip(div.lifted.states, block_map)]
                    blocks.append(conj(*landing))
                result = self.next_(disj(*blocks))
        else:
            raise TypeError(f"Unexpected node {f!r} in lifted formula")
        self._lift_memo[key] = result
        return result

    def _landing_targets(self, d: _Dfa, div: _Divisor, t: State) -> Dict[State, Formula]:
        at_c = self.letters({div.letter})
        return {p: at_c if d.delta[(p, div.letter)] == t else FALSE for p in d.states}


def _simplify(f: Formula) -> Formula:
    if isinstance(f, And):
        return conj(f.left, f.right)
    if isinstance(f, Or):
        return disj(f.left, f.right)
    if isinstance(f, Next) and isinstance(f.operand, Bottom):
        return FALSE
    if isinstance(f, Until):
        if isinstance(f.right, (Bottom, Top)) or isinstance(f.left, Bottom):
            return f.right
    return f


def _realize(f: Formula, props: Sequence[str]) -> Formula:
    return transform(f, lambda g: _simplify(letter_formula(g.letters, props) if isinstance(g, _Letters) else g))


def _reach_after(dfa: FiniteWordAutomaton, props: Sequence[str], budget: int, anchor: Formula) -> Formula:
    """Some non-empty prefix ends in an accepting state at a position where anchor holds"""
    if not dfa.deterministic:
        raise ValueError("Reach formulas need a deterministic automaton")
    builder = _ReachBuilder(budget)
    d = builder.wrap(dfa)
    targets = {}
    for s in d.states:
        into = [letter for letter in dfa.alphabet if dfa.delta(s, letter) in dfa.accepting]
        targets[s] = conj(builder.letters(into), anchor)
    result = _realize(builder.reach(d, dfa.initial, targets), props)
    nodes = size(result)
    if nodes > budget:
        raise ConversionBudgetExceeded(nodes, budget)
    logger.debug("Reach formula for %d-state DFA: %d nodes", len(dfa.states), nodes)
    return result


def reach_formula(dfa: FiniteWordAutomaton, props: Sequence[str], budget: int = 50000) -> Formula:
    """Positive co-safe formula: some non-empty prefix is accepted"""
    return _reach_after(dfa, sorted(props), budget, TRUE)


def dfa_to_ltlf(dfa: FiniteWordAutomaton, props: Sequence[str], budget: int = 50000) -> Formula:
    """LTLf formula for the non-empty words of a counter-free DFA"""
    return _reach_after(dfa, sorted(props), budget, WeakNext(FALSE))


def existential_path_formula(skeleton: Formula, settings: Optional[Settings] = None) -> Formula:
    """Positive X/U formula with the same finite-path witnesses as the skeleton"""
    settings = settings or get_settings()
    props = sorted(props_of(skeleton))
    dfa = minimize_dfa(determinize(ltlf_to_nfa(skeleton, props)))
    return reach_formula(dfa, props, settings.conversion_budget)


def _mirror(f: Formula) -> Formula:
    def rule(g: Formula) -> Formula:
        if isinstance(g, WeakNext) and isinstance(g.operand, Bottom):
            return ROOT
        if isinstance(g, Next):
            return Yesterday(g.operand)
        if isinstance(g, Until):
            return Since(g.left, g.right)
        return g

    return transform(f, rule)


def pastify(psi: Formula, settings: Optional[Settings] = None) -> Formula:
    """F theta for CosafeLtl, G theta for SafeLtl, theta pure past"""
    settings = settings or get_settings()
    if check_fragment(psi, Fragment.COSAFE_LTL):
        props = sorted(props_of(psi))
        good = ltlf_to_nfa(_strengthen(psi), props)
        mirrored = minimize_dfa(reverse(good))
        theta = _mirror(dfa_to_ltlf(mirrored, props, settings.conversion_budget))
        return Eventually(theta)
    if check_fragment(psi, Fragment.SAFE_LTL):
        bad = pastify(to_nnf(Not(psi)), settings)
        return Globally(Not(bad.operand))
    raise NotInFragment(f"{Fragment.SAFE_LTL.value} or {Fragment.COSAFE_LTL.value}", str(psi))


def _positions_check(phi: Formula) -> None:
    for f in subformulas(phi):
        if not isinstance(f, (Top, Bottom, Prop, Not, And, Or, Next, WeakNext, Until, Release,
                              WeakUntil, Eventually, Globally, Yesterday, Since)):
            raise NotInFragment("word-level LTL", str(f))


def evaluate_finite(phi: Formula, word: Sequence[FrozenSet[str]], i: int = 0, weak_next: bool = False) -> bool:
    """LTL with past on a non-empty finite word; weak_next reads every X as wX"""
    _positions_check(phi)
    n = len(word)
    if n == 0:
        raise ValueError("Finite-word semantics needs a non-empty word")
    values: Dict[Formula, np.ndarray] = {}
    for f in subformulas(phi):
        v = np.zeros(n, dtype=bool)
        if isinstance(f, Top):
            v[:] = True
        elif isinstance(f, Prop):
            v = np.array([f.name in letter for letter in word], dtype=bool)
        elif isinstance(f, Not):
            v = ~values[f.operand]
        elif isinstance(f, And):
            v = values[f.left] & values[f.right]
        elif isinstance(f, Or):
            v = values[f.left] | values[f.right]
        elif isinstance(f, (Next, WeakNext)):
            a = values[f.operand]
            v[:-1] = a[1:]
            v[-1] = isinstance(f, WeakNext) or weak_next
        elif isinstance(f, (Until, Eventually)):
            a = values[f.left] if isinstance(f, Until) else np.ones(n, dtype=bool)
            b = values[f.right] if isinstance(f, Until) else values[f.operand]
            later = False
            for k in reversed(range(n)):
                later = bool(b[k] or (a[k] and later))
                v[k] = later
        elif isinstance(f, (Release, Globally, WeakUntil)):
            if isinstance(f, Release):
                a, b = values[f.left], values[f.right]
            elif isinstance(f, Globally):
                a, b = np.zeros(n, dtype=bool), values[f.operand]
            else:
                a, b = values[f.right], values[f.left] | values[f.right]
            later = True
            for k in reversed(range(n)):
                later = bool(b[k] and (a[k] or later))
                v[k] = later
        elif isinstance(f, Yesterday):
            v[1:] = values[f.operand][:-1]
        elif isinstance(f, Since):
            a, b = values[f.left], values[f.right]
            earlier = False
            for k in range(n):
                earlier = bool(b[k] or (a[k] and earlier))
                v[k] = earlier
        values[f] = v
    return bool(values[phi][i])


def evaluate_lasso(phi: Formula, prefix: Sequence[FrozenSet[str]], loop: Sequence[FrozenSet[str]], i: int = 0) -> bool:
    """Future LTL on the infinite word prefix·loop^ω"""
    _positions_check(phi)
    if any(isinstance(f, (Yesterday, Since)) for f in subformulas(phi)):
        raise NotInFragment(Fragment.LTL.value, str(phi))
    if not loop:
        raise ValueError("Lasso needs a non-empty loop")
    word = list(prefix) + list(loop)
    n = len(word)
    succ = np.array([k + 1 if k + 1 < n else len(prefix) for k in range(n)])
    values: Dict[Formula, np.ndarray] = {}

    def fixpoint(a: np.ndarray, b: np.ndarray, greatest: bool) -> np.ndarray:
        v = np.full(n, greatest)
        while True:
            updated = (b & (a | v[succ])) if greatest else (b | (a & v[succ]))
            if np.array_equal(updated, v):
                return v
            v = updated

    for f in subformulas(phi):
        if isinstance(f, Top):
            v = np.ones(n, dtype=bool)
        elif isinstance(f, Bottom):
            v = np.zeros(n, dtype=bool)
        elif isinstance(f, Prop):
            v = np.array([f.name in letter for letter in word], dtype=bool)
        elif isinstance(f, Not):
            v = ~values[f.operand]
        elif isinstance(f, And):
            v = values[f.left] & values[f.right]
        elif isinstance(f, Or):
            v = values[f.left] | values[f.right]
        elif isinstance(f, (Next, WeakNext)):
            v = values[f.operand][succ]
        elif isinstance(f, Until):
            v = fixpoint(values[f.left], values[f.right], greatest=False)
        elif isinstance(f, Eventually):
            v = fixpoint(np.ones(n, dtype=bool), values[f.operand], greatest=False)
        elif isinstance(f, Release):
            v = fixpoint(values[f.left], values[f.right], greatest=True)
        elif isinstance(f, Globally):
            v = fixpoint(np.zeros(n, dtype=bool), values[f.operand], greatest=True)
        else:
            a, b = values[f.left], values[f.right]
            v = fixpoint(b, a | b, greatest=True)
        values[f] = v
    return bool(values[phi][i])


def lassos(letters: Sequence[Letter], max_len: int):
    """Every (prefix, loop) with a non-empty loop and total length at most max_len"""
    for total in range(1, max_len + 1):
        for split in range(total):
            for word in itertools.product(letters, repeat=total):
                yield word[:split], word[split:]


def bounded_formula_equiv(phi: Formula, psi: Formula, props: Optional[Iterable[str]] = None,
                          max_len: int = 4) -> Tuple[bool, Optional[tuple]]:
    props = sorted(props_of(phi) | props_of(psi) | frozenset(props or ()))
    for prefix, loop in lassos(valuations(props), max_len):
        if evaluate_lasso(phi, prefix, loop) != evaluate_lasso(psi, prefix, loop):
            return False, (prefix, loop)
    return True, None


def _letter_text(letter: Letter) -> str:
    if isinstance(letter, frozenset):
        return "{" + ",".join(sorted(letter)) + "}"
    return str(letter)


WORD_AUTOMATON_GRAMMAR = r"""
    start: _NL? header* transition*
    ?header: states_line | alphabet_line | init_line | mode_line | accepting_line
    states_line: _STATES ID* _NL
    alphabet_line: _ALPHABET letter* _NL
    init_line: _INIT ID _NL
    mode_line: _MODE MODE _NL
    accepting_line: _ACCEPTING ID* _NL
    transition: ID "--" letter "-->" ID _NL
    letter: "{" [ID ("," ID)*] "}"

    _STATES.2: "states:"
    _ALPHABET.2: "alphabet:"
    _INIT.2: "init:"
    _MODE.2: "mode:"
    _ACCEPTING.2: "accepting:"
    MODE: "nfa" | "dfa" | "uba" | "nca" | "nba"
    ID: /[A-Za-z0-9_]+/
    COMMENT: /#[^\n]*/
    _NL: (/\r?\n[\t ]*/ | COMMENT)+

    %import common.WS_INLINE
    %ignore WS_INLINE
    %ignore COMMENT
"""


@v_args(inline=True)
class _WordAutomatonBuilder(Transformer):
    def letter(self, *names):
        return frozenset(str(n) for n in names if n is not None)

    def states_line(self, *names):
        return ('states', [str(n) for n in names])

    def alphabet_line(self, *letters):
        return ('alphabet', list(letters))

    def init_line(self, name):
        return ('init', str(name))

    def mode_line(self, mode):
        return ('mode', str(mode))

    def accepting_line(self, *names):
        return ('accepting', [str(n) for n in names])

    def transition(self, source, letter, target):
        return ('transition', (str(source), letter, str(target)))

    def start(self, *items):
        fields = {'states': [], 'alphabet': [], 'accepting': [], 'mode': 'nfa', 'init': None}
        transitions: Dict[Tuple[State, Letter], set] = {}
        for kind, value in items:
            if kind == 'transition':
                source, letter, target = value
                transitions.setdefault((source, letter), set()).add(target)
            else:
                fields[kind] = value
        common = dict(states=tuple(fields['states']), alphabet=tuple(fields['alphabet']),
                      transitions=transitions, initial=fields['init'], accepting=frozenset(fields['accepting']))
        if fields['mode'] in ('nfa', 'dfa'):
            return FiniteWordAutomaton(deterministic=fields['mode'] == 'dfa', **common)
        return OmegaWordAutomaton(mode=fields['mode'], **common)


_word_automaton_parser = Lark(WORD_AUTOMATON_GRAMMAR, parser='lalr')


def parse_word_automaton(text: str) -> FiniteWordAutomaton:
    try:
        tree = _word_automaton_parser.parse(text if text.endswith("\n") else text + "\n")
    except UnexpectedInput as e:
        raise ParseError("unexpected input in word automaton", e.line, e.column) from e
    try:
        return _WordAutomatonBuilder().transform(tree)
    except Exception as e:
        cause = e.orig_exc if hasattr(e, 'orig_exc') else e
        raise ParseError(f"inconsistent word automaton: {cause}") from e


def serialize_word_automaton(a: FiniteWordAutomaton) -> str:
    if isinstance(a, OmegaWordAutomaton):
        mode = a.mode
    else:
        mode = 'dfa' if a.deterministic else 'nfa'
    lines = [
        f"states: {' '.join(str(q) for q in a.states)}",
        f"alphabet: {' '.join(_letter_text(letter) for letter in a.alphabet)}",
        f"init: {a.initial}",
        f"mode: {mode}",
        f"accepting: {' '.join(str(q) for q in a.states if q in a.accepting)}".rstrip(),
    ]
    for q in a.states:
        for letter in a.alphabet:
            for t in sorted(a.successors(q, letter), key=sort_key):
                lines.append(f"{q} --{_letter_text(letter)}--> {t}")
    return "\n".join(lines) + "\n"
