import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from lark import Lark, Transformer, UnexpectedInput, v_args

from src.config import Settings, get_settings
from src.errors import AlphabetMismatch, ParseError, SubclassViolation, TransientComponent
from src.regular_tree import RegularTree, random_tree, unfold
from src.semantics import (
    BoundedVerdict,
    kleene_and,
    kleene_at_least,
    kleene_not,
    kleene_or,
    successor_counts,
)
from src.word_automata import OmegaWordAutomaton, is_counter_free, sort_key, valuations

logger = logging.getLogger(__name__)


class Modality(Enum):
    DIAMOND = "<>"
    BOX = "#"
    UP = "up"


@dataclass(frozen=True)
class Atom:
    """(⋄_k, q), (□_k, q) or (up, q)"""
    modality: Modality
    k: int
    state: str

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"Atom grade must be at least 1, got {self.k}")
        if self.modality is Modality.UP and self.k != 1:
            raise ValueError("Upward atoms carry no grade")

    def __lt__(self, other: 'Atom') -> bool:
        return (self.state, self.modality.value, self.k) < (other.state, other.modality.value, other.k)

    def __str__(self) -> str:
        if self.modality is Modality.UP:
            return f"(up {self.state})"
        return f"({self.modality.value} {self.k} {self.state})"


def diamond(state: str, k: int = 1) -> Atom:
    return Atom(Modality.DIAMOND, k, state)


def box(state: str, k: int = 1) -> Atom:
    return Atom(Modality.BOX, k, state)


def up(state: str) -> Atom:
    return Atom(Modality.UP, 1, state)


class Pbf:
    """Positive Boolean formula over atoms"""

    def __str__(self) -> str:
        return print_pbf(self)


@dataclass(frozen=True)
class PTrue(Pbf):
    pass


@dataclass(frozen=True)
class PFalse(Pbf):
    pass


@dataclass(frozen=True)
class AtomRef(Pbf):
    atom: Atom


@dataclass(frozen=True)
class POr(Pbf):
    left: Pbf
    right: Pbf


@dataclass(frozen=True)
class PAnd(Pbf):
    left: Pbf
    right: Pbf


P_TRUE = PTrue()
P_FALSE = PFalse()


def pconj(*parts: Pbf) -> Pbf:
    result: Optional[Pbf] = None
    for part in parts:
        if isinstance(part, PFalse):
            return P_FALSE
        if isinstance(part, PTrue) or part == result:
            continue
        result = part if result is None else PAnd(result, part)
    return P_TRUE if result is None else result


def pdisj(*parts: Pbf) -> Pbf:
    result: Optional[Pbf] = None
    for part in parts:
        if isinstance(part, PTrue):
            return P_TRUE
        if isinstance(part, PFalse) or part == result:
            continue
        result = part if result is None else POr(result, part)
    return P_FALSE if result is None else result


def atom(a: Atom) -> Pbf:
    return AtomRef(a)


def pbf_atoms(theta: Pbf) -> FrozenSet[Atom]:
    if isinstance(theta, AtomRef):
        return frozenset({theta.atom})
    if isinstance(theta, (POr, PAnd)):
        return pbf_atoms(theta.left) | pbf_atoms(theta.right)
    return frozenset()


Clause = FrozenSet[Atom]


def _minimal(clauses: Iterable[Clause]) -> List[Clause]:
    ordered = sorted(set(clauses), key=lambda c: (len(c), sorted(c)))
    kept: List[Clause] = []
    for c in ordered:
        if not any(k <= c for k in kept):
            kept.append(c)
    return kept


def dnf(theta: Pbf) -> List[Clause]:
    """Clauses as atom sets; [] is false and [frozenset()] is true"""
    if isinstance(theta, PTrue):
        return [frozenset()]
    if isinstance(theta, PFalse):
        return []
    if isinstance(theta, AtomRef):
        return [frozenset({theta.atom})]
    if isinstance(theta, POr):
        return _minimal(dnf(theta.left) + dnf(theta.right))
    return _minimal(a | b for a in dnf(theta.left) for b in dnf(theta.right))


def cnf(theta: Pbf) -> List[Clause]:
    """Dual of dnf: [] is true and [frozenset()] is false"""
    return dnf(_swap(theta))


def _swap(theta: Pbf) -> Pbf:
    if isinstance(theta, PTrue):
        return P_FALSE
    if isinstance(theta, PFalse):
        return P_TRUE
    if isinstance(theta, POr):
        return PAnd(_swap(theta.left), _swap(theta.right))
    if isinstance(theta, PAnd):
        return POr(_swap(theta.left), _swap(theta.right))
    return theta


def evaluate_pbf(theta: Pbf, value: Callable[[Atom], bool]) -> bool:
    if isinstance(theta, PTrue):
        return True
    if isinstance(theta, PFalse):
        return False
    if isinstance(theta, AtomRef):
        return bool(value(theta.atom))
    if isinstance(theta, POr):
        return evaluate_pbf(theta.left, value) or evaluate_pbf(theta.right, value)
    return evaluate_pbf(theta.left, value) and evaluate_pbf(theta.right, value)


def substitute_atom(theta: Pbf, target: Atom, replacement: Pbf) -> Pbf:
    if isinstance(theta, AtomRef):
        return replacement if theta.atom == target else theta
    if isinstance(theta, POr):
        return pdisj(substitute_atom(theta.left, target, replacement), substitute_atom(theta.right, target, replacement))
    if isinstance(theta, PAnd):
        return pconj(substitute_atom(theta.left, target, replacement), substitute_atom(theta.right, target, replacement))
    return theta


def map_atoms(theta: Pbf, rule: Callable[[Atom], Pbf]) -> Pbf:
    if isinstance(theta, AtomRef):
        return rule(theta.atom)
    if isinstance(theta, POr):
        return pdisj(map_atoms(theta.left, rule), map_atoms(theta.right, rule))
    if isinstance(theta, PAnd):
        return pconj(map_atoms(theta.left, rule), map_atoms(theta.right, rule))
    return theta


class ComponentType(Enum):
    TRANSIENT = "transient"
    EXISTENTIAL = "existential"
    UNIVERSAL = "universal"
    UPWARD = "upward"


@dataclass(frozen=True)
class Component:
    name: str
    states: FrozenSet[str]
    kind: ComponentType


Letter = FrozenSet[str]
TransitionKey = Tuple[str, Letter, Optional[bool]]


@dataclass(frozen=True)
class GradedTreeAutomaton:
    """Graded alternating tree automaton with a component partition

    transitions map (state, letter, at_root) to a positive Boolean formula; at_root None
    applies everywhere, True/False override it at and below the root in two-way automata.
    order holds (lower, upper) component name pairs.
    """
    ap: FrozenSet[str]
    states: Tuple[str, ...]
    initial: Union[str, Pbf]
    transitions: Dict[TransitionKey, Pbf]
    priority: Dict[str, int]
    components: Tuple[Component, ...]
    order: FrozenSet[Tuple[str, str]] = frozenset()
    two_way: bool = False
    certificates: FrozenSet[FrozenSet[Atom]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'ap', frozenset(self.ap))
        object.__setattr__(self, 'states', tuple(sorted(set(self.states))))
        object.__setattr__(self, 'order', frozenset(self.order))
        object.__setattr__(self, 'certificates', frozenset(frozenset(c) for c in self.certificates))
        if isinstance(self.initial, str) and self.initial not in self.states:
            raise ValueError(f"Initial state {self.initial} is not declared")

    @property
    def letters(self) -> Tuple[Letter, ...]:
        return valuations(self.ap)

    def delta(self, q: str, letter: Letter, at_root: Optional[bool] = None) -> Pbf:
        letter = frozenset(letter)
        if at_root is not None and (q, letter, at_root) in self.transitions:
            return self.transitions[(q, letter, at_root)]
        return self.transitions.get((q, letter, None), P_FALSE)

    def component_of(self, q: str) -> Component:
        for component in self.components:
            if q in component.states:
                return component
        raise KeyError(q)

    def component(self, name: str) -> Component:
        for component in self.components:
            if component.name == name:
                return component
        raise KeyError(name)

    def order_graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(c.name for c in self.components)
        graph.add_edges_from(self.order)
        return graph

    def is_lower(self, lower: str, upper: str) -> bool:
        return lower != upper and nx.has_path(self.order_graph(), lower, upper)

    def bottom_up(self) -> List[Component]:
        """Components with every component after all components below it"""
        names = list(nx.lexicographical_topological_sort(self.order_graph()))
        return [self.component(name) for name in names]

    def keys_for(self, q: str) -> List[TransitionKey]:
        return sorted((k for k in self.transitions if k[0] == q), key=lambda k: (sort_key(k[1]), str(k[2])))


class Subclass(Enum):
    GTA = "GTA"
    WGT = "WGT"
    HWGT = "HWGT"
    HWGT2 = "2HWGT"
    HLGT = "HLGT"
    HLGT2 = "2HLGT"


_TWO_WAY = (Subclass.HWGT2, Subclass.HLGT2)
_HESITANT = (Subclass.HWGT, Subclass.HWGT2, Subclass.HLGT, Subclass.HLGT2)
_LINEAR = (Subclass.HLGT, Subclass.HLGT2)


def validate_subclass(a: GradedTreeAutomaton, target: Union[Subclass, str]) -> None:
    target = Subclass(target) if isinstance(target, str) else target
    diagnostics = subclass_diagnostics(a, target)
    if diagnostics:
        raise SubclassViolation(target.value, diagnostics)


def subclass_diagnostics(a: GradedTreeAutomaton, target: Subclass) -> List[str]:
    diagnostics: List[str] = []
    declared = set(a.states)
    owner: Dict[str, str] = {}
    for component in a.components:
        for q in component.states:
            if q in owner:
                diagnostics.append(f"state {q} belongs to components {owner[q]} and {component.name}")
            owner[q] = component.name
    for q in sorted(declared - set(owner)):
        diagnostics.append(f"state {q} belongs to no component")
    for q in a.states:
        if q not in a.priority:
            diagnostics.append(f"state {q} has no priority")
    if not nx.is_directed_acyclic_graph(a.order_graph()):
        diagnostics.append("component order has a cycle")
        return diagnostics
    initial_atoms = pbf_atoms(a.initial) if isinstance(a.initial, Pbf) else frozenset()
    for atom_ in initial_atoms:
        if atom_.state not in declared:
            diagnostics.append(f"initial condition references undeclared state {atom_.state}")
    two_way = target in _TWO_WAY or target in (Subclass.GTA, Subclass.WGT) and a.two_way
    for (q, letter, at_root), theta in sorted(a.transitions.items(), key=lambda kv: (kv[0][0], sort_key(kv[0][1]), str(kv[0][2]))):
        where = f"δ({q}, {{{','.join(sorted(letter))}}}{'' if at_root is None else ', root' if at_root else ', nonroot'})"
        if q not in declared:
            diagnostics.append(f"{where}: undeclared source state")
            continue
        if not letter <= a.ap:
            diagnostics.append(f"{where}: letter outside the alphabet")
        if at_root is not None and not two_way:
            diagnostics.append(f"{where}: root flags need a two-way automaton")
        for atom_ in pbf_atoms(theta):
            if atom_.state not in declared:
                diagnostics.append(f"{where}: atom {atom_} references an undeclared state")
                continue
            if atom_.modality is Modality.UP and not two_way:
                diagnostics.append(f"{where}: upward atom {atom_} in a one-way automaton")
            if q in owner and atom_.state in owner and owner[q] != owner[atom_.state] \
                    and not a.is_lower(owner[atom_.state], owner[q]):
                diagnostics.append(f"{where}: atom {atom_} reaches component {owner[atom_.state]} "
                                   f"which is not below {owner[q]}")
    if target is Subclass.GTA:
        return diagnostics
    for component in a.components:
        parities = {a.priority.get(q, 0) % 2 for q in component.states}
        if len(parities) > 1:
            diagnostics.append(f"component {component.name} mixes even and odd priorities")
    if target in _HESITANT:
        for component in a.components:
            diagnostics.extend(_hesitant_diagnostics(a, component, two_way))
    if target in _LINEAR:
        for component in a.components:
            if len(component.states) != 1:
                diagnostics.append(f"component {component.name} is not a singleton")
    return diagnostics


def _hesitant_diagnostics(a: GradedTreeAutomaton, component: Component, two_way: bool) -> List[str]:
    diagnostics = []
    kind = component.kind
    if kind is ComponentType.UPWARD and not two_way:
        diagnostics.append(f"component {component.name}: upward components need a two-way automaton")
    for q in sorted(component.states):
        parity = a.priority.get(q, 0) % 2
        if kind is ComponentType.EXISTENTIAL and parity != 1:
            diagnostics.append(f"component {component.name}: existential state {q} needs an odd priority")
        if kind is ComponentType.UNIVERSAL and parity != 0:
            diagnostics.append(f"component {component.name}: universal state {q} needs an even priority")
        for key in a.keys_for(q):
            theta = a.transitions[key]
            where = f"δ({q}, {{{','.join(sorted(key[1]))}}})"
            inside = [x for x in pbf_atoms(theta) if x.state in component.states]
            if kind is ComponentType.TRANSIENT:
                if inside:
                    diagnostics.append(f"{where}: transient component {component.name} uses same-component "
                                       f"atom {inside[0]}")
                continue
            expected = {ComponentType.EXISTENTIAL: Modality.DIAMOND, ComponentType.UNIVERSAL: Modality.BOX,
                        ComponentType.UPWARD: Modality.UP}[kind]
            for x in inside:
                if x.modality is not expected:
                    diagnostics.append(f"{where}: {kind.value} component {component.name} uses {x}, "
                                       f"expected modality {expected.value}")
                elif x.k != 1:
                    diagnostics.append(f"{where}: same-component atom {x} must have grade 1")
            clauses = cnf(theta) if kind is ComponentType.UNIVERSAL else dnf(theta)
            joiner = "disjunctively" if kind is ComponentType.UNIVERSAL else "conjunctively"
            for clause in clauses:
                same = [x for x in clause if x.state in component.states]
                if len(same) > 1:
                    diagnostics.append(f"{where}: same-component atoms {', '.join(map(str, sorted(same)))} "
                                       f"are {joiner} related")
    return diagnostics


def _node_letters(t: RegularTree) -> Dict[Letter, np.ndarray]:
    groups: Dict[Letter, np.ndarray] = {}
    for i, node in enumerate(t.nodes):
        letter = t.labels[node]
        groups.setdefault(letter, np.zeros(len(t.nodes), dtype=bool))[i] = True
    return groups


def winning_sets(a: GradedTreeAutomaton, t: RegularTree) -> Dict[str, np.ndarray]:
    """Per state, the tree nodes whose subtree A^q accepts (one-way weak automata)"""
    if not t.ap <= a.ap:
        raise AlphabetMismatch(a.ap, t.ap)
    src, dst = t.edge_arrays()
    n = len(t.nodes)
    groups = _node_letters(t)
    win: Dict[str, np.ndarray] = {}
    for component in a.bottom_up():
        even = all(a.priority[q] % 2 == 0 for q in component.states)
        # even components iterate down from all nodes, odd ones up from none
        current = {q: np.full(n, even) for q in component.states}
        rounds = 0
        while True:
            lookup = {**win, **current}
            atoms: Dict[Atom, np.ndarray] = {}

            def value(x: Atom) -> np.ndarray:
                if x not in atoms:
                    atoms[x] = _atom_array(x, lookup[x.state], src, dst, n)
                return atoms[x]

            updated = {}
            for q in component.states:
                result = np.zeros(n, dtype=bool)
                for letter, mask in groups.items():
                    result |= mask & _eval_array(a.delta(q, letter), value, n)
                updated[q] = result
            rounds += 1
            if all(np.array_equal(updated[q], current[q]) for q in component.states):
                break
            current = updated
        win.update(current)
        logger.debug("Component %s settled after %d rounds", component.name, rounds)
    return win


def _atom_array(x: Atom, target: np.ndarray, src: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    if x.modality is Modality.DIAMOND:
        return successor_counts(src, dst, target, n) >= x.k
    if x.modality is Modality.BOX:
        # fewer than k children reject
        return successor_counts(src, dst, ~target, n) <= x.k - 1
    raise ValueError(f"Upward atom {x} in a one-way evaluation")


def _eval_array(theta: Pbf, value: Callable[[Atom], np.ndarray], n: int) -> np.ndarray:
    if isinstance(theta, PTrue):
        return np.ones(n, dtype=bool)
    if isinstance(theta, PFalse):
        return np.zeros(n, dtype=bool)
    if isinstance(theta, AtomRef):
        return value(theta.atom)
    if isinstance(theta, POr):
        return _eval_array(theta.left, value, n) | _eval_array(theta.right, value, n)
    return _eval_array(theta.left, value, n) & _eval_array(theta.right, value, n)


def atom_holds_at_root(a: GradedTreeAutomaton, t: RegularTree, x: Atom,
                       win: Optional[Dict[str, np.ndarray]] = None) -> bool:
    win = win if win is not None else winning_sets(a, t)
    src, dst = t.edge_arrays()
    return bool(_atom_array(x, win[x.state], src, dst, len(t.nodes))[t.index()[t.root]])


def accept_hwgt(a: GradedTreeAutomaton, t: RegularTree) -> bool:
    validate_subclass(a, Subclass.HWGT)
    win = winning_sets(a, t)
    root = t.index()[t.root]
    if isinstance(a.initial, str):
        return bool(win[a.initial][root])
    src, dst = t.edge_arrays()
    n = len(t.nodes)
    value = lambda x: _atom_array(x, win[x.state], src, dst, n)
    return bool(_eval_array(a.initial, value, n)[root])


def accept_2hlgt(a: GradedTreeAutomaton, t: RegularTree) -> bool:
    """Acceptance defined through the translation to polarized CTL with past"""
    from src.semantics import mc_polcctlp
    from src.translate import hlgt2_to_polcctlp

    validate_subclass(a, Subclass.HLGT2)
    return mc_polcctlp(t, hlgt2_to_polcctlp(a)).holds


def accept_2hlgt_bounded(a: GradedTreeAutomaton, t: RegularTree, depth: int) -> BoundedVerdict:
    """Direct membership game on the unfolding cut at depth (Kleene three-valued)"""
    validate_subclass(a, Subclass.HLGT2)
    if not t.ap <= a.ap:
        raise AlphabetMismatch(a.ap, t.ap)
    truncated = unfold(t, depth)
    memo: Dict[Tuple[str, Tuple[str, ...]], Optional[bool]] = {}

    def state_value(q: str, key: Tuple[str, ...]) -> Optional[bool]:
        if (q, key) not in memo:
            theta = a.delta(q, truncated.label(key), at_root=not key)
            memo[(q, key)] = _kleene_pbf(theta, lambda x: atom_value(x, key))
        return memo[(q, key)]

    def atom_value(x: Atom, key: Tuple[str, ...]) -> Optional[bool]:
        if x.modality is Modality.UP:
            return False if not key else state_value(x.state, key[:-1])
        node = truncated.nodes[key]
        if node.cut:
            return None
        values = [state_value(x.state, child) for child in node.children]
        if x.modality is Modality.DIAMOND:
            return kleene_at_least(values, x.k)
        return kleene_not(kleene_at_least([kleene_not(v) for v in values], x.k))

    if isinstance(a.initial, str):
        value = state_value(a.initial, ())
    else:
        value = _kleene_pbf(a.initial, lambda x: atom_value(x, ()))
    return BoundedVerdict.from_value(value, depth)


def _kleene_pbf(theta: Pbf, value: Callable[[Atom], Optional[bool]]) -> Optional[bool]:
    if isinstance(theta, PTrue):
        return True
    if isinstance(theta, PFalse):
        return False
    if isinstance(theta, AtomRef):
        return value(theta.atom)
    left = _kleene_pbf(theta.left, value)
    if isinstance(theta, POr):
        return True if left is True else kleene_or(left, _kleene_pbf(theta.right, value))
    return False if left is False else kleene_and(left, _kleene_pbf(theta.right, value))


EXIT = "__exit"


@dataclass(frozen=True)
class LinearizedComponent:
    """Word automaton reading tree letters extended with one proposition per lower part"""
    component: str
    state: str
    automaton: OmegaWordAutomaton
    exit_state: str
    lower_parts: Tuple[FrozenSet[Atom], ...]
    annotations: Dict[str, FrozenSet[Atom]]


def lower_parts(a: GradedTreeAutomaton, component: Component) -> Tuple[FrozenSet[Atom], ...]:
    """Non-empty lower parts of the normal-form clauses, or the single empty part"""
    parts = set()
    for q in component.states:
        for key in a.keys_for(q):
            theta = a.transitions[key]
            clauses = cnf(theta) if component.kind is ComponentType.UNIVERSAL else dnf(theta)
            for clause in clauses:
                lower = frozenset(x for x in clause if x.state not in component.states)
                if lower:
                    parts.add(lower)
    if not parts:
        return (frozenset(),)
    return tuple(sorted(parts, key=lambda c: (len(c), sorted(c))))


def _consistent(a: GradedTreeAutomaton, names: Dict[FrozenSet[Atom], str], satisfied: FrozenSet[str],
                universal: bool) -> bool:
    """False when certified complement atoms would have to agree under the annotation"""
    relevant = [(part, name in satisfied) for part, name in names.items()]
    for i, (c1, v1) in enumerate(relevant):
        for c2, v2 in relevant[i + 1:]:
            if v1 == v2 == (not universal) and any(frozenset({x, y}) in a.certificates for x in c1 for y in c2):
                return False
    return True


def linearize(a: GradedTreeAutomaton, component_name: str, q: str) -> LinearizedComponent:
    component = a.component(component_name)
    if component.kind not in (ComponentType.EXISTENTIAL, ComponentType.UNIVERSAL):
        raise TransientComponent(component_name)
    if q not in component.states:
        raise ValueError(f"State {q} is not in component {component_name}")
    universal = component.kind is ComponentType.UNIVERSAL
    parts = lower_parts(a, component)
    names = {part: f"__c{i}" for i, part in enumerate(parts) if part}
    annotation_props = sorted(names.values())
    alphabet = [letter | frozenset(v) for letter in a.letters for v in valuations(annotation_props)
                if _consistent(a, names, frozenset(v), universal)]
    transitions: Dict[Tuple[str, Letter], set] = {}
    for s in component.states:
        for full in alphabet:
            letter = full & a.ap
            theta = a.delta(s, letter)
            targets = set()
            for clause in (cnf(theta) if universal else dnf(theta)):
                same = [x for x in clause if x.state in component.states]
                lower = frozenset(x for x in clause if x.state not in component.states)
                if lower:
                    satisfied = names[lower] in full
                else:
                    satisfied = not universal
                if universal:
                    if satisfied:
                        continue
                    targets.add(same[0].state if same else EXIT)
                elif satisfied:
                    targets.add(same[0].state if same else EXIT)
            transitions[(s, full)] = targets
    for full in alphabet:
        transitions[(EXIT, full)] = {EXIT}
    automaton = OmegaWordAutomaton(
        states=tuple(component.states) + (EXIT,),
        alphabet=tuple(alphabet),
        transitions=transitions,
        initial=q,
        accepting=frozenset(component.states),
        mode='uba' if universal else 'nca',
    )
    logger.debug("Linearized %s at %s: %d states, %d lower parts", component_name, q,
                 len(automaton.states), len(parts))
    return LinearizedComponent(component=component_name, state=q, automaton=automaton, exit_state=EXIT,
                               lower_parts=parts, annotations={name: part for part, name in names.items()})


@dataclass(frozen=True)
class ComponentsCounterFree:
    holds: bool
    witnesses: Dict[Tuple[str, str], tuple] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.holds


def check_counter_free_components(a: GradedTreeAutomaton) -> ComponentsCounterFree:
    witnesses = {}
    for component in a.components:
        if component.kind not in (ComponentType.EXISTENTIAL, ComponentType.UNIVERSAL):
            continue
        for q in sorted(component.states):
            freeness = is_counter_free(linearize(a, component.name, q).automaton)
            if not freeness:
                witnesses[(component.name, q)] = freeness.witness
    return ComponentsCounterFree(holds=not witnesses, witnesses=witnesses)


class Exclusion(Enum):
    CERTIFIED = "CertifiedByPairing"
    REFUTED = "RefutedWithWitness"
    UNKNOWN = "UnknownSampled"


@dataclass(frozen=True)
class MutualExclusion:
    status: Exclusion
    witness: Optional[Tuple[RegularTree, FrozenSet[Atom], FrozenSet[Atom]]] = None
    samples: int = 0
    pairings: Dict[Tuple[Atom, Atom], RegularTree] = field(default_factory=dict)


def check_mutual_exclusion(a: GradedTreeAutomaton, settings: Optional[Settings] = None) -> MutualExclusion:
    """Certificates first; uncertified pairs of lower parts are sampled for refutation"""
    settings = settings or get_settings()
    open_pairs = []
    for component in a.components:
        if component.kind not in (ComponentType.EXISTENTIAL, ComponentType.UNIVERSAL):
            continue
        parts = [p for p in lower_parts(a, component) if p]
        for i, c1 in enumerate(parts):
            for c2 in parts[i + 1:]:
                if not any(frozenset({x, y}) in a.certificates for x in c1 for y in c2):
                    open_pairs.append((c1, c2))
    if not open_pairs:
        return MutualExclusion(Exclusion.CERTIFIED)
    logger.warning("%d pairs of lower parts carry no certificate, sampling %d trees",
                   len(open_pairs), settings.samples)
    # per open pair, the first sampled tree on which each atom pairing agrees
    agreeing: Dict[Tuple[FrozenSet[Atom], FrozenSet[Atom]], Dict[Tuple[Atom, Atom], RegularTree]] = {
        pair: {} for pair in open_pairs}
    for i in range(settings.samples):
        tree = random_tree((settings.seed, i), settings.max_nodes, sorted(a.ap) or ['p'])
        win = winning_sets(a, tree)
        for (c1, c2), found in agreeing.items():
            for x in c1:
                for y in c2:
                    if (x, y) not in found and \
                            atom_holds_at_root(a, tree, x, win) == atom_holds_at_root(a, tree, y, win):
                        found[(x, y)] = tree
            if len(found) == len(c1) * len(c2):
                return MutualExclusion(Exclusion.REFUTED, (tree, c1, c2), i + 1, dict(found))
    return MutualExclusion(Exclusion.UNKNOWN, samples=settings.samples)


def _fresh(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    name = base
    while name in taken:
        name += "_"
    return name


def with_initial_condition(a: GradedTreeAutomaton, theta: Pbf) -> GradedTreeAutomaton:
    """A^θ: a fresh transient top state whose every transition is θ"""
    q = _fresh("__theta", a.states)
    name = _fresh("C_theta", [c.name for c in a.components])
    transitions = dict(a.transitions)
    for letter in a.letters:
        transitions[(q, letter, None)] = theta
    return replace(
        a,
        states=a.states + (q,),
        initial=q,
        transitions=transitions,
        priority={**a.priority, q: 0},
        components=a.components + (Component(name, frozenset({q}), ComponentType.TRANSIENT),),
        order=a.order | {(c.name, name) for c in a.components},
    )


_DUAL_TYPE = {ComponentType.EXISTENTIAL: ComponentType.UNIVERSAL, ComponentType.UNIVERSAL: ComponentType.EXISTENTIAL,
              ComponentType.TRANSIENT: ComponentType.TRANSIENT, ComponentType.UPWARD: ComponentType.UPWARD}


def _dual_atom(x: Atom) -> Atom:
    if x.modality is Modality.DIAMOND:
        return box(x.state, x.k)
    if x.modality is Modality.BOX:
        return diamond(x.state, x.k)
    return x


def _dual_pbf(theta: Pbf, at_root: Optional[bool]) -> Pbf:
    if isinstance(theta, PTrue):
        return P_FALSE
    if isinstance(theta, PFalse):
        return P_TRUE
    if isinstance(theta, POr):
        return pconj(_dual_pbf(theta.left, at_root), _dual_pbf(theta.right, at_root))
    if isinstance(theta, PAnd):
        return pdisj(_dual_pbf(theta.left, at_root), _dual_pbf(theta.right, at_root))
    if theta.atom.modality is Modality.UP and at_root:
        return P_TRUE
    return atom(_dual_atom(theta.atom))


def dual_automaton(a: GradedTreeAutomaton) -> GradedTreeAutomaton:
    """Automaton for the complement language: every state q accepts exactly what q rejected"""
    transitions: Dict[TransitionKey, Pbf] = {}
    has_up = any(x.modality is Modality.UP for theta in a.transitions.values() for x in pbf_atoms(theta))
    for (q, letter, at_root) in a.transitions:
        if has_up:
            for flag in (True, False):
                transitions[(q, letter, flag)] = _dual_pbf(a.delta(q, letter, flag), flag)
        else:
            transitions[(q, letter, at_root)] = _dual_pbf(a.transitions[(q, letter, at_root)], at_root)
    initial = a.initial if isinstance(a.initial, str) else _dual_pbf(a.initial, True)
    return replace(
        a,
        initial=initial,
        transitions=transitions,
        priority={q: p + 1 for q, p in a.priority.items()},
        components=tuple(Component(c.name, c.states, _DUAL_TYPE[c.kind]) for c in a.components),
        certificates=frozenset(frozenset(_dual_atom(x) for x in pair) for pair in a.certificates),
    )


def random_2hlgt(seed, ap: Iterable[str], max_states: int = 4, two_way: bool = True) -> GradedTreeAutomaton:
    """Random valid 2HLGT with one singleton component per state, q0 lowest"""
    rng = np.random.default_rng(seed)
    ap = sorted(ap)
    count = int(rng.integers(1, max_states + 1))
    kinds = [ComponentType.TRANSIENT, ComponentType.EXISTENTIAL, ComponentType.UNIVERSAL]
    if two_way:
        kinds.append(ComponentType.UPWARD)
    states = [f"q{i}" for i in range(count)]
    chosen = {q: kinds[int(rng.integers(0, len(kinds)))] for q in states}

    def lower_pbf(i: int, size: int) -> Pbf:
        if i == 0 or size <= 1:
            return [P_TRUE, P_FALSE][int(rng.integers(0, 2))] if i == 0 or rng.random() < 0.3 \
                else atom(_random_atom(i))
        parts = [lower_pbf(i, size - 1), lower_pbf(i, size - 1)]
        return pdisj(*parts) if rng.random() < 0.5 else pconj(*parts)

    def _random_atom(i: int) -> Atom:
        target = states[int(rng.integers(0, i))]
        choice = int(rng.integers(0, 3 if two_way else 2))
        k = int(rng.integers(1, 3))
        return [diamond(target, k), box(target, k), up(target)][choice]

    transitions: Dict[TransitionKey, Pbf] = {}
    for i, q in enumerate(states):
        for letter in valuations(ap):
            release, stay = lower_pbf(i, 2), lower_pbf(i, 2)
            kind = chosen[q]
            if kind is ComponentType.TRANSIENT:
                theta = release
            elif kind is ComponentType.EXISTENTIAL:
                theta = pdisj(release, pconj(atom(diamond(q)), stay))
            elif kind is ComponentType.UNIVERSAL:
                theta = pconj(release, pdisj(atom(box(q)), stay))
            else:
                theta = pdisj(release, pconj(atom(up(q)), stay))
            transitions[(q, letter, None)] = theta
    priority = {q: 1 if chosen[q] in (ComponentType.EXISTENTIAL, ComponentType.UPWARD) else 0 for q in states}
    components = tuple(Component(f"C{i}", frozenset({q}), chosen[q]) for i, q in enumerate(states))
    order = {(f"C{i}", f"C{j}") for i in range(count) for j in range(i + 1, count)}
    return GradedTreeAutomaton(ap=frozenset(ap), states=tuple(states), initial=states[-1], transitions=transitions,
                               priority=priority, components=components, order=frozenset(order), two_way=two_way)


TREE_AUTOMATON_GRAMMAR = r"""
    start: _NL? line*
    ?line: ap_line | state_line | order_line | type_line | init_line | way_line | cert_line | transition
    ap_line: _AP ID* _NL
    state_line: _STATES ID "priority" "=" INT "component" "=" ID _NL
    order_line: _ORDER ID "<" ID _NL
    type_line: "type" ID KIND _NL
    init_line: _INIT (ID | pbf) _NL
    way_line: _TWO_WAY BOOL _NL
    cert_line: _CERTIFICATE atom atom _NL
    transition: ID "," letter ("," FLAG)? "->" pbf _NL
    letter: "{" [ID ("," ID)*] "}"

    ?pbf: pbf_and | pbf "|" pbf_and -> p_or
    ?pbf_and: pbf_unit | pbf_and "&" pbf_unit -> p_and
    ?pbf_unit: "true" -> p_true
             | "false" -> p_false
             | atom -> p_atom
             | "(" pbf ")"
    atom: "(" "<>" INT ID ")" -> diamond_
        | "(" "#" INT ID ")" -> box_
        | "(" "up" ID ")" -> up_

    _AP.2: "ap:"
    _STATES.2: "states:"
    _ORDER.2: "order:"
    _INIT.2: "init:"
    _TWO_WAY.2: "two_way:"
    _CERTIFICATE.2: "certificate:"
    KIND: "existential" | "universal" | "transient" | "upward"
    FLAG: "root" | "nonroot"
    BOOL: "true" | "false"
    INT: /[0-9]+/
    ID: /[A-Za-z0-9_]+/
    COMMENT: /\/\/[^\n]*/
    _NL: (/\r?\n[\t ]*/ | COMMENT)+

    %import common.WS_INLINE
    %ignore WS_INLINE
    %ignore COMMENT
"""


@v_args(inline=True)
class _TreeAutomatonBuilder(Transformer):
    def letter(self, *names):
        return frozenset(str(n) for n in names if n is not None)

    def p_true(self):
        return P_TRUE

    def p_false(self):
        return P_FALSE

    def p_atom(self, x):
        return AtomRef(x)

    def p_or(self, a, b):
        return POr(a, b)

    def p_and(self, a, b):
        return PAnd(a, b)

    def diamond_(self, k, q):
        return diamond(str(q), int(k))

    def box_(self, k, q):
        return box(str(q), int(k))

    def up_(self, q):
        return up(str(q))

    def ap_line(self, *names):
        return ('ap', [str(n) for n in names])

    def state_line(self, q, priority, component):
        return ('state', str(q), int(priority), str(component))

    def order_line(self, lower, upper):
        return ('order', str(lower), str(upper))

    def type_line(self, name, kind):
        return ('type', str(name), ComponentType(str(kind)))

    def init_line(self, value):
        return ('init', str(value) if not isinstance(value, Pbf) else value)

    def way_line(self, flag):
        return ('two_way', str(flag) == "true")

    def cert_line(self, x, y):
        return ('certificate', frozenset({x, y}))

    def transition(self, q, letter, *rest):
        flag = None if len(rest) == 1 else str(rest[0]) == "root"
        return ('transition', (str(q), letter, flag), rest[-1])

    def start(self, *items):
        ap, states, priority, members, kinds = [], [], {}, {}, {}
        order, certificates, transitions = set(), set(), {}
        initial, two_way = None, None
        for item in items:
            tag = item[0]
            if tag == 'ap':
                ap = item[1]
            elif tag == 'state':
                states.append(item[1])
                priority[item[1]] = item[2]
                members.setdefault(item[3], set()).add(item[1])
            elif tag == 'order':
                order.add((item[1], item[2]))
            elif tag == 'type':
                kinds[item[1]] = item[2]
            elif tag == 'init':
                initial = item[1]
            elif tag == 'two_way':
                two_way = item[1]
            elif tag == 'certificate':
                certificates.add(item[1])
            else:
                transitions[item[1]] = item[2]
        components = tuple(Component(name, frozenset(qs), kinds.get(name, ComponentType.TRANSIENT))
                           for name, qs in sorted(members.items()))
        if two_way is None:
            two_way = any(k[2] is not None for k in transitions) or any(
                x.modality is Modality.UP for theta in transitions.values() for x in pbf_atoms(theta))
        return GradedTreeAutomaton(ap=frozenset(ap), states=tuple(states), initial=initial, transitions=transitions,
                                   priority=priority, components=components, order=frozenset(order),
                                   two_way=two_way, certificates=frozenset(certificates))


_tree_automaton_parser = Lark(TREE_AUTOMATON_GRAMMAR, parser='lalr')


def parse_tree_automaton(text: str) -> GradedTreeAutomaton:
    try:
        tree = _tree_automaton_parser.parse(text if text.endswith("\n") else text + "\n")
    except UnexpectedInput as e:
        raise ParseError("unexpected input in tree automaton", e.line, e.column) from e
    try:
        return _TreeAutomatonBuilder().transform(tree)
    except Exception as e:
        cause = e.orig_exc if hasattr(e, 'orig_exc') else e
        raise ParseError(f"inconsistent tree automaton: {cause}") from e


def print_pbf(theta: Pbf) -> str:
    if isinstance(theta, PTrue):
        return "true"
    if isinstance(theta, PFalse):
        return "false"
    if isinstance(theta, AtomRef):
        return str(theta.atom)
    op = "|" if isinstance(theta, POr) else "&"
    return f"({print_pbf(theta.left)} {op} {print_pbf(theta.right)})"


def serialize_tree_automaton(a: GradedTreeAutomaton) -> str:
    lines = [f"ap: {' '.join(sorted(a.ap))}".rstrip()]
    for component in sorted(a.components, key=lambda c: c.name):
        for q in sorted(component.states):
            lines.append(f"states: {q} priority={a.priority[q]} component={component.name}")
        lines.append(f"type {component.name} {component.kind.value}")
    for lower, upper in sorted(a.order):
        lines.append(f"order: {lower} < {upper}")
    lines.append(f"two_way: {'true' if a.two_way else 'false'}")
    lines.append(f"init: {a.initial if isinstance(a.initial, str) else print_pbf(a.initial)}")
    for pair in sorted(a.certificates, key=lambda c: sorted(map(str, c))):
        lines.append(f"certificate: {' '.join(sorted(map(str, pair)))}")
    for q in a.states:
        for (_, letter, flag) in a.keys_for(q):
            suffix = "" if flag is None else (", root" if flag else ", nonroot")
            theta = a.transitions[(q, letter, flag)]
            lines.append(f"{q}, {{{','.join(sorted(letter))}}}{suffix} -> {print_pbf(theta)}")
    return "\n".join(lines) + "\n"
