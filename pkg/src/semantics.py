import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import Settings, get_settings
from src.errors import NotInFragment
from src.logic import (
    TRUE,
    All,
    And,
    Bottom,
    Count,
    Eventually,
    Exists,
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
    is_state_formula,
    polarized_core,
    print_formula,
    props_of,
    require_fragment,
    state_markers,
    subformulas,
    to_nnf,
)
from src.regular_tree import RegularTree, TruncatedTree, paths_from, random_tree, serialize_tree, unfold
from src.word_automata import ltlf_to_nfa

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Verdict:
    holds: bool
    counterexample: Optional[Tuple[RegularTree, str]] = None
    samples: int = 0

    def __post_init__(self):
        if self.holds and self.counterexample is not None:
            raise ValueError("A holding verdict cannot carry a counterexample")

    def __bool__(self) -> bool:
        return self.holds


class Outcome(Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class BoundedVerdict:
    """Three-valued result of a depth- or length-bounded evaluation"""
    outcome: Outcome
    bound: Optional[int] = None

    def __post_init__(self):
        if self.outcome is Outcome.UNKNOWN and self.bound is None:
            raise ValueError("Unknown verdicts must carry the exhausted bound")

    @classmethod
    def from_value(cls, value: Optional[bool], bound: int) -> 'BoundedVerdict':
        if value is None:
            return cls(Outcome.UNKNOWN, bound)
        return cls(Outcome.HOLDS if value else Outcome.FAILS)

    @property
    def decided(self) -> bool:
        return self.outcome is not Outcome.UNKNOWN

    @property
    def holds(self) -> bool:
        return self.outcome is Outcome.HOLDS

    @property
    def value(self) -> Optional[bool]:
        return self.holds if self.decided else None


def successor_counts(src: np.ndarray, dst: np.ndarray, truth: np.ndarray, n_nodes: int) -> np.ndarray:
    """Per node, the number of outgoing edges whose target satisfies truth"""
    return np.bincount(src[truth[dst]], minlength=n_nodes)


def mc_polcctlp(t: RegularTree, phi: Formula) -> Verdict:
    """Infinite-path model check at the root; past operators expand the graph by history bits"""
    core = polarized_core(phi)
    idx = t.index()
    src, dst = t.edge_arrays()
    base = np.arange(len(t.nodes))
    root = idx[t.root]
    labels = [t.labels[node] for node in t.nodes]
    values: Dict[Formula, np.ndarray] = {}

    for f in subformulas(core):
        n_nodes = len(base)
        if isinstance(f, Top):
            v = np.ones(n_nodes, dtype=bool)
        elif isinstance(f, Bottom):
            v = np.zeros(n_nodes, dtype=bool)
        elif isinstance(f, Prop):
            v = np.array([f.name in labels[b] for b in base], dtype=bool)
        elif isinstance(f, Not):
            v = ~values[f.operand]
        elif isinstance(f, Or):
            v = values[f.left] | values[f.right]
        elif isinstance(f, And):
            v = values[f.left] & values[f.right]
        elif isinstance(f, Count):
            v = successor_counts(src, dst, values[f.operand], n_nodes) >= f.n
        elif isinstance(f, Exists) and isinstance(f.operand, Next):
            v = successor_counts(src, dst, values[f.operand.operand], n_nodes) >= 1
        elif isinstance(f, Exists) and isinstance(f.operand, Until):
            a, b = values[f.operand.left], values[f.operand.right]
            v = b.copy()
            while True:
                updated = b | (a & (successor_counts(src, dst, v, n_nodes) > 0))
                if np.array_equal(updated, v):
                    break
                v = updated
        elif isinstance(f, (Yesterday, Since)):
            base, src, dst, root, parents, v = _expand(f, values, src, dst, root, base)
            values = {g: truth[parents] for g, truth in values.items()}
            logger.debug("History bit for %s: %d expanded nodes", f, len(base))
        elif isinstance(f, (Next, Until)):
            continue
        else:
            raise NotInFragment(Fragment.POL_CCTL_P.value, print_formula(f))
        values[f] = v
    return Verdict(holds=bool(values[core][root]))


def _expand(f: Formula, values: Dict[Formula, np.ndarray], src: np.ndarray, dst: np.ndarray,
            root: int, base: np.ndarray):
    """Pair every node with one deterministic bit holding the truth of f there"""
    if isinstance(f, Yesterday):
        a = values[f.operand]
        start = False
        step = lambda x, y, bit: bool(a[x])
    else:
        a, b = values[f.left], values[f.right]
        start = bool(b[root])
        step = lambda x, y, bit: bool(b[y] or (a[y] and bit))
    out: Dict[int, List[int]] = {}
    for e, x in enumerate(src):
        out.setdefault(int(x), []).append(e)
    ids = {(root, start): 0}
    order = [(root, start)]
    new_src, new_dst = [], []
    for x, bit in order:
        for e in out.get(x, []):
            y = int(dst[e])
            key = (y, step(x, y, bit))
            if key not in ids:
                ids[key] = len(order)
                order.append(key)
            new_src.append(ids[(x, bit)])
            new_dst.append(ids[key])
    parents = np.array([x for x, _ in order], dtype=np.int64)
    bits = np.array([bit for _, bit in order], dtype=bool)
    return (base[parents], np.array(new_src, dtype=np.int64), np.array(new_dst, dtype=np.int64),
            0, parents, bits)


def mc_ctlsf(t: RegularTree, phi: Formula) -> Verdict:
    """Finite-path model check: state formulas at the root, path formulas on every path from it"""
    require_fragment(phi, Fragment.CCTL_STAR_F)
    checker = _FinitePathChecker(t)
    target = phi if is_state_formula(phi) else All(phi)
    return Verdict(holds=bool(checker.label(target)[checker.idx[t.root]]))


class _FinitePathChecker:
    def __init__(self, t: RegularTree):
        self.tree = t
        self.idx = t.index()
        self.src, self.dst = t.edge_arrays()
        self.n = len(t.nodes)
        self.adjacency = np.zeros((self.n, self.n), dtype=np.int64)
        np.add.at(self.adjacency, (self.src, self.dst), 1)
        self.memo: Dict[Formula, np.ndarray] = {}

    def label(self, f: Formula) -> np.ndarray:
        if f not in self.memo:
            self.memo[f] = self._label(f)
        return self.memo[f]

    def _label(self, f: Formula) -> np.ndarray:
        if isinstance(f, Top):
            return np.ones(self.n, dtype=bool)
        if isinstance(f, Bottom):
            return np.zeros(self.n, dtype=bool)
        if isinstance(f, Prop):
            return np.array([f.name in self.tree.labels[node] for node in self.tree.nodes], dtype=bool)
        if isinstance(f, Not):
            return ~self.label(f.operand)
        if isinstance(f, Or):
            return self.label(f.left) | self.label(f.right)
        if isinstance(f, And):
            return self.label(f.left) & self.label(f.right)
        if isinstance(f, Count):
            inner = f.operand if is_state_formula(f.operand) else Exists(f.operand)
            return successor_counts(self.src, self.dst, self.label(inner), self.n) >= f.n
        if isinstance(f, Exists):
            return self._exists(f.operand)
        if isinstance(f, All):
            return ~self._exists(to_nnf(Not(f.operand)))
        raise NotInFragment(Fragment.CCTL_STAR_F.value, print_formula(f))

    def _exists(self, psi: Formula) -> np.ndarray:
        """Nodes starting a non-empty finite path that satisfies psi"""
        if is_state_formula(psi):
            return self.label(psi)
        skeleton, table = state_markers(psi)
        marks = {name: self.label(g) for name, g in table.items()}
        nfa = ltlf_to_nfa(skeleton, props=table)
        states = [q for q in nfa.states if q not in nfa.accepting]
        pos = {q: i for i, q in enumerate(states)}
        letters = [frozenset(name for name, m in marks.items() if m[v]) for v in range(self.n)]
        step = np.zeros((self.n, len(states), len(states)), dtype=bool)
        end = np.zeros((self.n, len(states)), dtype=bool)
        for v in range(self.n):
            for q in states:
                for r in nfa.successors(q, letters[v]):
                    if r in nfa.accepting:
                        end[v, pos[q]] = True
                    else:
                        step[v, pos[q], pos[r]] = True
        w = end.copy()
        while True:
            ahead = (self.adjacency @ w.astype(np.int64)) > 0
            updated = end | (step & ahead[:, None, :]).any(axis=2)
            if np.array_equal(updated, w):
                break
            w = updated
        logger.debug("E over %d nodes x %d path states", self.n, len(states))
        return w[:, pos[nfa.initial]]


def kleene_not(x: Optional[bool]) -> Optional[bool]:
    return None if x is None else not x


def kleene_or(*xs: Optional[bool]) -> Optional[bool]:
    if any(x is True for x in xs):
        return True
    return None if any(x is None for x in xs) else False


def kleene_and(*xs: Optional[bool]) -> Optional[bool]:
    if any(x is False for x in xs):
        return False
    return None if any(x is None for x in xs) else True


def kleene_at_least(values: List[Optional[bool]], n: int) -> Optional[bool]:
    definite = sum(1 for x in values if x is True)
    unknown = sum(1 for x in values if x is None)
    if definite >= n:
        return True
    if definite + unknown < n:
        return False
    return None


def brute_force_polcctlp(t: RegularTree, phi: Formula, depth: int) -> BoundedVerdict:
    """Kleene evaluation on the unfolding cut at depth; cut leaves leave futures unknown"""
    core = polarized_core(phi)
    truncated = unfold(t, depth)
    memo: Dict[Tuple[Formula, Tuple[str, ...]], Optional[bool]] = {}

    def ev(f: Formula, key: Tuple[str, ...]) -> Optional[bool]:
        memo_key = (f, key)
        if memo_key not in memo:
            memo[memo_key] = _brute_step(f, key, truncated, ev)
        return memo[memo_key]

    value = ev(core, ())
    if value is None:
        logger.warning("Oracle undecided at depth %d for %s", depth, phi)
    return BoundedVerdict.from_value(value, depth)


def _brute_step(f: Formula, key, truncated: TruncatedTree, ev) -> Optional[bool]:
    node = truncated.nodes[key]
    if isinstance(f, Top):
        return True
    if isinstance(f, Bottom):
        return False
    if isinstance(f, Prop):
        return f.name in truncated.label(key)
    if isinstance(f, Not):
        return kleene_not(ev(f.operand, key))
    if isinstance(f, Or):
        return kleene_or(ev(f.left, key), ev(f.right, key))
    if isinstance(f, And):
        return kleene_and(ev(f.left, key), ev(f.right, key))
    if isinstance(f, Yesterday):
        return False if not key else ev(f.operand, key[:-1])
    if isinstance(f, Since):
        if not key:
            return ev(f.right, key)
        return kleene_or(ev(f.right, key), kleene_and(ev(f.left, key), ev(f, key[:-1])))
    if isinstance(f, Count) or (isinstance(f, Exists) and isinstance(f.operand, Next)):
        n, operand = (f.n, f.operand) if isinstance(f, Count) else (1, f.operand.operand)
        if node.cut:
            return None
        return kleene_at_least([ev(operand, c) for c in node.children], n)
    if isinstance(f, Exists) and isinstance(f.operand, Until):
        now = ev(f.operand.right, key)
        if now is True:
            return True
        later = None if node.cut else kleene_or(*[ev(f, c) for c in node.children])
        return kleene_or(now, kleene_and(ev(f.operand.left, key), later))
    raise NotInFragment(Fragment.POL_CCTL_P.value, print_formula(f))


def horizon(psi: Formula) -> float:
    """Positions a path formula looks at beyond the current one"""
    if is_state_formula(psi):
        return 0
    if isinstance(psi, (Next, WeakNext)):
        return 1 + horizon(psi.operand)
    if isinstance(psi, (Until, Release, WeakUntil, Eventually, Globally)):
        return math.inf
    return max(horizon(k) for k in (getattr(psi, 'left', None), getattr(psi, 'right', None),
                                    getattr(psi, 'operand', None)) if k is not None)


def brute_force_ctlsf(t: RegularTree, phi: Formula, max_len: int) -> BoundedVerdict:
    """Finite-path semantics with path quantifiers enumerated over paths of at most max_len nodes"""
    require_fragment(phi, Fragment.CCTL_STAR_F)
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    oracle = _PathOracle(t, max_len)
    target = phi if is_state_formula(phi) else All(phi)
    value = oracle.state(target, t.root)
    if value is None:
        logger.warning("Path oracle undecided at length %d for %s", max_len, phi)
    return BoundedVerdict.from_value(value, max_len)


class _PathOracle:
    def __init__(self, t: RegularTree, max_len: int):
        self.tree = t
        self.max_len = max_len
        self.memo: Dict[Tuple[Formula, str], Optional[bool]] = {}
        self._paths: Dict[str, List[List[str]]] = {}

    def paths(self, node: str) -> List[List[str]]:
        if node not in self._paths:
            self._paths[node] = [p.nodes(self.tree) for length in range(self.max_len)
                                 for p in paths_from(self.tree, node, length)]
        return self._paths[node]

    def state(self, f: Formula, node: str) -> Optional[bool]:
        key = (f, node)
        if key not in self.memo:
            self.memo[key] = self._state(f, node)
        return self.memo[key]

    def _state(self, f: Formula, node: str) -> Optional[bool]:
        if isinstance(f, Top):
            return True
        if isinstance(f, Bottom):
            return False
        if isinstance(f, Prop):
            return f.name in self.tree.labels[node]
        if isinstance(f, Not):
            return kleene_not(self.state(f.operand, node))
        if isinstance(f, Or):
            return kleene_or(self.state(f.left, node), self.state(f.right, node))
        if isinstance(f, And):
            return kleene_and(self.state(f.left, node), self.state(f.right, node))
        if isinstance(f, Count):
            inner = f.operand if is_state_formula(f.operand) else Exists(f.operand)
            return kleene_at_least([self.state(inner, c) for c in self.tree.children(node)], f.n)
        if isinstance(f, (Exists, All)):
            universal = isinstance(f, All)
            complete = horizon(f.operand) + 2 <= self.max_len
            seen_unknown = False
            for path in self.paths(node):
                value = self.path(f.operand, path, 0)
                if value is None:
                    seen_unknown = True
                elif value is not universal:
                    return value
            if seen_unknown or not complete:
                return None
            return universal
        raise NotInFragment(Fragment.CCTL_STAR_F.value, print_formula(f))

    def path(self, f: Formula, path: List[str], i: int) -> Optional[bool]:
        if is_state_formula(f):
            return self.state(f, path[i])
        last = len(path) - 1
        if isinstance(f, Not):
            return kleene_not(self.path(f.operand, path, i))
        if isinstance(f, Or):
            return kleene_or(self.path(f.left, path, i), self.path(f.right, path, i))
        if isinstance(f, And):
            return kleene_and(self.path(f.left, path, i), self.path(f.right, path, i))
        if isinstance(f, Next):
            return self.path(f.operand, path, i + 1) if i < last else False
        if isinstance(f, WeakNext):
            return self.path(f.operand, path, i + 1) if i < last else True
        if isinstance(f, (Until, Eventually)):
            left = f.left if isinstance(f, Until) else TRUE
            right = f.right if isinstance(f, Until) else f.operand
            result: Optional[bool] = False
            for k in reversed(range(i, last + 1)):
                result = kleene_or(self.path(right, path, k), kleene_and(self.path(left, path, k), result))
            return result
        if isinstance(f, (Release, Globally, WeakUntil)):
            if isinstance(f, Release):
                left, right = f.left, f.right
            elif isinstance(f, Globally):
                left, right = None, f.operand
            else:
                left, right = f.right, Or(f.left, f.right)
            result = True
            for k in reversed(range(i, last + 1)):
                released = False if left is None else self.path(left, path, k)
                result = kleene_and(self.path(right, path, k), kleene_or(released, result))
            return result
        raise NotInFragment(Fragment.CCTL_STAR_F.value, print_formula(f))


def _checker_for(sem: str):
    if sem == 'infinite':
        return mc_polcctlp, Fragment.POL_CCTL_P
    if sem == 'finite':
        return mc_ctlsf, Fragment.CCTL_STAR_F
    raise ValueError(f"Unknown semantics {sem}, expected 'infinite' or 'finite'")


def check_equiv_sampled(phi: Formula, psi: Formula, sem: str, settings: Optional[Settings] = None) -> Verdict:
    """Compare two formulas on settings.samples random trees; the lowest disagreeing sample is returned"""
    settings = settings or get_settings()
    checker, fragment = _checker_for(sem)
    for f in (phi, psi):
        if not check_fragment(f, fragment):
            raise NotInFragment(fragment.value, print_formula(f))
    props = sorted(props_of(phi) | props_of(psi)) or ['p']

    def sample(i: int) -> Optional[Tuple[RegularTree, str]]:
        tree = random_tree((settings.seed, i), settings.max_nodes, props)
        left, right = checker(tree, phi).holds, checker(tree, psi).holds
        if left == right:
            return None
        return tree, f"sample {i}: left {'holds' if left else 'fails'}, right {'holds' if right else 'fails'}"

    failures: Dict[int, Tuple[RegularTree, str]] = {}
    with ThreadPoolExecutor(max_workers=settings.workers) as executor:
        futures = {executor.submit(sample, i): i for i in range(settings.samples)}
        for future in as_completed(futures):
            outcome = future.result()
            if outcome is not None:
                failures[futures[future]] = outcome
    if failures:
        first = min(failures)
        logger.info("Equivalence refuted on %d of %d samples", len(failures), settings.samples)
        logger.debug("Counterexample tree:\n%s", serialize_tree(failures[first][0]))
        return Verdict(holds=False, counterexample=failures[first], samples=settings.samples)
    return Verdict(holds=True, samples=settings.samples)


def check_valid_sampled(phi: Formula, sem: str, settings: Optional[Settings] = None) -> Verdict:
    return check_equiv_sampled(phi, TRUE, sem, settings)
