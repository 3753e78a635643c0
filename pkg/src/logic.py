import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from lark import Lark, Transformer, UnexpectedInput, v_args

from src.errors import NormalizationIncomplete, NotInFragment, ParseError

logger = logging.getLogger(__name__)


class Formula:
    """Node of the formula AST shared by every logic in the package"""

    def __str__(self) -> str:
        return print_formula(self)


def _shared(cls):
    """Cache the structural hash and short-circuit equality on shared DAGs"""
    structural_hash = cls.__hash__
    structural_eq = cls.__eq__

    def __hash__(self):
        cached = self.__dict__.get('_hash')
        if cached is None:
            cached = structural_hash(self)
            object.__setattr__(self, '_hash', cached)
        return cached

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return structural_eq(self, other)

    cls.__hash__ = __hash__
    cls.__eq__ = __eq__
    return cls


@_shared
@dataclass(frozen=True)
class Top(Formula):
    pass


@_shared
@dataclass(frozen=True)
class Bottom(Formula):
    pass


@_shared
@dataclass(frozen=True)
class Prop(Formula):
    name: str


@_shared
@dataclass(frozen=True)
class Not(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@_shared
@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@_shared
@dataclass(frozen=True)
class Count(Formula):
    """D^n: at least n distinct successors satisfy the operand"""
    n: int
    operand: Formula

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Counting operator needs n >= 1, got {self.n}")


@_shared
@dataclass(frozen=True)
class Exists(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class All(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Next(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class WeakNext(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@_shared
@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula


@_shared
@dataclass(frozen=True)
class WeakUntil(Formula):
    left: Formula
    right: Formula


@_shared
@dataclass(frozen=True)
class Eventually(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Globally(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Yesterday(Formula):
    operand: Formula


@_shared
@dataclass(frozen=True)
class Since(Formula):
    left: Formula
    right: Formula


TRUE = Top()
FALSE = Bottom()
ROOT = Not(Yesterday(TRUE))

UNARY = (Not, Exists, All, Next, WeakNext, Eventually, Globally, Yesterday)
BINARY = (Or, And, Until, Release, WeakUntil, Since)
PATH_OPERATORS = (Next, WeakNext, Until, Release, WeakUntil, Eventually, Globally)


def children(phi: Formula) -> Tuple[Formula, ...]:
    if isinstance(phi, BINARY):
        return (phi.left, phi.right)
    if isinstance(phi, UNARY) or isinstance(phi, Count):
        return (phi.operand,)
    return ()


def rebuild(phi: Formula, new_children: Sequence[Formula]) -> Formula:
    if isinstance(phi, BINARY):
        return type(phi)(new_children[0], new_children[1])
    if isinstance(phi, Count):
        return Count(phi.n, new_children[0])
    if isinstance(phi, UNARY):
        return type(phi)(new_children[0])
    return phi


def transform(phi: Formula, rule: Callable[[Formula], Formula]) -> Formula:
    """Bottom-up rewrite with memoization over shared subformulas"""
    memo: Dict[Formula, Formula] = {}

    def go(f: Formula) -> Formula:
        if f in memo:
            return memo[f]
        kids = children(f)
        result = rule(rebuild(f, [go(k) for k in kids]) if kids else f)
        memo[f] = result
        return result

    return go(phi)


def subformulas(phi: Formula) -> List[Formula]:
    """Distinct subformulas, every formula listed after its subformulas"""
    seen = set()
    order: List[Formula] = []
    stack = [(phi, False)]
    while stack:
        f, expanded = stack.pop()
        if f in seen:
            continue
        if expanded:
            seen.add(f)
            order.append(f)
            continue
        stack.append((f, True))
        for k in children(f):
            if k not in seen:
                stack.append((k, False))
    return order


def size(phi: Formula) -> int:
    return len(subformulas(phi))


def props_of(phi: Formula) -> FrozenSet[str]:
    return frozenset(f.name for f in subformulas(phi) if isinstance(f, Prop))


def depth(phi: Formula) -> int:
    kids = children(phi)
    return 1 + max((depth(k) for k in kids), default=0)


def is_state_formula(phi: Formula) -> bool:
    """Path operators only occur below a path quantifier or a counting operator"""
    if isinstance(phi, (Top, Bottom, Prop, Count, Exists, All)):
        return True
    if isinstance(phi, PATH_OPERATORS):
        return False
    return all(is_state_formula(k) for k in children(phi))


def conj(*parts: Formula) -> Formula:
    result: Optional[Formula] = None
    for part in parts:
        if isinstance(part, Bottom):
            return FALSE
        if isinstance(part, Top) or part == result:
            continue
        result = part if result is None else And(result, part)
    return TRUE if result is None else result


def disj(*parts: Formula) -> Formula:
    result: Optional[Formula] = None
    for part in parts:
        if isinstance(part, Top):
            return TRUE
        if isinstance(part, Bottom) or part == result:
            continue
        result = part if result is None else Or(result, part)
    return FALSE if result is None else result


def neg(phi: Formula) -> Formula:
    if isinstance(phi, Top):
        return FALSE
    if isinstance(phi, Bottom):
        return TRUE
    if isinstance(phi, Not):
        return phi.operand
    return Not(phi)


def letter_formula(letters: Iterable[FrozenSet[str]], props: Sequence[str]) -> Formula:
    """Propositional formula true exactly on the given valuations of props"""
    wanted = frozenset(frozenset(l) & frozenset(props) for l in letters)

    def shannon(valuations: FrozenSet[FrozenSet[str]], remaining: Tuple[str, ...]) -> Formula:
        if not valuations:
            return FALSE
        if len(valuations) == 1 << len(remaining):
            return TRUE
        p, rest = remaining[0], remaining[1:]
        with_p = frozenset(v - {p} for v in valuations if p in v)
        without_p = frozenset(v for v in valuations if p not in v)
        if with_p == without_p:
            return shannon(without_p, rest)
        return disj(conj(Prop(p), shannon(with_p, rest)), conj(Not(Prop(p)), shannon(without_p, rest)))

    return shannon(wanted, tuple(sorted(props)))


FORMULA_GRAMMAR = r"""
    ?start: phi

    ?phi: atom
        | "!" phi -> neg_
        | "¬" phi -> neg_
        | "~" phi -> neg_
        | COUNT phi -> count
        | "E" phi -> exists
        | "A" phi -> all_
        | "X" phi -> next_
        | "wX" phi -> weak_next
        | "X̃" phi -> weak_next
        | "Y" phi -> yesterday
        | "F" phi -> eventually
        | "G" phi -> globally

    ?atom: "true" -> top
         | "false" -> bottom
         | "⊤" -> top
         | "⊥" -> bottom
         | NAME -> prop
         | "(" phi ")"
         | "(" phi _OR phi ")" -> or_
         | "(" phi _AND phi ")" -> and_
         | "(" phi "U" phi ")" -> until
         | "(" phi "R" phi ")" -> release
         | "(" phi "W" phi ")" -> weak_until
         | "(" phi "S" phi ")" -> since

    _OR: "|" | "∨"
    _AND: "&" | "∧"
    COUNT.2: /D[1-9][0-9]*/
    NAME: /[a-z_][A-Za-z0-9_]*/

    %import common.WS
    %ignore WS
"""


@v_args(inline=True)
class _FormulaBuilder(Transformer):
    def top(self):
        return TRUE

    def bottom(self):
        return FALSE

    def prop(self, name):
        return Prop(str(name))

    def neg_(self, a):
        return Not(a)

    def count(self, token, a):
        return Count(int(str(token)[1:]), a)

    def exists(self, a):
        return Exists(a)

    def all_(self, a):
        return All(a)

    def next_(self, a):
        return Next(a)

    def weak_next(self, a):
        return WeakNext(a)

    def yesterday(self, a):
        return Yesterday(a)

    def eventually(self, a):
        return Eventually(a)

    def globally(self, a):
        return Globally(a)

    def or_(self, a, b):
        return Or(a, b)

    def and_(self, a, b):
        return And(a, b)

    def until(self, a, b):
        return Until(a, b)

    def release(self, a, b):
        return Release(a, b)

    def weak_until(self, a, b):
        return WeakUntil(a, b)

    def since(self, a, b):
        return Since(a, b)


_formula_parser = Lark(FORMULA_GRAMMAR, parser='lalr', transformer=_FormulaBuilder())


def parse_formula(text: str) -> Formula:
    try:
        return _formula_parser.parse(text)
    except UnexpectedInput as e:
        raise ParseError("unexpected input in formula", e.line, e.column) from e


_PREFIX = {Exists: "E", All: "A", Next: "X", WeakNext: "wX", Yesterday: "Y", Eventually: "F", Globally: "G"}
_INFIX = {Or: "|", And: "&", Until: "U", Release: "R", WeakUntil: "W", Since: "S"}


def print_formula(phi: Formula) -> str:
    if isinstance(phi, Top):
        return "true"
    if isinstance(phi, Bottom):
        return "false"
    if isinstance(phi, Prop):
        return phi.name
    if isinstance(phi, Not):
        return "!" + print_formula(phi.operand)
    if isinstance(phi, Count):
        return f"D{phi.n} {print_formula(phi.operand)}"
    if type(phi) in _PREFIX:
        return f"{_PREFIX[type(phi)]} {print_formula(phi.operand)}"
    if type(phi) in _INFIX:
        return f"({print_formula(phi.left)} {_INFIX[type(phi)]} {print_formula(phi.right)})"
    raise TypeError(f"Not a formula: {phi!r}")


class Fragment(Enum):
    FULL_CTL_STAR_P = "FullCtlStarP"
    POL_CCTL_P = "PolCCtlP"
    POL_CCTL = "PolCCtl"
    CCTL_STAR_F = "CCtlStarF"
    POL_CCTL_STAR = "PolCCtlStar"
    EF_PURE_PAST = "EfPurePast"
    LTL = "Ltl"
    LTLF = "Ltlf"
    SAFE_LTL = "SafeLtl"
    COSAFE_LTL = "CosafeLtl"
    PURE_PAST = "PurePast"


_LTL_NODES = (Top, Bottom, Prop, Not, And, Or, Next, WeakNext, Until, Release, WeakUntil, Eventually, Globally)
_SAFE_NODES = (Top, Bottom, Prop, And, Or, Next, WeakNext, Release, Globally, WeakUntil)
_COSAFE_NODES = (Top, Bottom, Prop, And, Or, Next, WeakNext, Until, Eventually)
_PAST_NODES = (Top, Bottom, Prop, Not, And, Or, Yesterday, Since)


def _only(phi: Formula, allowed: tuple, literal_negation: bool = False) -> bool:
    for f in subformulas(phi):
        if literal_negation and isinstance(f, Not):
            if not isinstance(f.operand, Prop):
                return False
            continue
        if not isinstance(f, allowed):
            return False
    return True


def _pol_state(phi: Formula, past: bool) -> bool:
    if isinstance(phi, (Top, Bottom, Prop)):
        return True
    if isinstance(phi, (Not, Or, And, Count)):
        return all(_pol_state(k, past) for k in children(phi))
    if isinstance(phi, (Yesterday, Since)):
        return past and all(_pol_state(k, past) for k in children(phi))
    if isinstance(phi, Exists):
        return _pol_under_e(phi.operand, past)
    if isinstance(phi, All):
        return _pol_under_a(phi.operand, past)
    return False


def _pol_under_e(psi: Formula, past: bool) -> bool:
    if isinstance(psi, (Next, WeakNext, Eventually)):
        return _pol_state(psi.operand, past)
    if isinstance(psi, Until):
        return _pol_state(psi.left, past) and _pol_state(psi.right, past)
    if isinstance(psi, Not) and not is_state_formula(psi):
        return _pol_under_a(psi.operand, past)
    return _pol_state(psi, past)


def _pol_under_a(psi: Formula, past: bool) -> bool:
    if isinstance(psi, (Next, WeakNext, Globally)):
        return _pol_state(psi.operand, past)
    if isinstance(psi, (Release, WeakUntil)):
        return _pol_state(psi.left, past) and _pol_state(psi.right, past)
    if isinstance(psi, Not) and not is_state_formula(psi):
        return _pol_under_e(psi.operand, past)
    return _pol_state(psi, past)


def _star_state(phi: Formula) -> bool:
    if isinstance(phi, (Top, Bottom, Prop)):
        return True
    if isinstance(phi, (Not, Count)):
        return _star_state(phi.operand)
    if isinstance(phi, Or):
        return _star_state(phi.left) and _star_state(phi.right)
    if isinstance(phi, Exists):
        return _star_path(phi.operand)
    return False


def _star_path(psi: Formula) -> bool:
    if _star_state(psi):
        return True
    if isinstance(psi, (Or, And, Until)):
        return _star_path(psi.left) and _star_path(psi.right)
    if isinstance(psi, Next):
        return _star_path(psi.operand)
    return False


def _ef_state(phi: Formula) -> bool:
    if isinstance(phi, (Top, Bottom, Prop)):
        return True
    if isinstance(phi, (Not, Count)):
        return _ef_state(phi.operand)
    if isinstance(phi, And):
        return _ef_state(phi.left) and _ef_state(phi.right)
    if isinstance(phi, Exists):
        body = phi.operand
        if isinstance(body, Eventually):
            return _ef_past(body.operand)
        if isinstance(body, Until) and isinstance(body.left, Top):
            return _ef_past(body.right)
    return False


def _ef_past(psi: Formula) -> bool:
    if _ef_state(psi) or psi == ROOT:
        return True
    if isinstance(psi, (Or, And, Since)):
        return _ef_past(psi.left) and _ef_past(psi.right)
    if isinstance(psi, Yesterday):
        return _ef_past(psi.operand)
    return False


def check_fragment(phi: Formula, fragment: Fragment) -> bool:
    if fragment is Fragment.FULL_CTL_STAR_P:
        return True
    if fragment is Fragment.CCTL_STAR_F:
        return not any(isinstance(f, (Yesterday, Since)) for f in subformulas(phi))
    if fragment is Fragment.POL_CCTL_P:
        return _pol_state(phi, past=True)
    if fragment is Fragment.POL_CCTL:
        return _pol_state(phi, past=False)
    if fragment is Fragment.POL_CCTL_STAR:
        return _star_state(phi)
    if fragment is Fragment.EF_PURE_PAST:
        return _ef_state(phi)
    if fragment in (Fragment.LTL, Fragment.LTLF):
        return _only(phi, _LTL_NODES)
    if fragment is Fragment.SAFE_LTL:
        return _only(phi, _SAFE_NODES, literal_negation=True)
    if fragment is Fragment.COSAFE_LTL:
        return _only(phi, _COSAFE_NODES, literal_negation=True)
    if fragment is Fragment.PURE_PAST:
        return _only(phi, _PAST_NODES)
    raise ValueError(f"Unknown fragment {fragment}")


def require_fragment(phi: Formula, fragment: Fragment) -> None:
    if not check_fragment(phi, fragment):
        raise NotInFragment(fragment.value, print_formula(phi))


def to_nnf(phi: Formula) -> Formula:
    """Push negations down to propositions; negated D^n, Y and S stay as tagged nodes"""
    memo: Dict[Tuple[Formula, bool], Formula] = {}

    def go(f: Formula, negated: bool) -> Formula:
        key = (f, negated)
        if key in memo:
            return memo[key]
        result = _nnf_step(f, negated, go)
        memo[key] = result
        return result

    return go(phi, False)


def _nnf_step(f: Formula, negated: bool, go) -> Formula:
    if isinstance(f, Top):
        return FALSE if negated else TRUE
    if isinstance(f, Bottom):
        return TRUE if negated else FALSE
    if isinstance(f, Prop):
        return Not(f) if negated else f
    if isinstance(f, Not):
        return go(f.operand, not negated)
    if isinstance(f, (Or, And)):
        flip = {Or: And, And: Or}[type(f)] if negated else type(f)
        return flip(go(f.left, negated), go(f.right, negated))
    if isinstance(f, (Count, Yesterday, Since)):
        inner = rebuild(f, [go(k, False) for k in children(f)])
        return Not(inner) if negated else inner
    duals = {Exists: All, All: Exists, Next: WeakNext, WeakNext: Next,
             Eventually: Globally, Globally: Eventually, Until: Release, Release: Until}
    if type(f) in duals:
        op = duals[type(f)] if negated else type(f)
        return rebuild(op(*children(f)) if isinstance(f, BINARY) else op(f.operand),
                       [go(k, negated) for k in children(f)])
    if isinstance(f, WeakUntil):
        if not negated:
            return WeakUntil(go(f.left, False), go(f.right, False))
        not_b = go(f.right, True)
        return Until(not_b, And(go(f.left, True), not_b))
    raise TypeError(f"Not a formula: {f!r}")


def is_nnf(phi: Formula) -> bool:
    return all(not isinstance(f, Not) or isinstance(f.operand, (Prop, Count, Yesterday, Since))
               for f in subformulas(phi))


def expand_abbreviations(phi: Formula) -> Formula:
    """Rewrite F, G, R, W, A, wX, & and false into p, !, |, E, X, U, D, Y, S and true"""

    def rule(f: Formula) -> Formula:
        if isinstance(f, Bottom):
            return Not(TRUE)
        if isinstance(f, Eventually):
            return Until(TRUE, f.operand)
        if isinstance(f, Globally):
            return Not(Until(TRUE, Not(f.operand)))
        if isinstance(f, Release):
            return Not(Until(Not(f.left), Not(f.right)))
        if isinstance(f, WeakUntil):
            return Or(rule(Globally(f.left)), Until(f.left, f.right))
        if isinstance(f, All):
            return Not(Exists(Not(f.operand)))
        if isinstance(f, WeakNext):
            return Not(Next(Not(f.operand)))
        if isinstance(f, And):
            return Not(Or(Not(f.left), Not(f.right)))
        return f

    return transform(phi, rule)


def introduce_abbreviations(phi: Formula) -> Formula:
    """Inverse of expand_abbreviations on the shapes it produces"""

    def rule(f: Formula) -> Formula:
        if isinstance(f, Not):
            inner = f.operand
            if isinstance(inner, Top):
                return FALSE
            if isinstance(inner, Until) and isinstance(inner.left, Top) and isinstance(inner.right, Not):
                return Globally(inner.right.operand)
            if isinstance(inner, Eventually) and isinstance(inner.operand, Not):
                return Globally(inner.operand.operand)
            if isinstance(inner, Until) and isinstance(inner.left, Not) and isinstance(inner.right, Not):
                return Release(inner.left.operand, inner.right.operand)
            if isinstance(inner, Exists) and isinstance(inner.operand, Not):
                return All(inner.operand.operand)
            if isinstance(inner, Next) and isinstance(inner.operand, Not):
                return WeakNext(inner.operand.operand)
            if isinstance(inner, Or) and isinstance(inner.left, Not) and isinstance(inner.right, Not):
                return And(inner.left.operand, inner.right.operand)
        if isinstance(f, Until) and isinstance(f.left, Top):
            return Eventually(f.right)
        if isinstance(f, Or) and isinstance(f.left, Globally) and isinstance(f.right, Until) \
                and f.right.left == f.left.operand:
            return WeakUntil(f.left.operand, f.right.right)
        return f

    return transform(phi, rule)


def alpha_r(phi: Formula, psi: Formula) -> Formula:
    """psi U ((wX false | phi) & psi), the U-form of phi R psi on finite paths"""
    return Until(psi, And(Or(WeakNext(FALSE), phi), psi))


def alpha_u(phi: Formula, psi: Formula) -> Formula:
    """psi R ((X true & phi) | psi), the R-form of phi U psi on finite paths"""
    return Release(psi, Or(And(Next(TRUE), phi), psi))


def _finite_rewrite_step(f: Formula) -> Optional[Formula]:
    if isinstance(f, Exists):
        body = f.operand
        if isinstance(body, WeakNext):
            return TRUE
        if isinstance(body, Release):
            return Exists(alpha_r(body.left, body.right))
        if isinstance(body, Next) and isinstance(body.operand, Release):
            return Exists(Next(alpha_r(body.operand.left, body.operand.right)))
        if isinstance(body, Until) and isinstance(body.right, Release):
            return Exists(Until(body.left, alpha_r(body.right.left, body.right.right)))
        if isinstance(body, Until) and isinstance(body.left, Release):
            return Exists(Until(alpha_r(body.left.left, body.left.right), body.right))
    if isinstance(f, All):
        body = f.operand
        if isinstance(body, Next):
            return FALSE
        if isinstance(body, Until):
            return All(alpha_u(body.left, body.right))
        if isinstance(body, WeakNext) and isinstance(body.operand, Until):
            return All(WeakNext(alpha_u(body.operand.left, body.operand.right)))
        if isinstance(body, Release) and isinstance(body.right, Until):
            return All(Release(body.left, alpha_u(body.right.left, body.right.right)))
        if isinstance(body, Release) and isinstance(body.left, Until):
            return All(Release(alpha_u(body.left.left, body.left.right), body.right))
    return None


def rewrite_finite_paths(phi: Formula) -> Formula:
    """Apply the finite-path equivalences innermost-first until none matches"""
    if not check_fragment(phi, Fragment.CCTL_STAR_F):
        raise NotInFragment(Fragment.CCTL_STAR_F.value, print_formula(phi))
    if not is_nnf(phi):
        phi = to_nnf(phi)

    def rule(f: Formula) -> Formula:
        step = _finite_rewrite_step(f)
        while step is not None:
            f = step
            step = _finite_rewrite_step(f)
        return f

    return transform(phi, rule)


rewrite_prop3 = rewrite_finite_paths


def finite_path_equivalences(a: Formula, b: Formula, c: Formula) -> List[Tuple[str, Formula, Formula]]:
    """Both sides of every finite-path equivalence family instantiated with a, b, c"""
    return [
        ("1-exists-weak-next", Exists(WeakNext(a)), TRUE),
        ("1-all-next", All(Next(a)), FALSE),
        ("2-release", All(Release(a, b)), All(alpha_r(a, b))),
        ("2-until", All(Until(a, b)), All(alpha_u(a, b))),
        ("3-exists-release", Exists(Release(a, b)), Exists(alpha_r(a, b))),
        ("3-all-until", All(Until(a, b)), All(alpha_u(a, b))),
        ("4-exists-next-release", Exists(Next(Release(a, b))), Exists(Next(alpha_r(a, b)))),
        ("4-all-weak-next-until", All(WeakNext(Until(a, b))), All(WeakNext(alpha_u(a, b)))),
        ("5-exists-until-release", Exists(Until(a, Release(b, c))), Exists(Until(a, alpha_r(b, c)))),
        ("5-all-release-until", All(Release(a, Until(b, c))), All(Release(a, alpha_u(b, c)))),
        ("6-exists-release-until", Exists(Until(Release(a, b), c)), Exists(Until(alpha_r(a, b), c))),
        ("6-all-until-release", All(Release(Until(a, b), c)), All(Release(alpha_u(a, b), c))),
    ]


def state_markers(psi: Formula, prefix: str = "__m") -> Tuple[Formula, Dict[str, Formula]]:
    """Replace maximal state subformulas of a path formula by fresh propositions"""
    table: Dict[Formula, str] = {}

    def go(f: Formula) -> Formula:
        if is_state_formula(f):
            if isinstance(f, (Top, Bottom)):
                return f
            if f not in table:
                table[f] = f"{prefix}{len(table)}"
            return Prop(table[f])
        return rebuild(f, [go(k) for k in children(f)])

    skeleton = go(psi)
    return skeleton, {name: f for f, name in table.items()}


def substitute(phi: Formula, mapping: Dict[str, Formula]) -> Formula:
    """Replace propositions by formulas; a negated replacement goes through neg"""

    def rule(f: Formula) -> Formula:
        if isinstance(f, Prop):
            return mapping.get(f.name, f)
        if isinstance(f, Not):
            return neg(f.operand)
        return f

    return transform(phi, rule)


def _positive_exists(body: Formula, settings) -> Formula:
    """E body in the polarized grammar: syntactic when possible, else via the path automaton"""
    from src.word_automata import existential_path_formula

    candidate = transform(body, lambda f: Until(TRUE, f.operand) if isinstance(f, Eventually) else f)
    if _star_path(candidate):
        return Exists(candidate)
    skeleton, table = state_markers(candidate)
    positive = existential_path_formula(skeleton, settings=settings)
    return Exists(substitute(positive, table))


def normalize_ctlsf(phi: Formula, settings=None) -> Formula:
    """Equivalent formula in the polarized E-only grammar (finite-path semantics)"""
    require_fragment(phi, Fragment.CCTL_STAR_F)
    if not is_state_formula(phi):
        raise NotInFragment(Fragment.CCTL_STAR_F.value, f"path formula {print_formula(phi)}")
    prepared = rewrite_finite_paths(to_nnf(phi))

    def state(f: Formula) -> Formula:
        if isinstance(f, (Top, Bottom, Prop)):
            return f
        if isinstance(f, Not):
            return neg(state(f.operand))
        if isinstance(f, Or):
            return disj(state(f.left), state(f.right))
        if isinstance(f, And):
            return neg(disj(neg(state(f.left)), neg(state(f.right))))
        if isinstance(f, Count):
            inner = f.operand if is_state_formula(f.operand) else Exists(f.operand)
            return Count(f.n, state(inner))
        if isinstance(f, Exists):
            return _positive_exists(path(f.operand), settings)
        if isinstance(f, All):
            return neg(_positive_exists(path(to_nnf(Not(f.operand))), settings))
        raise TypeError(f"Unexpected state node {f!r}")

    def path(f: Formula) -> Formula:
        if is_state_formula(f):
            return state(f)
        return rebuild(f, [path(k) for k in children(f)])

    result = state(prepared)
    logger.debug("normalize_ctlsf: %d -> %d nodes", size(phi), size(result))
    return result


def polarized_core(phi: Formula) -> Formula:
    """Map a PolCCtlP formula onto p, !, |, &, D^n, E X, E U, Y, S"""
    require_fragment(phi, Fragment.POL_CCTL_P)

    def core(f: Formula) -> Formula:
        if isinstance(f, (Top, Bottom, Prop)):
            return f
        if isinstance(f, Not):
            return neg(core(f.operand))
        if isinstance(f, (Or, And, Count, Yesterday, Since)):
            return rebuild(f, [core(k) for k in children(f)])
        if isinstance(f, Exists):
            return exists(to_nnf(f.operand))
        if isinstance(f, All):
            return neg(exists(to_nnf(Not(f.operand))))
        raise NotInFragment(Fragment.POL_CCTL_P.value, print_formula(f))

    def exists(body: Formula) -> Formula:
        if is_state_formula(body):
            return core(body)
        if isinstance(body, (Next, WeakNext)):
            return Exists(Next(core(body.operand)))
        if isinstance(body, Until):
            return Exists(Until(core(body.left), core(body.right)))
        if isinstance(body, Eventually):
            return Exists(Until(TRUE, core(body.operand)))
        raise NotInFragment(Fragment.POL_CCTL_P.value, print_formula(Exists(body)))

    return core(phi)


def _negate_past(f: Formula) -> Formula:
    """Push a negation through Y, S, | or & over histories that start at the root"""
    if isinstance(f, Yesterday):
        return Or(ROOT, Yesterday(neg(f.operand)))
    if isinstance(f, Since):
        never = neg(f.right)
        return Or(Since(never, And(neg(f.left), never)), Since(never, And(never, ROOT)))
    if isinstance(f, Or):
        return And(neg(f.left), neg(f.right))
    return Or(neg(f.left), neg(f.right))


def _child_past(f: Formula) -> List[Formula]:
    """Y and S nodes reached from f through boolean connectives only"""
    if isinstance(f, (Not, And, Or)):
        return [g for k in children(f) for g in _child_past(k)]
    if isinstance(f, Yesterday):
        return [f]
    if isinstance(f, Since):
        return [f] + _child_past(f.left) + _child_past(f.right)
    return []


def _step_back(f: Formula, parent: Dict[Formula, Formula]) -> Formula:
    """f at a child, with the parent's Y and S values given as constants"""
    if isinstance(f, (Not, And, Or)):
        return rebuild(f, [_step_back(k, parent) for k in children(f)])
    if isinstance(f, Yesterday):
        return parent[f]
    if isinstance(f, Since):
        return Or(_step_back(f.right, parent), And(_step_back(f.left, parent), parent[f]))
    return f


def normalize_polcctlp(phi: Formula, settings=None, verify: bool = True) -> Formula:
    """Candidate in the EF/pure-past grammar, returned only after sampled verification"""
    from src.config import get_settings
    from src.semantics import check_equiv_sampled
    from src.word_automata import pastify

    settings = settings or get_settings()
    core = polarized_core(phi)
    if check_fragment(phi, Fragment.EF_PURE_PAST):
        return phi

    def go(f: Formula, at_root: bool) -> Formula:
        if isinstance(f, (Top, Bottom, Prop)):
            return f
        if isinstance(f, Not):
            return neg(go(f.operand, at_root))
        if isinstance(f, And):
            return conj(go(f.left, at_root), go(f.right, at_root))
        if isinstance(f, Or):
            return neg(conj(neg(go(f.left, at_root)), neg(go(f.right, at_root))))
        if isinstance(f, Count):
            return counted(f, at_root)
        if isinstance(f, Yesterday):
            if at_root:
                return FALSE
            raise NormalizationIncomplete(print_formula(f), "past operator below the root")
        if isinstance(f, Since):
            if at_root:
                return go(f.right, True)
            raise NormalizationIncomplete(print_formula(f), "past operator below the root")
        body = f.operand
        if isinstance(body, Next):
            return counted(Count(1, body.operand), at_root)
        if isinstance(body.left, Top):
            return Exists(Eventually(past(body.right)))
        if not at_root:
            raise NormalizationIncomplete(print_formula(f), "no anchor for until below the root")
        skeleton = Until(Prop("__m0"), Prop("__m1"))
        anchor = pastify(skeleton, settings=settings)
        anchored = substitute(anchor.operand, {"__m0": go(body.left, False), "__m1": go(body.right, False)})
        return Exists(Eventually(anchored))

    def counted(f: Count, at_root: bool) -> Formula:
        steps = list(dict.fromkeys(_child_past(f.operand)))
        if not steps:
            return Count(f.n, go(f.operand, False))
        known = [go(s.operand if isinstance(s, Yesterday) else s, at_root) for s in steps]
        cases = []
        for bits in itertools.product((TRUE, FALSE), repeat=len(steps)):
            guard = conj(*[v if isinstance(b, Top) else neg(v) for v, b in zip(known, bits)])
            cases.append(conj(guard, Count(f.n, go(_step_back(f.operand, dict(zip(steps, bits))), False))))
        return neg(conj(*[neg(c) for c in cases]))

    def past(f: Formula) -> Formula:
        if f == ROOT:
            return ROOT
        if isinstance(f, Yesterday):
            return Yesterday(past(f.operand))
        if isinstance(f, Since):
            return Since(past(f.left), past(f.right))
        if isinstance(f, Or):
            return disj(past(f.left), past(f.right))
        if isinstance(f, And):
            return conj(past(f.left), past(f.right))
        if isinstance(f, Not) and isinstance(f.operand, (Yesterday, Since, Or, And)):
            return past(_negate_past(f.operand))
        return go(f, False)

    candidate = go(core, True)
    if not check_fragment(candidate, Fragment.EF_PURE_PAST):
        raise NormalizationIncomplete(print_formula(phi), "candidate left the grammar")
    if verify:
        verdict = check_equiv_sampled(phi, candidate, 'infinite', settings)
        if not verdict.holds:
            raise NormalizationIncomplete(print_formula(phi), "candidate refuted by sampling")
    return candidate


def random_formula(rng: np.random.Generator, fragment: Fragment, max_depth: int, props: Sequence[str]) -> Formula:
    """Random member of PolCCtlP, PolCCtl, CCtlStarF, Ltl, SafeLtl or CosafeLtl"""
    props = sorted(props)

    def atom() -> Formula:
        choice = int(rng.integers(0, len(props) + 2))
        if choice == len(props):
            return TRUE
        if choice == len(props) + 1:
            return FALSE
        return Prop(props[choice])

    def literal() -> Formula:
        a = atom()
        return Not(a) if isinstance(a, Prop) and rng.random() < 0.4 else a

    def pick(options: List[Callable[[], Formula]]) -> Formula:
        return options[int(rng.integers(0, len(options)))]()

    def polarized(d: int, past: bool) -> Formula:
        if d <= 1:
            return atom()
        s = lambda: polarized(d - 1, past)
        options = [
            lambda: Not(s()),
            lambda: Or(s(), s()),
            lambda: And(s(), s()),
            lambda: Count(int(rng.integers(1, 3)), s()),
            lambda: Exists(Next(s())),
            lambda: Exists(Until(s(), s())),
            lambda: Exists(Eventually(s())),
            lambda: All(Globally(s())),
            lambda: All(Next(s())),
            lambda: All(Release(s(), s())),
        ]
        if past:
            options += [lambda: Yesterday(s()), lambda: Since(s(), s())]
        return pick(options)

    def ctlsf_state(d: int) -> Formula:
        if d <= 1:
            return atom()
        s = lambda: ctlsf_state(d - 1)
        p = lambda: ctlsf_path(d - 1)
        return pick([
            lambda: Not(s()),
            lambda: Or(s(), s()),
            lambda: And(s(), s()),
            lambda: Count(int(rng.integers(1, 3)), s()),
            lambda: Exists(p()),
            lambda: All(p()),
        ])

    def ctlsf_path(d: int) -> Formula:
        if d <= 1:
            return atom()
        p = lambda: ctlsf_path(d - 1)
        return pick([
            lambda: ctlsf_state(d),
            lambda: Next(p()),
            lambda: WeakNext(p()),
            lambda: Until(p(), p()),
            lambda: Release(p(), p()),
            lambda: Eventually(p()),
            lambda: Globally(p()),
            lambda: Or(p(), p()),
            lambda: And(p(), p()),
            lambda: Not(p()),
        ])

    def ltl(d: int, nodes: Tuple[str, ...]) -> Formula:
        if d <= 1:
            return literal() if nodes != ('any',) else atom()
        l = lambda: ltl(d - 1, nodes)
        table = {
            'and': lambda: And(l(), l()), 'or': lambda: Or(l(), l()), 'next': lambda: Next(l()),
            'until': lambda: Until(l(), l()), 'release': lambda: Release(l(), l()),
            'eventually': lambda: Eventually(l()), 'globally': lambda: Globally(l()),
            'not': lambda: Not(l()), 'weak_next': lambda: WeakNext(l()),
        }
        names = list(table) if nodes == ('any',) else list(nodes)
        return pick([table[n] for n in names])

    if fragment is Fragment.POL_CCTL_P:
        return polarized(max_depth, past=True)
    if fragment is Fragment.POL_CCTL:
        return polarized(max_depth, past=False)
    if fragment is Fragment.CCTL_STAR_F:
        return ctlsf_state(max_depth)
    if fragment in (Fragment.LTL, Fragment.LTLF):
        return ltl(max_depth, ('any',))
    if fragment is Fragment.SAFE_LTL:
        return ltl(max_depth, ('and', 'or', 'next', 'release', 'globally'))
    if fragment is Fragment.COSAFE_LTL:
        return ltl(max_depth, ('and', 'or', 'next', 'until', 'eventually'))
    raise ValueError(f"No generator for {fragment.value}")
