from typing import List, Optional, Tuple


class GradedLogicError(Exception):
    """Base class for every error raised by the library"""


class TreeValidationError(GradedLogicError):
    pass


class TotalityViolation(TreeValidationError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"Node {node} has no outgoing edge")


class DanglingEdge(TreeValidationError):
    def __init__(self, edge_id: str, endpoint: str):
        self.edge_id = edge_id
        self.endpoint = endpoint
        super().__init__(f"Edge {edge_id} references undeclared node {endpoint}")


class MissingLabel(TreeValidationError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"Node {node} has no label")


class DuplicateNode(TreeValidationError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"Node {node} is declared twice")


class DuplicateEdge(TreeValidationError):
    def __init__(self, edge_id: str):
        self.edge_id = edge_id
        super().__init__(f"Edge id {edge_id} is declared twice")


class MissingRoot(TreeValidationError):
    def __init__(self, root: str):
        self.root = root
        super().__init__(f"Root {root} is not a declared node")


class ParseError(GradedLogicError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class NotInFragment(GradedLogicError):
    def __init__(self, fragment: str, formula: str = ""):
        self.fragment = fragment
        self.formula = formula
        detail = f": {formula}" if formula else ""
        super().__init__(f"Formula is not in {fragment}{detail}")


class NormalizationIncomplete(GradedLogicError):
    def __init__(self, subformula: str, reason: str = ""):
        self.subformula = subformula
        self.reason = reason
        suffix = f" ({reason})" if reason else ""
        super().__init__(f"Could not normalize {subformula}{suffix}")


class NotLooping(GradedLogicError):
    pass


class NotCounterFree(GradedLogicError):
    def __init__(self, witness: Optional[Tuple] = None):
        self.witness = witness
        super().__init__(f"Automaton is not counter-free, witness {witness}")


class NotMutuallyExclusive(GradedLogicError):
    def __init__(self, witness: Tuple):
        self.witness = witness
        tree, first, second = witness
        super().__init__(f"Lower parts {sorted(map(str, first))} and {sorted(map(str, second))} "
                         f"agree on a sampled tree rooted at {tree.root}")


class ConversionBudgetExceeded(GradedLogicError):
    def __init__(self, size: int, budget: int):
        self.size = size
        self.budget = budget
        super().__init__(f"Conversion produced {size} nodes, budget is {budget}")


class SubclassViolation(GradedLogicError):
    def __init__(self, target: str, diagnostics: List[str]):
        self.target = target
        self.diagnostics = list(diagnostics)
        super().__init__(f"Not a valid {target}: " + "; ".join(self.diagnostics))


class AlphabetMismatch(GradedLogicError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"Alphabet mismatch: automaton over {sorted(expected)}, tree over {sorted(found)}")


class TransientComponent(GradedLogicError):
    def __init__(self, component: str):
        self.component = component
        super().__init__(f"Component {component} is transient and cannot be linearized")


class SplitFailure(GradedLogicError):
    def __init__(self, state: str, letter):
        self.state = state
        self.letter = letter
        super().__init__(f"Transition of {state} on {sorted(letter)} has no single self-atom split")


class PastContentPresent(GradedLogicError):
    pass
