import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import networkx as nx
import numpy as np
from lark import Lark, Transformer, UnexpectedInput, v_args

from src.errors import (
    DanglingEdge,
    DuplicateEdge,
    DuplicateNode,
    MissingLabel,
    MissingRoot,
    ParseError,
    TotalityViolation,
    TreeValidationError,
)

logger = logging.getLogger(__name__)

Label = FrozenSet[str]


@dataclass(frozen=True, order=True)
class Edge:
    source: str
    target: str
    eid: str


@dataclass(frozen=True)
class RegularTree:
    """Finite rooted multigraph whose unfolding from the root is the infinite tree"""
    ap: FrozenSet[str]
    nodes: Tuple[str, ...]
    root: str
    labels: Dict[str, Label]
    edges: Tuple[Edge, ...]
    _out: Dict[str, List[Edge]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'ap', frozenset(self.ap))
        object.__setattr__(self, 'nodes', tuple(sorted(self.nodes)))
        object.__setattr__(self, 'labels', {n: frozenset(l) for n, l in self.labels.items()})
        object.__setattr__(self, 'edges', tuple(sorted(self.edges)))
        out = defaultdict(list)
        for edge in self.edges:
            out[edge.source].append(edge)
        object.__setattr__(self, '_out', dict(out))

    @classmethod
    def build(cls, ap, labels: Dict[str, Label], edges, root: str = 'v0',
              nodes: Optional[Iterable[str]] = None) -> 'RegularTree':
        """Build and validate; edges are (eid, source, target) triples, nodes default to the labelled ones"""
        tree = cls(
            ap=frozenset(ap),
            nodes=tuple(labels) if nodes is None else tuple(nodes),
            root=root,
            labels=labels,
            edges=tuple(Edge(source=s, target=t, eid=e) for e, s, t in edges),
        )
        validate_tree(tree)
        return tree

    def out_edges(self, node: str) -> List[Edge]:
        return self._out.get(node, [])

    def children(self, node: str) -> List[str]:
        return [edge.target for edge in self.out_edges(node)]

    def label(self, node: str) -> Label:
        return self.labels[node]

    def index(self) -> Dict[str, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    def edge_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Source and target index arrays, one entry per edge (parallel edges repeat)"""
        idx = self.index()
        src = np.array([idx[e.source] for e in self.edges], dtype=np.int64)
        dst = np.array([idx[e.target] for e in self.edges], dtype=np.int64)
        return src, dst

    def to_graph(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph(root=self.root, ap=sorted(self.ap))
        for node in self.nodes:
            graph.add_node(node, label=sorted(self.labels[node]))
        for edge in self.edges:
            graph.add_edge(edge.source, edge.target, key=edge.eid)
        return graph

    def to_dot(self) -> str:
        graph = self.to_graph()
        lines = ["digraph tree {", f'  "__start" [shape=point]; "__start" -> "{self.root}";']
        for node, data in graph.nodes(data=True):
            lines.append(f'  "{node}" [label="{node} {{{",".join(data["label"])}}}"];')
        for source, target, key in graph.edges(keys=True):
            lines.append(f'  "{source}" -> "{target}" [label="{key}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TreePath:
    """Sequence of edge ids from a start node; π(i) is nodes(t)[i]"""
    start: str
    edges: Tuple[str, ...] = ()

    def nodes(self, tree: RegularTree) -> List[str]:
        by_id = {edge.eid: edge for edge in tree.edges}
        result = [self.start]
        for eid in self.edges:
            edge = by_id[eid]
            if edge.source != result[-1]:
                raise ValueError(f"Edge {eid} does not leave {result[-1]}")
            result.append(edge.target)
        return result

    def extend(self, eid: str) -> 'TreePath':
        return TreePath(self.start, self.edges + (eid,))


def paths_from(tree: RegularTree, node: str, length: int) -> Iterator[TreePath]:
    """All paths with exactly `length` edges starting at node"""
    frontier = [(TreePath(node), node)]
    for _ in range(length):
        frontier = [(path.extend(e.eid), e.target) for path, last in frontier for e in tree.out_edges(last)]
    for path, _ in frontier:
        yield path


def validate_tree(t: RegularTree) -> None:
    repeated = [node for node, count in Counter(t.nodes).items() if count > 1]
    if repeated:
        raise DuplicateNode(repeated[0])
    if t.root not in t.nodes:
        raise MissingRoot(t.root)
    for node in t.nodes:
        if node not in t.labels:
            raise MissingLabel(node)
        unknown = t.labels[node] - t.ap
        if unknown:
            raise TreeValidationError(f"Node {node} uses undeclared propositions {sorted(unknown)}")
    seen = set()
    declared = set(t.nodes)
    for edge in t.edges:
        if edge.eid in seen:
            raise DuplicateEdge(edge.eid)
        seen.add(edge.eid)
        for endpoint in (edge.source, edge.target):
            if endpoint not in declared:
                raise DanglingEdge(edge.eid, endpoint)
    for node in t.nodes:
        if not t.out_edges(node):
            raise TotalityViolation(node)


@dataclass
class UnfoldNode:
    graph_node: str
    depth: int
    cut: bool
    children: List[Tuple[str, ...]] = field(default_factory=list)


@dataclass
class TruncatedTree:
    """Unfolding up to a depth bound; keys are edge-id paths from the root"""
    tree: RegularTree
    depth: int
    nodes: Dict[Tuple[str, ...], UnfoldNode]

    def label(self, key: Tuple[str, ...]) -> Label:
        return self.tree.label(self.nodes[key].graph_node)

    def __len__(self) -> int:
        return len(self.nodes)


def unfold(t: RegularTree, depth: int) -> TruncatedTree:
    nodes: Dict[Tuple[str, ...], UnfoldNode] = {}
    frontier = [((), t.root)]
    for level in range(depth + 1):
        next_frontier = []
        for key, graph_node in frontier:
            cut = level == depth
            entry = UnfoldNode(graph_node=graph_node, depth=level, cut=cut)
            nodes[key] = entry
            if not cut:
                for edge in t.out_edges(graph_node):
                    child = key + (edge.eid,)
                    entry.children.append(child)
                    next_frontier.append((child, edge.target))
        frontier = next_frontier
    logger.debug("Unfolded %s to depth %d: %d nodes", t.root, depth, len(nodes))
    return TruncatedTree(tree=t, depth=depth, nodes=nodes)


def random_tree(seed, max_nodes: int, ap) -> RegularTree:
    if max_nodes < 1:
        raise ValueError(f"max_nodes must be at least 1, got {max_nodes}")
    rng = np.random.default_rng(seed)
    props = sorted(ap)
    count = int(rng.integers(1, max_nodes + 1))
    names = [f"v{i}" for i in range(count)]
    labels = {}
    edges = []
    for name in names:
        present = rng.random(len(props)) < 0.5
        labels[name] = frozenset(p for p, keep in zip(props, present) if keep)
        for target in rng.integers(0, count, size=int(rng.integers(1, 4))):
            edges.append((f"e{len(edges)}", name, names[int(target)]))
    return RegularTree.build(props, labels, edges, root='v0')


def relabel_edges(t: RegularTree, mapping: Optional[Dict[str, str]] = None) -> RegularTree:
    """Rename edge ids; the default mapping reverses the numbering"""
    if mapping is None:
        ids = [e.eid for e in t.edges]
        mapping = dict(zip(ids, [f"r{i}" for i in reversed(range(len(ids)))]))
    edges = tuple(Edge(e.source, e.target, mapping[e.eid]) for e in t.edges)
    return RegularTree(ap=t.ap, nodes=t.nodes, root=t.root, labels=dict(t.labels), edges=edges)


def duplicate_node(t: RegularTree, node: str) -> RegularTree:
    """Split node into two bisimilar copies, moving every other incoming edge to the copy"""
    copy = f"{node}_dup"
    while copy in t.labels:
        copy += "_"
    labels = dict(t.labels)
    labels[copy] = t.labels[node]
    edges = []
    incoming = 0
    for e in t.edges:
        target = e.target
        if target == node:
            if incoming % 2 == 1:
                target = copy
            incoming += 1
        edges.append(Edge(e.source, target, e.eid))
    for e in t.out_edges(node):
        edges.append(Edge(copy, e.target, f"{e.eid}_dup"))
    return RegularTree(ap=t.ap, nodes=tuple(labels), root=t.root, labels=labels, edges=tuple(edges))


TREE_GRAMMAR = r"""
    start: _NL? ap_line root_line item*
    ap_line: "ap:" ID* _NL
    root_line: "root:" ID _NL
    ?item: node_line | edge_line
    node_line: "node" ID "{" [ID ("," ID)*] "}" _NL
    edge_line: "edge" ID ID "->" ID _NL

    ID: /[A-Za-z0-9_]+/
    COMMENT: /#[^\n]*/
    _NL: (/\r?\n[\t ]*/ | COMMENT)+

    %import common.WS_INLINE
    %ignore WS_INLINE
    %ignore COMMENT
"""


@v_args(inline=True)
class _TreeBuilder(Transformer):
    def ap_line(self, *names):
        return ('ap', [str(n) for n in names])

    def root_line(self, name):
        return ('root', str(name))

    def node_line(self, name, *props):
        return ('node', str(name), frozenset(str(p) for p in props if p is not None))

    def edge_line(self, eid, source, target):
        return ('edge', str(eid), str(source), str(target))

    def start(self, *items):
        ap, root, names, labels, edges = [], None, [], {}, []
        for item in items:
            if item[0] == 'ap':
                ap = item[1]
            elif item[0] == 'root':
                root = item[1]
            elif item[0] == 'node':
                names.append(item[1])
                labels.setdefault(item[1], item[2])
            else:
                edges.append(Edge(source=item[2], target=item[3], eid=item[1]))
        return RegularTree(ap=frozenset(ap), nodes=tuple(names), root=root, labels=labels, edges=tuple(edges))


_tree_parser = Lark(TREE_GRAMMAR, parser='lalr', transformer=_TreeBuilder())


def parse_tree(text: str) -> RegularTree:
    """Parse the tree format; structural problems are left to validate_tree"""
    try:
        return _tree_parser.parse(text if text.endswith("\n") else text + "\n")
    except UnexpectedInput as e:
        raise ParseError("unexpected input in tree file", e.line, e.column) from e


def serialize_tree(t: RegularTree) -> str:
    lines = [f"ap: {' '.join(sorted(t.ap))}".rstrip(), f"root: {t.root}"]
    for node in t.nodes:
        lines.append(f"node {node} {{{','.join(sorted(t.labels[node]))}}}")
    for edge in t.edges:
        lines.append(f"edge {edge.eid} {edge.source} -> {edge.target}")
    return "\n".join(lines) + "\n"
