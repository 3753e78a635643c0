import pytest
from dotenv import load_dotenv

from src.config import Settings
from src.regular_tree import RegularTree

load_dotenv()


@pytest.fixture
def settings():
    """Small bounds so sampled checks stay fast"""
    return Settings(samples=40, max_nodes=4, word_length=6, depth=6, seed=7, workers=2)


@pytest.fixture
def loop_p():
    """Single node labelled {p} with a self-loop"""
    return RegularTree.build(['p', 'q'], {'v0': frozenset({'p'})}, [('e0', 'v0', 'v0')])


@pytest.fixture
def loop_empty():
    return RegularTree.build(['p', 'q'], {'v0': frozenset()}, [('e0', 'v0', 'v0')])


@pytest.fixture
def p_then_q():
    """v0{p} -> v1{q}, v1 loops"""
    return RegularTree.build(['p', 'q'], {'v0': frozenset({'p'}), 'v1': frozenset({'q'})},
                             [('e0', 'v0', 'v1'), ('e1', 'v1', 'v1')])


@pytest.fixture
def two_p_children():
    """Root {} with two distinct self-looping children labelled {p}"""
    return RegularTree.build(['p', 'q'], {'v0': frozenset(), 'a': frozenset({'p'}), 'b': frozenset({'p'})},
                             [('e1', 'v0', 'a'), ('e2', 'v0', 'b'), ('ea', 'a', 'a'), ('eb', 'b', 'b')])


@pytest.fixture
def branching_p():
    """Root {} with one p-branch and one p-free branch"""
    return RegularTree.build(['p', 'q'], {'v0': frozenset(), 'a': frozenset({'p'}), 'b': frozenset()},
                             [('e1', 'v0', 'a'), ('e2', 'v0', 'b'), ('ea', 'a', 'a'), ('eb', 'b', 'b')])
