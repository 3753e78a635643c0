import logging
import sys
from pathlib import Path
from typing import Optional

import click

from src.config import Settings, get_settings
from src.errors import (
    AlphabetMismatch,
    ConversionBudgetExceeded,
    GradedLogicError,
    NormalizationIncomplete,
    NotCounterFree,
    NotInFragment,
    ParseError,
    SubclassViolation,
    TreeValidationError,
)
from src.fuzz import SUITES, replay_command, run_suite
from src.logic import Fragment, check_fragment, normalize_ctlsf, normalize_polcctlp, parse_formula, print_formula
from src.regular_tree import parse_tree, serialize_tree, validate_tree
from src.semantics import mc_ctlsf, mc_polcctlp
from src.translate import DIRECTIONS, translate_artifact
from src.tree_automata import Exclusion, Subclass, check_mutual_exclusion, parse_tree_automaton, validate_subclass
from src.word_automata import is_counter_free, parse_word_automaton

logger = logging.getLogger(__name__)

HOLDS, FAILS, UNKNOWN, USAGE = 0, 1, 2, 3

KINDS = {'.tree': 'tree', '.formula': 'formula', '.ltl': 'formula', '.wa': 'word-automaton', '.gta': 'tree-automaton'}
FRAGMENTS = {f.value.lower(): f for f in Fragment}


def _read(path_or_text: str) -> str:
    path = Path(path_or_text)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    return path_or_text


def _verdict(line: str, *details: str) -> None:
    click.echo(line)
    for detail in details:
        click.echo(detail)


@click.group()
@click.option('--verbose', is_flag=True, help='Log at DEBUG level on standard error')
@click.option('--max-nodes', type=int, default=None, help='Largest sampled tree (default 6)')
@click.option('--word-length', type=int, default=None, help='Bound for word and path enumeration (default 8)')
@click.option('--depth', type=int, default=None, help='Unfolding depth of bounded oracles (default 8)')
@click.option('--budget', type=int, default=None, help='Formula node budget of automaton conversions (default 50000)')
@click.option('--workers', type=int, default=None, help='Sampling worker threads (default 4)')
@click.pass_context
def main(ctx: click.Context, verbose: bool, max_nodes: Optional[int], word_length: Optional[int],
         depth: Optional[int], budget: Optional[int], workers: Optional[int]):
    """Graded branching-time logics and tree automata on regular trees"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = get_settings().with_overrides(max_nodes=max_nodes, word_length=word_length, depth=depth,
                                            conversion_budget=budget, workers=workers)


@main.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--kind', type=click.Choice(sorted(set(KINDS.values()))), default=None,
              help='Artifact kind; inferred from the suffix when omitted')
@click.option('--subclass', type=click.Choice([s.value for s in Subclass]), default=Subclass.GTA.value,
              help='Tree-automaton class to validate against')
@click.option('--dot', type=click.Path(dir_okay=False), default=None,
              help='Write a Graphviz view of a tree or word automaton here')
def validate(path: str, kind: Optional[str], subclass: str, dot: Optional[str]) -> int:
    """Parse an artifact and check its structural invariants"""
    kind = kind or KINDS.get(Path(path).suffix)
    if kind is None:
        raise click.UsageError(f"Cannot infer the kind of {path}, pass --kind")
    text = _read(path)
    if kind == 'tree':
        tree = parse_tree(text)
        validate_tree(tree)
        if dot:
            Path(dot).write_text(tree.to_dot(), encoding="utf-8")
        _verdict("PASS", f"✓ tree with {len(tree.nodes)} nodes and {len(tree.edges)} edges")
    elif kind == 'formula':
        phi = parse_formula(text)
        _verdict("PASS", f"✓ {print_formula(phi)}")
    elif kind == 'word-automaton':
        a = parse_word_automaton(text)
        if dot:
            Path(dot).write_text(a.to_dot(), encoding="utf-8")
        _verdict("PASS", f"✓ word automaton with {len(a.states)} states over {len(a.alphabet)} letters")
    else:
        a = parse_tree_automaton(text)
        try:
            validate_subclass(a, Subclass(subclass))
        except SubclassViolation as e:
            _verdict("FAIL", *(f"✗ {d}" for d in e.diagnostics))
            return FAILS
        _verdict("PASS", f"✓ {subclass} with {len(a.states)} states in {len(a.components)} components")
    return HOLDS


@main.command('check-fragment')
@click.option('--as', 'fragment', required=True, type=click.Choice(sorted(FRAGMENTS)), help='Fragment name')
@click.argument('formula')
def check_fragment_command(fragment: str, formula: str) -> int:
    """Decide membership of a formula in a syntactic fragment"""
    phi = parse_formula(_read(formula))
    target = FRAGMENTS[fragment]
    if check_fragment(phi, target):
        _verdict("PASS", f"✓ {print_formula(phi)} is in {target.value}")
        return HOLDS
    _verdict("FAIL", f"✗ {print_formula(phi)} is not in {target.value}")
    return FAILS


@main.command()
@click.option('--from', 'source', required=True, type=click.Choice(sorted({s for s, _ in DIRECTIONS})))
@click.option('--to', 'target', required=True, type=click.Choice(sorted({t for _, t in DIRECTIONS})))
@click.option('--validate', 'validate_output', is_flag=True, help='Compare input and output on sampled trees')
@click.option('--samples', type=int, default=None, help='Sampled trees for --validate (default 200)')
@click.option('--seed', type=int, default=None, help='Sampling seed (default GRADEDLOGIC_SEED or 7)')
@click.option('-o', '--output', type=click.Path(dir_okay=False), default=None, help='Write the translated artifact here')
@click.argument('artifact')
@click.pass_obj
def translate(settings: Settings, source: str, target: str, validate_output: bool, samples: Optional[int],
              seed: Optional[int], output: Optional[str], artifact: str) -> int:
    """Translate between automata and formulas"""
    if (source, target) not in DIRECTIONS:
        raise click.UsageError(f"No translation from {source} to {target}")
    settings = settings.with_overrides(samples=samples, seed=seed)
    text = _read(artifact)
    parsed = parse_tree_automaton(text) if DIRECTIONS[(source, target)] == 'automaton' else parse_formula(text)
    report = translate_artifact(source, target, parsed, validate=validate_output, settings=settings)
    if output:
        Path(output).write_text(report.output_text(), encoding="utf-8")
    if report.validation is not None and not report.validation.holds:
        _verdict("FAIL", report.render().rstrip("\n"), "✗ translation disagrees with its input on a sampled tree")
        return FAILS
    _verdict("PASS", report.render().rstrip("\n"))
    if output:
        click.echo(f"✓ Written to {output}")
    return HOLDS


@main.command()
@click.option('--logic', required=True, type=click.Choice(['polcctlp', 'ctlsf']))
@click.argument('tree', type=click.Path(exists=True, dir_okay=False))
@click.argument('formula')
def mc(logic: str, tree: str, formula: str) -> int:
    """Model-check a formula at the root of a regular tree"""
    t = parse_tree(_read(tree))
    validate_tree(t)
    phi = parse_formula(_read(formula))
    verdict = (mc_polcctlp if logic == 'polcctlp' else mc_ctlsf)(t, phi)
    if verdict.holds:
        _verdict("PASS", f"✓ {print_formula(phi)} holds at {t.root}")
        return HOLDS
    _verdict("FAIL", f"✗ {print_formula(phi)} fails at {t.root}")
    return FAILS


@main.command()
@click.option('--target', required=True, type=click.Choice(['polcctlstar', 'efpurepast']))
@click.option('--samples', type=int, default=None, help='Sampled trees verifying the candidate (default 200)')
@click.option('--seed', type=int, default=None)
@click.argument('formula')
@click.pass_obj
def normalize(settings: Settings, target: str, samples: Optional[int], seed: Optional[int], formula: str) -> int:
    """Rewrite into the polarized CTL* grammar or the EF/pure-past grammar"""
    settings = settings.with_overrides(samples=samples, seed=seed)
    phi = parse_formula(_read(formula))
    result = normalize_ctlsf(phi, settings) if target == 'polcctlstar' else normalize_polcctlp(phi, settings)
    _verdict("PASS", print_formula(result))
    return HOLDS


@main.command()
@click.argument('automaton', type=click.Path(exists=True, dir_okay=False))
def cfree(automaton: str) -> int:
    """Decide counter-freeness of a word automaton"""
    a = parse_word_automaton(_read(automaton))
    freeness = is_counter_free(a)
    if freeness:
        _verdict("PASS", f"✓ counter-free ({len(a.states)} states)")
        return HOLDS
    word, n, q = freeness.witness
    letters = " ".join("{" + ",".join(sorted(x)) + "}" if isinstance(x, frozenset) else str(x) for x in word)
    _verdict("FAIL", f"✗ counter: word={letters} n={n} state={q}")
    return FAILS


@main.command()
@click.argument('automaton', type=click.Path(exists=True, dir_okay=False))
@click.option('--samples', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.pass_obj
def mutex(settings: Settings, automaton: str, samples: Optional[int], seed: Optional[int]) -> int:
    """Check that annotation sets of every component are mutually exclusive"""
    a = parse_tree_automaton(_read(automaton))
    validate_subclass(a, Subclass.HWGT)
    result = check_mutual_exclusion(a, settings.with_overrides(samples=samples, seed=seed))
    if result.status is Exclusion.CERTIFIED:
        _verdict("PASS", "✓ certified by complement pairs")
        return HOLDS
    if result.status is Exclusion.REFUTED:
        tree, c1, c2 = result.witness
        _verdict("FAIL", f"✗ {sorted(map(str, c1))} and {sorted(map(str, c2))} are not exclusive",
                 serialize_tree(tree).rstrip("\n"))
        return FAILS
    _verdict("UNKNOWN", f"! no refutation in {result.samples} sampled trees")
    return UNKNOWN


@main.command()
@click.option('--suite', required=True, type=click.Choice(sorted(SUITES)))
@click.option('--samples', type=int, default=200, show_default=True, help='Number of trials')
@click.option('--seed', type=int, default=None, help='Suite seed (default GRADEDLOGIC_SEED or 7)')
@click.option('--trees', type=int, default=None, help='Sampled trees per comparison (default 200)')
@click.option('--trial', type=int, default=None, help='Replay a single trial')
@click.option('--artifacts', type=click.Path(file_okay=False), default=None, help='Directory for failure artifacts')
@click.pass_obj
def fuzz(settings: Settings, suite: str, samples: int, seed: Optional[int], trees: Optional[int],
         trial: Optional[int], artifacts: Optional[str]) -> int:
    """Run a differential suite and print a summary line"""
    settings = settings.with_overrides(samples=trees, seed=seed)
    result = run_suite(suite, samples, settings, only_trial=trial)
    click.echo(result.summary_line())
    for failure in result.failures:
        click.echo(f"✗ trial {failure.trial}: {failure.description}")
        click.echo(f"  replay: {replay_command(suite, settings, failure.trial)}")
        if artifacts:
            folder = Path(artifacts) / f"{suite}-{failure.trial}"
            folder.mkdir(parents=True, exist_ok=True)
            for name, content in failure.artifacts.items():
                (folder / name).write_text(content, encoding="utf-8")
            click.echo(f"  artifacts: {folder}")
        else:
            for name, content in failure.artifacts.items():
                click.echo(f"  {name}:")
                for line in content.splitlines():
                    click.echo(f"    {line}")
    if result.unknown:
        click.echo(f"! {result.unknown} trials undecided")
    return HOLDS if result.passed else FAILS


def run(argv=None) -> int:
    """Entry point returning the exit code: 0 holds, 1 fails, 2 unknown or budget, 3 usage or parse error"""
    try:
        rv = main.main(args=argv, prog_name="gradedlogic", standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"✗ {e.format_message()}", err=True)
        return USAGE
    except click.Abort:
        return USAGE
    except (ParseError, TreeValidationError, NotInFragment, SubclassViolation, AlphabetMismatch) as e:
        click.echo(f"✗ {e}", err=True)
        return USAGE
    except (NormalizationIncomplete, ConversionBudgetExceeded, NotCounterFree) as e:
        click.echo("UNKNOWN")
        click.echo(f"! {e}", err=True)
        return UNKNOWN
    except GradedLogicError as e:
        click.echo("FAIL")
        click.echo(f"✗ {e}", err=True)
        return FAILS
    return rv if isinstance(rv, int) else HOLDS


if __name__ == "__main__":
    sys.exit(run())
