"""
Script principal do viaduct: núcleo de transporte através de uma junção
Uso em lote: cada subcomando lê um cenário e grava seus arquivos em --out
"""

import argparse
import logging
import os
import sys

from src.core import TrafficState
from src.errors import (BoundsError, BudgetError, FileFormatError, GridError,
                        InvalidFluidityError, ScenarioError, ViaductError)
from src.journey import synthesize, verify_evolution, write_trajectory_csv
from src.oracle import brute_force_kernel, compare
from src.plotting import plot_evolution, plot_kernel_slice
from src.regulator import extract_regulator, load_feedback, save_feedback
from src.relations import TransportRelation, decompose, safety_check, validate_junction
from src.scenario import load_scenario
from src.solver import META_FILE, kernel_membership, read_kernel, side_model, solve, write_kernel

# códigos de saída
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_BUDGET = 4
EXIT_HARD_DIFF = 5

FEEDBACK_FILES = {'in': 'feedback_in.fb', 'ou': 'feedback_ou.fb'}
TRAJECTORY_FILE = 'trajectory.csv'
VERIFICATION_FILE = 'verification.txt'
ORACLE_FILE = 'oracle.csv'
DEFAULT_HORIZON = 8


class UsageError(Exception):
    """Argumentos inconsistentes com o cenário."""


def _banner(title):
    print('=' * 70)
    print(title)
    print('=' * 70)
    print()


def _step(i, n, message):
    print(f'[{i}/{n}] {message}')


def _ok(message):
    print(f'      ✓ {message}')


def _load(args):
    scenario = load_scenario(args.scenario)
    if args.threads is not None:
        scenario.params.threads = args.threads
    if args.seed is not None:
        scenario.seed = args.seed
    _ok(f'{scenario.grid.size:,} células, modo {scenario.mode}')
    return scenario


def _states(args, scenario):
    """Separa os números posicionais em (partida, chegada)."""
    grid = scenario.grid
    width = 2 + grid.p_dim + grid.m_dim
    values = args.states or []
    if len(values) != 2 * width:
        raise UsageError(f'esperado 2 estados de {width} componentes (t d p... x...), '
                         f'recebidos {len(values)} números')
    try:
        dep = TrafficState.from_vector(values[:width], grid.p_dim)
        arr = TrafficState.from_vector(values[width:], grid.p_dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return dep, arr


def _kernel(scenario, args):
    """Núcleo salvo em --out, se existir; senão é calculado em memória."""
    if os.path.exists(os.path.join(args.out, META_FILE)):
        result = read_kernel(scenario, args.out)
        _ok(f'núcleo lido de {args.out}')
    else:
        result = solve(scenario)
        _ok(f'núcleo calculado ({result.iterations} iterações)')
    return result


def _regulators(scenario, result, args):
    regulators = {}
    for side in ('in', 'ou'):
        basin = getattr(result, f'basin_{side}')
        model = side_model(scenario, side)
        path = os.path.join(args.out, FEEDBACK_FILES[side])
        if os.path.exists(path):
            regulators[side] = load_feedback(path, model, basin, scenario.params)
        else:
            regulators[side] = extract_regulator(basin, model, side, scenario.params)
    return regulators


def cmd_solve(args):
    _banner('VIADUCT - NÚCLEO DE TRANSPORTE')
    _step(1, 3, 'Carregando cenário...')
    scenario = _load(args)
    _step(2, 3, 'Calculando bacias de captura...')
    result = solve(scenario)
    for key, value in sorted(result.metadata().items()):
        _ok(f'{key} = {value}')
    _step(3, 3, f'Gravando núcleo em {args.out}...')
    write_kernel(result, args.out)
    _ok('arquivos gravados')
    return EXIT_OK


def cmd_query(args):
    scenario = _load(args)
    dep, arr = _states(args, scenario)
    result = _kernel(scenario, args)
    member = kernel_membership(result, dep, arr)
    print('membro' if member else 'não membro')
    return EXIT_OK if member else EXIT_FAILURE


def cmd_regulate(args):
    _banner('VIADUCT - REGULADORES DE TRANSPORTE')
    _step(1, 3, 'Carregando cenário e núcleo...')
    scenario = _load(args)
    result = _kernel(scenario, args)
    _step(2, 3, 'Extraindo reguladores...')
    os.makedirs(args.out, exist_ok=True)
    for side in ('in', 'ou'):
        basin = getattr(result, f'basin_{side}')
        fb = extract_regulator(basin, side_model(scenario, side), side, scenario.params)
        save_feedback(os.path.join(args.out, FEEDBACK_FILES[side]), fb)
        _ok(f'regulador {side}: {len(fb)} células')
    _step(3, 3, f'Arquivos gravados em {args.out}')
    return EXIT_OK


def cmd_simulate(args):
    _banner('VIADUCT - SÍNTESE DE EVOLUÇÃO')
    _step(1, 4, 'Carregando cenário e núcleo...')
    scenario = _load(args)
    dep, arr = _states(args, scenario)
    result = _kernel(scenario, args)
    _step(2, 4, 'Preparando reguladores...')
    regulators = _regulators(scenario, result, args)
    _step(3, 4, 'Sintetizando e verificando...')
    evo = synthesize(dep, arr, result, regulators['in'], regulators['ou'])
    report = verify_evolution(evo, scenario, result)
    _ok(f'Omega = {evo.aperture!r}')
    _step(4, 4, f'Gravando trajetória em {args.out}...')
    os.makedirs(args.out, exist_ok=True)
    write_trajectory_csv(evo, os.path.join(args.out, TRAJECTORY_FILE))
    with open(os.path.join(args.out, VERIFICATION_FILE), 'w', encoding='utf-8') as handle:
        handle.write(report.as_frame().to_string(index=False) + '\n')
    if report.passed:
        _ok('todas as condições verificadas')
        return EXIT_OK
    print(f'⚠ Condições violadas: {", ".join(report.failures())}')
    return EXIT_FAILURE


def cmd_check(args):
    _banner('VIADUCT - VERIFICAÇÃO DO CENÁRIO')
    scenario = _load(args)
    report = validate_junction(scenario.junction, scenario.monad)
    print(f'Junção válida: {"sim" if report.valid else "não"}')
    print(f'Junção impulsiva: {"sim" if report.impulsive else "não"}')
    for kind, message in report.violations:
        print(f'  • ({kind}) {message}')
    safe = safety_check(scenario.monad)
    print(f'Condição de segurança: {"satisfeita" if safe else "não satisfeita"}')
    if not safe:
        print('Decomposição: não se aplica (relação de mônadas não segura)')
        return EXIT_OK if report.valid else EXIT_VALIDATION
    if scenario.mode == 'product':
        result = _kernel(scenario, args)
        q_in, q_ou = decompose(TransportRelation('product', result.basin_in, result.basin_ou),
                               scenario.junction)
        print(f'Decomposição: |Q_in| = {len(q_in)}, |Q_ou| = {len(q_ou)}')
    return EXIT_OK if report.valid else EXIT_VALIDATION


def cmd_oracle(args):
    _banner('VIADUCT - ORÁCULO DE FORÇA BRUTA')
    _step(1, 2, 'Carregando cenário...')
    scenario = _load(args)
    _step(2, 2, f'Enumerando pares (horizonte {args.horizon})...')
    oracle = brute_force_kernel(scenario, args.horizon)
    os.makedirs(args.out, exist_ok=True)
    oracle.save(os.path.join(args.out, ORACLE_FILE))
    _ok(f'{len(oracle)} pares ligáveis')
    return EXIT_OK


def cmd_diff(args):
    _banner('VIADUCT - NÚCLEO x ORÁCULO')
    _step(1, 3, 'Carregando cenário e núcleo...')
    scenario = _load(args)
    result = _kernel(scenario, args)
    _step(2, 3, f'Enumerando pares do oráculo (horizonte {args.horizon})...')
    oracle = brute_force_kernel(scenario, args.horizon)
    _step(3, 3, 'Comparando...')
    stats = compare(result, oracle)
    print()
    print(stats.as_frame().to_string(index=False))
    print()
    if stats.hard_failures:
        print(f'⚠ {stats.hard_failures} falhas graves')
        return EXIT_HARD_DIFF
    _ok('nenhuma falha grave')
    return EXIT_OK


def cmd_plot(args):
    _banner('VIADUCT - FIGURAS')
    scenario = _load(args)
    result = _kernel(scenario, args)
    grid = scenario.grid
    os.makedirs(args.out, exist_ok=True)
    # corte (t, p0) no meio do eixo de duração, demais eixos no primeiro nó
    fixed = {a: 0 for a in range(grid.ndim) if a not in (0, 2)}
    fixed[1] = grid.axes[1].count // 2
    for side in ('in', 'ou'):
        path = os.path.join(args.out, f'kernel_{side}.png')
        plot_kernel_slice(getattr(result, f'basin_{side}'), fixed, path,
                          title=f'Bacia {side} (d = {grid.axes[1].node(fixed[1]):g})')
        _ok(path)
    if args.states:
        dep, arr = _states(args, scenario)
        regulators = _regulators(scenario, result, args)
        evo = synthesize(dep, arr, result, regulators['in'], regulators['ou'])
        path = os.path.join(args.out, 'evolution.png')
        plot_evolution(evo, path)
        _ok(path)
    return EXIT_OK


COMMANDS = {
    'solve': cmd_solve,
    'query': cmd_query,
    'regulate': cmd_regulate,
    'simulate': cmd_simulate,
    'check': cmd_check,
    'oracle': cmd_oracle,
    'diff': cmd_diff,
    'plot': cmd_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='Main.py',
        description='Núcleo de transporte através de uma junção (bacias de captura em grade)',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exemplos de uso:

  # Calcular e gravar o núcleo do cenário A
  python Main.py solve scenarios/analytic-a.cfg --out out/a

  # Consultar um par (partida t d p x, chegada t d p x)
  python Main.py query scenarios/analytic-a.cfg --out out/a -2 2 -3 0  2 2 8 0

  # Comparar com o oráculo de força bruta
  python Main.py diff scenarios/analytic-a.cfg --horizon 8
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument('scenario', help='arquivo de cenário (.cfg)')
        if name in ('query', 'simulate', 'plot'):
            cmd.add_argument('states', nargs='*' if name == 'plot' else '+', type=float,
                             help='estados de partida e de chegada: t d p... x... t d p... x...')
        cmd.add_argument('--out', default='out', help='diretório de saída (padrão: out)')
        cmd.add_argument('--threads', type=int, default=None,
                         help='threads do solver (padrão: todos os núcleos)')
        cmd.add_argument('--horizon', type=int, default=DEFAULT_HORIZON,
                         help=f'passos do oráculo (padrão: {DEFAULT_HORIZON})')
        cmd.add_argument('--seed', type=int, default=None, help='semente (sobrepõe run.seed)')
        cmd.add_argument('--verbose', action='store_true', help='log em nível DEBUG')
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f'❌ Uso incorreto: {e}', file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, BoundsError, GridError, FileFormatError, InvalidFluidityError) as e:
        print(f'❌ Erro de validação: {e}', file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetError as e:
        print(f'❌ Orçamento excedido: {e}', file=sys.stderr)
        return EXIT_BUDGET
    except OSError as e:
        print(f'❌ Erro de arquivo: {e}', file=sys.stderr)
        return EXIT_USAGE
    except ViaductError as e:
        print(f'❌ Erro durante execução: {e}', file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print('\n\nExecução interrompida pelo usuário.')
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
