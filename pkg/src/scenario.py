"""Leitura e validação de arquivos de cenário.

Formato: uma linha `seção.chave = valor` por parâmetro, comentários com
`#`, vetores separados por vírgula e linhas de matriz separadas por `;`.
Todos os problemas encontrados são reunidos em um único ScenarioError.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.core import EPS, Fluidities, GridSpec
from src.dynamics import CelerityBounds, SurgeField
from src.errors import GridError, InvalidFluidityError, ScenarioError
from src.relations import (CellSet, JunctionPair, JunctionRelation, JunctionReport,
                           MonadRelation, validate_junction)
from src.solver import SolverParams

logger = logging.getLogger(__name__)

SECTIONS = ('grid', 'fluidity', 'celerity', 'surge', 'surge_in', 'surge_ou', 'monad',
            'junction', 'solver', 'run')
REPEATABLE = ('junction.pair', 'junction.pre', 'junction.post', 'monad.cell')
MODES = ('product', 'coupled')


@dataclass
class Scenario:
    """Cenário completo: grade, dinâmica, relações e parâmetros do solver."""
    name: str
    grid: GridSpec
    fluidities: Fluidities
    celerity: CelerityBounds
    surge_in: SurgeField
    surge_ou: SurgeField
    monad: MonadRelation
    junction: JunctionRelation
    mode: str = 'product'
    coupling: bool = False
    params: SolverParams = None
    seed: int = 0
    junction_report: JunctionReport = None

    def __post_init__(self):
        if self.params is None:
            self.params = SolverParams()


class _Entry:
    def __init__(self, value, line, column):
        self.value = value
        self.line = line
        self.column = column

    @property
    def where(self):
        return f'linha {self.line}, coluna {self.column}'


def parse_entries(text):
    """Separa o texto em {chave: [_Entry, ...]} e problemas de leitura."""
    entries = {}
    issues = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].rstrip()
        if not line.strip():
            continue
        if '=' not in line:
            issues.append((f'linha {number}', 'esperado "seção.chave = valor"'))
            continue
        key, value = line.split('=', 1)
        key = key.strip()
        column = line.index('=') + 2 + len(value) - len(value.lstrip())
        section = key.split('.', 1)[0]
        if '.' not in key or section not in SECTIONS:
            issues.append((f'linha {number}', f'chave desconhecida {key!r}'))
            continue
        if key in entries and key not in REPEATABLE:
            issues.append((f'linha {number}', f'chave {key!r} repetida'))
            continue
        entries.setdefault(key, []).append(_Entry(value.strip(), number, column))
    return entries, issues


class _Fields:
    """Acesso tipado às entradas, acumulando problemas em vez de falhar."""

    def __init__(self, entries, issues):
        self.entries = entries
        self.issues = issues
        self.used = set()

    def issue(self, where, message):
        self.issues.append((where, message))

    def has_prefix(self, prefix):
        return any(key.startswith(prefix + '.') for key in self.entries)

    def keys_with_prefix(self, prefix):
        return sorted(key for key in self.entries if key == prefix or key.startswith(prefix + '.'))

    def _convert(self, key, entry, convert):
        try:
            return convert(entry.value)
        except (ValueError, TypeError) as exc:
            self.issue(entry.where, f'{key}: valor inválido {entry.value!r} ({exc})')
            return None

    def get(self, key, convert, default=None, required=False):
        self.used.add(key)
        if key not in self.entries:
            if required:
                self.issue(key, 'campo obrigatório ausente')
            return default
        return self._convert(key, self.entries[key][0], convert)

    def get_all(self, key, convert):
        self.used.add(key)
        values = []
        for entry in self.entries.get(key, []):
            value = self._convert(key, entry, convert)
            if value is not None:
                values.append(value)
        return values

    def unused(self):
        return [(self.entries[key][0], key) for key in sorted(self.entries) if key not in self.used]


def _floats(value):
    items = [v.strip() for v in value.split(',')]
    if not items or any(not v for v in items):
        raise ValueError('vetor vazio')
    numbers = [float(v) for v in items]
    if not all(math.isfinite(v) for v in numbers):
        raise ValueError('componente não finita')
    return numbers


def _matrix(value):
    return [_floats(row) for row in value.split(';')]


def _triple(value):
    lo, hi, count = _floats(value)
    if count != int(count):
        raise ValueError('count deve ser inteiro')
    return lo, hi, int(count)


def _boolean(value):
    lowered = value.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError('esperado true/false')


def _indexed(fields, prefix):
    """Triplas de `prefix` ou de `prefix.0`, `prefix.1`, ... em ordem."""
    keys = fields.keys_with_prefix(prefix)
    if prefix in keys:
        if len(keys) > 1:
            fields.issue(prefix, f'use {prefix} ou {prefix}.i, não ambos')
        return [fields.get(prefix, _triple)]
    indexed = []
    for key in keys:
        suffix = key[len(prefix) + 1:]
        if not suffix.isdigit():
            continue
        indexed.append((int(suffix), fields.get(key, _triple)))
    indexed.sort()
    if [i for i, _ in indexed] != list(range(len(indexed))):
        fields.issue(prefix, 'índices de eixo devem ser 0, 1, 2, ...')
    return [spec for _, spec in indexed]


def _build_grid(fields):
    time = fields.get('grid.time', _triple, required=True)
    duration = fields.get('grid.duration', _triple, required=True)
    positions = _indexed(fields, 'grid.position')
    monads = _indexed(fields, 'grid.monad')
    if not positions:
        fields.issue('grid.position', 'pelo menos um eixo de posição é obrigatório')
    if not monads:
        fields.issue('grid.monad', 'pelo menos um eixo de mônada é obrigatório')
    if None in [time, duration] + positions + monads or not positions or not monads:
        return None
    try:
        return GridSpec.state_grid(time, duration, positions, monads)
    except GridError as exc:
        fields.issue('grid', str(exc))
        return None


def _build_fluidities(fields):
    rates = {}
    for side in ('in', 'ou'):
        key = f'fluidity.{side}'
        value = fields.get(key, float, required=True)
        if value is not None and not (math.isfinite(value) and value > 0):
            fields.issue(key, f'fluidez deve ser finita e > 0 (recebido {value})')
            value = None
        rates[side] = value
    if None in rates.values():
        return None
    try:
        return Fluidities(rates['in'], rates['ou'])
    except InvalidFluidityError as exc:
        fields.issue('fluidity', str(exc))
        return None


def _build_celerity(fields, p_dim):
    c_min = fields.get('celerity.min', _floats, required=True)
    c_max = fields.get('celerity.max', _floats, required=True)
    samples = fields.get('celerity.samples', int, default=3)
    if c_min is None or c_max is None or samples is None:
        return None
    if len(c_min) != p_dim or len(c_max) != p_dim:
        fields.issue('celerity', f'celeridades devem ter {p_dim} componentes')
        return None
    try:
        return CelerityBounds(tuple(c_min), tuple(c_max), samples)
    except ValueError as exc:
        fields.issue('celerity', str(exc))
        return None


def _build_junction(fields, p_dim, m_dim):
    kind = fields.get('junction.kind', str, default='impulsive')
    state_len = 1 + p_dim + m_dim

    def split_state(values):
        return values[0], values[1:1 + p_dim], values[1 + p_dim:state_len]

    if kind == 'impulsive':
        values = fields.get('junction.impulsive', _floats, required=True)
        if values is None:
            return None
        if len(values) != 1 + 2 * p_dim + m_dim:
            fields.issue('junction.impulsive',
                         f'esperado sigma, pi_in, pi_ou, xi ({1 + 2 * p_dim + m_dim} valores)')
            return None
        sigma = values[0]
        pi_in = values[1:1 + p_dim]
        pi_ou = values[1 + p_dim:1 + 2 * p_dim]
        xi = values[1 + 2 * p_dim:]
        return JunctionRelation.impulsive_singleton(sigma, pi_in, pi_ou, xi)
    if kind == 'pairs':
        pairs = []
        for values in fields.get_all('junction.pair', _floats):
            if len(values) != 2 * state_len:
                fields.issue('junction.pair', f'cada par exige {2 * state_len} valores')
                continue
            s_in, p_in, x_in = split_state(values[:state_len])
            s_ou, p_ou, x_ou = split_state(values[state_len:])
            pairs.append(JunctionPair(s_in, p_in, x_in, s_ou, p_ou, x_ou))
        return JunctionRelation(pairs)
    if kind == 'product':
        sides = {}
        for side in ('pre', 'post'):
            states = []
            for values in fields.get_all(f'junction.{side}', _floats):
                if len(values) != state_len:
                    fields.issue(f'junction.{side}', f'cada estado exige {state_len} valores')
                    continue
                states.append(split_state(values))
            sides[side] = states
        pairs = [JunctionPair(a[0], a[1], a[2], b[0], b[1], b[2])
                 for a in sides['pre'] for b in sides['post']]
        return JunctionRelation(pairs, product=True)
    fields.issue('junction.kind', f'tipo desconhecido {kind!r} (impulsive, pairs, product)')
    return None


def _build_surge(fields, prefix, grid, junction):
    kind = fields.get(f'{prefix}.kind', str, default='constant')
    samples = fields.get(f'{prefix}.samples', int, default=1 if kind == 'constant' else 3)
    detector = fields.get(f'{prefix}.detector', str, default='duration')
    matrix = fields.get(f'{prefix}.matrix', _matrix)
    values = {name: fields.get(f'{prefix}.{name}', _floats)
              for name in ('value', 'lower', 'upper', 'offset')}
    if samples is None:
        return None
    if samples < 1:
        fields.issue(f'{prefix}.samples', f'amostras devem ser >= 1 (recebido {samples})')
        return None
    if kind == 'affine' and matrix is not None:
        widths = {len(row) for row in matrix}
        if widths != {grid.ndim}:
            fields.issue(f'{prefix}.matrix', f'cada linha da matriz afim exige {grid.ndim} '
                                             f'colunas (t, d, p..., x...), recebido '
                                             f'{sorted(widths)}')
            return None
    positions = None
    if junction is not None and junction.pairs:
        positions = sorted({pair.pi_in for pair in junction.pairs}
                           | {pair.pi_ou for pair in junction.pairs})
    try:
        return SurgeField(kind, grid.m_dim, samples=samples,
                          value=values['value'], lower=values['lower'],
                          upper=values['upper'], matrix=matrix, offset=values['offset'],
                          detector=detector, junction_positions=positions)
    except (ValueError, TypeError) as exc:
        fields.issue(prefix, str(exc))
        return None


def _capacity(fields, points, p_dim):
    """Capacidade b(t, d, p): afim (b0, bt, bd, bp...) ou tabelada no tempo."""
    coefficients = fields.get('monad.capacity', _floats)
    times = fields.get('monad.capacity_times', _floats)
    values = fields.get('monad.capacity_values', _floats)
    if coefficients is not None:
        if len(coefficients) != 3 + p_dim:
            fields.issue('monad.capacity', f'esperado b0, bt, bd e {p_dim} coeficientes de p')
            return None
        head = np.asarray(coefficients[:3])
        slope = np.asarray(coefficients[3:])
        return head[0] + points[:, 0] * head[1] + points[:, 1] * head[2] \
            + points[:, 2:2 + p_dim] @ slope
    if times is not None and values is not None:
        if len(times) != len(values) or np.any(np.diff(times) <= 0):
            fields.issue('monad.capacity_times', 'tempos crescentes e do mesmo tamanho dos valores')
            return None
        return np.interp(points[:, 0], times, values)
    fields.issue('monad.capacity', 'capacidade exige coeficientes ou tabela no tempo')
    return None


def _build_monad(fields, grid):
    kind = fields.get('monad.kind', str, default='box')
    points = grid.centers()
    p_dim, m_dim = grid.p_dim, grid.m_dim
    x = points[:, 2 + p_dim:]
    if kind == 'box':
        lower = fields.get('monad.lower', _floats, default=[-np.inf] * m_dim)
        upper = fields.get('monad.upper', _floats, default=[np.inf] * m_dim)
        if lower is None or upper is None:
            return None
        if len(lower) != m_dim or len(upper) != m_dim:
            fields.issue('monad', f'limites da caixa devem ter {m_dim} componentes')
            return None
        mask = np.all((x >= np.asarray(lower) - EPS) & (x <= np.asarray(upper) + EPS), axis=1)
    elif kind == 'capacity':
        bound = _capacity(fields, points, p_dim)
        if bound is None:
            return None
        mask = np.all((x >= -EPS) & (x <= bound[:, None] + EPS), axis=1)
    elif kind == 'cells':
        mask = np.zeros(grid.size, dtype=bool)
        for index in fields.get_all('monad.cell', _floats):
            if len(index) != grid.ndim or any(i != int(i) for i in index):
                fields.issue('monad.cell', f'índice de célula exige {grid.ndim} inteiros')
                continue
            index = tuple(int(i) for i in index)
            if any(i < 0 or i >= n for i, n in zip(index, grid.shape)):
                fields.issue('monad.cell', f'célula {index} fora da grade')
                continue
            mask[grid.flat(index)] = True
    else:
        fields.issue('monad.kind', f'tipo desconhecido {kind!r} (box, capacity, cells)')
        return None
    return MonadRelation(CellSet(grid, mask))


def _build_params(fields):
    try:
        return SolverParams(
            dilation_radius=fields.get('solver.dilation_radius', int, default=1),
            max_iterations=fields.get('solver.max_iterations', int, default=10_000),
            duration_zero_tolerance=fields.get('solver.duration_zero_tolerance', float),
            cell_budget=fields.get('solver.cell_budget', int),
            threads=fields.get('solver.threads', int))
    except (ValueError, TypeError) as exc:
        fields.issue('solver', str(exc))
        return None


def from_text(text, name='cenário'):
    """Monta e valida um cenário a partir do texto do arquivo."""
    entries, issues = parse_entries(text)
    fields = _Fields(entries, issues)
    grid = _build_grid(fields)
    fluidities = _build_fluidities(fields)
    if grid is None:
        raise ScenarioError(fields.issues)
    celerity = _build_celerity(fields, grid.p_dim)
    junction = _build_junction(fields, grid.p_dim, grid.m_dim)
    surge = {}
    for side in ('in', 'ou'):
        prefix = f'surge_{side}' if fields.has_prefix(f'surge_{side}') else 'surge'
        surge[side] = _build_surge(fields, prefix, grid, junction)
    monad = _build_monad(fields, grid)
    coupling = fields.get('monad.coupling', _boolean, default=False)
    params = _build_params(fields)
    mode = fields.get('solver.mode', str, default='product')
    seed = fields.get('run.seed', int, default=0)
    if mode not in MODES:
        fields.issue('solver.mode', f'modo desconhecido {mode!r} (product, coupled)')
    if coupling and celerity is not None and celerity.p_dim != grid.m_dim:
        fields.issue('monad.coupling', 'acoplamento exige tantos eixos de mônada quanto de posição')
    for entry, key in fields.unused():
        fields.issue(entry.where, f'chave desconhecida {key!r}')

    report = None
    if junction is not None and monad is not None:
        if not junction.pairs:
            fields.issue('junction', 'relação de junção vazia')
        else:
            junction = junction.snap(grid)
            report = validate_junction(junction, monad)
            for kind, message in report.violations:
                fields.issue(f'junction ({kind})', message)
            if mode == 'product' and not junction.is_product:
                fields.issue('solver.mode', 'junção não é produto; use solver.mode = coupled')
    if fields.issues:
        raise ScenarioError(fields.issues)
    logger.info('cenário %s: %d células, modo %s', name, grid.size, mode)
    return Scenario(name, grid, fluidities, celerity, surge['in'], surge['ou'], monad, junction,
                    mode, coupling, params, seed, report)


def load_scenario(path):
    with open(path, encoding='utf-8') as handle:
        text = handle.read()
    return from_text(text, name=path)
