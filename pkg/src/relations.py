"""Relações sobre a grade: conjuntos de células, relação de mônadas,
relação de junção e relação de transporte.

Toda relação é guardada como um CellSet denso (um booleano por célula).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.core import EPS, Axis, GridSpec, TrafficState
from src.errors import (BoundsError, FileFormatError, GridError, NoJunctionError,
                        RepresentationError)

logger = logging.getLogger(__name__)

CELLSET_HEADER = 'VIADUCT-CELLSET v1'


class CellSet:
    """Subconjunto de células de uma grade.

    A máscara é imutável depois da construção; as operações de conjunto
    devolvem novos CellSets sobre a mesma grade.
    """

    def __init__(self, grid, mask):
        mask = np.array(mask, dtype=bool, copy=True)
        if mask.size != grid.size:
            raise GridError(f'máscara com {mask.size} células para grade com {grid.size}')
        mask = mask.reshape(grid.shape)
        mask.setflags(write=False)
        self.grid = grid
        self.mask = mask

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def from_flat(cls, grid, flat_indices):
        mask = np.zeros(grid.size, dtype=bool)
        mask[np.asarray(list(flat_indices), dtype=np.int64)] = True
        return cls(grid, mask)

    def _same_grid(self, other):
        if self.grid != other.grid:
            raise GridError('operação entre CellSets de grades diferentes')

    def __or__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, self.mask | other.mask)

    def __and__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, self.mask & other.mask)

    def __sub__(self, other):
        self._same_grid(other)
        return CellSet(self.grid, self.mask & ~other.mask)

    def __invert__(self):
        return CellSet(self.grid, ~self.mask)

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.grid == other.grid and bool(np.array_equal(self.mask, other.mask))

    def __len__(self):
        return int(self.mask.sum())

    def __repr__(self):
        return f'CellSet({len(self)}/{self.grid.size} células)'

    @property
    def flat_mask(self):
        return self.mask.reshape(-1)

    def flat_indices(self):
        return np.flatnonzero(self.flat_mask)

    def is_empty(self):
        return not self.mask.any()

    def has_flat(self, flat_index):
        return bool(self.flat_mask[flat_index])


def contains(rel, state):
    """Pertinência da célula que contém o estado (vetor ou TrafficState)."""
    vector = state.as_vector() if isinstance(state, TrafficState) else np.asarray(state, dtype=float)
    index = rel.grid.locate(vector)
    return bool(rel.mask[index])


def product_subset_check(factors, rel):
    """Verifica se o produto cartesiano dos fatores (índices por eixo) está em rel."""
    if len(factors) != rel.grid.ndim:
        raise GridError(f'{len(factors)} fatores para grade de {rel.grid.ndim} eixos')
    factors = [np.asarray(sorted(set(int(i) for i in f)), dtype=np.int64) for f in factors]
    if any(f.size == 0 for f in factors):
        return True
    for axis, f in zip(rel.grid.axes, factors):
        if f.min() < 0 or f.max() >= axis.count:
            raise BoundsError(f'índice fora do eixo {axis.label}')
    return bool(rel.mask[np.ix_(*factors)].all())


def is_restriction(r1, r2):
    """r1 é restrição de r2 (r1 contido em r2)."""
    r1._same_grid(r2)
    return not (r1.mask & ~r2.mask).any()


def temporal_profile(M, t_index):
    """Perfil temporal: células (d, p, x) do corte de tempo t_index."""
    cells = M.cells if isinstance(M, MonadRelation) else M
    return cells.mask[t_index].copy()


class MonadRelation:
    """Relação de mônadas: restrição de viabilidade sobre (t, d, p, x)."""

    def __init__(self, cells):
        cells.grid.validate_state_grid()
        self.cells = cells
        self.grid = cells.grid

    def zero_slice(self):
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[:, 0] = self.cells.mask[:, 0]
        return CellSet(self.grid, mask)

    def contains(self, state):
        return contains(self.cells, state)


@dataclass(frozen=True)
class JunctionPair:
    """Par (pré-junção, pós-junção); as durações são implicitamente 0."""
    sigma_in: float
    pi_in: tuple
    xi_in: tuple
    sigma_ou: float
    pi_ou: tuple
    xi_ou: tuple

    def __post_init__(self):
        for name in ('pi_in', 'xi_in', 'pi_ou', 'xi_ou'):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, tuple(float(v) for v in value))
        object.__setattr__(self, 'sigma_in', float(self.sigma_in))
        object.__setattr__(self, 'sigma_ou', float(self.sigma_ou))

    @property
    def impulsive(self):
        return self.sigma_in == self.sigma_ou

    def pre_state(self):
        return TrafficState(self.sigma_in, 0.0, self.pi_in, self.xi_in)

    def post_state(self):
        return TrafficState(self.sigma_ou, 0.0, self.pi_ou, self.xi_ou)


class JunctionRelation:
    """Relação de junção: lista de pares, opcionalmente declarada como produto."""

    def __init__(self, pairs, product=False):
        self.pairs = tuple(pairs)
        self.declared_product = product

    @classmethod
    def from_product(cls, pre_states, post_states):
        pairs = [JunctionPair(a.t, a.p, a.x, b.t, b.p, b.x)
                 for a in pre_states for b in post_states]
        return cls(pairs, product=True)

    @classmethod
    def impulsive_singleton(cls, sigma, pi_in, pi_ou, xi):
        return cls([JunctionPair(sigma, pi_in, xi, sigma, pi_ou, xi)], product=True)

    def __len__(self):
        return len(self.pairs)

    @property
    def is_product(self):
        return self.declared_product or len(self.pairs) == 1

    @property
    def impulsive(self):
        return bool(self.pairs) and all(pair.impulsive for pair in self.pairs)

    def _require_pairs(self):
        if not self.pairs:
            raise NoJunctionError('relação de junção vazia')

    def pre_states(self):
        return list(dict.fromkeys(pair.pre_state() for pair in self.pairs))

    def post_states(self):
        return list(dict.fromkeys(pair.post_state() for pair in self.pairs))

    @property
    def sigma_in_inf(self):
        self._require_pairs()
        return min(pair.sigma_in for pair in self.pairs)

    @property
    def sigma_in_sup(self):
        self._require_pairs()
        return max(pair.sigma_in for pair in self.pairs)

    @property
    def sigma_ou_inf(self):
        self._require_pairs()
        return min(pair.sigma_ou for pair in self.pairs)

    @property
    def sigma_ou_sup(self):
        self._require_pairs()
        return max(pair.sigma_ou for pair in self.pairs)

    def snap(self, grid):
        """Copia os pares para os nós mais próximos da grade."""
        def snap_state(state, label):
            snapped = []
            for axis, value in zip(grid.axes, state.as_vector()):
                if axis.degenerate:
                    node = axis.lo
                else:
                    i = int(np.clip(np.floor((value - axis.lo) / axis.width + 0.5 + EPS),
                                    0, axis.count - 1))
                    node = axis.node(i)
                if abs(node - value) > axis.width / 2 + EPS:
                    logger.warning('junção %s: %s = %s ajustado para %s (mais de meia célula)',
                                   label, axis.label, value, node)
                snapped.append(node)
            return TrafficState.from_vector(snapped, grid.p_dim)

        pairs = []
        for k, pair in enumerate(self.pairs):
            pre = snap_state(pair.pre_state(), f'par {k} pré')
            post = snap_state(pair.post_state(), f'par {k} pós')
            pairs.append(JunctionPair(pre.t, pre.p, pre.x, post.t, post.p, post.x))
        return JunctionRelation(pairs, product=self.declared_product)


@dataclass
class JunctionReport:
    """Relatório de validação: violações são dados, não exceções."""
    violations: list = field(default_factory=list)
    impulsive: bool = False

    @property
    def valid(self):
        return not self.violations

    def add(self, kind, message):
        self.violations.append((kind, message))


def validate_junction(J, M):
    """Valida a relação de junção contra a relação de mônadas."""
    report = JunctionReport(impulsive=J.impulsive)
    for k, pair in enumerate(J.pairs):
        if pair.sigma_in > pair.sigma_ou + EPS:
            report.add('a', f'par {k}: sigma_in = {pair.sigma_in} > sigma_ou = {pair.sigma_ou}')
    if J.pairs and J.sigma_in_sup > J.sigma_ou_inf + EPS:
        report.add('b', f'sup sigma_in = {J.sigma_in_sup} > inf sigma_ou = {J.sigma_ou_inf}')
    zero = M.zero_slice()
    for k, pair in enumerate(J.pairs):
        for label, state in (('pré', pair.pre_state()), ('pós', pair.post_state())):
            try:
                inside = contains(zero, state)
            except BoundsError:
                inside = False
            if not inside:
                report.add('c', f'par {k}: estado {label} fora do corte d=0 da relação de mônadas')
    return report


def safety_check(M):
    """Condição de segurança: perfis temporais de cortes distintos são disjuntos."""
    cells = M.cells if isinstance(M, MonadRelation) else M
    # cada célula (d, p, x) pode aparecer em no máximo um corte de tempo
    occupancy = cells.mask.sum(axis=0)
    return bool(np.all(occupancy <= 1))


class TransportRelation:
    """Relação de transporte em representação produto (q_in, q_ou) ou acoplada."""

    def __init__(self, representation, q_in=None, q_ou=None, pair_cells=None):
        if representation not in ('product', 'coupled'):
            raise RepresentationError(f'representação desconhecida: {representation!r}')
        self.representation = representation
        self.q_in = q_in
        self.q_ou = q_ou
        self.pair_cells = pair_cells

    def contained_in(self, M):
        if self.representation != 'product':
            raise RepresentationError('inclusão em M só é verificada na representação produto')
        return is_restriction(self.q_in, M.cells) and is_restriction(self.q_ou, M.cells)


def decompose(Q, J):
    """Separa Q fora da junção em Q_in (antes de inf sigma_in) e Q_ou (depois de sup sigma_ou)."""
    if Q.representation != 'product':
        raise RepresentationError('decompose exige a representação produto')
    grid = Q.q_in.grid
    times = grid.axes[0].nodes()
    before = np.zeros(grid.shape, dtype=bool)
    before[times < J.sigma_in_inf - EPS] = True
    after = np.zeros(grid.shape, dtype=bool)
    after[times > J.sigma_ou_sup + EPS] = True
    q_in = CellSet(grid, Q.q_in.mask & before)
    q_ou = CellSet(grid, Q.q_ou.mask & after & ~q_in.mask)
    return q_in, q_ou


def decomposition_holds(M, J, Q, dep_cells, arr_cells):
    """Verifica a decomposição dos pares do núcleo fora de J sob a condição de segurança.

    Retorna None quando M não é segura (a implicação não se aplica);
    caso contrário, True se todo par fora de J cai em Q_in x Q_ou.
    """
    if not safety_check(M):
        return None
    q_in, q_ou = decompose(Q, J)
    grid = q_in.grid
    junction_pairs = set()
    for pair in J.pairs:
        pre = grid.flat(grid.locate(pair.pre_state().as_vector()))
        post = grid.flat(grid.locate(pair.post_state().as_vector()))
        junction_pairs.add((pre, post))
    for dep, arr in zip(dep_cells, arr_cells):
        if (int(dep), int(arr)) in junction_pairs:
            continue
        if not (q_in.has_flat(dep) and q_ou.has_flat(arr)):
            return False
    return True


def _format_float(value):
    return repr(float(value))


def write_grid_block(handle, grid):
    handle.write(f'axes {grid.ndim}\n')
    for axis in grid.axes:
        handle.write(f'{axis.role} {_format_float(axis.lo)} {_format_float(axis.hi)} {axis.count}\n')


def read_grid_block(lines, start):
    """Lê o bloco de eixos a partir de lines[start]; retorna (grade, próxima linha)."""
    try:
        keyword, n = lines[start].split()
        if keyword != 'axes':
            raise ValueError
        n = int(n)
        axes = []
        counters = {}
        for line in lines[start + 1:start + 1 + n]:
            role, lo, hi, count = line.split()
            k = counters.get(role, 0)
            counters[role] = k + 1
            axes.append(Axis(role, float(lo), float(hi), int(count), name=f'{role}{k}'))
    except (ValueError, IndexError) as exc:
        raise FileFormatError(f'bloco de eixos inválido na linha {start + 1}') from exc
    if len(axes) != n:
        raise FileFormatError('bloco de eixos truncado')
    return GridSpec(tuple(axes)), start + 1 + n


def run_lengths(flat_mask):
    """Pares (offset, comprimento) das sequências de células membro."""
    padded = np.concatenate(([False], flat_mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, stops = edges[0::2], edges[1::2]
    return list(zip(starts.tolist(), (stops - starts).tolist()))


def save_cellset(path, cellset):
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(CELLSET_HEADER + '\n')
        write_grid_block(handle, cellset.grid)
        for offset, length in run_lengths(cellset.flat_mask):
            handle.write(f'{offset}:{length}\n')


def load_cellset(path, grid=None):
    """Lê um CellSet; se `grid` for dada, exige que o arquivo use a mesma grade."""
    with open(path, encoding='utf-8') as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines or lines[0] != CELLSET_HEADER:
        raise FileFormatError(f'{path}: cabeçalho {CELLSET_HEADER!r} ausente')
    file_grid, pos = read_grid_block(lines, 1)
    if grid is not None:
        if file_grid.ndim != grid.ndim or any(
                (a.role, a.lo, a.hi, a.count) != (b.role, b.lo, b.hi, b.count)
                for a, b in zip(file_grid.axes, grid.axes)):
            raise GridError(f'{path}: grade do arquivo difere da grade do cenário')
        file_grid = grid
    mask = np.zeros(file_grid.size, dtype=bool)
    for number, line in enumerate(lines[pos:], start=pos + 1):
        try:
            offset, length = (int(v) for v in line.split(':'))
        except ValueError as exc:
            raise FileFormatError(f'{path}: linha {number} inválida: {line!r}') from exc
        if offset < 0 or length < 1 or offset + length > file_grid.size:
            raise FileFormatError(f'{path}: linha {number} fora da grade')
        mask[offset:offset + length] = True
    return CellSet(file_grid, mask)
