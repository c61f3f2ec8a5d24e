"""Bacia de captura por ponto fixo na grade e núcleo de transporte.

Modo produto: bacias de entrada e de saída calculadas separadamente e
ligadas pela abertura comum. Modo acoplado: uma bacia sobre o espaço
reduzido (omega, tau_in, tau_sum, pi_in, xi_in, pi_ou, xi_ou), em que
omega = delta_in/phi_in = delta_ou/phi_ou e tau_sum = tau_in + tau_ou.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from src.core import EPS, Axis, GridSpec
from src.dynamics import StepModel
from src.errors import BudgetError, FileFormatError, GridError, ModeError, NoJunctionError
from src.relations import CellSet, load_cellset, save_cellset

logger = logging.getLogger(__name__)

DEFAULT_CELL_BUDGET = 10 ** 5
DEFAULT_DILATION_RADIUS = 1
DEFAULT_MAX_ITERATIONS = 10_000
CELL_BUDGET_ENV = 'VIADUCT_CELL_BUDGET'

# linhas por bloco ao repartir uma geração entre threads
_MIN_ROWS_PER_THREAD = 2048


def resolve_cell_budget(explicit=None):
    """Orçamento de células: argumento, depois VIADUCT_CELL_BUDGET, depois o padrão."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(CELL_BUDGET_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            logger.warning('%s=%r ignorado (não é inteiro)', CELL_BUDGET_ENV, env)
    return DEFAULT_CELL_BUDGET


@dataclass
class SolverParams:
    dilation_radius: int = DEFAULT_DILATION_RADIUS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    duration_zero_tolerance: float = None
    cell_budget: int = None
    threads: int = None

    def __post_init__(self):
        if int(self.dilation_radius) != self.dilation_radius or self.dilation_radius < 0:
            raise ValueError('dilation_radius deve ser inteiro >= 0')
        if self.max_iterations < 1:
            raise ValueError('max_iterations deve ser >= 1')
        if self.duration_zero_tolerance is not None and self.duration_zero_tolerance < 0:
            raise ValueError('duration_zero_tolerance deve ser >= 0')
        self.dilation_radius = int(self.dilation_radius)

    def zero_tolerance(self, grid):
        if self.duration_zero_tolerance is not None:
            return self.duration_zero_tolerance
        return grid.duration_width / 2

    @property
    def worker_count(self):
        return max(1, self.threads or os.cpu_count() or 1)


class SuccessorTable:
    """Sucessores por célula: array (células, controles, candidatos), -1 = nenhum."""

    def __init__(self, grid, table):
        table = np.asarray(table, dtype=np.int64)
        if table.ndim != 3 or table.shape[0] != grid.size:
            raise GridError(f'tabela {table.shape} incompatível com grade de {grid.size} células')
        self.grid = grid
        self.table = table

    @classmethod
    def from_mapping(cls, grid, mapping):
        """Constrói a partir de {célula: [[sucessores do controle 0], ...]}."""
        n_controls = max((len(v) for v in mapping.values()), default=1) or 1
        width = max((len(s) for v in mapping.values() for s in v), default=1) or 1
        table = np.full((grid.size, n_controls, width), -1, dtype=np.int64)
        for cell, controls in mapping.items():
            for k, successors in enumerate(controls):
                table[cell, k, :len(successors)] = successors
        return cls(grid, table)


def build_successor_table(model, radius, stop_mask=None):
    """Tabela de sucessores dos centros de célula sob todos os controles do modelo."""
    grid = model.grid
    points = grid.centers()
    columns = []
    for _, _, image, valid, _ in model.images(points):
        cand = grid.candidates(image, radius)
        cand[~valid] = -1
        columns.append(cand)
    table = np.stack(columns, axis=1)
    if stop_mask is not None:
        table[stop_mask] = -1
    return SuccessorTable(grid, table)


class CaptureResult:
    def __init__(self, cells, iterations, fixed_point_reached):
        self.cells = cells
        self.iterations = iterations
        self.fixed_point_reached = fixed_point_reached


def _captured_rows(lookup, padded, rows, workers):
    def work(chunk):
        return lookup[padded[chunk]].any(axis=(1, 2))

    if workers <= 1 or len(rows) < 2 * _MIN_ROWS_PER_THREAD:
        return work(rows)
    chunks = np.array_split(rows, min(workers, len(rows) // _MIN_ROWS_PER_THREAD))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(work, chunks)))


def capture_basin(successors, M, target, params=None):
    """Menor ponto fixo C = (alvo inter M) uni {c em M : algum controle leva c a C}.

    Iteração de Jacobi: a geração k+1 é calculada lendo apenas a geração k.
    """
    params = params or SolverParams()
    grid = M.grid
    if target.grid != grid or successors.grid != grid:
        raise GridError('sucessores, M e alvo devem usar a mesma grade')
    n = grid.size
    padded = np.where(successors.table < 0, n, successors.table)
    allowed = M.flat_mask
    current = target.flat_mask & allowed
    iterations = 0
    reached = False
    while iterations < params.max_iterations:
        iterations += 1
        rows = np.flatnonzero(allowed & ~current)
        lookup = np.append(current, False)
        hit = _captured_rows(lookup, padded, rows, params.worker_count)
        if not hit.any():
            reached = True
            break
        current = current.copy()
        current[rows[hit]] = True
        logger.debug('geração %d: +%d células', iterations, int(hit.sum()))
    if not reached:
        logger.warning('max_iterations=%d esgotado antes do ponto fixo', params.max_iterations)
    return CaptureResult(CellSet(grid, current), iterations, reached)


def _check_budget(size, params, label):
    budget = resolve_cell_budget(params.cell_budget)
    if size > budget:
        logger.warning('%s: %d células excedem o orçamento %d', label, size, budget)
        raise BudgetError(f'{label}: {size} células excedem o orçamento de {budget}',
                          required=size, budget=budget)


def side_model(scenario, side):
    """Modelo de passo da entrada ('in'), da saída auxiliar ('ou') ou da saída real ('forward')."""
    phi = scenario.fluidities.phi_in if side == 'in' else scenario.fluidities.phi_ou
    surge = scenario.surge_in if side == 'in' else scenario.surge_ou
    return StepModel(scenario.grid, side, phi, scenario.celerity, surge, scenario.coupling)


def side_target(scenario, side):
    """Estados de pré-junção (side='in') ou de pós-junção embutidos em d = 0."""
    junction = scenario.junction
    if not junction.pairs:
        raise NoJunctionError('cenário sem pares de junção')
    states = junction.pre_states() if side == 'in' else junction.post_states()
    grid = scenario.grid
    flat = grid.nearest_flat(np.array([s.as_vector() for s in states]))
    return CellSet.from_flat(grid, flat[flat >= 0])


def stop_mask(grid, params):
    """Células sem sucessores: corte de duração nula."""
    return grid.centers()[:, 1] <= params.zero_tolerance(grid) + EPS


def _require_product(scenario):
    if scenario.mode != 'product':
        raise ModeError(f'cenário em modo {scenario.mode!r}; bacias separadas exigem modo product')
    if not scenario.junction.is_product:
        raise ModeError('junção não é um produto J_in x J_ou; use o modo coupled')


def side_basin(scenario, side, params=None):
    params = params or scenario.params
    grid = scenario.grid
    _check_budget(grid.size, params, f'bacia {side}')
    model = side_model(scenario, side)
    table = build_successor_table(model, params.dilation_radius, stop_mask(grid, params))
    result = capture_basin(table, scenario.monad.cells, side_target(scenario, side), params)
    logger.info('bacia %s: %d células em %d iterações', side, len(result.cells), result.iterations)
    return result


def incoming_basin(scenario, params=None):
    _require_product(scenario)
    return side_basin(scenario, 'in', params)


def outgoing_basin(scenario, params=None):
    _require_product(scenario)
    return side_basin(scenario, 'ou', params)


def forward_outgoing_reach(scenario, params=None):
    """Alcançável para frente (tempo real) a partir dos estados de pós-junção, dentro de M."""
    params = params or scenario.params
    grid = scenario.grid
    model = side_model(scenario, 'forward')
    table = build_successor_table(model, params.dilation_radius).table
    target = side_target(scenario, 'ou').flat_mask
    # o corte d = 0 só é alcançado nos próprios estados de pós-junção
    allowed = scenario.monad.cells.flat_mask & (~stop_mask(grid, params) | target)
    current = target & allowed
    while True:
        successors = table[current].reshape(-1)
        successors = successors[successors >= 0]
        new = current.copy()
        new[successors] = True
        new &= allowed
        if np.array_equal(new, current):
            break
        current = new
    return CellSet(grid, current)


def reduced_grid(scenario):
    """Grade reduzida do modo acoplado (todas as fibras de tau_sum)."""
    grid = scenario.grid
    fl = scenario.fluidities
    h = grid.time_step
    d_hi = grid.axis_of('duration').hi
    n_omega = int(math.floor(d_hi / max(fl.phi_in, fl.phi_ou) / h + EPS)) + 1
    sums = sorted({pair.sigma_in + pair.sigma_ou for pair in scenario.junction.pairs})
    if not sums:
        raise NoJunctionError('cenário sem pares de junção')
    n_sum = int(round((sums[-1] - sums[0]) / h)) + 1
    time = grid.axis_of('time')
    axes = [Axis('omega', 0.0, (n_omega - 1) * h, n_omega, name='omega'),
            Axis('time', time.lo, time.hi, time.count, name='tau_in'),
            Axis('tau_sum', sums[0], sums[0] + (n_sum - 1) * h, n_sum, name='tau_sum')]
    positions = [a for a in grid.axes if a.role == 'position']
    monads = [a for a in grid.axes if a.role == 'monad']
    for suffix in ('in', 'ou'):
        axes += [Axis(f'position_{suffix}', a.lo, a.hi, a.count, name=f'{a.name}_{suffix}')
                 for a in positions]
        axes += [Axis(f'monad_{suffix}', a.lo, a.hi, a.count, name=f'{a.name}_{suffix}')
                 for a in monads]
    return GridSpec(tuple(axes))


def split_reduced(points, p_dim, m_dim, fluidities):
    """Estados de entrada e de saída (t, d, p, x) de pontos do espaço reduzido."""
    points = np.atleast_2d(points)
    omega, tau_in, tau_sum = points[:, 0], points[:, 1], points[:, 2]
    k = 3
    pi_in = points[:, k:k + p_dim]
    xi_in = points[:, k + p_dim:k + p_dim + m_dim]
    k += p_dim + m_dim
    pi_ou = points[:, k:k + p_dim]
    xi_ou = points[:, k + p_dim:k + p_dim + m_dim]
    incoming = np.column_stack([tau_in, omega * fluidities.phi_in, pi_in, xi_in])
    outgoing = np.column_stack([tau_sum - tau_in, omega * fluidities.phi_ou, pi_ou, xi_ou])
    return incoming, outgoing


class CoupledStepModel:
    """Passo do sistema auxiliar completo sobre o espaço reduzido."""

    def __init__(self, grid, scenario):
        self.grid = grid
        self.scenario = scenario
        self.h = scenario.grid.time_step
        self.incoming = side_model(scenario, 'in')
        self.outgoing = side_model(scenario, 'ou')

    def images(self, points):
        sc = self.scenario
        p_dim, m_dim = sc.grid.p_dim, sc.grid.m_dim
        h = self.h
        incoming, outgoing = split_reduced(points, p_dim, m_dim, sc.fluidities)
        f_in = sc.surge_in.sample_array(incoming, p_dim)
        f_ou = sc.surge_ou.sample_array(outgoing, p_dim)
        celerities = self.incoming.celerities
        head = np.column_stack([points[:, 0] - h, points[:, 1] + h, points[:, 2]])
        control = 0
        for ci, c_in in enumerate(celerities):
            valid_in = self.incoming.coupling_mask(ci, incoming[:, 2 + p_dim:])
            for cj, c_ou in enumerate(celerities):
                valid = valid_in & self.outgoing.coupling_mask(cj, outgoing[:, 2 + p_dim:])
                for fi in range(f_in.shape[0]):
                    for fj in range(f_ou.shape[0]):
                        image = np.column_stack([
                            head,
                            incoming[:, 2:2 + p_dim] + h * c_in,
                            incoming[:, 2 + p_dim:] + h * f_in[fi],
                            outgoing[:, 2:2 + p_dim] - h * c_ou,
                            outgoing[:, 2 + p_dim:] - h * f_ou[fj],
                        ])
                        yield control, (ci, cj, fi, fj), image, valid, None
                        control += 1


def coupled_allowed(scenario, grid):
    """Restrição de viabilidade no espaço reduzido: as duas metades em M."""
    points = grid.centers()
    incoming, outgoing = split_reduced(points, scenario.grid.p_dim, scenario.grid.m_dim,
                                       scenario.fluidities)
    m_flat = scenario.monad.cells.flat_mask
    inside = np.ones(points.shape[0], dtype=bool)
    for half in (incoming, outgoing):
        idx = scenario.grid.nearest_flat(half)
        inside &= (idx >= 0) & m_flat[np.maximum(idx, 0)]
    inside &= incoming[:, 0] <= outgoing[:, 0] + EPS
    return CellSet(grid, inside)


def coupled_kernel(scenario, params=None, cell_budget=None):
    """Bacia de captura do sistema auxiliar acoplado, fibra a fibra em tau_sum."""
    params = params or scenario.params
    if scenario.mode != 'coupled':
        raise ModeError(f'cenário em modo {scenario.mode!r}; coupled_kernel exige modo coupled')
    grid = reduced_grid(scenario)
    budget_params = params if cell_budget is None else SolverParams(
        params.dilation_radius, params.max_iterations, params.duration_zero_tolerance,
        cell_budget, params.threads)
    _check_budget(grid.size, budget_params, 'núcleo acoplado')
    sum_axis = grid.axes[2]
    full = np.zeros(grid.shape, dtype=bool)
    iterations = 0
    reached = True
    for j, tau_sum in enumerate(sum_axis.nodes()):
        pairs = [pair for pair in scenario.junction.pairs
                 if abs(pair.sigma_in + pair.sigma_ou - tau_sum) <= EPS + sum_axis.width / 2]
        if not pairs:
            continue
        fibre = grid.with_axis(2, Axis('tau_sum', tau_sum, tau_sum, 1, name='tau_sum'))
        targets = np.array([[0.0, pair.sigma_in, tau_sum, *pair.pi_in, *pair.xi_in,
                             *pair.pi_ou, *pair.xi_ou] for pair in pairs])
        flat = fibre.nearest_flat(targets)
        target = CellSet.from_flat(fibre, flat[flat >= 0])
        stop = fibre.centers()[:, 0] <= EPS
        table = build_successor_table(CoupledStepModel(fibre, scenario), params.dilation_radius,
                                      stop)
        result = capture_basin(table, coupled_allowed(scenario, fibre), target, params)
        full[:, :, j] = result.cells.mask[:, :, 0]
        iterations = max(iterations, result.iterations)
        reached = reached and result.fixed_point_reached
        logger.info('fibra tau_sum=%s: %d células', tau_sum, len(result.cells))
    return CaptureResult(CellSet(grid, full), iterations, reached)


class KernelResult:
    """Resultado do núcleo de transporte (modo product ou coupled)."""

    def __init__(self, mode, grid, fluidities, junction, params):
        self.mode = mode
        self.grid = grid
        self.fluidities = fluidities
        self.junction = junction
        self.params = params
        self.basin_in = None
        self.basin_ou = None
        self.basin_pair = None
        self.iterations = 0
        self.fixed_point_reached = True

    @property
    def aperture_tolerance(self):
        return min(self.grid.time_step, self.grid.duration_width) / 2

    def metadata(self):
        meta = {
            'mode': self.mode,
            'iterations': self.iterations,
            'fixed_point_reached': str(self.fixed_point_reached).lower(),
            'grid_cells': self.grid.size,
        }
        if self.basin_in is not None:
            meta['basin_in_cells'] = len(self.basin_in)
        if self.basin_ou is not None:
            meta['basin_ou_cells'] = len(self.basin_ou)
        if self.basin_pair is not None:
            meta['basin_pair_cells'] = len(self.basin_pair)
            meta['pair_grid_cells'] = self.basin_pair.grid.size
        return meta


def solve(scenario, params=None):
    """Calcula o núcleo no modo do cenário.

    No modo coupled as bacias de cada lado também são calculadas, pois
    alimentam os reguladores usados na síntese.
    """
    params = params or scenario.params
    result = KernelResult(scenario.mode, scenario.grid, scenario.fluidities, scenario.junction,
                          params)
    if scenario.mode == 'product':
        basins = {'in': incoming_basin(scenario, params), 'ou': outgoing_basin(scenario, params)}
        for basin in basins.values():
            result.iterations = max(result.iterations, basin.iterations)
            result.fixed_point_reached = result.fixed_point_reached and basin.fixed_point_reached
    else:
        pair = coupled_kernel(scenario, params)
        result.basin_pair = pair.cells
        result.iterations = pair.iterations
        result.fixed_point_reached = pair.fixed_point_reached
        basins = {side: side_basin(scenario, side, params) for side in ('in', 'ou')}
    result.basin_in = basins['in'].cells
    result.basin_ou = basins['ou'].cells
    return result


def _fibre_linked(dates, reached, h):
    return any(abs(reached - date) <= h / 2 + EPS for date in dates)


def kernel_membership(result, dep, arr, junction=None, fluidities=None):
    """Teste de pertinência do par (partida, chegada) ao núcleo de transporte."""
    junction = junction or result.junction
    fl = fluidities or result.fluidities
    grid = result.grid
    dep_idx = grid.locate(dep.as_vector())
    arr_idx = grid.locate(arr.as_vector())
    dep_node = grid.node_vector(dep_idx)
    arr_node = grid.node_vector(arr_idx)
    if dep_node[0] > arr_node[0] + EPS:
        return False
    omega_in = dep_node[1] / fl.phi_in
    omega_ou = arr_node[1] / fl.phi_ou
    if abs(omega_in - omega_ou) > result.aperture_tolerance + EPS:
        return False
    if result.mode == 'coupled':
        vector = np.concatenate([[omega_in, dep_node[0], dep_node[0] + arr_node[0]],
                                 dep_node[2:], arr_node[2:]])
        flat = result.basin_pair.grid.nearest_flat(vector)[0]
        return bool(flat >= 0 and result.basin_pair.has_flat(flat))
    if not (result.basin_in.mask[dep_idx] and result.basin_ou.mask[arr_idx]):
        return False
    h = grid.time_step
    pre_dates = {pair.sigma_in for pair in junction.pairs}
    post_dates = {pair.sigma_ou for pair in junction.pairs}
    return (_fibre_linked(pre_dates, dep_node[0] + omega_in, h)
            and _fibre_linked(post_dates, arr_node[0] - omega_ou, h))


def kernel_pairs(result):
    """Enumera os pares (célula de partida, célula de chegada) do núcleo."""
    grid = result.grid
    fl = result.fluidities
    if result.mode == 'coupled':
        pair_grid = result.basin_pair.grid
        points = pair_grid.centers(result.basin_pair.flat_indices())
        incoming, outgoing = split_reduced(points, grid.p_dim, grid.m_dim, fl)
        dep = grid.nearest_flat(incoming)
        arr = grid.nearest_flat(outgoing)
        keep = (dep >= 0) & (arr >= 0)
        pairs = np.unique(np.column_stack([dep[keep], arr[keep]]), axis=0)
        return pairs.reshape(-1, 2)
    dep = result.basin_in.flat_indices()
    arr = result.basin_ou.flat_indices()
    if dep.size == 0 or arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dep_pts = grid.centers(dep)
    arr_pts = grid.centers(arr)
    h = grid.time_step
    omega_in = dep_pts[:, 1] / fl.phi_in
    omega_ou = arr_pts[:, 1] / fl.phi_ou
    pre = np.array(sorted({pair.sigma_in for pair in result.junction.pairs}))
    post = np.array(sorted({pair.sigma_ou for pair in result.junction.pairs}))
    dep_ok = np.any(np.abs(dep_pts[:, 0, None] + omega_in[:, None] - pre[None, :])
                    <= h / 2 + EPS, axis=1)
    arr_ok = np.any(np.abs(arr_pts[:, 0, None] - omega_ou[:, None] - post[None, :])
                    <= h / 2 + EPS, axis=1)
    dep, dep_pts, omega_in = dep[dep_ok], dep_pts[dep_ok], omega_in[dep_ok]
    arr, arr_pts, omega_ou = arr[arr_ok], arr_pts[arr_ok], omega_ou[arr_ok]
    match = ((np.abs(omega_in[:, None] - omega_ou[None, :]) <= result.aperture_tolerance + EPS)
             & (dep_pts[:, 0, None] <= arr_pts[None, :, 0] + EPS))
    i, j = np.nonzero(match)
    return np.column_stack([dep[i], arr[j]]).astype(np.int64)


KERNEL_FILES = {'in': 'kernel_in.cells', 'ou': 'kernel_ou.cells', 'pair': 'kernel_pair.cells'}
META_FILE = 'kernel.meta'


def write_meta(path, meta):
    with open(path, 'w', encoding='utf-8') as handle:
        for key in sorted(meta):
            handle.write(f'{key}={meta[key]}\n')


def read_meta(path):
    meta = {}
    with open(path, encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            if '=' not in line:
                raise FileFormatError(f'{path}: linha {number} sem "="')
            key, value = line.split('=', 1)
            meta[key.strip()] = value.strip()
    return meta


def write_kernel(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for side in ('in', 'ou', 'pair'):
        cells = getattr(result, f'basin_{side}')
        if cells is not None:
            save_cellset(os.path.join(out_dir, KERNEL_FILES[side]), cells)
    write_meta(os.path.join(out_dir, META_FILE), result.metadata())


def read_kernel(scenario, out_dir, params=None):
    """Recarrega um núcleo salvo por write_kernel para o mesmo cenário."""
    meta_path = os.path.join(out_dir, META_FILE)
    if not os.path.exists(meta_path):
        raise FileNotFoundError(meta_path)
    meta = read_meta(meta_path)
    if meta.get('mode') != scenario.mode:
        raise FileFormatError(f'{meta_path}: modo {meta.get("mode")!r} difere do cenário')
    result = KernelResult(scenario.mode, scenario.grid, scenario.fluidities, scenario.junction,
                          params or scenario.params)
    result.iterations = int(meta.get('iterations', 0))
    result.fixed_point_reached = meta.get('fixed_point_reached') == 'true'
    for side in ('in', 'ou'):
        setattr(result, f'basin_{side}',
                load_cellset(os.path.join(out_dir, KERNEL_FILES[side]), scenario.grid))
    if scenario.mode == 'coupled':
        result.basin_pair = load_cellset(os.path.join(out_dir, KERNEL_FILES['pair']),
                                         reduced_grid(scenario))
    return result
