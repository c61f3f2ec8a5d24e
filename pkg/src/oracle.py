"""Oráculo de força bruta para instâncias pequenas.

Enumera, célula a célula e com o mesmo integrador de Euler e os mesmos
reticulados de controle do solver, quais estados de junção cada célula
alcança em até `horizon` passos. A busca é em largura com memória por
célula, o que equivale a enumerar todas as sequências de controles.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from src.core import EPS, TrafficState
from src.dynamics import euler_step_incoming, euler_step_outgoing_aux, surge_samples
from src.errors import BudgetError, GridError
from src.solver import kernel_pairs, resolve_cell_budget, stop_mask

logger = logging.getLogger(__name__)

DEFAULT_ORACLE_BUDGET = 10 ** 7


class OracleResult:
    def __init__(self, grid, pairs, horizon, celerity_count, surge_count):
        self.grid = grid
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self.pairs = np.unique(pairs, axis=0) if len(pairs) else pairs
        self.horizon = horizon
        self.celerity_count = celerity_count
        self.surge_count = surge_count
        self.witnesses = {}

    def __len__(self):
        return len(self.pairs)

    def as_set(self):
        return {(int(a), int(b)) for a, b in self.pairs}

    def to_frame(self):
        return pd.DataFrame(self.pairs, columns=['dep_cell_index', 'arr_cell_index'])

    def save(self, path):
        self.to_frame().to_csv(path, index=False, header=False)


def _side_step(scenario, side):
    if side == 'in':
        return euler_step_incoming, scenario.fluidities.phi_in, scenario.surge_in
    return euler_step_outgoing_aux, scenario.fluidities.phi_ou, scenario.surge_ou


def one_step_successors(scenario, side, flat_cell, radius):
    """Sucessores da célula por controle: lista de ((ci, fi), células)."""
    grid = scenario.grid
    step, phi, surge = _side_step(scenario, side)
    state = TrafficState.from_vector(grid.centers([flat_cell])[0], grid.p_dim)
    h = grid.time_step
    lattice = scenario.celerity.lattice()
    spacing = scenario.celerity.spacing()
    controls = []
    images = []
    for ci, c in enumerate(lattice):
        if scenario.coupling and np.any(np.abs(np.asarray(state.x[:grid.p_dim]) - c)
                                        > spacing / 2 + EPS):
            continue
        for fi, f in enumerate(surge_samples(surge, state)):
            controls.append((ci, fi))
            images.append(step(state, c, f, h, phi).as_vector())
    if not controls:
        return []
    candidates = grid.candidates(np.array(images), radius)
    return [(control, tuple(int(c) for c in row if c >= 0))
            for control, row in zip(controls, candidates)]


def _steps_to_zero(grid, params, phi):
    """Passos até o corte d = 0 a partir de cada nó de duração (relógio determinístico)."""
    axis = grid.axis_of('duration')
    tol = params.zero_tolerance(grid)
    h = grid.time_step
    steps = np.zeros(axis.count, dtype=np.int64)
    for i in range(axis.count):
        d, n = axis.node(i), 0
        while d > tol + EPS and n <= axis.count * 4:
            idx, _ = axis.nearest(max(0.0, d - phi * h))
            d = axis.node(int(idx))
            n += 1
        steps[i] = n
    return steps


def _reach(scenario, side, targets, horizon):
    """Alvos (índices) alcançáveis de cada célula em até `horizon` passos, com testemunhas."""
    grid = scenario.grid
    params = scenario.params
    allowed = scenario.monad.cells.flat_mask
    reach = {}
    witness = {}
    for k, cell in enumerate(targets):
        if cell >= 0 and allowed[cell]:
            reach.setdefault(cell, set()).add(k)
    successors = {}
    for cell in np.flatnonzero(allowed & ~stop_mask(grid, params)).tolist():
        successors[cell] = one_step_successors(scenario, side, cell, params.dilation_radius)
    for _ in range(horizon):
        updated = {}
        for cell, options in successors.items():
            gained = set()
            for control, cells in options:
                for succ in cells:
                    for k in reach.get(succ, ()):
                        if k not in reach.get(cell, ()) and k not in gained:
                            gained.add(k)
                            witness[(cell, k)] = (control, succ)
            if gained:
                updated[cell] = gained
        if not updated:
            break
        for cell, gained in updated.items():
            reach.setdefault(cell, set()).update(gained)
    return reach, witness


def brute_force_kernel(scenario, horizon, budget=DEFAULT_ORACLE_BUDGET, cell_budget=None):
    """Enumera os pares (célula de partida, célula de chegada) ligáveis em até `horizon` passos."""
    grid = scenario.grid
    n_c = scenario.celerity.lattice().shape[0]
    n_f = max(scenario.surge_in.sample_count, scenario.surge_ou.sample_count)
    cells = resolve_cell_budget(cell_budget)
    if grid.size > cells:
        raise BudgetError(f'oráculo: {grid.size} células excedem o orçamento de {cells}',
                          required=grid.size, budget=cells)
    sequences = (n_c * n_f) ** horizon
    if sequences > budget:
        raise BudgetError(f'oráculo: {sequences} sequências de controle excedem o orçamento '
                          f'de {budget}', required=sequences, budget=budget)
    result = OracleResult(grid, [], horizon, n_c, n_f)
    junction = scenario.junction
    if not junction.pairs:
        return result
    pre_states = junction.pre_states()
    post_states = junction.post_states()
    pre_cells = grid.nearest_flat(np.array([s.as_vector() for s in pre_states]))
    post_cells = grid.nearest_flat(np.array([s.as_vector() for s in post_states]))
    link = np.zeros((len(pre_states), len(post_states)), dtype=np.int64)
    for pair in junction.pairs:
        link[pre_states.index(pair.pre_state()), post_states.index(pair.post_state())] = 1

    reach_in, witness_in = _reach(scenario, 'in', pre_cells.tolist(), horizon)
    reach_ou, witness_ou = _reach(scenario, 'ou', post_cells.tolist(), horizon)
    result.witnesses = {'in': witness_in, 'ou': witness_ou}
    if not reach_in or not reach_ou:
        return result
    dep = np.array(sorted(reach_in), dtype=np.int64)
    arr = np.array(sorted(reach_ou), dtype=np.int64)
    a_in = np.zeros((dep.size, len(pre_states)), dtype=np.int64)
    for i, cell in enumerate(dep.tolist()):
        a_in[i, list(reach_in[cell])] = 1
    a_ou = np.zeros((arr.size, len(post_states)), dtype=np.int64)
    for j, cell in enumerate(arr.tolist()):
        a_ou[j, list(reach_ou[cell])] = 1
    linked = (a_in @ link @ a_ou.T) > 0

    params = scenario.params
    dep_pts = grid.centers(dep)
    arr_pts = grid.centers(arr)
    d_axis = grid.axis_of('duration')
    steps_in = _steps_to_zero(grid, params, scenario.fluidities.phi_in)
    steps_ou = _steps_to_zero(grid, params, scenario.fluidities.phi_ou)
    n_in = steps_in[d_axis.nearest(dep_pts[:, 1])[0]]
    n_ou = steps_ou[d_axis.nearest(arr_pts[:, 1])[0]]
    linked &= n_in[:, None] == n_ou[None, :]
    linked &= dep_pts[:, 0, None] <= arr_pts[None, :, 0] + EPS
    i, j = np.nonzero(linked)
    result.pairs = np.column_stack([dep[i], arr[j]]).astype(np.int64)
    logger.info('oráculo: %d pares ligáveis (horizonte %d)', len(result.pairs), horizon)
    return result


def replay_witness(scenario, oracle, side, start_cell, target_index):
    """Refaz a cadeia de testemunhas de uma célula até o alvo; retorna as células visitadas."""
    witness = oracle.witnesses[side]
    path = [int(start_cell)]
    cell = int(start_cell)
    while (cell, target_index) in witness:
        control, succ = witness[(cell, target_index)]
        options = dict(one_step_successors(scenario, side, cell, scenario.params.dilation_radius))
        if succ not in options.get(control, ()):
            raise AssertionError(f'testemunha inconsistente na célula {cell}')
        cell = succ
        path.append(cell)
    return path


@dataclass
class DiffStats:
    agreements: int
    kernel_only: int
    oracle_only: int
    hard_failures: int
    margin_cells: int

    def as_frame(self):
        return pd.DataFrame([vars(self)])


def _pair_coordinates(grid, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    dep = np.column_stack(np.unravel_index(pairs[:, 0], grid.shape))
    arr = np.column_stack(np.unravel_index(pairs[:, 1], grid.shape))
    return np.hstack([dep, arr]).astype(float)


def _far_from(points, reference, margin):
    """Quantos pontos estão a mais de `margin` células (Chebyshev) do conjunto de referência."""
    if len(points) == 0:
        return 0
    if len(reference) == 0:
        return len(points)
    distance, _ = cKDTree(reference).query(points, k=1, p=np.inf)
    return int(np.sum(distance > margin + EPS))


def compare_pairs(grid, kernel_set, oracle_set, dilation_radius):
    """Compara dois conjuntos de pares de células."""
    kernel_only = sorted(kernel_set - oracle_set)
    oracle_only = sorted(oracle_set - kernel_set)
    k_pts = _pair_coordinates(grid, sorted(kernel_set))
    o_pts = _pair_coordinates(grid, sorted(oracle_set))
    hard = (_far_from(_pair_coordinates(grid, oracle_only), k_pts, dilation_radius)
            + _far_from(_pair_coordinates(grid, kernel_only), o_pts, dilation_radius + 1))
    return DiffStats(len(kernel_set & oracle_set), len(kernel_only), len(oracle_only), hard,
                     dilation_radius)


def compare(kernel, oracle):
    """Estatísticas da diferença entre o núcleo calculado e o oráculo."""
    if kernel.grid != oracle.grid:
        raise GridError('núcleo e oráculo de cenários diferentes')
    kernel_set = {(int(a), int(b)) for a, b in kernel_pairs(kernel)}
    stats = compare_pairs(kernel.grid, kernel_set, oracle.as_set(), kernel.params.dilation_radius)
    logger.info('diff: %d acordos, %d só no núcleo, %d só no oráculo, %d falhas graves',
                stats.agreements, stats.kernel_only, stats.oracle_only, stats.hard_failures)
    return stats
