"""Síntese e verificação de evoluções de transporte através da junção.

A perna de entrada é simulada para frente a partir da partida; a perna
de saída é simulada em tempo auxiliar a partir da chegada e depois
invertida. As duas se encontram no par de junção escolhido.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import ndimage

from src.core import EPS
from src.dynamics import LegSamples, euler_step_incoming, euler_step_outgoing_aux, reverse_outgoing
from src.errors import RefusalError, SynthesisError
from src.relations import TransportRelation, decompose, safety_check
from src.solver import kernel_membership

logger = logging.getLogger(__name__)

# distância máxima (em células por eixo) entre o estado alcançado e o par de junção
MAX_JUNCTION_CELLS = 2.0


@dataclass
class TransportEvolution:
    aperture: float
    step: float
    junction_pair: object
    incoming: LegSamples
    outgoing: LegSamples
    verification: object = None

    @property
    def departure(self):
        return self.incoming.state(0)

    @property
    def arrival(self):
        return self.outgoing.state(len(self.outgoing) - 1)


@dataclass
class VerificationReport:
    """Resultado por condição: (passou, resíduo medido, tolerância)."""
    checks: dict = field(default_factory=dict)

    def add(self, name, residual, tolerance):
        residual = float(residual)
        self.checks[name] = (bool(residual <= tolerance + EPS), residual, float(tolerance))

    @property
    def passed(self):
        return all(ok for ok, _, _ in self.checks.values())

    def failures(self):
        return [name for name, (ok, _, _) in self.checks.items() if not ok]

    def as_frame(self):
        rows = [{'check': name, 'passed': ok, 'residual': res, 'tolerance': tol}
                for name, (ok, res, tol) in self.checks.items()]
        return pd.DataFrame(rows, columns=['check', 'passed', 'residual', 'tolerance'])


def _entry_cell(fb, state):
    """Célula do núcleo para o estado: o nó mais próximo ou outro nó da célula fechada."""
    grid = fb.grid
    vector = state.as_vector()
    nearest = grid.nearest_flat(vector)[0]
    if nearest >= 0 and nearest in fb.entries:
        return int(nearest)
    candidates = sorted(int(c) for c in grid.candidates(vector, 1)[0] if c >= 0)
    for cell in candidates:
        if cell in fb.entries:
            return cell
    return None


def _run_leg(start, fb, goals, side, phi, h, tol, max_steps):
    """Simula uma perna escolhendo controles admissíveis de forma gulosa.

    Em cada passo escolhe a celeridade cujo passo deixa a posição mais
    perto da posição de junção compatível mais próxima; empates vão para
    o menor índice de celeridade e depois de surto.
    """
    goals = np.array(goals, dtype=float).reshape(len(goals), -1)
    sign = 1.0 if side == 'in' else -1.0
    step = euler_step_incoming if side == 'in' else euler_step_outgoing_aux
    rows = []
    state = start
    for _ in range(max_steps):
        if state.d <= tol:
            rows.append((state, None, None))
            return rows, state
        cell = _entry_cell(fb, state)
        if cell is None:
            raise SynthesisError(f'perna {side}: estado saiu do núcleo em t={state.t}', partial=rows)
        options = fb.witnesses(cell)
        if not options:
            raise SynthesisError(f'perna {side}: regulador vazio em t={state.t}', partial=rows)
        surges = fb.model.surge.sample_array(state.as_vector()[None, :], len(state.p))[:, 0, :]
        p = np.asarray(state.p)

        def score(option):
            ci, fi = option
            nxt = p + sign * h * fb.celerities[ci]
            return (float(np.min(np.linalg.norm(goals - nxt, axis=1))), ci, fi)

        ci, fi = min(options, key=score)
        c, f = fb.celerities[ci], surges[fi]
        rows.append((state, c, f))
        state = step(state, c, f, h, phi)
    raise SynthesisError(f'perna {side}: duração não zerou em {max_steps} passos', partial=rows)


def _pair_distance(pair, pre, post, grid):
    """Distância em células (máximo por eixo) entre os estados alcançados e o par."""
    widths = grid.widths
    reached = np.concatenate([[pre.t], pre.p, pre.x, [post.t], post.p, post.x])
    wanted = np.concatenate([[pair.sigma_in], pair.pi_in, pair.xi_in,
                             [pair.sigma_ou], pair.pi_ou, pair.xi_ou])
    axis_widths = np.concatenate([[widths[0]], widths[2:], [widths[0]], widths[2:]])
    diff = np.abs(reached - wanted)
    scaled = np.where(axis_widths > 0, diff / np.where(axis_widths > 0, axis_widths, 1.0),
                      np.where(diff <= EPS, 0.0, np.inf))
    return float(scaled.max())


def synthesize(dep, arr, result, fb_in, fb_ou, junction=None):
    """Constrói uma evolução de transporte de `dep` até `arr` pelos dois lados."""
    junction = junction or result.junction
    if not kernel_membership(result, dep, arr, junction):
        raise RefusalError('par (partida, chegada) fora do núcleo de transporte')
    grid = result.grid
    fl = result.fluidities
    h = grid.time_step
    tol = result.params.zero_tolerance(grid)
    omega = dep.d / fl.phi_in
    omega_ou = arr.d / fl.phi_ou
    compatible = [pair for pair in junction.pairs
                  if abs(pair.sigma_in - (dep.t + omega)) <= h / 2 + EPS
                  and abs(pair.sigma_ou - (arr.t - omega_ou)) <= h / 2 + EPS]
    if not compatible:
        raise RefusalError('nenhum par de junção compatível com as datas de partida e chegada')
    max_steps = int(math.ceil(max(omega, omega_ou) / h)) + 2
    in_rows, pre = _run_leg(dep, fb_in, [pair.pi_in for pair in compatible], 'in',
                            fl.phi_in, h, tol, max_steps)
    ou_rows, post = _run_leg(arr, fb_ou, [pair.pi_ou for pair in compatible], 'ou',
                             fl.phi_ou, h, tol, max_steps)
    distances = [_pair_distance(pair, pre, post, grid) for pair in compatible]
    best = int(np.argmin(distances))
    if distances[best] > MAX_JUNCTION_CELLS:
        raise SynthesisError(f'estados alcançados a {distances[best]:.2f} células do par mais '
                             'próximo', partial=(in_rows, ou_rows))
    p_dim, m_dim = grid.p_dim, grid.m_dim
    incoming = LegSamples.from_rows(in_rows, p_dim, m_dim)
    aux = LegSamples.from_rows(ou_rows, p_dim, m_dim)
    aux.t = np.arange(len(aux)) * h
    outgoing = reverse_outgoing(aux, arr.t)
    logger.info('evolução sintetizada: Omega=%s, %d + %d amostras', omega, len(incoming),
                len(outgoing))
    return TransportEvolution(omega, h, compatible[best], incoming, outgoing)


def _axis_tolerance(width):
    return width if width > 0 else 1e-9


def characteristic_residual(evo, scenario):
    """Resíduos do sistema característico: |dp/h - x| e |dx/h - f| ao longo das pernas.

    Na perna de saída a celeridade de cada passo foi escolhida no estado
    posterior (tempo auxiliar), então compara-se com a mônada da amostra
    seguinte.
    """
    p_dim = scenario.grid.p_dim
    h = evo.step
    celerity_monad = 0.0
    surge = 0.0
    for leg, later in ((evo.incoming, False), (evo.outgoing, True)):
        if len(leg) < 2:
            continue
        dp = np.diff(leg.p, axis=0) / h
        dx = np.diff(leg.x, axis=0) / h
        ref = slice(1, None) if later else slice(None, -1)
        celerity_monad = max(celerity_monad, float(np.max(np.abs(dp - leg.x[ref][:, :p_dim]))))
        surge = max(surge, float(np.max(np.abs(dx - leg.f[ref]))))
    return {'celerity_monad': celerity_monad, 'surge': surge}


def _monad_distance_map(M):
    # distância (em células, métrica do tabuleiro) até a célula membro mais próxima
    if M.cells.mask.all():
        return np.zeros(M.grid.shape)
    if not M.cells.mask.any():
        return np.full(M.grid.shape, np.inf)
    return ndimage.distance_transform_cdt(~M.cells.mask, metric='chessboard').astype(float)


def verify_evolution(evo, scenario, result=None):
    """Verifica as condições de uma evolução de transporte e guarda o relatório em evo."""
    grid = scenario.grid
    fl = scenario.fluidities
    h = evo.step
    pair = evo.junction_pair
    inc, out = evo.incoming, evo.outgoing
    widths = grid.widths
    tol_d = widths[1]
    tol_p = float(max(widths[2:2 + grid.p_dim]))
    tol_x = _axis_tolerance(float(max(widths[2 + grid.p_dim:])))
    report = VerificationReport()

    report.add('aperture_in', abs(inc.d[0] - fl.phi_in * evo.aperture), tol_d)
    report.add('aperture_ou', abs(out.d[-1] - fl.phi_ou * evo.aperture), tol_d)

    sum_in = h * np.sum(inc.c[:-1], axis=0) if len(inc) > 1 else 0.0
    sum_ou = h * np.sum(out.c[1:], axis=0) if len(out) > 1 else 0.0
    report.add('celerity_integral_in',
               np.max(np.abs(np.asarray(pair.pi_in) - (inc.p[0] + sum_in))), tol_p)
    report.add('celerity_integral_ou',
               np.max(np.abs(out.p[-1] - (np.asarray(pair.pi_ou) + sum_ou))), tol_p)

    report.add('junction_monad_in', np.max(np.abs(np.asarray(pair.xi_in) - inc.x[-1])), tol_x)
    report.add('junction_monad_ou', np.max(np.abs(np.asarray(pair.xi_ou) - out.x[0])), tol_x)
    report.add('junction_date_in', abs(inc.t[-1] - pair.sigma_in), h)
    report.add('junction_date_ou', abs(out.t[0] - pair.sigma_ou), h)

    distance = _monad_distance_map(scenario.monad)
    points = np.vstack([np.column_stack([leg.t, leg.d, leg.p, leg.x]) for leg in (inc, out)])
    flat = grid.nearest_flat(points)
    dist = np.where(flat >= 0, distance.reshape(-1)[np.maximum(flat, 0)], np.inf)
    report.add('viability', float(dist.max()), 0.0)

    if safety_check(scenario.monad) and scenario.junction.pairs:
        junction = scenario.junction
        moving_in = inc.t[:-1]
        moving_ou = out.t[1:]
        late = np.maximum(0.0, moving_in - junction.sigma_in_inf + h / 2).max() if moving_in.size else 0.0
        early = np.maximum(0.0, junction.sigma_ou_sup - moving_ou + h / 2).max() if moving_ou.size else 0.0
        report.add('decomposition', max(late, early), 0.0)
        if result is not None and result.mode == 'product' and moving_in.size and moving_ou.size:
            q_in, q_ou = decompose(TransportRelation('product', result.basin_in, result.basin_ou),
                                   junction)
            cells_in = grid.nearest_flat(points[:len(inc) - 1])
            cells_ou = grid.nearest_flat(points[len(inc) + 1:])
            outside = int(np.sum(~q_in.flat_mask[np.maximum(cells_in, 0)] | (cells_in < 0))
                          + np.sum(~q_ou.flat_mask[np.maximum(cells_ou, 0)] | (cells_ou < 0)))
            report.add('decomposition_cells', outside, 0)

    if scenario.coupling:
        residual = characteristic_residual(evo, scenario)
        report.add('characteristic_celerity', residual['celerity_monad'], tol_p)
        report.add('characteristic_surge', residual['surge'], 1e-9)

    evo.verification = report
    return report


def concatenate(evo):
    """Série única de mônadas: perna de entrada, marcador de salto e perna de saída."""
    if evo.verification is None or not evo.verification.passed:
        raise RefusalError('evolução não verificada; rode verify_evolution antes')
    m_dim = evo.incoming.x.shape[1]
    xs = [f'x{j}' for j in range(m_dim)]
    pair = evo.junction_pair
    frames = []
    for leg, name in ((evo.incoming, 'in'), (evo.outgoing, 'ou')):
        frame = pd.DataFrame(leg.x, columns=xs)
        frame.insert(0, 'kind', '')
        frame.insert(0, 't_end', leg.t)
        frame.insert(0, 't', leg.t)
        frame.insert(0, 'leg', name)
        frames.append(frame)
    kind = 'impulsive' if pair.sigma_ou == pair.sigma_in else 'intermodal'
    jump = pd.DataFrame([['jump', pair.sigma_in, pair.sigma_ou, kind, *pair.xi_in]],
                        columns=['leg', 't', 't_end', 'kind'] + xs)
    return pd.concat([frames[0], jump, frames[1]], ignore_index=True)


def trajectory_frame(evo):
    """Tabela da trajetória: pernas in/ou e duas linhas jump com o par de junção."""
    p_dim = evo.incoming.p.shape[1]
    m_dim = evo.incoming.x.shape[1]
    columns = (['leg', 't', 'd'] + [f'p{i}' for i in range(p_dim)]
               + [f'x{j}' for j in range(m_dim)] + [f'c{i}' for i in range(p_dim)])
    rows = []
    for k in range(len(evo.incoming)):
        leg = evo.incoming
        rows.append(['in', leg.t[k], leg.d[k], *leg.p[k], *leg.x[k], *leg.c[k]])
    pair = evo.junction_pair
    nan = [np.nan] * p_dim
    rows.append(['jump', pair.sigma_in, 0.0, *pair.pi_in, *pair.xi_in, *nan])
    rows.append(['jump', pair.sigma_ou, 0.0, *pair.pi_ou, *pair.xi_ou, *nan])
    for k in range(len(evo.outgoing)):
        leg = evo.outgoing
        rows.append(['ou', leg.t[k], leg.d[k], *leg.p[k], *leg.x[k], *leg.c[k]])
    return pd.DataFrame(rows, columns=columns)


def write_trajectory_csv(evo, path):
    trajectory_frame(evo).to_csv(path, index=False)
