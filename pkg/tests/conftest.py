"""
Fixtures compartilhadas: cenários pequenos montados em memória e
cenários distribuídos em scenarios/, com núcleos calculados uma vez por sessão
"""

import os

import numpy as np
import pytest

from src.core import Fluidities, GridSpec
from src.dynamics import CelerityBounds, SurgeField
from src.relations import CellSet, JunctionPair, JunctionRelation, MonadRelation
from src.regulator import extract_regulator
from src.scenario import Scenario, load_scenario
from src.solver import SolverParams, side_model, solve

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                            'scenarios')


def build_scenario(time, duration, positions, monads, celerity=((1.0,), (2.0,), 3),
                   phi=(1.0, 1.0), surge=None, surge_ou=None, mask=None, junction=None,
                   mode='product', coupling=False, params=None):
    """Monta um cenário em memória; a junção é ajustada à grade como no carregamento."""
    grid = GridSpec.state_grid(time, duration, positions, monads)
    surge = surge or SurgeField.constant(np.zeros(grid.m_dim))
    if mask is None:
        mask = np.ones(grid.shape, dtype=bool)
    junction = junction if junction is not None else JunctionRelation([])
    if junction.pairs:
        junction = junction.snap(grid)
    return Scenario('memória', grid, Fluidities(*phi), CelerityBounds(*celerity), surge,
                    surge_ou or surge, MonadRelation(CellSet(grid, mask)), junction, mode,
                    coupling, params or SolverParams())


def random_aligned_scenario(rng):
    """Cenário aleatório pequeno com d_width = phi*h (oráculo e núcleo coincidem)."""
    nt = int(rng.integers(5, 8))
    nd = int(rng.integers(3, 6))
    n_p = int(rng.integers(5, 8))
    nx = int(rng.choice([1, 3]))
    phi = float(rng.choice([0.5, 1.0, 2.0]))
    w_p = float(rng.choice([0.5, 1.0]))
    t_lo = -float((nt - 1) // 2)
    time = (t_lo, t_lo + nt - 1, nt)
    duration = (0.0, (nd - 1) * phi, nd)
    p_lo = -((n_p - 1) // 2) * w_p
    position = (p_lo, p_lo + (n_p - 1) * w_p, n_p)
    monad = (0.0, 0.0, 1) if nx == 1 else (-0.5, 0.5, 3)
    c_min = float(rng.choice([-1.0, 0.0, 0.5]))
    c_max = c_min + float(rng.choice([0.5, 1.0]))
    if nx > 1 and rng.random() < 0.5:
        surge = SurgeField('interval', 1, samples=3, lower=[-0.5], upper=[0.5])
        samples = 2
    else:
        surge = SurgeField.constant([0.0])
        samples = int(rng.choice([2, 3]))

    grid = GridSpec.state_grid(time, duration, [position], [monad])
    t_nodes = grid.axes[0].nodes()
    p_nodes = grid.axes[2].nodes()
    x_nodes = grid.axes[3].nodes()
    if rng.random() < 0.5:
        sigma = float(rng.choice(t_nodes[1:-1]))
        pair = JunctionPair(sigma, [float(rng.choice(p_nodes))], [float(rng.choice(x_nodes))],
                            sigma, [float(rng.choice(p_nodes))], [float(rng.choice(x_nodes))])
        junction = JunctionRelation([pair], product=True)
    else:
        s_in = float(rng.choice(t_nodes[1:-2]))
        s_ou = s_in + 1.0
        pre = [(s_in, [float(p)], [float(rng.choice(x_nodes))])
               for p in rng.choice(p_nodes, size=2, replace=False)]
        post = [(s_ou, [float(p)], [float(rng.choice(x_nodes))])
                for p in rng.choice(p_nodes, size=2, replace=False)]
        junction = JunctionRelation([JunctionPair(a[0], a[1], a[2], b[0], b[1], b[2])
                                     for a in pre for b in post], product=True)

    mask = rng.random(grid.shape) < 0.85
    flat = mask.reshape(-1)
    for state in junction.pre_states() + junction.post_states():
        flat[grid.nearest_flat(state.as_vector())[0]] = True
    return build_scenario(time, duration, [position], [monad], ((c_min,), (c_max,), samples),
                          (phi, phi), surge, mask=mask, junction=junction)


def safe_monad_scenario(safe=True, sigma=0.0, split=0.0, pi_in=0.0, pi_ou=1.0):
    """M segura: entrada em {t <= sigma, d = sigma - t, p <= split}, saída no espelho com p > split."""
    time, duration, positions, monads = (-3, 3, 7), (0, 3, 4), [(-3, 3, 7)], [(0, 0, 1)]
    grid = GridSpec.state_grid(time, duration, positions, monads)
    t, d, p = (grid.centers()[:, k].reshape(grid.shape) for k in range(3))
    mask = (((t <= sigma) & np.isclose(d, sigma - t) & (p <= split))
            | ((t >= sigma) & np.isclose(d, t - sigma) & (p > split)))
    if not safe:
        mask = np.ones(grid.shape, dtype=bool)
    junction = JunctionRelation.impulsive_singleton(sigma, [pi_in], [pi_ou], [0.0])
    return build_scenario(time, duration, positions, monads, celerity=((0.5,), (1.0,), 2),
                          mask=mask, junction=junction)


def scenario_path(name):
    return os.path.join(SCENARIO_DIR, name)


@pytest.fixture
def make_scenario():
    return build_scenario


@pytest.fixture
def make_random_scenario():
    return random_aligned_scenario


@pytest.fixture
def make_safe_scenario():
    return safe_monad_scenario


@pytest.fixture(scope='session')
def scenario_a():
    return load_scenario(scenario_path('analytic-a.cfg'))


@pytest.fixture(scope='session')
def solved_a(scenario_a):
    return solve(scenario_a)


@pytest.fixture(scope='session')
def regulators_a(scenario_a, solved_a):
    return {side: extract_regulator(getattr(solved_a, f'basin_{side}'),
                                    side_model(scenario_a, side), side, scenario_a.params)
            for side in ('in', 'ou')}


@pytest.fixture(scope='session')
def scenario_burgers():
    return load_scenario(scenario_path('burgers.cfg'))


@pytest.fixture(scope='session')
def solved_burgers(scenario_burgers):
    return solve(scenario_burgers)


@pytest.fixture(scope='session')
def regulators_burgers(scenario_burgers, solved_burgers):
    return {side: extract_regulator(getattr(solved_burgers, f'basin_{side}'),
                                    side_model(scenario_burgers, side), side,
                                    scenario_burgers.params)
            for side in ('in', 'ou')}


@pytest.fixture(scope='session')
def scenario_jam():
    return load_scenario(scenario_path('jam.cfg'))


@pytest.fixture(scope='session')
def solved_jam(scenario_jam):
    return solve(scenario_jam)


@pytest.fixture(scope='session')
def regulators_jam(scenario_jam, solved_jam):
    return {side: extract_regulator(getattr(solved_jam, f'basin_{side}'),
                                    side_model(scenario_jam, side), side, scenario_jam.params)
            for side in ('in', 'ou')}


@pytest.fixture(scope='session')
def scenario_coupled():
    return load_scenario(scenario_path('analytic-a-coupled.cfg'))


@pytest.fixture(scope='session')
def solved_coupled(scenario_coupled):
    return solve(scenario_coupled)
