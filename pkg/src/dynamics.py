"""Campos de surto, celeridades e integradores de Euler de um passo.

Sinais do sistema auxiliar: tau_in +1, tau_ou -1, delta -phi nos dois
lados, pi_in +gamma_in, pi_ou -gamma_ou, xi_in +f_in, xi_ou -f_ou.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from src.core import EPS, TrafficState, spatial_detector
from src.errors import BoundsError, EmptyInputError

SURGE_KINDS = ('constant', 'interval', 'affine', 'duration-scaled')

# sinais (tempo, duração, posição, mônada) de cada integrador
STEP_SIGNS = {
    'in': (1.0, -1.0, 1.0, 1.0),
    'ou': (-1.0, -1.0, -1.0, -1.0),
    'forward': (1.0, 1.0, 1.0, 1.0),
}


def _lattice(lower, upper, samples):
    """Reticulado uniforme com extremos, produto cartesiano por componente."""
    axes = []
    for lo, hi in zip(lower, upper):
        axes.append(np.unique(np.linspace(lo, hi, samples)) if hi > lo else np.array([lo]))
    return np.array(list(itertools.product(*axes)), dtype=float)


class SurgeField:
    """Campo de surtos F(t, d, p, x) amostrado em um conjunto finito.

    Tipos: 'constant' (value), 'interval' (lower, upper), 'affine'
    (matrix, offset: f = A [t, d, p, x] + b) e 'duration-scaled'
    (lower, upper escalados pela duração ou por um detector espacial).
    """

    def __init__(self, kind, m_dim, samples=1, value=None, lower=None, upper=None,
                 matrix=None, offset=None, detector='duration', junction_positions=None):
        if kind not in SURGE_KINDS:
            raise ValueError(f'tipo de surto desconhecido: {kind!r}')
        if samples < 1:
            raise ValueError('samples deve ser >= 1')
        self.kind = kind
        self.m_dim = m_dim
        self.samples = samples
        self.detector = detector
        self.junction_positions = None if junction_positions is None else [
            tuple(np.atleast_1d(p)) for p in junction_positions]
        if kind == 'constant':
            value = np.zeros(m_dim) if value is None else np.atleast_1d(np.asarray(value, dtype=float))
            self._check_length(value, 'value')
            self.base = value.reshape(1, m_dim)
        elif kind in ('interval', 'duration-scaled'):
            lower = np.atleast_1d(np.asarray(lower, dtype=float))
            upper = np.atleast_1d(np.asarray(upper, dtype=float))
            self._check_length(lower, 'lower')
            self._check_length(upper, 'upper')
            if np.any(lower > upper):
                raise ValueError('surto com lower > upper')
            self.base = _lattice(lower, upper, samples)
            if kind == 'duration-scaled' and detector not in ('duration', 'spatial'):
                raise ValueError(f'detector desconhecido: {detector!r}')
            if detector == 'spatial' and not self.junction_positions:
                raise ValueError('detector espacial exige posições de junção')
        else:
            self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            self.offset = np.zeros(m_dim) if offset is None else np.atleast_1d(
                np.asarray(offset, dtype=float))
            if self.matrix.shape[0] != m_dim:
                raise ValueError(f'matriz afim com {self.matrix.shape[0]} linhas, esperado {m_dim}')
            self._check_length(self.offset, 'offset')
            self.base = None

    def _check_length(self, vector, name):
        if vector.shape != (self.m_dim,):
            raise ValueError(f'{name} com {vector.size} componentes, esperado {self.m_dim}')

    @classmethod
    def constant(cls, value):
        value = np.atleast_1d(value)
        return cls('constant', value.size, value=value)

    @property
    def sample_count(self):
        return 1 if self.kind == 'affine' else self.base.shape[0]

    def sample_array(self, points, p_dim):
        """Amostras para um lote de estados: array (n_amostras, n_estados, m_dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if self.kind in ('constant', 'interval'):
            return np.broadcast_to(self.base[:, None, :], (self.base.shape[0], n, self.m_dim))
        if self.kind == 'affine':
            if self.matrix.shape[1] != points.shape[1]:
                raise ValueError(f'matriz afim com {self.matrix.shape[1]} colunas para estados '
                                 f'de {points.shape[1]} componentes')
            return (points @ self.matrix.T + self.offset)[None, :, :]
        if self.detector == 'duration':
            scale = points[:, 1]
        else:
            scale = np.array([spatial_detector(self.junction_positions, row[2:2 + p_dim])
                              for row in points])
        return self.base[:, None, :] * scale[None, :, None]


def surge_samples(field, state, grid=None):
    """Amostras finitas de F no estado; com `grid`, exige o estado dentro da grade."""
    vector = state.as_vector()
    if grid is not None and not grid.contains_point(vector):
        raise BoundsError(f'estado {vector.tolist()} fora da grade')
    return field.sample_array(vector[None, :], len(state.p))[:, 0, :]


@dataclass(frozen=True)
class CelerityBounds:
    """Intervalo de celeridades por eixo de posição e número de amostras."""
    c_min: tuple
    c_max: tuple
    samples: int = 3

    def __post_init__(self):
        c_min = tuple(float(v) for v in np.atleast_1d(self.c_min))
        c_max = tuple(float(v) for v in np.atleast_1d(self.c_max))
        object.__setattr__(self, 'c_min', c_min)
        object.__setattr__(self, 'c_max', c_max)
        if len(c_min) != len(c_max):
            raise ValueError('c_min e c_max com dimensões diferentes')
        if any(lo > hi for lo, hi in zip(c_min, c_max)):
            raise ValueError('celeridade com c_min > c_max')
        if self.samples < 2:
            raise ValueError('celeridades exigem pelo menos 2 amostras')

    @property
    def p_dim(self):
        return len(self.c_min)

    def lattice(self):
        return _lattice(self.c_min, self.c_max, self.samples)

    def spacing(self):
        return np.array([(hi - lo) / (self.samples - 1) for lo, hi in zip(self.c_min, self.c_max)])


@dataclass(frozen=True)
class AuxPair:
    """Estado do sistema auxiliar: metade de entrada e metade de saída."""
    incoming: TrafficState
    outgoing: TrafficState


def _check_step(h):
    if not h > 0:
        raise ValueError(f'passo h deve ser > 0 (recebido {h!r})')


def euler_step_incoming(s, c, f, h, phi_in):
    _check_step(h)
    c = np.asarray(c, dtype=float)
    f = np.asarray(f, dtype=float)
    return TrafficState(s.t + h, max(0.0, s.d - phi_in * h),
                        np.asarray(s.p) + h * c, np.asarray(s.x) + h * f)


def euler_step_outgoing_aux(s, c, f, h, phi_ou):
    """Passo no tempo auxiliar da metade de saída (campo invertido)."""
    _check_step(h)
    c = np.asarray(c, dtype=float)
    f = np.asarray(f, dtype=float)
    return TrafficState(s.t - h, max(0.0, s.d - phi_ou * h),
                        np.asarray(s.p) - h * c, np.asarray(s.x) - h * f)


def aux_step(pair, gamma_in, gamma_ou, f_in, f_ou, h, fluidities):
    return AuxPair(euler_step_incoming(pair.incoming, gamma_in, f_in, h, fluidities.phi_in),
                   euler_step_outgoing_aux(pair.outgoing, gamma_ou, f_ou, h, fluidities.phi_ou))


@dataclass
class LegSamples:
    """Amostras de uma perna: tempos, durações, posições, mônadas, celeridades e surtos."""
    t: np.ndarray
    d: np.ndarray
    p: np.ndarray
    x: np.ndarray
    c: np.ndarray
    f: np.ndarray

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_rows(cls, rows, p_dim, m_dim):
        """Monta a partir de tuplas (estado, celeridade, surto); None vira NaN."""
        t, d, p, x, c, f = [], [], [], [], [], []
        for state, celerity, surge in rows:
            t.append(state.t)
            d.append(state.d)
            p.append(state.p)
            x.append(state.x)
            c.append(np.full(p_dim, np.nan) if celerity is None else celerity)
            f.append(np.full(m_dim, np.nan) if surge is None else surge)
        return cls(np.array(t, dtype=float), np.array(d, dtype=float),
                   np.array(p, dtype=float).reshape(-1, p_dim),
                   np.array(x, dtype=float).reshape(-1, m_dim),
                   np.array(c, dtype=float).reshape(-1, p_dim),
                   np.array(f, dtype=float).reshape(-1, m_dim))

    def state(self, k):
        return TrafficState(self.t[k], self.d[k], self.p[k], self.x[k])


def reverse_outgoing(aux_traj, T_ou):
    """Converte a perna de saída do tempo auxiliar s para o tempo real t = T_ou - s."""
    if len(aux_traj) == 0:
        raise EmptyInputError('trajetória auxiliar vazia')
    order = slice(None, None, -1)
    return LegSamples(T_ou - aux_traj.t[order], aux_traj.d[order].copy(), aux_traj.p[order].copy(),
                      aux_traj.x[order].copy(), aux_traj.c[order].copy(), aux_traj.f[order].copy())


class StepModel:
    """Passo de Euler vetorizado sobre os nós de uma grade de estados.

    side = 'in' (entrada), 'ou' (saída em tempo auxiliar) ou 'forward'
    (saída em tempo real). Com `coupling`, uma celeridade c só é usável
    onde |c - x| <= metade do espaçamento do reticulado de celeridades.
    """

    def __init__(self, grid, side, phi, celerity, surge, coupling=False):
        if side not in STEP_SIGNS:
            raise ValueError(f'lado desconhecido: {side!r}')
        self.grid = grid
        self.side = side
        self.phi = phi
        self.celerity = celerity
        self.celerities = celerity.lattice()
        self.surge = surge
        self.coupling = coupling
        self.h = grid.time_step
        self.p_dim = grid.p_dim
        self.m_dim = grid.m_dim

    @property
    def control_count(self):
        return self.celerities.shape[0] * self.surge.sample_count

    def coupling_mask(self, ci, x):
        """Estados (linhas de x) onde a celeridade ci é usável."""
        if not self.coupling:
            return np.ones(x.shape[0], dtype=bool)
        c = self.celerities[ci]
        tol = self.celerity.spacing() / 2 + EPS
        return np.all(np.abs(x[:, :self.p_dim] - c) <= tol, axis=1)

    def images(self, points):
        """Gera (ci, fi, imagens, válidos, surtos) para cada controle amostrado."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        st, sd, sp, sx = STEP_SIGNS[self.side]
        h, phi, p_dim = self.h, self.phi, self.p_dim
        surges = self.surge.sample_array(points, p_dim)
        x = points[:, 2 + p_dim:]
        t_new = points[:, 0] + st * h
        if sd < 0:
            d_new = np.maximum(0.0, points[:, 1] - phi * h)
        else:
            d_new = points[:, 1] + phi * h
        for ci, c in enumerate(self.celerities):
            p = points[:, 2:2 + p_dim]
            p_new = p + h * c if sp > 0 else p - h * c
            valid = self.coupling_mask(ci, x)
            for fi in range(surges.shape[0]):
                f = surges[fi]
                x_new = x + h * f if sx > 0 else x - h * f
                image = np.column_stack([t_new, d_new, p_new, x_new])
                yield ci, fi, image, valid, f
