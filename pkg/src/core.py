"""Tipos de domínio: fluidezes, leis de duração, estados de tráfego e grades.

A grade é de nós: um eixo com `count` nós tem nós lo + i*h, com
h = (hi - lo)/(count - 1). A célula de um valor é o nó mais próximo.
Eixos com count = 1 (lo = hi) fixam uma componente em um único valor.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import BoundsError, GridError, InvalidFluidityError, NoJunctionError

# tolerância numérica usada em todos os arredondamentos de grade
EPS = 1e-9

STATE_ROLES = ('time', 'duration', 'position', 'monad')
CLOCK_ROLES = ('time', 'duration', 'omega', 'tau_sum')
CONTROLLED_ROLES = ('position', 'monad', 'position_in', 'monad_in', 'position_ou', 'monad_ou')
KNOWN_ROLES = CLOCK_ROLES + CONTROLLED_ROLES


def _check_rate(value, name):
    if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value) and value > 0):
        raise InvalidFluidityError(f'{name} deve ser finita e > 0 (recebido {value!r})')


@dataclass(frozen=True)
class Fluidities:
    """Fluidezes constantes de entrada e de saída."""
    phi_in: float
    phi_ou: float

    def __post_init__(self):
        _check_rate(self.phi_in, 'phi_in')
        _check_rate(self.phi_ou, 'phi_ou')


@dataclass(frozen=True)
class DurationLaw:
    """Lei d(t) = max(0, a*(phi*t - D)) com fluidez constante.

    a = -1 descreve uma duração de entrada (decresce até zero na abertura),
    a = +1 uma duração de saída e a = 0 o caso estacionário.
    """
    a: int
    phi: float
    D: float

    def __post_init__(self):
        if self.a not in (-1, 0, 1):
            raise ValueError(f'sinal a deve estar em {{-1, 0, +1}} (recebido {self.a!r})')
        _check_rate(self.phi, 'phi')
        if not (math.isfinite(self.D) and self.D >= 0):
            raise ValueError(f'D deve ser finito e >= 0 (recebido {self.D!r})')

    @property
    def aperture(self):
        return aperture(self.D, self.phi)


def aperture(D, phi):
    """Abertura Omega = D/phi: tempo até (ou desde) a junção."""
    if not (math.isfinite(phi) and phi > 0):
        raise InvalidFluidityError(f'fluidez deve ser > 0 (recebido {phi!r})')
    if D < 0:
        raise ValueError(f'duração negativa: {D!r}')
    return D / phi


def duration_value(law, t):
    # forma a*phi*(t - Omega) para que o valor na abertura seja exatamente 0
    value = law.a * law.phi * (t - law.aperture)
    return max(0.0, value)


def classify_law(law):
    """Classifica a lei pelo sinal: incoming, stationary ou outgoing."""
    return {-1: 'incoming', 0: 'stationary', 1: 'outgoing'}[law.a]


def travel_schedule(incoming, stationary_length, outgoing, t):
    """Duração ao longo de uma viagem entrada -> janela estacionária -> saída.

    A lei de entrada zera na sua abertura Omega_in, a duração fica nula
    durante `stationary_length` unidades de tempo e depois cresce pela lei
    de saída, deslocada para sair do zero em Omega_in + stationary_length.
    """
    if incoming.a != -1 or outgoing.a != 1:
        raise ValueError('travel_schedule exige lei de entrada (a=-1) e de saída (a=+1)')
    if stationary_length < 0:
        raise ValueError('janela estacionária negativa')
    departure_of_outgoing = incoming.aperture + stationary_length
    if t <= departure_of_outgoing:
        return duration_value(incoming, t)
    return duration_value(outgoing, t - departure_of_outgoing + outgoing.aperture)


def spatial_detector(junction_positions, p):
    """Distância euclidiana de p à posição de junção mais próxima."""
    points = np.atleast_2d(np.asarray(list(junction_positions), dtype=float))
    if points.size == 0:
        raise NoJunctionError('conjunto de posições de junção vazio')
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if points.shape[1] != p.shape[0]:
        points = points.reshape(-1, p.shape[0])
    return float(np.min(np.linalg.norm(points - p, axis=1)))


def _as_float_tuple(values):
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class TrafficState:
    """Estado de tráfego (t, d, p, x)."""
    t: float
    d: float
    p: tuple
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, 't', float(self.t))
        object.__setattr__(self, 'd', float(self.d))
        object.__setattr__(self, 'p', _as_float_tuple(self.p))
        object.__setattr__(self, 'x', _as_float_tuple(self.x))
        values = (self.t, self.d) + self.p + self.x
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f'estado com componente não finita: {values}')
        if self.d < 0:
            raise ValueError(f'duração negativa: {self.d}')

    def as_vector(self):
        return np.array((self.t, self.d) + self.p + self.x, dtype=float)

    @classmethod
    def from_vector(cls, vector, p_dim):
        v = np.asarray(vector, dtype=float)
        return cls(v[0], v[1], v[2:2 + p_dim], v[2 + p_dim:])


@dataclass(frozen=True)
class TransportState:
    """Par (estado de partida, estado de chegada)."""
    incoming: TrafficState
    outgoing: TrafficState

    def __post_init__(self):
        if self.incoming.t > self.outgoing.t:
            raise ValueError('a data de partida deve ser <= à data de chegada')


@dataclass(frozen=True)
class Axis:
    """Eixo da grade: papel, limites e número de nós."""
    role: str
    lo: float
    hi: float
    count: int
    name: str = ''

    def __post_init__(self):
        if self.role not in KNOWN_ROLES:
            raise GridError(f'papel de eixo desconhecido: {self.role!r}')
        object.__setattr__(self, 'lo', float(self.lo))
        object.__setattr__(self, 'hi', float(self.hi))
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise GridError(f'eixo {self.label}: limites não finitos')
        if int(self.count) != self.count or self.count < 1:
            raise GridError(f'eixo {self.label}: count deve ser inteiro >= 1')
        object.__setattr__(self, 'count', int(self.count))
        if self.count == 1 and self.lo != self.hi:
            raise GridError(f'eixo {self.label}: eixo de um nó exige lo == hi')
        if self.count > 1 and not self.lo < self.hi:
            raise GridError(f'eixo {self.label}: exige lo < hi')

    @property
    def label(self):
        return self.name or self.role

    @property
    def degenerate(self):
        return self.count == 1

    @property
    def width(self):
        return (self.hi - self.lo) / (self.count - 1) if self.count > 1 else 0.0

    @property
    def controlled(self):
        return self.role in CONTROLLED_ROLES

    def node(self, i):
        return self.lo + i * self.width

    def nodes(self):
        return self.lo + np.arange(self.count) * self.width

    def _pinned(self, values):
        return np.abs(values - self.lo) <= EPS * max(1.0, abs(self.lo))

    def nearest(self, values):
        """Índice do nó mais próximo e máscara de validade (dentro do eixo)."""
        values = np.asarray(values, dtype=float)
        finite = np.isfinite(values)
        if self.degenerate:
            return np.zeros(values.shape, dtype=np.int64), finite & self._pinned(values)
        u = np.where(finite, (values - self.lo) / self.width, -1.0)
        idx = np.floor(u + 0.5 + EPS)
        ok = finite & (idx >= 0) & (idx < self.count)
        return np.where(ok, idx, 0).astype(np.int64), ok

    def ball(self, values, radius):
        """Opções de nós na bola fechada de raio radius*h/2 em torno de values.

        Retorna radius+1 pares (índices, validade); radius = 0 aceita apenas
        acertos exatos em nós e radius = 1 os nós da célula fechada.
        """
        values = np.asarray(values, dtype=float)
        finite = np.isfinite(values)
        if self.degenerate:
            return [(np.zeros(values.shape, dtype=np.int64), finite & self._pinned(values))]
        u = np.where(finite, (values - self.lo) / self.width, -1e18)
        k_lo = np.ceil(u - radius / 2.0 - EPS)
        k_hi = np.floor(u + radius / 2.0 + EPS)
        options = []
        for j in range(radius + 1):
            k = k_lo + j
            ok = finite & (k <= k_hi) & (k >= 0) & (k < self.count)
            options.append((np.where(ok, k, 0).astype(np.int64), ok))
        return options


@dataclass(frozen=True)
class GridSpec:
    """Grade multi-eixo em ordem row-major (primeiro eixo mais lento)."""
    axes: tuple
    _strides: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes:
            raise GridError('grade sem eixos')
        object.__setattr__(self, 'axes', axes)
        shape = tuple(a.count for a in axes)
        strides = tuple(int(np.prod(shape[i + 1:], dtype=np.int64)) for i in range(len(shape)))
        object.__setattr__(self, '_strides', strides)

    @classmethod
    def state_grid(cls, time, duration, positions, monads):
        """Monta a grade de estados (t, d, p..., x...) a partir de triplas (lo, hi, count)."""
        axes = [Axis('time', *time, name='t'), Axis('duration', *duration, name='d')]
        axes += [Axis('position', *spec, name=f'p{i}') for i, spec in enumerate(positions)]
        axes += [Axis('monad', *spec, name=f'x{j}') for j, spec in enumerate(monads)]
        grid = cls(tuple(axes))
        grid.validate_state_grid()
        return grid

    def validate_state_grid(self):
        roles = [a.role for a in self.axes]
        p_dim = roles.count('position')
        m_dim = roles.count('monad')
        expected = ['time', 'duration'] + ['position'] * p_dim + ['monad'] * m_dim
        if roles != expected or p_dim < 1 or m_dim < 1:
            raise GridError(f'grade de estados deve ter eixos (t, d, p..., x...), recebido {roles}')
        duration = self.axes[1]
        if duration.lo != 0.0 or duration.degenerate:
            raise GridError('o eixo de duração deve começar em 0 e ter pelo menos 2 nós')
        if self.axes[0].degenerate:
            raise GridError('o eixo de tempo deve ter pelo menos 2 nós')

    @property
    def shape(self):
        return tuple(a.count for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def p_dim(self):
        return sum(1 for a in self.axes if a.role == 'position')

    @property
    def m_dim(self):
        return sum(1 for a in self.axes if a.role == 'monad')

    @property
    def time_step(self):
        return self.axis_of('time').width

    @property
    def duration_width(self):
        return self.axis_of('duration').width

    @property
    def widths(self):
        return np.array([a.width for a in self.axes])

    def axis_of(self, role):
        for axis in self.axes:
            if axis.role == role:
                return axis
        raise GridError(f'grade sem eixo {role!r}')

    def roles_index(self, role):
        return [i for i, a in enumerate(self.axes) if a.role == role]

    def controlled_mask(self):
        return np.array([a.controlled for a in self.axes])

    def flat(self, index):
        return int(np.ravel_multi_index(tuple(int(i) for i in index), self.shape))

    def unflat(self, flat_index):
        return np.unravel_index(flat_index, self.shape)

    def node_vector(self, index):
        return np.array([a.node(i) for a, i in zip(self.axes, index)], dtype=float)

    def centers(self, flat_indices=None):
        """Coordenadas dos nós, uma linha por célula (todas ou as indicadas)."""
        if flat_indices is None:
            idx = np.indices(self.shape).reshape(self.ndim, -1)
        else:
            idx = np.vstack(np.unravel_index(np.asarray(flat_indices, dtype=np.int64), self.shape))
        lows = np.array([a.lo for a in self.axes])[:, None]
        return (lows + idx * self.widths[:, None]).T

    def locate(self, vector):
        """Índice multi-eixo da célula do vetor; fora da grade gera BoundsError."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.ndim,):
            raise GridError(f'vetor com {vector.shape} componentes para grade de {self.ndim} eixos')
        index = []
        for axis, value in zip(self.axes, vector):
            i, ok = axis.nearest(value)
            if not bool(ok):
                raise BoundsError(f'{axis.label} = {value} fora de [{axis.lo}, {axis.hi}]')
            index.append(int(i))
        return tuple(index)

    def contains_point(self, vector):
        try:
            self.locate(vector)
        except BoundsError:
            return False
        return True

    def nearest_flat(self, points):
        """Índice plano do nó mais próximo de cada ponto; -1 fora da grade."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        flat = np.zeros(points.shape[0], dtype=np.int64)
        ok = np.ones(points.shape[0], dtype=bool)
        for a, axis in enumerate(self.axes):
            idx, good = axis.nearest(points[:, a])
            flat += idx * self._strides[a]
            ok &= good
        return np.where(ok, flat, -1)

    def with_axis(self, position, axis):
        axes = list(self.axes)
        axes[position] = axis
        return GridSpec(tuple(axes))

    def candidates(self, points, radius):
        """Células candidatas (índices planos, -1 = inválida) das imagens `points`.

        Eixos de relógio usam o nó mais próximo; eixos controlados usam a
        bola fechada de raio radius*h/2. Retorna array (n, n_opções).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        per_axis = []
        for a, axis in enumerate(self.axes):
            values = points[:, a]
            if axis.controlled:
                per_axis.append(axis.ball(values, radius))
            else:
                per_axis.append([axis.nearest(values)])
        columns = []
        for combo in itertools.product(*(range(len(opts)) for opts in per_axis)):
            flat = np.zeros(points.shape[0], dtype=np.int64)
            ok = np.ones(points.shape[0], dtype=bool)
            for a, j in enumerate(combo):
                idx, good = per_axis[a][j]
                flat += idx * self._strides[a]
                ok &= good
            columns.append(np.where(ok, flat, -1))
        return np.stack(columns, axis=1)
