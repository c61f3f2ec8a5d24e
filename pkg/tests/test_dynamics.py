"""
Testes dos campos de surto, das celeridades e dos passos de Euler
"""

import numpy as np
import pytest

from src.core import Fluidities, GridSpec, TrafficState
from src.dynamics import (AuxPair, CelerityBounds, LegSamples, StepModel, SurgeField, aux_step,
                          euler_step_incoming, euler_step_outgoing_aux, reverse_outgoing,
                          surge_samples)
from src.errors import BoundsError, EmptyInputError


def _state(t, d, p, x):
    return TrafficState(t, d, np.atleast_1d(p), np.atleast_1d(x))


class TestSurgeField:
    """Testes das quatro formas de campo de surtos"""

    def test_constant(self):
        """Testa campo constante: uma amostra igual em todos os estados"""
        field = SurgeField.constant([0.5, -1.0])
        samples = field.sample_array(np.zeros((3, 5)), 1)
        assert samples.shape == (1, 3, 2)
        assert np.allclose(samples[0], [[0.5, -1.0]] * 3)

    def test_interval_lattice_has_endpoints(self):
        """Testa que o reticulado do intervalo inclui os extremos"""
        field = SurgeField('interval', 1, samples=3, lower=[-1.0], upper=[1.0])
        values = sorted(field.sample_array(np.zeros((1, 4)), 1)[:, 0, 0].tolist())
        assert values == [-1.0, 0.0, 1.0]
        degenerate = SurgeField('interval', 1, samples=3, lower=[2.0], upper=[2.0])
        assert degenerate.sample_count == 1

    def test_affine(self):
        """Testa f = A [t, d, p, x] + b"""
        field = SurgeField('affine', 1, matrix=[[0.0, 0.0, 1.0, 0.0]], offset=[1.0])
        samples = field.sample_array(np.array([[0.0, 1.0, 3.0, 0.0], [0.0, 1.0, -2.0, 0.0]]), 1)
        assert np.allclose(samples[0, :, 0], [4.0, -1.0])
        with pytest.raises(ValueError):
            field.sample_array(np.zeros((1, 5)), 2)

    def test_duration_scaled(self):
        """Testa o surto escalado pela duração e pelo detector espacial"""
        by_duration = SurgeField('duration-scaled', 1, samples=2, lower=[-1.0], upper=[1.0])
        samples = by_duration.sample_array(np.array([[0.0, 2.0, 3.0, 0.0]]), 1)
        assert sorted(samples[:, 0, 0].tolist()) == [-2.0, 2.0]
        at_junction = by_duration.sample_array(np.array([[0.0, 0.0, 3.0, 0.0]]), 1)
        assert np.allclose(at_junction, 0.0), 'Surto deve anular em d = 0'
        spatial = SurgeField('duration-scaled', 1, samples=2, lower=[-1.0], upper=[1.0],
                             detector='spatial', junction_positions=[(0.0,)])
        samples = spatial.sample_array(np.array([[0.0, 1.0, 3.0, 0.0]]), 1)
        assert sorted(samples[:, 0, 0].tolist()) == [-3.0, 3.0]

    def test_invalid_fields(self):
        """Testa tipo desconhecido, dimensões erradas e intervalo invertido"""
        with pytest.raises(ValueError):
            SurgeField('gaussian', 1)
        with pytest.raises(ValueError):
            SurgeField('interval', 2, lower=[0.0], upper=[1.0])
        with pytest.raises(ValueError):
            SurgeField('interval', 1, lower=[1.0], upper=[0.0])
        with pytest.raises(ValueError):
            SurgeField('duration-scaled', 1, lower=[0.0], upper=[1.0], detector='spatial')

    def test_surge_samples_bounds(self):
        """Testa erro de estado fora da grade"""
        grid = GridSpec.state_grid((-1, 1, 3), (0, 2, 3), [(0, 4, 5)], [(0, 0, 1)])
        field = SurgeField.constant([0.0])
        assert surge_samples(field, _state(0.0, 1.0, 2.0, 0.0), grid).shape == (1, 1)
        with pytest.raises(BoundsError):
            surge_samples(field, _state(0.0, 1.0, 9.0, 0.0), grid)


class TestCelerityBounds:
    """Testes do reticulado de celeridades"""

    def test_lattice(self):
        """Testa extremos e espaçamento"""
        bounds = CelerityBounds((1.0,), (2.0,), 3)
        assert bounds.lattice()[:, 0].tolist() == [1.0, 1.5, 2.0]
        assert np.allclose(bounds.spacing(), [0.5])
        assert CelerityBounds((0.0, 0.0), (1.0, 1.0), 2).lattice().shape == (4, 2)

    def test_invalid(self):
        """Testa c_min > c_max e menos de duas amostras"""
        with pytest.raises(ValueError):
            CelerityBounds((2.0,), (1.0,), 3)
        with pytest.raises(ValueError):
            CelerityBounds((1.0,), (2.0,), 1)


class TestEulerSteps:
    """Testes dos integradores de um passo"""

    def test_incoming_step(self):
        """Testa tempo +h, duração -phi h e posição +h c"""
        s = euler_step_incoming(_state(0.0, 2.0, 1.0, 0.0), [2.0], [0.5], 0.5, 1.0)
        assert (s.t, s.d, s.p, s.x) == (0.5, 1.5, (2.0,), (0.25,))

    def test_incoming_clamps_duration(self):
        """Testa o grampo da duração em zero"""
        s = euler_step_incoming(_state(0.0, 0.2, 0.0, 0.0), [0.0], [0.0], 1.0, 1.0)
        assert s.d == 0.0

    def test_outgoing_aux_step(self):
        """Testa o campo invertido da metade de saída"""
        s = euler_step_outgoing_aux(_state(3.0, 2.0, 1.0, 1.0), [2.0], [1.0], 0.5, 2.0)
        assert (s.t, s.d, s.p, s.x) == (2.5, 1.0, (0.0,), (0.5,))

    def test_invalid_step(self):
        """Testa passo nulo"""
        with pytest.raises(ValueError):
            euler_step_incoming(_state(0.0, 1.0, 0.0, 0.0), [1.0], [0.0], 0.0, 1.0)

    @pytest.mark.slow
    def test_aux_invariants(self):
        """Testa tau_in + tau_ou e d_in phi_ou - d_ou phi_in constantes em 1000 trajetórias sem grampo"""
        rng = np.random.default_rng(11)
        h = 0.25
        for trial in range(1000):
            fl = Fluidities(*rng.uniform(0.5, 2.0, 2))
            p_dim, m_dim = rng.integers(1, 3, 2)
            steps = int(rng.integers(1, 25))
            # omega acima de steps * h: nenhum lado chega a d = 0
            omega_in, omega_ou = rng.uniform(steps * h + 1.0, 20.0, 2)
            pair = AuxPair(_state(rng.uniform(-10, 10), fl.phi_in * omega_in,
                                  rng.uniform(-5, 5, p_dim), rng.uniform(-5, 5, m_dim)),
                           _state(rng.uniform(-10, 10), fl.phi_ou * omega_ou,
                                  rng.uniform(-5, 5, p_dim), rng.uniform(-5, 5, m_dim)))

            def invariants(pair):
                return (pair.incoming.t + pair.outgoing.t,
                        pair.incoming.d * fl.phi_ou - pair.outgoing.d * fl.phi_in)

            def scales(pair):
                return (abs(pair.incoming.t) + abs(pair.outgoing.t) + 1.0,
                        pair.incoming.d * fl.phi_ou + pair.outgoing.d * fl.phi_in + 1.0)

            initial, scale = invariants(pair), scales(pair)
            for _ in range(steps):
                pair = aux_step(pair, rng.uniform(-2, 2, p_dim), rng.uniform(-2, 2, p_dim),
                                rng.uniform(-1, 1, m_dim), rng.uniform(-1, 1, m_dim), h, fl)
                for value, start, size in zip(invariants(pair), initial, scale):
                    assert abs(value - start) <= 1e-12 * size, \
                        f'Deriva {abs(value - start)} na trajetória {trial}'
            assert pair.incoming.d > 0 and pair.outgoing.d > 0


class TestLegSamples:
    """Testes das amostras de perna e da reversão temporal"""

    def _aux_leg(self):
        rows = [(_state(2.0, 2.0, 9.0, 0.0), [1.0], [0.0]),
                (_state(1.0, 1.0, 8.0, 0.0), [1.0], [0.0]),
                (_state(0.0, 0.0, 7.0, 0.0), None, None)]
        return LegSamples.from_rows(rows, 1, 1)

    def test_from_rows(self):
        """Testa NaN para controles ausentes no último estado"""
        leg = self._aux_leg()
        assert len(leg) == 3
        assert np.isnan(leg.c[2, 0]) and np.isnan(leg.f[2, 0])
        assert leg.state(1).p == (8.0,)

    def test_reverse_outgoing(self):
        """Testa t = T_ou - s com a ordem invertida"""
        real = reverse_outgoing(self._aux_leg(), 4.0)
        assert real.t.tolist() == [4.0, 3.0, 2.0]
        assert real.p[:, 0].tolist() == [7.0, 8.0, 9.0]
        assert real.d.tolist() == [0.0, 1.0, 2.0]
        with pytest.raises(EmptyInputError):
            reverse_outgoing(LegSamples.from_rows([], 1, 1), 0.0)


class TestStepModel:
    """Testes do passo vetorizado sobre os nós"""

    def _grid(self):
        return GridSpec.state_grid((-2, 2, 5), (0, 2, 5), [(0, 4, 5)], [(0, 2, 3)])

    def test_images_per_control(self):
        """Testa uma imagem por par (celeridade, surto)"""
        surge = SurgeField('interval', 1, samples=2, lower=[-1.0], upper=[1.0])
        model = StepModel(self._grid(), 'in', 0.5, CelerityBounds((0.0,), (1.0,), 2), surge)
        assert model.control_count == 4
        images = list(model.images(np.array([[0.0, 1.0, 2.0, 1.0]])))
        assert len(images) == 4
        ci, fi, image, valid, f = images[3]
        assert (ci, fi) == (1, 1)
        assert np.allclose(image, [[1.0, 0.5, 3.0, 2.0]])
        assert valid.all()

    def test_sides(self):
        """Testa os sinais dos lados 'ou' e 'forward'"""
        celerity = CelerityBounds((1.0,), (1.0,), 2)
        point = np.array([[0.0, 1.0, 2.0, 1.0]])
        for side, expected in (('ou', [-1.0, 0.0, 1.0, 1.0]), ('forward', [1.0, 2.0, 3.0, 1.0])):
            model = StepModel(self._grid(), side, 1.0, celerity, SurgeField.constant([0.0]))
            _, _, image, _, _ = next(model.images(point))
            assert np.allclose(image, [expected]), f'Lado {side}'
        with pytest.raises(ValueError):
            StepModel(self._grid(), 'sideways', 1.0, celerity, SurgeField.constant([0.0]))

    def test_coupling_mask(self):
        """Testa celeridade usável apenas perto do valor da mônada"""
        model = StepModel(self._grid(), 'in', 1.0, CelerityBounds((0.0,), (2.0,), 3),
                          SurgeField.constant([0.0]), coupling=True)
        x = np.array([[0.0], [1.0], [2.0]])
        assert model.coupling_mask(1, x).tolist() == [False, True, False]
        uncoupled = StepModel(self._grid(), 'in', 1.0, CelerityBounds((0.0,), (2.0,), 3),
                              SurgeField.constant([0.0]))
        assert uncoupled.coupling_mask(1, x).all()
