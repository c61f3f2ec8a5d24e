"""
Testes da leitura e validação de cenários
"""

import numpy as np
import pytest

from src.core import TrafficState
from src.errors import ScenarioError
from src.relations import contains
from src.scenario import from_text, load_scenario, parse_entries

BASE = """\
grid.time = -1, 1, 3
grid.duration = 0, 2, 3
grid.position = 0, 4, 5
grid.monad = 0, 0, 1
fluidity.in = 1
fluidity.ou = 1
celerity.min = 1
celerity.max = 2
"""

IMPULSIVE = 'junction.impulsive = 0, 1, 2, 0\n'


def _issues(text):
    with pytest.raises(ScenarioError) as info:
        from_text(text)
    return info.value.issues


class TestDistributedScenarios:
    """Testes dos cenários em scenarios/"""

    def test_analytic_a(self, scenario_a):
        """Testa grade, fluidezes, junção e modo do cenário A"""
        assert scenario_a.grid.shape == (17, 17, 33, 1)
        assert (scenario_a.fluidities.phi_in, scenario_a.fluidities.phi_ou) == (1.0, 1.0)
        pair = scenario_a.junction.pairs[0]
        assert (pair.sigma_in, pair.pi_in, pair.pi_ou) == (0.0, (0.0,), (5.0,))
        assert scenario_a.junction.impulsive
        assert scenario_a.mode == 'product'
        assert scenario_a.seed == 7
        assert scenario_a.junction_report.valid

    def test_burgers_coupling(self, scenario_burgers):
        """Testa o acoplamento mônada = celeridade"""
        assert scenario_burgers.coupling
        assert scenario_burgers.junction.pairs[0].xi_in == (1.5,)

    def test_jam_capacity(self, scenario_jam):
        """Testa a capacidade tabelada b(t) da relação de mônadas"""
        M = scenario_jam.monad
        assert contains(M.cells, TrafficState(0.0, 1.0, (0.0,), (1.0,)))
        assert not contains(M.cells, TrafficState(0.0, 1.0, (0.0,), (1.5,)))
        assert contains(M.cells, TrafficState(-3.0, 1.0, (0.0,), (2.0,)))
        assert scenario_jam.surge_in.sample_count == 3

    def test_coupled(self, scenario_coupled):
        """Testa junção por pares no modo acoplado"""
        assert scenario_coupled.mode == 'coupled'
        assert not scenario_coupled.junction.declared_product

    def test_load_missing_file(self, tmp_path):
        """Testa arquivo inexistente"""
        with pytest.raises(OSError):
            load_scenario(tmp_path / 'nada.cfg')


class TestParse:
    """Testes da leitura linha a linha"""

    def test_comments_and_locations(self):
        """Testa comentários, linha e coluna do valor"""
        entries, issues = parse_entries('# comentário\n\ncelerity.min =  abc  # fim\n')
        assert not issues
        entry = entries['celerity.min'][0]
        assert entry.value == 'abc'
        assert entry.where == 'linha 3, coluna 17'

    def test_read_issues(self):
        """Testa linha sem '=', seção desconhecida e chave repetida"""
        _, issues = parse_entries('sem igual\nfoo.bar = 1\ngrid.time = 1\ngrid.time = 2\n')
        assert [where for where, _ in issues] == ['linha 1', 'linha 2', 'linha 4']

    def test_repeatable_keys(self):
        """Testa chaves que podem se repetir"""
        entries, issues = parse_entries('junction.pair = 1\njunction.pair = 2\n')
        assert not issues
        assert len(entries['junction.pair']) == 2


class TestFromText:
    """Testes da montagem e validação semântica"""

    def test_minimal(self):
        """Testa cenário mínimo com valores padrão"""
        scenario = from_text(BASE + IMPULSIVE, name='mínimo')
        assert scenario.name == 'mínimo'
        assert scenario.celerity.samples == 3
        assert scenario.surge_in.kind == 'constant'
        assert scenario.surge_ou is not None
        assert scenario.params.dilation_radius == 1
        assert len(scenario.monad.cells) == scenario.grid.size

    def test_all_issues_reported(self):
        """Testa que vários problemas vêm juntos em um único erro"""
        text = BASE.replace('fluidity.in = 1', 'fluidity.in = 0') + IMPULSIVE + 'grid.colour = 3\n'
        issues = _issues(text)
        places = [where for where, _ in issues]
        assert 'fluidity.in' in places
        assert any('grid.colour' in message for _, message in issues)
        assert len(issues) >= 2

    def test_error_message_format(self):
        """Testa o texto do erro com um problema por linha"""
        with pytest.raises(ScenarioError) as info:
            from_text(BASE.replace('fluidity.ou = 1', 'fluidity.ou = -2') + IMPULSIVE)
        assert str(info.value).startswith('cenário inválido:\n  fluidity.ou: ')

    def test_bad_value_location(self):
        """Testa local 'linha N, coluna C' para valor inválido"""
        issues = _issues(BASE.replace('celerity.min = 1', 'celerity.min = abc') + IMPULSIVE)
        assert any(where == 'linha 7, coluna 16' for where, _ in issues)

    def test_missing_required(self):
        """Testa campo obrigatório ausente"""
        issues = _issues(BASE.replace('celerity.max = 2\n', '') + IMPULSIVE)
        assert ('celerity.max', 'campo obrigatório ausente') in issues

    def test_invalid_grid_stops_early(self):
        """Testa grade inválida (duração não começa em 0)"""
        issues = _issues(BASE.replace('grid.duration = 0, 2, 3', 'grid.duration = 1, 2, 3'))
        assert [where for where, _ in issues] == ['grid']

    def test_junction_violations(self):
        """Testa violações (a) e (b) da relação de junção"""
        text = BASE + 'junction.kind = pairs\njunction.pair = 1, 1, 0, 0, 2, 0\n'
        places = [where for where, _ in _issues(text)]
        assert 'junction (a)' in places and 'junction (b)' in places

    def test_junction_outside_monad(self):
        """Testa violação (c): estado de junção fora de M"""
        text = BASE + IMPULSIVE + 'monad.kind = cells\nmonad.cell = 1, 0, 1, 0\n'
        places = [where for where, _ in _issues(text)]
        assert places == ['junction (c)']

    def test_product_mode_needs_product_junction(self):
        """Testa junção não produto no modo product"""
        text = BASE + ('junction.kind = pairs\n'
                       'junction.pair = 0, 1, 0, 1, 2, 0\n'
                       'junction.pair = 0, 2, 0, 1, 3, 0\n')
        assert 'solver.mode' in [where for where, _ in _issues(text)]
        scenario = from_text(text + 'solver.mode = coupled\n')
        assert len(scenario.junction) == 2

    def test_product_junction(self):
        """Testa junção declarada como produto pré x pós"""
        text = BASE + ('junction.kind = product\n'
                       'junction.pre = 0, 1, 0\njunction.pre = 0, 2, 0\n'
                       'junction.post = 1, 3, 0\n')
        scenario = from_text(text)
        assert len(scenario.junction) == 2
        assert scenario.junction.is_product and not scenario.junction.impulsive

    def test_surges(self):
        """Testa surtos separados por lado, afim e escalado por detector espacial"""
        text = BASE + IMPULSIVE + ('surge_in.kind = affine\n'
                                   'surge_in.matrix = 0, 0, 1, 0\n'
                                   'surge_ou.kind = duration-scaled\n'
                                   'surge_ou.lower = -1\nsurge_ou.upper = 1\n'
                                   'surge_ou.samples = 2\nsurge_ou.detector = spatial\n')
        scenario = from_text(text)
        point = np.array([[0.0, 1.0, 3.0, 0.0]])
        assert scenario.surge_in.sample_array(point, 1)[0, 0, 0] == pytest.approx(3.0)
        values = sorted(scenario.surge_ou.sample_array(point, 1)[:, 0, 0].tolist())
        assert values == pytest.approx([-1.0, 1.0]), 'Distância 1 até a junção em p = 2'

    def test_affine_matrix_width(self):
        """Testa matriz afim com número de colunas diferente da largura do estado"""
        text = BASE + IMPULSIVE + 'surge.kind = affine\nsurge.matrix = 0, 0, 0, -1, 0\n'
        issues = _issues(text)
        assert 'surge.matrix' in [where for where, _ in issues]
        assert not any('chave desconhecida' in message for _, message in issues)
        rows = 'surge.kind = affine\nsurge.matrix = 0, 0, 0, -1; 1, 0, 0\n'
        assert 'surge.matrix' in [where for where, _ in _issues(BASE + IMPULSIVE + rows)]

    def test_surge_samples_must_be_positive(self):
        """Testa surge.samples = 0 recusado em vez de trocado por 1"""
        text = BASE + IMPULSIVE + ('surge.kind = interval\nsurge.lower = -1\n'
                                   'surge.upper = 1\nsurge.samples = 0\n')
        issues = _issues(text)
        assert 'surge.samples' in [where for where, _ in issues]
        assert not any('chave desconhecida' in message for _, message in issues)

    def test_two_position_axes(self):
        """Testa eixos indexados grid.position.0 e grid.position.1"""
        text = BASE.replace('grid.position = 0, 4, 5',
                            'grid.position.0 = 0, 4, 5\ngrid.position.1 = -1, 1, 3')
        text = text.replace('celerity.min = 1', 'celerity.min = 1, 0')
        text = text.replace('celerity.max = 2', 'celerity.max = 2, 0')
        scenario = from_text(text + 'junction.impulsive = 0, 1, 0, 2, 0, 0\n')
        assert scenario.grid.p_dim == 2
        assert scenario.junction.pairs[0].pi_ou == (2.0, 0.0)

    def test_coupling_needs_matching_dimensions(self):
        """Testa acoplamento com dimensões de mônada e posição diferentes"""
        text = BASE.replace('grid.monad = 0, 0, 1', 'grid.monad.0 = 0, 0, 1\ngrid.monad.1 = 0, 0, 1')
        text += 'junction.impulsive = 0, 1, 2, 0, 0\nmonad.coupling = true\n'
        assert 'monad.coupling' in [where for where, _ in _issues(text)]
