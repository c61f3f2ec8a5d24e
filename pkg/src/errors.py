"""Exceções do pacote.

Todas herdam de ViaductError para que o Main.py possa traduzir cada
família de erro em um código de saída próprio.
"""


class ViaductError(Exception):
    """Erro base do pacote."""


class GridError(ViaductError):
    """Grades incompatíveis ou mal formadas."""


class BoundsError(ViaductError):
    """Estado fora dos limites da grade."""


class InvalidFluidityError(ViaductError):
    """Fluidez nula, negativa ou não finita."""


class NoJunctionError(ViaductError):
    """Conjunto de junções vazio onde pelo menos uma é exigida."""


class EmptyInputError(ViaductError):
    """Trajetória ou lista vazia onde pelo menos uma amostra é exigida."""


class RepresentationError(ViaductError):
    """Operação não suportada pela representação da relação."""


class ModeError(ViaductError):
    """Modo de solução incompatível com o cenário."""


class BudgetError(ViaductError):
    """Orçamento de células (ou de sequências) excedido."""

    def __init__(self, message, required=None, budget=None):
        super().__init__(message)
        self.required = required
        self.budget = budget


class NotInKernelError(ViaductError):
    """Estado fora do núcleo: o móvel saiu do conjunto viável."""


class RefusalError(ViaductError):
    """Pedido recusado (par não ligável, evolução não verificada...)."""


class SynthesisError(ViaductError):
    """Beco sem saída durante a síntese; carrega o traço parcial."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class FileFormatError(ViaductError):
    """Arquivo de núcleo, feedback ou cenário com formato inválido."""


class ScenarioError(ViaductError):
    """Cenário inválido; reúne todos os problemas encontrados.

    Cada problema é um par (local, mensagem): o local é 'linha N' para
    erros de leitura ou o caminho do campo (ex.: 'fluidity.in') para erros
    semânticos.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = [f'{where}: {msg}' for where, msg in self.issues]
        super().__init__('cenário inválido:\n  ' + '\n  '.join(lines))
