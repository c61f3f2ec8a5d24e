"""Reguladores de transporte: celeridades admissíveis em cada célula do núcleo.

Uma celeridade é admissível quando algum surto amostrado leva o passo de
Euler (com dilatação) para dentro da bacia. Regra estrita: todos os nós
candidatos dentro da grade estão na bacia. Se nenhuma celeridade passa
na regra estrita, usa-se a regra existencial (algum nó na bacia).
"""

import logging
from collections import namedtuple

import numpy as np

from src.core import TrafficState
from src.errors import BoundsError, FileFormatError, GridError, NotInKernelError
from src.relations import read_grid_block, write_grid_block

logger = logging.getLogger(__name__)

FEEDBACK_HEADER = 'VIADUCT-FEEDBACK v1'

Regulation = namedtuple('Regulation', ['celerities', 'at_junction'])


def control_admissibility(model, basin, flat_cells, radius):
    """Admissibilidade (estrita, existencial) de cada controle nas células dadas.

    Retorna dois arrays booleanos (n_células, n_celeridades, n_surtos).
    """
    grid = model.grid
    flat_cells = np.asarray(flat_cells, dtype=np.int64)
    points = grid.centers(flat_cells)
    n_c = model.celerities.shape[0]
    n_f = model.surge.sample_count
    strict = np.zeros((flat_cells.size, n_c, n_f), dtype=bool)
    exist = np.zeros_like(strict)
    lookup = np.append(basin.flat_mask, False)
    n = grid.size
    for ci, fi, image, valid, _ in model.images(points):
        cand = grid.candidates(image, radius)
        in_bounds = cand >= 0
        inside = lookup[np.where(in_bounds, cand, n)]
        some = inside.any(axis=1)
        exist[:, ci, fi] = valid & some
        strict[:, ci, fi] = valid & some & np.all(inside | ~in_bounds, axis=1)
    return strict, exist


def admissible_celerities(model, basin, flat_cells, radius, tier='existential'):
    """Conjuntos de celeridades admissíveis sob uma única regra (sem recuo)."""
    strict, exist = control_admissibility(model, basin, flat_cells, radius)
    ok = strict if tier == 'strict' else exist
    return [tuple(np.flatnonzero(row.any(axis=1)).tolist()) for row in ok]


class FeedbackMap:
    """Mapa célula do núcleo -> índices das celeridades admissíveis."""

    def __init__(self, side, grid, entries, junction_cells, model, basin, radius):
        self.side = side
        self.grid = grid
        self.entries = dict(entries)
        self.junction_cells = frozenset(junction_cells)
        self.model = model
        self.basin = basin
        self.radius = radius

    @property
    def celerities(self):
        return self.model.celerities

    def __len__(self):
        return len(self.entries)

    def cell_of(self, state):
        vector = state.as_vector() if isinstance(state, TrafficState) else np.asarray(state)
        try:
            return self.grid.flat(self.grid.locate(vector))
        except BoundsError as exc:
            raise NotInKernelError(f'estado fora da grade: {exc}') from exc

    def witnesses(self, flat_cell):
        """Pares (índice de celeridade, índice de surto) que testemunham a admissibilidade."""
        strict, exist = control_admissibility(self.model, self.basin, [flat_cell], self.radius)
        ok = strict[0] if strict[0].any() else exist[0]
        allowed = set(self.entries.get(flat_cell, ()))
        return [(int(ci), int(fi)) for ci, fi in zip(*np.nonzero(ok)) if int(ci) in allowed]


def extract_regulator(basin, model, side, params):
    """Extrai o regulador do lado `side` a partir da bacia correspondente."""
    if basin.grid != model.grid:
        raise GridError('bacia e dinâmica sobre grades diferentes')
    grid = basin.grid
    cells = basin.flat_indices()
    zero = grid.centers(cells)[:, 1] <= params.zero_tolerance(grid)
    junction_cells = cells[zero].tolist()
    moving = cells[~zero]
    entries = {int(c): () for c in junction_cells}
    if moving.size:
        strict, exist = control_admissibility(model, basin, moving, params.dilation_radius)
        strict_any = strict.any(axis=2)
        exist_any = exist.any(axis=2)
        fallback = 0
        for k, cell in enumerate(moving.tolist()):
            row = strict_any[k] if strict_any[k].any() else exist_any[k]
            if not strict_any[k].any():
                fallback += 1
            entries[cell] = tuple(np.flatnonzero(row).tolist())
            if not entries[cell]:
                logger.warning('célula %d do núcleo sem celeridade admissível', cell)
        if fallback:
            logger.info('regulador %s: regra existencial em %d células', side, fallback)
    logger.info('regulador %s: %d células', side, len(entries))
    return FeedbackMap(side, grid, entries, junction_cells, model, basin, params.dilation_radius)


def regulate(fb, s):
    """Celeridades admissíveis no estado; fora do núcleo gera NotInKernelError."""
    cell = fb.cell_of(s)
    if cell not in fb.entries:
        raise NotInKernelError(f'estado fora do núcleo ({fb.side})')
    indices = list(fb.entries[cell])
    celerities = fb.celerities[indices] if indices else np.zeros((0, fb.celerities.shape[1]))
    return Regulation(celerities, cell in fb.junction_cells)


def regulator_differential_view(fb, s):
    """Pares (celeridade, surto) que testemunham cada celeridade admissível."""
    cell = fb.cell_of(s)
    if cell not in fb.entries:
        raise NotInKernelError(f'estado fora do núcleo ({fb.side})')
    if cell in fb.junction_cells:
        return []
    state = fb.grid.centers([cell])
    surges = fb.model.surge.sample_array(state, fb.grid.p_dim)[:, 0, :]
    return [(fb.celerities[ci], surges[fi]) for ci, fi in fb.witnesses(cell)]


def closed_loop_rollout(fb, start_cell, rng, max_steps=None):
    """Percorre o núcleo escolhendo controles admissíveis ao acaso.

    Retorna (células visitadas, sucesso); sucesso quando o corte de
    duração nula é alcançado sem sair da bacia.
    """
    grid = fb.grid
    lookup = fb.basin.flat_mask
    path = [int(start_cell)]
    cell = int(start_cell)
    for _ in range(max_steps or grid.size):
        if cell not in fb.entries:
            return path, False
        if cell in fb.junction_cells:
            return path, True
        options = fb.witnesses(cell)
        if not options:
            return path, False
        ci, fi = options[rng.integers(len(options))]
        point = grid.centers([cell])
        for cj, fj, image, valid, _ in fb.model.images(point):
            if (cj, fj) == (ci, fi):
                break
        cand = grid.candidates(image, fb.radius)[0]
        cand = cand[cand >= 0]
        inside = cand[lookup[cand]]
        if inside.size == 0:
            return path, False
        cell = int(inside[rng.integers(inside.size)])
        path.append(cell)
    return path, False


def save_feedback(path, fb):
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(FEEDBACK_HEADER + '\n')
        handle.write(f'side {fb.side}\n')
        write_grid_block(handle, fb.grid)
        for cell in sorted(fb.entries):
            handle.write(f'{cell}: {",".join(str(i) for i in fb.entries[cell])}\n')


def load_feedback(path, model, basin, params):
    """Relê um mapa salvo; modelo e bacia vêm do cenário e do núcleo carregados."""
    with open(path, encoding='utf-8') as handle:
        lines = [line.rstrip('\n') for line in handle if line.strip()]
    if not lines or lines[0].strip() != FEEDBACK_HEADER:
        raise FileFormatError(f'{path}: cabeçalho {FEEDBACK_HEADER!r} ausente')
    try:
        keyword, side = lines[1].split()
    except (ValueError, IndexError) as exc:
        raise FileFormatError(f'{path}: linha de lado inválida') from exc
    if keyword != 'side':
        raise FileFormatError(f'{path}: linha de lado inválida')
    file_grid, pos = read_grid_block(lines, 2)
    grid = model.grid
    if file_grid.ndim != grid.ndim or any(
            (a.role, a.lo, a.hi, a.count) != (b.role, b.lo, b.hi, b.count)
            for a, b in zip(file_grid.axes, grid.axes)):
        raise GridError(f'{path}: grade do arquivo difere da grade do cenário')
    entries = {}
    for number, line in enumerate(lines[pos:], start=pos + 1):
        try:
            cell, rest = line.split(':', 1)
            rest = rest.strip()
            entries[int(cell)] = tuple(int(v) for v in rest.split(',')) if rest else ()
        except ValueError as exc:
            raise FileFormatError(f'{path}: linha {number} inválida: {line!r}') from exc
    centers = grid.centers(list(entries)) if entries else np.zeros((0, grid.ndim))
    junction_cells = [cell for cell, point in zip(entries, centers)
                      if point[1] <= params.zero_tolerance(grid)]
    return FeedbackMap(side, grid, entries, junction_cells, model, basin, params.dilation_radius)
