"""Figuras estáticas (PNG): corte 2-D de um núcleo e trajetória de uma evolução."""

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import seaborn as sns  # noqa: E402

from src.errors import GridError  # noqa: E402


def _tick_labels(axis):
    return [f'{v:g}' for v in np.round(axis.nodes(), 6)]


def slice_mask(cellset, fixed):
    """Máscara 2-D do conjunto com os demais eixos fixados em {eixo: índice do nó}."""
    grid = cellset.grid
    free = [a for a in range(grid.ndim) if a not in fixed]
    if len(free) != 2:
        raise GridError(f'corte exige exatamente 2 eixos livres, há {len(free)}')
    index = []
    for a, axis in enumerate(grid.axes):
        if a in fixed:
            i = int(fixed[a])
            if not 0 <= i < axis.count:
                raise GridError(f'índice {i} fora do eixo {axis.label}')
            index.append(i)
        else:
            index.append(slice(None))
    return cellset.mask[tuple(index)], free


def plot_kernel_slice(cellset, fixed, path, title=None):
    mask, (row_axis, col_axis) = slice_mask(cellset, fixed)
    grid = cellset.grid
    fig, ax = plt.subplots(figsize=(10, 5))
    # linhas = primeiro eixo livre; invertido para crescer para cima
    sns.heatmap(mask.astype(int)[::-1], cbar=False, cmap='Blues', vmin=0, vmax=1,
                linewidths=0.2, linecolor='lightgray', ax=ax,
                xticklabels=_tick_labels(grid.axes[col_axis]),
                yticklabels=_tick_labels(grid.axes[row_axis])[::-1])
    ax.set_xlabel(grid.axes[col_axis].label)
    ax.set_ylabel(grid.axes[row_axis].label)
    ax.set_title(title or f'Núcleo: {int(mask.sum())} células no corte')
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_evolution(evo, path):
    """Posição e mônada versus tempo, com o salto de junção sombreado."""
    pair = evo.junction_pair
    fig, axes = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
    for ax, attr, label in ((axes[0], 'p', 'posição'), (axes[1], 'x', 'mônada')):
        for leg, name, color in ((evo.incoming, 'entrada', 'steelblue'),
                                 (evo.outgoing, 'saída', 'darkorange')):
            values = getattr(leg, attr)
            for j in range(values.shape[1]):
                ax.plot(leg.t, values[:, j], marker='o', markersize=3, color=color,
                        label=f'{name} {attr}{j}')
        if pair.sigma_ou > pair.sigma_in:
            ax.axvspan(pair.sigma_in, pair.sigma_ou, color='gray', alpha=0.2, label='intermodal')
        else:
            ax.axvline(pair.sigma_in, color='gray', linestyle='--', label='junção')
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        ax.legend(loc='best', fontsize=8)
    axes[1].set_xlabel('t')
    axes[0].set_title(f'Evolução de transporte (Omega = {evo.aperture:g})')
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
