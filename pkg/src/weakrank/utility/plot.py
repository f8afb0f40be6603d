from pathlib import Path
from typing import Sequence, Tuple, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

class _TFColor(object):
    """Enum of colors used in TF docs."""
    red = '#F15854'
    blue = '#5DA5DA'
    orange = '#FAA43A'
    green = '#60BD68'
    pink = '#F17CB0'
    brown = '#B2912F'
    purple = '#B276B2'
    yellow = '#DECF3F'
    gray = '#4D4D4D'
    def __getitem__(self, i):
        return [
            self.red,
            self.orange,
            self.green,
            self.blue,
            self.pink,
            self.brown,
            self.purple,
            self.yellow,
            self.gray,
        ][i % 9]
TFColor = _TFColor()

def plot_attribute_histogram(hist: Sequence[Tuple[str, int]], path: Union[str, Path],
                             title: str = "Top pseudo-attributes") -> None:
    """Bar chart of attribute counts in rank order."""
    tokens = [token for token, _ in hist]
    counts = [count for _, count in hist]
    fig, ax = plt.subplots(figsize=(max(6, 0.12 * len(hist)), 4))
    ax.bar(range(len(hist)), counts, color=TFColor.blue, width=0.8)
    ax.set_xticks(range(len(hist)))
    ax.set_xticklabels(tokens, rotation=90, fontsize=6)
    ax.set_ylabel("Occurrences")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format=Path(path).suffix.lstrip('.') or 'png', dpi=150)
    plt.close(fig)

def plot_ablation_ladder(variants: Sequence[str], mars: Sequence[float], path: Union[str, Path],
                         k: int = 10) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(variants)), [100 * m for m in mars], marker='o', color=TFColor.red)
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants, rotation=20)
    ax.set_ylabel(f"MAR@{k} (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
