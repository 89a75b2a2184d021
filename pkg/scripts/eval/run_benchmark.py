"""
Desk-scale benchmark: component, kernel-variant and k-shot comparisons

Runs the fixed protocol (fold 0, 5 seeds) on the synthetic benchmark and
checks the expected orderings. Exits non-zero when an ordering fails.

Usage:
    python scripts/eval/run_benchmark.py --out bench/ [--epochs 30] [--episodes 200]
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import typer
from rich.console import Console
from rich.table import Table
from rich import box

from protoconv.cli.commands import setup_logging
from protoconv.core.config import build_config, load_config
from protoconv.core.models import AblationRow
from protoconv.data.episodes import make_split
from protoconv.data.shapes import ShapeLibrary
from protoconv.eval.ablation import ablate
from protoconv.eval.engine import EvaluationEngine
from protoconv.train.engine import TrainingEngine

console = Console()
logger = logging.getLogger("benchmark")

SEEDS = (0, 1, 2, 3, 4)
TWO_MODULE = ("sam+ffm", "sam+dcm", "ffm+dcm")
SINGLE_VARIANTS = ("s", "v", "v+h")
TIE = 0.005


def _means(rows: List[AblationRow]) -> Dict[str, Optional[float]]:
    return {r.setting: r.miou for r in rows if r.fold == "mean"}


def _check(name: str, ok: bool, detail: str, failures: List[str]) -> None:
    mark = "[green]✓[/green]" if ok else "[red]✗[/red]"
    console.print(f"{mark} {name}: {detail}")
    if not ok:
        failures.append(name)


def _gt(a: Optional[float], b: Optional[float], margin: float = 0.0) -> bool:
    return a is not None and b is not None and a > b + margin


def _ge(a: Optional[float], b: Optional[float], tie: float = 0.0) -> bool:
    return a is not None and b is not None and a >= b - tie


def check_orderings(
    components: Dict[str, Optional[float]],
    variants: Dict[str, Optional[float]],
    shots: Dict[int, Optional[float]],
) -> List[str]:
    """Names of the orderings that do not hold"""
    failures: List[str] = []
    full, baseline = components.get("sam+ffm+dcm"), components.get("baseline")
    for label in TWO_MODULE:
        two = components.get(label)
        _check(f"full > {label}", _gt(full, two), f"{full} vs {two}", failures)
        _check(f"{label} > baseline", _gt(two, baseline), f"{two} vs {baseline}", failures)
    _check("full - baseline >= 2 points", _gt(full, baseline, 0.02 - 1e-12), f"{full} vs {baseline}", failures)

    vhs = variants.get("v+h+s")
    for label in SINGLE_VARIANTS:
        _check(f"v+h+s >= {label}", _ge(vhs, variants.get(label), TIE), f"{vhs} vs {variants.get(label)}", failures)
    _check("v+h+s > none", _gt(vhs, variants.get("none")), f"{vhs} vs {variants.get('none')}", failures)
    _check("5-shot >= 1-shot", _ge(shots.get(5), shots.get(1)), f"{shots.get(5)} vs {shots.get(1)}", failures)
    return failures


def k_shot_means(cfg, seeds) -> Dict[int, float]:
    """Train 1-shot per seed; evaluate the same weights at 1 and 5 shots"""
    split = make_split(0, cfg.data.n_classes)
    library = ShapeLibrary.build(cfg.data.n_classes, size=cfg.data.image_size)
    scores: Dict[int, List[float]] = {1: [], 5: []}
    for seed in seeds:
        run_cfg = build_config(cfg, {"train.seed": seed, "train.shots": 1})
        params = TrainingEngine(run_cfg, split, library=library).run().params
        engine = EvaluationEngine(run_cfg, split, library)
        for k in scores:
            scores[k].append(engine.evaluate(params, shots=k).miou)
    return {k: float(np.mean(v)) for k, v in scores.items()}


def run(
    out: Path = typer.Option(Path("bench"), "--out", help="Output directory"),
    config: Optional[Path] = typer.Option(None, "--config", help="Base config file"),
    epochs: int = typer.Option(30, "--epochs"),
    episodes: int = typer.Option(200, "--episodes"),
):
    setup_logging()
    base = load_config(config, {"train.epochs": epochs, "eval.episodes": episodes, "data.n_classes": 12})

    components = _means(ablate(base, "components", out, folds=(0,), seeds=SEEDS).rows)
    variants = _means(ablate(base, "kernel_variants", out, folds=(0,), seeds=SEEDS).rows)
    shots = k_shot_means(base, SEEDS)

    table = Table(title="Mean mIoU over 5 seeds (fold 0)", box=box.ROUNDED)
    table.add_column("Setting", style="cyan")
    table.add_column("mIoU", justify="right")
    for label, value in [*components.items(), *(("dcm " + k, v) for k, v in variants.items()),
                         *((f"{k}-shot", v) for k, v in shots.items())]:
        table.add_row(label, "-" if value is None else f"{value:.4f}")
    console.print(table)

    failures = check_orderings(components, variants, shots)
    if failures:
        console.print(f"[red]❌ {len(failures)} ordering(s) failed[/red]")
        raise typer.Exit(1)
    console.print("[green]✅ All orderings hold[/green]")


if __name__ == "__main__":
    typer.run(run)
