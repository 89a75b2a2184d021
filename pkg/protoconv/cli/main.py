"""
protoconv CLI - Main entry point
"""
import typer
from typing import Optional
from pathlib import Path

app = typer.Typer(
    name="protoconv",
    help="Dynamic prototype convolution for few-shot segmentation",
    add_completion=False,
)


@app.callback()
def setup(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Logging level (default: PROTOCONV_LOG_LEVEL or INFO)"),
):
    """Configure logging before any command runs"""
    from protoconv.cli.commands import setup_logging
    setup_logging(log_level)


@app.command("gen-data")
def gen_data(
    out: Path = typer.Option(..., "--out", help="Output directory"),
    classes: int = typer.Option(12, "--classes", min=4, help="Number of shape classes"),
    seed: int = typer.Option(0, "--seed", help="Master seed"),
    per_class: int = typer.Option(10, "--per-class", min=1, help="Instances rendered per class"),
    size: int = typer.Option(64, "--size", help="Image side in pixels"),
):
    """
    Render the synthetic benchmark to disk

    Example:
        protoconv gen-data --out data/ --classes 12 --seed 0
    """
    from protoconv.cli.commands import gen_data_command
    gen_data_command(out, classes, seed, per_class, size)


@app.command()
def train(
    out: Path = typer.Option(..., "--out", help="Run directory for logs and checkpoints"),
    fold: int = typer.Option(0, "--fold", min=0, max=3, help="Fold whose test classes are held out"),
    shots: Optional[int] = typer.Option(None, "--shots", help="Support shots per episode"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Training epochs"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Training seed"),
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
):
    """
    Train on the fold's training classes

    Example:
        protoconv train --fold 0 --shots 1 --epochs 30 --seed 0 --out runs/f0
    """
    from protoconv.cli.commands import train_command
    train_command(out, fold, shots, epochs, seed, config)


@app.command()
def eval(
    ckpt: Path = typer.Option(..., "--ckpt", help="Checkpoint to evaluate"),
    fold: int = typer.Option(0, "--fold", min=0, max=3, help="Fold to evaluate"),
    shots: Optional[int] = typer.Option(None, "--shots", help="Support shots per episode"),
    episodes: Optional[int] = typer.Option(None, "--episodes", help="Number of test episodes"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Episode sampling seed"),
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
    dump_masks: Optional[Path] = typer.Option(None, "--dump-masks", help="Write predicted masks as PGM here"),
    report: Optional[Path] = typer.Option(None, "--report", help="Write the EvalReport as JSON"),
):
    """
    Evaluate a checkpoint on sampled test episodes

    Example:
        protoconv eval --ckpt runs/f0/final.ckpt --fold 0 --episodes 1000
        protoconv eval --ckpt runs/f0/final.ckpt --shots 5 --dump-masks masks/
    """
    from protoconv.cli.commands import eval_command
    eval_command(ckpt, fold, shots, episodes, seed, config, dump_masks, report)


@app.command()
def ablate(
    axis: str = typer.Option(..., "--axis", help="components | kernel_size | kernel_variants | pool_variant | lambda"),
    out: Path = typer.Option(..., "--out", help="Output directory for CSV and SVG"),
    config: Optional[Path] = typer.Option(None, "--config", help="Base config file"),
    folds: str = typer.Option("0", "--folds", help="Comma-separated folds"),
    seeds: str = typer.Option("0", "--seeds", help="Comma-separated seeds"),
):
    """
    Sweep one ablation axis

    Example:
        protoconv ablate --axis components --out ablations/
        protoconv ablate --axis lambda --folds 0,1,2,3 --seeds 0,1,2,3,4 --out ablations/
    """
    from protoconv.cli.commands import ablate_command
    ablate_command(axis, out, config, folds, seeds)


@app.command()
def gradcheck(
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
    params: int = typer.Option(50, "--params", "-n", help="Number of sampled parameters"),
    seed: int = typer.Option(0, "--seed", help="Sampling seed"),
):
    """Compare tape gradients of the total loss with central differences"""
    from protoconv.cli.commands import gradcheck_command
    gradcheck_command(config, params, seed)


@app.command()
def dump(
    ckpt: Path = typer.Option(..., "--ckpt", help="Checkpoint to load"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    fold: int = typer.Option(0, "--fold", min=0, max=3, help="Fold to sample from"),
    seed: int = typer.Option(0, "--seed", help="Episode seed"),
    sam: bool = typer.Option(False, "--sam", help="Write the three activation maps and the initial pseudo mask"),
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
):
    """Write intermediate tensors of one test episode"""
    from protoconv.cli.commands import dump_command
    dump_command(ckpt, out, fold, seed, sam, config)


@app.command()
def curves(
    log: Path = typer.Option(..., "--log", help="Training run directory (with epochs.csv)"),
    out: Path = typer.Option(..., "--out", help="Output SVG file"),
):
    """Plot train and validation mIoU per epoch"""
    from protoconv.cli.commands import curves_command
    curves_command(log, out)


@app.command()
def version():
    """Show protoconv version"""
    from protoconv import __version__
    typer.echo(f"protoconv v{__version__}")


def main():
    """Entry point for the CLI"""
    app()


if __name__ == "__main__":
    main()
