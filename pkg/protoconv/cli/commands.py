"""
CLI command implementations
"""
import logging
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich import box

from protoconv.core.config import get_settings, load_config
from protoconv.core.errors import ProtoconvError

console = Console()


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or get_settings().log_level).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def _fail(error: Exception) -> None:
    console.print(f"[red]❌ {type(error).__name__}: {error}[/red]")
    raise typer.Exit(1)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        console.print(f"[red]❌ Expected comma-separated integers, got '{text}'[/red]")
        raise typer.Exit(1)


def _overrides(shots: Optional[int] = None, epochs: Optional[int] = None, seed: Optional[int] = None) -> dict:
    overrides = {}
    if shots is not None:
        overrides["train.shots"] = shots
    if epochs is not None:
        overrides["train.epochs"] = epochs
    if seed is not None:
        overrides["train.seed"] = seed
    return overrides


def gen_data_command(out: Path, classes: int, seed: int, per_class: int, size: int):
    """
    Render the class library to disk
    """
    from protoconv.data.generator import generate_dataset

    try:
        entries = generate_dataset(out, n_classes=classes, seed=seed, per_class=per_class, size=size)
    except (ProtoconvError, ValueError) as e:
        _fail(e)

    families = {}
    for entry in entries:
        families.setdefault(entry.class_id, entry.family)
    table = Table(title="Synthetic classes", box=box.ROUNDED)
    table.add_column("Class", style="cyan", justify="right")
    table.add_column("Family", style="green")
    table.add_column("Items", justify="right")
    for class_id, family in families.items():
        table.add_row(str(class_id), family, str(per_class))
    console.print(table)
    console.print(f"[green]✅ Wrote {len(entries)} items to {out}[/green]")


def train_command(
    out: Path,
    fold: int,
    shots: Optional[int],
    epochs: Optional[int],
    seed: Optional[int],
    config: Optional[Path],
):
    """
    Train one fold and report the epoch summaries
    """
    from protoconv.data.episodes import make_split
    from protoconv.train.engine import TrainingEngine

    try:
        cfg = load_config(config, _overrides(shots, epochs, seed))
        split = make_split(fold, cfg.data.n_classes)
        console.print(Panel.fit(
            f"[cyan]Fold:[/cyan] {fold} (test classes {split.test_ids})\n"
            f"[cyan]Shots:[/cyan] {cfg.train.shots}   [cyan]Epochs:[/cyan] {cfg.train.epochs}   "
            f"[cyan]Seed:[/cyan] {cfg.train.seed}\n"
            f"[cyan]Modules:[/cyan] SAM={cfg.sam.enabled} FFM={cfg.ffm.enabled} DCM={cfg.dcm.enabled} "
            f"kernels={','.join(cfg.dcm.kernels) or '-'}",
            title="🚀 Training",
            border_style="cyan",
        ))
        result = TrainingEngine(cfg, split, out_dir=out).run()
    except ProtoconvError as e:
        _fail(e)

    table = Table(title="Epochs", box=box.ROUNDED)
    table.add_column("Epoch", justify="right")
    table.add_column("Train loss", justify="right")
    table.add_column("Train mIoU", justify="right")
    table.add_column("Val mIoU", justify="right")
    for row in result.epochs:
        table.add_row(
            str(row.epoch),
            f"{row.train_loss:.4f}",
            f"{row.train_miou:.4f}",
            "-" if row.val_miou is None else f"{row.val_miou:.4f}",
        )
    console.print(table)
    if result.skipped_episodes:
        console.print(f"[yellow]⚠️  {result.skipped_episodes} episodes skipped[/yellow]")
    console.print(f"[green]✅ Checkpoint written to {out / 'final.ckpt'}[/green]")


def eval_command(
    ckpt: Path,
    fold: int,
    shots: Optional[int],
    episodes: Optional[int],
    seed: Optional[int],
    config: Optional[Path],
    dump_masks: Optional[Path],
    report_path: Optional[Path],
):
    """
    Evaluate a checkpoint and print per-class IoU
    """
    from protoconv.data.episodes import make_split
    from protoconv.eval.engine import EvaluationEngine
    from protoconv.model.params import ModelParams

    try:
        cfg = load_config(_config_for(ckpt, config), _overrides(shots))
        params = ModelParams.load(ckpt, cfg)
        engine = EvaluationEngine(cfg, make_split(fold, cfg.data.n_classes))
        report = engine.evaluate(params, n_episodes=episodes, seed=seed, dump_dir=dump_masks)
    except ProtoconvError as e:
        _fail(e)

    table = Table(title=f"Fold {fold}, {report.shots}-shot, {report.episodes} episodes", box=box.ROUNDED)
    table.add_column("Class", style="cyan", justify="right")
    table.add_column("IoU", justify="right")
    for class_id, value in report.per_class_iou.items():
        table.add_row(str(class_id), f"{value:.4f}")
    console.print(table)
    console.print(Panel.fit(
        f"[cyan]mIoU:[/cyan]   {report.miou:.4f}\n"
        f"[cyan]FB-IoU:[/cyan] {report.fb_iou:.4f}  (fg {report.iou_fg:.4f}, bg {report.iou_bg:.4f})\n"
        f"[dim]fingerprint {report.fingerprint[:16]}[/dim]",
        title="📊 Evaluation",
        border_style="green",
    ))
    if report_path is not None:
        report_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        console.print(f"[dim]Report written to {report_path}[/dim]")


def _config_for(ckpt: Path, config: Optional[Path]) -> Optional[Path]:
    """Explicit --config wins; otherwise the config.txt saved next to the checkpoint"""
    if config is not None:
        return config
    saved = Path(ckpt).parent / "config.txt"
    return saved if saved.is_file() else None


def ablate_command(axis: str, out: Path, config: Optional[Path], folds: str, seeds: str):
    """
    Run an ablation sweep
    """
    from protoconv.eval.ablation import AXES, ablate

    if axis not in AXES:
        console.print(f"[red]❌ Unknown axis '{axis}'. Choose one of: {', '.join(AXES)}[/red]")
        raise typer.Exit(1)
    try:
        base = load_config(config)
        result = ablate(base, axis, out, folds=_int_list(folds), seeds=_int_list(seeds))
    except ProtoconvError as e:
        _fail(e)

    table = Table(title=f"Ablation: {axis}", box=box.ROUNDED)
    table.add_column("Setting", style="cyan")
    table.add_column("Fold")
    table.add_column("mIoU", justify="right")
    table.add_column("FB-IoU", justify="right")
    table.add_column("Status")
    for row in result.rows:
        table.add_row(
            row.setting,
            row.fold,
            "-" if row.miou is None else f"{row.miou:.4f}",
            "-" if row.fb_iou is None else f"{row.fb_iou:.4f}",
            row.status if row.status == "ok" else f"[red]{row.status}[/red]",
        )
    console.print(table)
    console.print(f"[green]✅ {result.csv_path}, {result.svg_path}[/green]")


def gradcheck_command(config: Optional[Path], n_params: int, seed: int):
    """
    End-to-end gradient check of the total loss
    """
    from protoconv.train.engine import gradcheck_pipeline

    try:
        cfg = load_config(config, {"train.precision": 64})
        report = gradcheck_pipeline(cfg, n_params=n_params, seed=seed)
    except ProtoconvError as e:
        _fail(e)

    table = Table(title="Worst parameters", box=box.ROUNDED)
    table.add_column("Parameter", style="cyan")
    table.add_column("Analytic", justify="right")
    table.add_column("Numeric", justify="right")
    table.add_column("Rel err", justify="right")
    for entry in sorted(report.entries, key=lambda e: e.rel_err, reverse=True)[:10]:
        table.add_row(f"{entry.name}[{entry.index}]", f"{entry.analytic:.6e}",
                      f"{entry.numeric:.6e}", f"{entry.rel_err:.2e}")
    console.print(table)
    style = "green" if report.max_rel_err < 1e-3 else "red"
    console.print(f"[{style}]max rel err {report.max_rel_err:.3e} over {len(report.entries)} parameters "
                  f"({', '.join(report.groups)})[/{style}]")
    if report.max_rel_err >= 1e-3:
        raise typer.Exit(1)


def dump_command(ckpt: Path, out: Path, fold: int, seed: int, sam: bool, config: Optional[Path]):
    """
    Write intermediate tensors of one test episode as tensor dumps
    """
    from protoconv.core.serialization import write_tensor
    from protoconv.data.episodes import make_split, sample_episode
    from protoconv.data.shapes import ShapeLibrary
    from protoconv.model.network import forward_episode
    from protoconv.model.params import ModelParams

    try:
        cfg = load_config(_config_for(ckpt, config))
        params = ModelParams.load(ckpt, cfg)
        library = ShapeLibrary.build(cfg.data.n_classes, size=cfg.data.image_size)
        ep = sample_episode(library, make_split(fold, cfg.data.n_classes), "test", cfg.train.shots, seed)
        prob, inter = forward_episode(ep, params, cfg)
        out.mkdir(parents=True, exist_ok=True)
        written = {"prediction.dpcnt": prob, "query_image.dpcnt": ep.query_image}
        if sam:
            if inter.activations is None:
                console.print("[yellow]⚠️  SAM is disabled in this config, no maps to dump[/yellow]")
            else:
                for i, m in enumerate(inter.activations.maps, start=1):
                    written[f"sam_map{i}.dpcnt"] = m
                written["sam_m_pse0.dpcnt"] = inter.activations.m_pse0
        for name, value in written.items():
            write_tensor(value, out / name)
    except ProtoconvError as e:
        _fail(e)
    except OSError as e:
        _fail(e)

    for name in written:
        console.print(f"[green]✓[/green] {out / name}")


def curves_command(log: Path, out: Path):
    """
    Render train/validation mIoU curves from a run directory
    """
    from protoconv.eval.reports.generator import curves_svg, read_epoch_log, write_svg

    source = log / "epochs.csv" if log.is_dir() else log
    try:
        epochs = read_epoch_log(source)
        if not epochs:
            console.print(f"[yellow]⚠️  {source} has no epochs[/yellow]")
            raise typer.Exit(1)
        write_svg(curves_svg(epochs), out)
    except ProtoconvError as e:
        _fail(e)
    console.print(f"[green]✅ Curves written to {out}[/green]")
