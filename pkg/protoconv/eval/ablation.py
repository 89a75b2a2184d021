"""
Ablation runner
One training + evaluation run per (setting, fold, seed); rows average over seeds.
"""
import itertools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from protoconv.core.config import build_config, compute_fingerprint
from protoconv.core.errors import IoError, ProtoconvError
from protoconv.core.models import KERNEL_ORDER, AblationRow, EvalReport, RunConfig
from protoconv.data.episodes import FoldSplit, make_split
from protoconv.data.shapes import ShapeLibrary
from protoconv.eval.engine import EvaluationEngine
from protoconv.eval.reports.generator import bar_chart_svg, line_chart_svg, write_ablation_csv, write_svg

logger = logging.getLogger(__name__)

Overrides = Dict[str, Any]
Setting = Tuple[str, Overrides]
RunSetting = Callable[[RunConfig, FoldSplit, ShapeLibrary], EvalReport]

AXES = ("components", "kernel_size", "kernel_variants", "pool_variant", "lambda")
NUMERIC_AXES = {"kernel_size": "kernel size S", "lambda": "support loss weight λ"}

KERNEL_SIZES = (3, 5, 7, 9)
KERNEL_VARIANTS = (("none", []), ("s", ["s"]), ("v", ["v"]), ("v+h", ["v", "h"]), ("v+h+s", ["v", "h", "s"]))
POOL_VARIANTS = ("serial", "parallel")
LAMBDAS = (0.0, 0.1, 0.5, 1.0, 2.0)


class AblationResult(BaseModel):
    axis: str
    rows: List[AblationRow]
    csv_path: Optional[str] = None
    svg_path: Optional[str] = None


def _component_label(sam: bool, ffm: bool, dcm: bool) -> str:
    names = [n for n, on in (("sam", sam), ("ffm", ffm), ("dcm", dcm)) if on]
    return "+".join(names) if names else "baseline"


def axis_settings(axis: str, base: RunConfig) -> List[Setting]:
    """Setting labels and the config overrides that realize them"""
    if axis == "components":
        kernels = base.dcm.kernels or list(KERNEL_ORDER)
        settings = []
        for sam, ffm, dcm in itertools.product((False, True), repeat=3):
            overrides: Overrides = {"sam.enabled": sam, "ffm.enabled": ffm, "dcm.enabled": dcm}
            if dcm:
                overrides["dcm.kernels"] = list(kernels)
            settings.append((_component_label(sam, ffm, dcm), overrides))
        return settings
    if axis == "kernel_size":
        return [(f"S={s}", {"dcm.kernel_size": s}) for s in KERNEL_SIZES]
    if axis == "kernel_variants":
        return [(label, {"dcm.enabled": bool(kinds), "dcm.kernels": kinds}) for label, kinds in KERNEL_VARIANTS]
    if axis == "pool_variant":
        return [(v, {"dcm.pool_variant": v}) for v in POOL_VARIANTS]
    if axis == "lambda":
        return [(f"lambda={lam:g}", {"loss.lambda": lam}) for lam in LAMBDAS]
    raise ValueError(f"unknown ablation axis '{axis}'; expected one of {', '.join(AXES)}")


def _axis_value(axis: str, overrides: Overrides) -> float:
    return float(overrides["dcm.kernel_size" if axis == "kernel_size" else "loss.lambda"])


def train_and_evaluate(cfg: RunConfig, split: FoldSplit, library: ShapeLibrary) -> EvalReport:
    """Default per-run body: train from scratch, evaluate on the fold's test classes"""
    from protoconv.train.engine import TrainingEngine

    result = TrainingEngine(cfg, split, library=library).run()
    return EvaluationEngine(cfg, split, library).evaluate(result.params)


def _fold_status(failure: Optional[str], ok: int, total: int) -> str:
    if failure is None:
        return "ok"
    return f"partial:{ok}/{total}" if ok else f"failed:{failure}"


def ablate(
    base: RunConfig,
    axis: str,
    out_dir: Optional[Path] = None,
    folds: Sequence[int] = (0,),
    seeds: Sequence[int] = (0,),
    run_setting: RunSetting = train_and_evaluate,
) -> AblationResult:
    """
    Sweep one axis and emit ablation.csv plus a chart

    A failing run marks its row as failed and the sweep continues.
    """
    settings = axis_settings(axis, base)
    library = ShapeLibrary.build(base.data.n_classes, size=base.data.image_size)
    rows: List[AblationRow] = []
    for label, overrides in settings:
        setting_cfg = build_config(base, overrides)
        fingerprint = compute_fingerprint(setting_cfg)
        fold_mious, fold_fbs = [], []
        for fold in folds:
            split = make_split(fold, base.data.n_classes)
            mious, fbs, failure = [], [], None
            for seed in seeds:
                cfg = build_config(setting_cfg, {"train.seed": seed})
                try:
                    report = run_setting(cfg, split, library)
                except ProtoconvError as e:
                    failure = type(e).__name__
                    logger.warning("ablation %s=%s fold %d seed %d failed: %s", axis, label, fold, seed, e)
                    continue
                mious.append(report.miou)
                fbs.append(report.fb_iou)
            row = AblationRow(
                setting=label,
                fold=str(fold),
                miou=float(np.mean(mious)) if mious else None,
                fb_iou=float(np.mean(fbs)) if fbs else None,
                n_seeds=len(mious),
                status=_fold_status(failure, len(mious), len(seeds)),
                fingerprint=fingerprint,
            )
            rows.append(row)
            if row.miou is not None:
                fold_mious.append(row.miou)
                fold_fbs.append(row.fb_iou)
            logger.info("ablation %s=%s fold %d: mIoU %s", axis, label, fold,
                        "-" if row.miou is None else f"{row.miou:.4f}")
        rows.append(AblationRow(
            setting=label,
            fold="mean",
            miou=float(np.mean(fold_mious)) if fold_mious else None,
            fb_iou=float(np.mean(fold_fbs)) if fold_fbs else None,
            n_seeds=len(seeds),
            status="ok" if fold_mious else "failed",
            fingerprint=fingerprint,
        ))

    result = AblationResult(axis=axis, rows=rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create {out_dir}: {e}") from e
        csv_path, svg_path = out_dir / f"ablation_{axis}.csv", out_dir / f"ablation_{axis}.svg"
        write_ablation_csv(rows, csv_path)
        write_svg(ablation_chart(axis, settings, rows, folds), svg_path)
        result.csv_path, result.svg_path = str(csv_path), str(svg_path)
    return result


def ablation_chart(axis: str, settings: Sequence[Setting], rows: Sequence[AblationRow], folds: Sequence[int]) -> str:
    """Bar chart for categorical axes, line chart for kernel size and λ"""
    labels = [label for label, _ in settings]
    lookup = {(r.setting, r.fold): r.miou for r in rows}
    series = {f"fold {f}": [lookup.get((label, str(f))) for label in labels] for f in folds}
    if len(folds) > 1:
        series["mean"] = [lookup.get((label, "mean")) for label in labels]
    title = f"Ablation: {axis}"
    if axis in NUMERIC_AXES:
        x_values = [_axis_value(axis, overrides) for _, overrides in settings]
        return line_chart_svg(x_values, series, title, x_label=NUMERIC_AXES[axis])
    return bar_chart_svg(labels, series, title)
