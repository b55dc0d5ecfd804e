"""Dataset-level evaluation: per-image bpp/PSNR and RD curves across checkpoints."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .codec import decompress, encode
from .errors import EvaluationError, FormatError, UsageError
from .imageio import list_images, read_image
from .metrics import RDCurve, RDPoint, psnr, table_psnr
from .model import Model
from .training import S2, StagePlan, TrainConfig, mark_ancestor, run_stage

MANIFEST = "manifest.json"


@dataclass
class ImageRecord:
    name: str
    height: int
    width: int
    bytes: int
    bpp: float
    psnr: float
    estimated_bpp: float


@dataclass
class EvalReport:
    records: list[ImageRecord] = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.records)

    @property
    def mean_bpp(self) -> float:
        return sum(r.bpp for r in self.records) / len(self.records)

    @property
    def mean_psnr(self) -> float:
        return sum(table_psnr(r.psnr) for r in self.records) / len(self.records)

    def point(self) -> RDPoint:
        return RDPoint(self.mean_bpp, self.mean_psnr)

    def to_dict(self) -> dict:
        return {
            "images": [asdict(r) | {"psnr": table_psnr(r.psnr)} for r in self.records],
            "mean_bpp": self.mean_bpp,
            "mean_psnr": self.mean_psnr,
            "total_bytes": self.total_bytes,
        }


def evaluate_images(model: Model, images: Sequence, names: Sequence[str] = ()) -> EvalReport:
    """Compress and decompress every image; bpp always comes from the container size."""
    if not images:
        raise UsageError("nothing to evaluate")
    report = EvalReport()
    for i, image in enumerate(images):
        res = encode(image, model)
        data = res.bitstream.to_bytes()
        recon = decompress(data, model)
        h, w = image.shape[:2]
        report.records.append(
            ImageRecord(
                names[i] if i < len(names) else f"image{i}",
                h,
                w,
                len(data),
                8.0 * len(data) / (h * w),
                psnr(image, recon),
                res.estimated_bits / (h * w),
            )
        )
    return report


def eval_dataset(model: Model, directory: Union[str, Path]) -> EvalReport:
    paths = list_images(directory)
    if not paths:
        raise UsageError(f"no .ppm or .png images in {directory}")
    return evaluate_images(model, [read_image(p) for p in paths], [p.name for p in paths])


def eval_curve(models: Sequence[Model], directory: Union[str, Path]) -> tuple[RDCurve, list[EvalReport]]:
    """One RD point per checkpoint (typically one per lambda)."""
    reports = [eval_dataset(m, directory) for m in models]
    try:
        curve = RDCurve(r.point() for r in reports)
    except EvaluationError as exc:
        raise EvaluationError(f"checkpoints do not form an RD curve: {exc}") from exc
    return curve, reports


def read_manifest(directory: Union[str, Path]) -> dict[int, Path]:
    """Map lambda index to checkpoint path from ``manifest.json`` in ``directory``."""
    directory = Path(directory)
    path = directory / MANIFEST
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON") from exc
    return {int(k): directory / v for k, v in raw.get("checkpoints", {}).items()}


def write_manifest(directory: Union[str, Path], checkpoints: dict[int, str], model_id: int = 0) -> Path:
    path = Path(directory) / MANIFEST
    body = {"model_id": model_id, "checkpoints": {str(k): v for k, v in sorted(checkpoints.items())}}
    path.write_text(json.dumps(body, indent=2) + "\n")
    return path


def slice_ablation(
    base: Model,
    train_images: Sequence,
    eval_images: Sequence,
    slices: Sequence[int] = (1, 2, 5),
    seeds: Sequence[int] = (0, 1, 2),
    steps: int = 200,
    config: Optional[TrainConfig] = None,
) -> dict[int, list[float]]:
    """Mean container bpp per slice count and seed after equal entropy-model training.

    Every run starts from ``base`` with g_a and g_s frozen, rebuilds h_s and
    f_c with the requested slice count, and trains h_a, h_s and f_c for
    ``steps`` RD steps.
    """
    config = config or TrainConfig()
    if base.lineage is None:
        base = base.copy()
        mark_ancestor(base)
    out: dict[int, list[float]] = {}
    for s in slices:
        target = dataclasses.replace(base.config, f_c=dataclasses.replace(base.config.f_c, slices=s))
        for seed in seeds:
            model = base.copy()
            run_stage(model, StagePlan.for_stage(S2), train_images, dataclasses.replace(config, seed=seed), target, steps)
            out.setdefault(s, []).append(evaluate_images(model, eval_images).mean_bpp)
    return out
