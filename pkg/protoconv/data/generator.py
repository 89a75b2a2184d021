"""
On-disk synthetic dataset (gen-data)
Layout: images/<item>.dpcnt, masks/<item>.pgm, manifest.txt
"""
import logging
from pathlib import Path
from typing import List

from pydantic import BaseModel

from protoconv.core.errors import IoError
from protoconv.core.serialization import write_tensor
from protoconv.data.pgm import write_mask_pgm
from protoconv.data.shapes import ShapeLibrary

logger = logging.getLogger(__name__)

MANIFEST = "manifest.txt"


class ManifestEntry(BaseModel):
    item_id: str
    class_id: int
    family: str
    image_path: str
    mask_path: str

    def line(self) -> str:
        return f"{self.item_id} {self.family} {self.image_path} {self.mask_path}"


def generate_dataset(
    out_dir: Path,
    n_classes: int = 12,
    seed: int = 0,
    per_class: int = 10,
    size: int = 64,
) -> List[ManifestEntry]:
    """
    Render `per_class` instances of every class and write them under out_dir

    Returns:
        manifest entries in write order (paths relative to out_dir)
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out_dir}: {e}") from e

    library = ShapeLibrary.build(n_classes=n_classes, seed=seed, size=size)
    entries: List[ManifestEntry] = []
    for shape_class in library.classes:
        for n in range(per_class):
            item_id = f"c{shape_class.id:02d}_{n:03d}"
            image, mask = library.render(shape_class.id, seed * 100_003 + n)
            entry = ManifestEntry(
                item_id=item_id,
                class_id=shape_class.id,
                family=shape_class.family,
                image_path=f"images/{item_id}.dpcnt",
                mask_path=f"masks/{item_id}.pgm",
            )
            write_tensor(image, out_dir / entry.image_path)
            write_mask_pgm(mask, out_dir / entry.mask_path)
            entries.append(entry)
        logger.debug("rendered class %d (%s)", shape_class.id, shape_class.family)

    try:
        (out_dir / MANIFEST).write_text("".join(e.line() + "\n" for e in entries), encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write manifest: {e}") from e
    logger.info("wrote %d items for %d classes to %s", len(entries), n_classes, out_dir)
    return entries
