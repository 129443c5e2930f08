"""Batch feature extraction: image folders -> tensor files + manifest.

The extractor is the only component touching a deep-learning runtime; it
hands everything downstream as files in the engine's formats. Inference is
deterministic (eval mode, no_grad, fixed seeds, no augmentation), so
re-extracting a dataset reproduces byte-identical tensors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbones import load_backbone
from .layouts import ImageRow, get_layout
from .tensor_io import write_tensor

logger = logging.getLogger(__name__)

# ImageNet statistics, the convention of the supported backbones.
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class ExtractSpec:
    backbone: str = "toy-vit-p16"
    input_size: int = 224
    batch_size: int = 8
    device: str = "cpu"
    layout: str = "flat"
    export_cls: bool = False


def load_image(path: Path, input_size: int) -> np.ndarray:
    """Decode, resize, and normalize one image to (3, S, S) float32."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - MEAN) / STD
    return arr.transpose(2, 0, 1)


def extract(images_root: str | Path, spec: ExtractSpec, out_dir: str | Path) -> Path:
    """Run the backbone over every image in the layout and emit tensors.

    Returns the manifest path. Unreadable images are skipped with a logged
    warning and excluded from the manifest; a backbone load failure aborts.
    """
    images_root = Path(images_root)
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    model = load_backbone(spec.backbone, spec.device)

    rows = list(get_layout(spec.layout)(images_root))
    if not rows:
        raise ValueError(f"no images found under {images_root} for layout '{spec.layout}'")

    manifest_entries: list[dict] = []
    cls_entries: list[dict] = []
    batch_rows: list[ImageRow] = []
    batch_arrays: list[np.ndarray] = []

    def flush() -> None:
        if not batch_rows:
            return
        stacked = torch.from_numpy(np.stack(batch_arrays)).to(spec.device)
        with torch.no_grad():
            patches, cls = model(stacked)
        patches = patches.cpu().numpy()
        cls = cls.cpu().numpy()
        for i, row in enumerate(batch_rows):
            name = row.image_id + ".cvfm"
            write_tensor(patches[i], tensor_dir / name)
            manifest_entries.append(
                {
                    "image_id": row.image_id,
                    "domain": row.domain,
                    "location_id": row.location_id,
                    "tensor_path": f"tensors/{name}",
                }
            )
            if spec.export_cls:
                cls_name = row.image_id + "#cls.cvfm"
                write_tensor(cls[i].reshape(-1, 1, 1), tensor_dir / cls_name)
                cls_entries.append(
                    {
                        "image_id": row.image_id + "#cls",
                        "domain": row.domain,
                        "location_id": row.location_id,
                        "tensor_path": f"tensors/{cls_name}",
                    }
                )
        batch_rows.clear()
        batch_arrays.clear()

    for row in rows:
        try:
            array = load_image(row.path, spec.input_size)
        except (OSError, ValueError) as exc:
            logger.warning("skipping unreadable image %s (%s)", row.path, exc)
            continue
        batch_rows.append(row)
        batch_arrays.append(array)
        if len(batch_rows) >= spec.batch_size:
            flush()
    flush()

    if not manifest_entries:
        raise ValueError("every image was unreadable; nothing extracted")
    meta = {
        "backbone": spec.backbone,
        "input_size": spec.input_size,
        "export_cls": spec.export_cls,
    }

    def write_manifest(path: Path, entries: list[dict], suffix: str) -> None:
        path.write_text(
            json.dumps(
                {
                    "dataset_name": f"{spec.layout}:{images_root.name}{suffix}",
                    "entries": entries,
                    "_meta": meta,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )

    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, manifest_entries, "")
    if cls_entries:
        # Class tokens are an alternative input to the same pipeline (cls
        # pooling, scale 1), not extra rows of the spatial dataset, so they
        # get their own manifest.
        write_manifest(out_dir / "manifest_cls.json", cls_entries, ":cls")
    logger.info(
        "extracted %d tensors -> %s", len(manifest_entries) + len(cls_entries), out_dir
    )
    return manifest_path
