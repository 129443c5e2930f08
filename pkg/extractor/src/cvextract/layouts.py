"""Dataset layout adapters: map image folders to (path, id, domain, location).

All adapters yield rows sorted by image_id so extraction order (and the
manifest) is deterministic regardless of filesystem iteration order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class ImageRow:
    path: Path
    image_id: str
    domain: str  # "drone" | "satellite"
    location_id: str


def _iter_images(root: Path) -> Iterator[Path]:
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
            yield path


def _relative_id(root: Path, path: Path) -> str:
    return "__".join(path.relative_to(root).with_suffix("").parts)


def _domain_from_ancestors(root: Path, path: Path) -> str | None:
    for part in path.relative_to(root).parts[:-1]:
        lowered = part.lower()
        if "drone" in lowered:
            return "drone"
        if "satellite" in lowered:
            return "satellite"
    return None


def _split_by_directory(root: Path) -> Iterator[ImageRow]:
    """Shared rule for benchmark trees: the domain comes from the nearest
    ancestor directory named after the view (query_drone, gallery_satellite,
    drone, satellite, ...), the location label is the image's parent folder.
    Images under other views (street, google, ...) are skipped."""
    skipped = 0
    for path in _iter_images(root):
        domain = _domain_from_ancestors(root, path)
        if domain is None:
            skipped += 1
            continue
        yield ImageRow(
            path=path,
            image_id=_relative_id(root, path),
            domain=domain,
            location_id=path.parent.name,
        )
    if skipped:
        logger.info("skipped %d images outside drone/satellite views", skipped)


def university1652(root: Path) -> Iterator[ImageRow]:
    return _split_by_directory(root)


def sues200(root: Path) -> Iterator[ImageRow]:
    return _split_by_directory(root)


def flat(root: Path) -> Iterator[ImageRow]:
    """Minimal layout: root/drone/*.ext and root/satellite/*.ext, with the
    file stem as the location label (stems match across the two folders)."""
    for domain in ("drone", "satellite"):
        folder = root / domain
        if not folder.is_dir():
            continue
        for path in sorted(folder.iterdir()):
            if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
                yield ImageRow(
                    path=path,
                    image_id=f"{domain}__{path.stem}",
                    domain=domain,
                    location_id=path.stem,
                )


LAYOUTS: dict[str, Callable[[Path], Iterator[ImageRow]]] = {
    "university1652": university1652,
    "sues200": sues200,
    "flat": flat,
}


def get_layout(name: str) -> Callable[[Path], Iterator[ImageRow]]:
    try:
        return LAYOUTS[name]
    except KeyError:
        raise ValueError(
            f"unknown layout '{name}', expected one of {sorted(LAYOUTS)}"
        ) from None
