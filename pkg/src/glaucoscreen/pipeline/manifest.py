"""Dataset manifest: one CSV row per eye with image and ground-truth mask paths."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

HEADER = ("id", "image", "disc_mask", "cup_mask", "split", "label")
SPLITS = ("train", "test")
LABELS = ("glaucoma", "normal", "unknown")


class ManifestError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Entry:
    id: str
    image: Path
    disc_mask: Path
    cup_mask: Path
    split: str
    label: str


def load_manifest(path, check_files: bool = True) -> list[Entry]:
    """Parse and validate a manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise ManifestError(f"{path}: header must be {','.join(HEADER)}")
        entries, seen = [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(HEADER)} fields")
            eid, image, disc, cup, split, label = (cell.strip() for cell in row)
            if not eid:
                raise ManifestError(f"{path}:{lineno}: empty id")
            if eid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {eid!r}")
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: split {split!r} not in {SPLITS}")
            if label not in LABELS:
                raise ManifestError(f"{path}:{lineno}: label {label!r} not in {LABELS}")
            seen.add(eid)
            entries.append(Entry(eid, base / image, base / disc, base / cup, split, label))
    if not entries:
        raise ManifestError(f"{path}: no entries")
    if check_files:
        missing = [e.id for e in entries
                   if not (e.image.is_file() and e.disc_mask.is_file() and e.cup_mask.is_file())]
        if missing:
            raise ManifestError(f"{path}: missing files for ids {', '.join(missing)}")
    return entries
