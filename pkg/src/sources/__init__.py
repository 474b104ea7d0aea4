"""Dataset sources: the plain export format and the EuRoC MAV layout."""
from __future__ import annotations

import os

from ..errors import DatasetError
from ..models import Dataset
from .dataset_io import export, ingest as ingest_plain
from .euroc import ingest_euroc, is_euroc

__all__ = ["export", "ingest"]


def ingest(folder: str) -> Dataset:
    if not os.path.isdir(folder):
        raise DatasetError(folder, "dataset directory not found")
    if is_euroc(folder):
        return ingest_euroc(folder)
    return ingest_plain(folder)
