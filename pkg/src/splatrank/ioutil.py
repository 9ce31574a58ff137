"""Small file-output helpers shared by the exporters and the CLI.

Everything that lands on disk goes through the atomic writers so a crash
mid-write never leaves a truncated file behind: the payload is written to a
sibling temporary file and renamed over the target in one step.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np
from PIL import Image


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | os.PathLike, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def save_png(path: str | os.PathLike, image: np.ndarray) -> None:
    """Save a float image in [0, 1] (HxW or HxWx3) as an 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None].repeat(3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxW or HxWx3 image, got shape {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Load a PNG as float RGB in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def export_metrics_csv(path: str | os.PathLike, log) -> None:
    """Write a MetricsLog as CSV; an empty log produces a header-only file."""
    atomic_write_text(path, log.to_csv())


def export_histogram_csv(
    path: str | os.PathLike, counts: np.ndarray, edges: np.ndarray
) -> None:
    """Write a histogram as ``bin_left,bin_right,count`` rows (UTF-8, LF)."""
    counts = np.asarray(counts)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.shape[0] != counts.shape[0] + 1:
        raise ValueError(
            f"need {counts.shape[0] + 1} edges for {counts.shape[0]} bins, "
            f"got {edges.shape[0]}"
        )
    lines = ["bin_left,bin_right,count"]
    for i in range(counts.shape[0]):
        lines.append(f"{repr(float(edges[i]))},{repr(float(edges[i + 1]))},{int(counts[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")
