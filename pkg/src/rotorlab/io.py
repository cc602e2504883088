"""Report files: versioned CSV and binary PGM renders."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

SCHEMA_VERSION = 1
SCHEMAS = {
    "shape-curve": ["n", "psi", "psi_ball", "sym_diff", "lebesgue_error", "inradius", "outradius", "T_n"],
    "iso": ["n", "d", "max_e", "phi_hat", "argmax_shape_rle"],
    "mc": ["experiment", "params", "mean", "stderr", "trials", "seed"],
    "exit": ["d", "n", "sites", "e_origin", "max_e", "asymptotic", "residual", "iterations"],
}


def schema_line(name: str) -> str:
    return f"# schema: rotorlab.{name}/v{SCHEMA_VERSION}"


class CsvReport:
    """CSV file headed by a schema comment and a header row.

    Appending to an existing file checks the schema line instead of writing
    a new header.
    """

    def __init__(self, path: str | Path | None, name: str, append: bool = False, stream: TextIO | None = None):
        self.name = name
        self.columns = SCHEMAS[name]
        self._own = None
        if path is None:
            self._fh = stream
        else:
            p = Path(path)
            exists = p.exists() and p.stat().st_size > 0
            if append and exists:
                first = p.read_text(encoding="utf-8").splitlines()[0]
                if first != schema_line(name):
                    raise ValueError(f"{p} has schema {first!r}, expected {schema_line(name)!r}")
                self._fh = self._own = p.open("a", newline="", encoding="utf-8")
                self._writer = csv.writer(self._fh)
                return
            self._fh = self._own = p.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh) if self._fh is not None else None
        if self._fh is not None:
            self._fh.write(schema_line(name) + "\n")
            self._writer.writerow(self.columns)

    def row(self, values: Sequence | dict) -> None:
        if isinstance(values, dict):
            values = [values.get(c) for c in self.columns]
        if self._writer is not None:
            self._writer.writerow(["" if v is None else _fmt(v) for v in values])
            self._fh.flush()

    def close(self) -> None:
        if self._own is not None:
            self._own.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path: str | Path) -> tuple[str, list[dict]]:
    """Return (schema line, rows as dicts)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = list(csv.DictReader(lines[1:]))
    return lines[0], rows


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Binary greyscale PGM (P5), maxval 255."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def render_order(sites: np.ndarray, bands: int = 0, pad: int = 2) -> np.ndarray:
    """Planar aggregate as an image shaded by adjunction order.

    Early particles are dark and late ones light; ``bands > 0`` repeats the
    ramp that many times to show growth layers.  Empty cells are white.
    The top image row holds the largest y.
    """
    sites = np.asarray(sites, dtype=np.int64)
    if sites.shape[1] != 2:
        raise ValueError("renders need d = 2")
    lo = sites.min(axis=0) - pad
    hi = sites.max(axis=0) + pad
    w, h = (hi - lo + 1).tolist()
    img = np.full((h, w), 255, dtype=np.uint8)
    n = len(sites)
    t = np.arange(n, dtype=np.float64) / max(n - 1, 1)
    if bands > 0:
        t = (t * bands) % 1.0
    shade = (16 + 208 * t).astype(np.uint8)
    img[hi[1] - sites[:, 1], sites[:, 0] - lo[0]] = shade
    return img
