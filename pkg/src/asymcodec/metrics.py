"""PSNR and Bjøntegaard delta rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import EvaluationError, InputError, UsageError

PSNR_TABLE_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB of two 8-bit-scale images; ``inf`` when they are identical."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise UsageError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def table_psnr(value: float) -> float:
    return min(value, PSNR_TABLE_CAP)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float


class RDCurve:
    """Rate-distortion points ordered by strictly increasing bpp."""

    def __init__(self, points: Iterable[RDPoint]) -> None:
        pts = sorted((RDPoint(float(p.bpp), float(p.psnr)) for p in points), key=lambda p: p.bpp)
        for p in pts:
            if not (math.isfinite(p.bpp) and math.isfinite(p.psnr)) or p.bpp <= 0:
                raise EvaluationError(f"invalid RD point {p}")
        for a, b in zip(pts, pts[1:]):
            if b.bpp <= a.bpp:
                raise EvaluationError("RD curve bpp values must be distinct")
        self.points = tuple(pts)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def bpp(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def psnr(self) -> np.ndarray:
        return np.array([p.psnr for p in self.points])

    @classmethod
    def from_arrays(cls, bpp: Sequence[float], psnr_values: Sequence[float]) -> "RDCurve":
        return cls(RDPoint(r, d) for r, d in zip(bpp, psnr_values))

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "RDCurve":
        """Read ``bpp,psnr`` records; a non-numeric first row is taken as a header."""
        rows = []
        try:
            with Path(path).open(newline="") as fh:
                for i, row in enumerate(csv.reader(fh)):
                    if not row or row[0].lstrip().startswith("#"):
                        continue
                    try:
                        rows.append(RDPoint(float(row[0]), float(row[1])))
                    except (ValueError, IndexError):
                        if i == 0:
                            continue
                        raise InputError(f"{path}:{i + 1}: expected 'bpp,psnr'") from None
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror}") from exc
        return cls(rows)

    def write_csv(self, path: Union[str, Path]) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bpp", "psnr"])
            for p in self.points:
                w.writerow([repr(p.bpp), repr(table_psnr(p.psnr))])


def log_rate_interpolant(curve: RDCurve) -> PchipInterpolator:
    """Monotone cubic of log10(bpp) as a function of PSNR."""
    order = np.argsort(curve.psnr)
    d = curve.psnr[order]
    if np.any(np.diff(d) <= 0):
        raise EvaluationError("PSNR values must be distinct to interpolate rate over PSNR")
    return PchipInterpolator(d, np.log10(curve.bpp[order]))


def overlap(anchor: RDCurve, test: RDCurve) -> tuple[float, float]:
    lo = max(anchor.psnr.min(), test.psnr.min())
    hi = min(anchor.psnr.max(), test.psnr.max())
    if not lo < hi:
        raise EvaluationError("the two curves share no PSNR range")
    return float(lo), float(hi)


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average bitrate change of ``test`` against ``anchor`` at equal PSNR, in percent."""
    for name, c in (("anchor", anchor), ("test", test)):
        if len(c) < 4:
            raise EvaluationError(f"{name} curve needs at least 4 points, has {len(c)}")
    lo, hi = overlap(anchor, test)
    ia = log_rate_interpolant(anchor).integrate(lo, hi)
    it = log_rate_interpolant(test).integrate(lo, hi)
    avg = (it - ia) / (hi - lo)
    return float((10.0**avg - 1.0) * 100.0)
