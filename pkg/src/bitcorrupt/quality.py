"""Reference-based PSNR / SSIM on luma.

SSIM is the Wang et al. (2004) formulation: 11x11 Gaussian window with
sigma 1.5, C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over every window
position that fits entirely inside the frame (no padding).

PSNR of identical frames is infinite; such frames are left out of the
means and counted separately.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .mask import DimensionMismatch
from .yuv import FramePlane, PathLike, load_frames

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
AVERAGING = "per-frame weighted; frames with infinite PSNR excluded from PSNR means and counted"

WIN = 11
SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


class TooSmall(ValueError):
    pass


class InventoryMismatch(ValueError):
    def __init__(self, clips: Sequence[str], detail: str = ""):
        self.clips = list(clips)
        super().__init__(f"clip inventories differ: {', '.join(self.clips)} {detail}".strip())


def gaussian_window(size: int = WIN, sigma: float = SIGMA) -> np.ndarray:
    """1-D normalized Gaussian taps; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _plane(x: Union[FramePlane, np.ndarray]) -> np.ndarray:
    return x.luma if isinstance(x, FramePlane) else np.asarray(x)


def _rgb_plane(x: FramePlane) -> np.ndarray:
    return x.to_rgb()


def psnr(reference, test, rgb: bool = False) -> float:
    a = _rgb_plane(reference) if rgb else _plane(reference)
    b = _rgb_plane(test) if rgb else _plane(test)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")
    y = ndimage.correlate1d(y, g, axis=1, mode="constant")
    return y[r:-r, r:-r]


def ssim_map(reference, test) -> np.ndarray:
    a = _plane(reference).astype(np.float64)
    b = _plane(test).astype(np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < WIN:
        raise TooSmall(f"SSIM needs at least {WIN}x{WIN} pixels, got {a.shape[1]}x{a.shape[0]}")
    g = gaussian_window()
    mu1, mu2 = _filter_valid(a, g), _filter_valid(b, g)
    s11 = _filter_valid(a * a, g) - mu1 * mu1
    s22 = _filter_valid(b * b, g) - mu2 * mu2
    s12 = _filter_valid(a * b, g) - mu1 * mu2
    num = (2 * mu1 * mu2 + C1) * (2 * s12 + C2)
    den = (mu1 * mu1 + mu2 * mu2 + C1) * (s11 + s22 + C2)
    return num / den


def ssim(reference, test) -> float:
    return float(np.mean(ssim_map(reference, test)))


@dataclass
class QualityReport:
    clip_id: str
    per_frame: List[Tuple[int, float, float]]

    @property
    def infinite_count(self) -> int:
        return sum(math.isinf(p) for _, p, _ in self.per_frame)

    @property
    def per_clip_mean(self) -> Tuple[float, float]:
        finite = [p for _, p, _ in self.per_frame if not math.isinf(p)]
        mp = float(np.mean(finite)) if finite else math.inf
        ms = float(np.mean([s for _, _, s in self.per_frame])) if self.per_frame else math.nan
        return mp, ms

    def to_json(self) -> dict:
        mp, ms = self.per_clip_mean
        return {
            "clip_id": self.clip_id,
            "psnr_db": _num(mp),
            "ssim": ms,
            "infinite_psnr_frames": self.infinite_count,
            "lpips": None,
            "vfid": None,
            "per_frame": [{"frame": i, "psnr_db": _num(p), "ssim": s} for i, p, s in self.per_frame],
        }


def _num(x: float) -> Optional[float]:
    # JSON has no infinity; null plus the infinite_* counters carries it
    return None if math.isinf(x) else x


def evaluate_clip(clip_id: str, recovered: Sequence[FramePlane], reference: Sequence[FramePlane]) -> QualityReport:
    if len(recovered) != len(reference):
        raise InventoryMismatch([clip_id], f"(frame counts {len(recovered)} vs {len(reference)})")
    rows = [(i, psnr(ref, rec), ssim(ref, rec)) for i, (rec, ref) in enumerate(zip(recovered, reference))]
    return QualityReport(clip_id, rows)


@dataclass
class SetReport:
    clips: List[QualityReport]

    @property
    def infinite_count(self) -> int:
        return sum(c.infinite_count for c in self.clips)

    @property
    def psnr_db(self) -> float:
        finite = [p for c in self.clips for _, p, _ in c.per_frame if not math.isinf(p)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def ssim(self) -> float:
        return float(np.mean([s for c in self.clips for _, _, s in c.per_frame]))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "averaging": AVERAGING,
            "channel": "luma",
            "set": {
                "psnr_db": _num(self.psnr_db),
                "ssim": self.ssim,
                "frames": sum(len(c.per_frame) for c in self.clips),
                "infinite_psnr_frames": self.infinite_count,
                "lpips": None,
                "vfid": None,
            },
            "clips": [c.to_json() for c in self.clips],
        }

    def dump(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def discover_clips(directory: PathLike, role: str = "reference") -> Dict[str, Path]:
    """Map clip id -> frame source inside ``directory``.

    A branch directory (one with manifest.json) yields each clip's
    ``orig_frames`` for role="reference" and ``corr_frames`` otherwise.
    Plain directories hold ``<clip>_<W>x<H>.yuv`` / ``<clip>.y4m`` files or
    one subdirectory per clip.
    """
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists():
        data = json.loads(manifest.read_text())
        key = "orig_frames" if role == "reference" else "corr_frames"
        return {c["clip_id"]: directory / c["artifacts"][key] for c in data["clips"]}
    found: Dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.is_dir():
            found[p.name] = p
        elif p.suffix == ".yuv":
            found[p.name.rsplit("_", 1)[0]] = p
        elif p.suffix == ".y4m":
            found[p.stem] = p
    return found


def evaluate_set(recovered_dir: PathLike, reference_dir: PathLike) -> SetReport:
    rec = discover_clips(recovered_dir, role="recovered")
    ref = discover_clips(reference_dir, role="reference")
    odd = sorted(set(rec) ^ set(ref))
    if odd:
        raise InventoryMismatch(odd)
    reports = [evaluate_clip(cid, load_frames(rec[cid]), load_frames(ref[cid])) for cid in sorted(ref)]
    out = SetReport(reports)
    if out.infinite_count:
        log.info("%d frames identical to reference (infinite PSNR) excluded from PSNR means", out.infinite_count)
    return out
