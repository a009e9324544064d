"""Non-learned recovery baselines: identity, temporal copy, spatial fill.

All three map (corrupted frames, masks) -> frames and only ever write
pixels under the mask. Chroma planes use a mask derived from the luma one:
a chroma sample is masked when any luma pixel of its 2x2 block is.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from .mask import ErrorMask
from .yuv import FramePlane


@dataclass
class RecoveryInput:
    frames: Sequence[FramePlane]
    masks: Sequence[ErrorMask]
    clip_id: str = ""

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ValueError(f"{len(self.frames)} frames but {len(self.masks)} masks")
        for k, (f, m) in enumerate(zip(self.frames, self.masks)):
            if m.bits.shape != f.luma.shape:
                raise ValueError(f"frame {k}: mask {m.bits.shape} vs luma {f.luma.shape}")


def chroma_mask(bits: np.ndarray) -> np.ndarray:
    h, w = bits.shape
    p = np.pad(bits, ((0, h % 2), (0, w % 2)))
    return p[0::2, 0::2] | p[1::2, 0::2] | p[0::2, 1::2] | p[1::2, 1::2]


def _planes(f: FramePlane):
    return (f.luma, f.chroma_u, f.chroma_v)


def recover_identity(inp: RecoveryInput) -> List[FramePlane]:
    return [f.copy() for f in inp.frames]


def _neighbor_stats(vals: np.ndarray, known: np.ndarray):
    """Sum and count of known 4-neighbours for every pixel."""
    v = np.where(known, vals, 0.0)
    k = known.astype(np.float64)
    s = np.zeros_like(v)
    c = np.zeros_like(v)
    s[1:] += v[:-1]; c[1:] += k[:-1]
    s[:-1] += v[1:]; c[:-1] += k[1:]
    s[:, 1:] += v[:, :-1]; c[:, 1:] += k[:, :-1]
    s[:, :-1] += v[:, 1:]; c[:, :-1] += k[:, 1:]
    return s, c


def diffuse_fill(plane: np.ndarray, holes: np.ndarray, iterations: int = 200, tol: float = 0.5) -> np.ndarray:
    """Fill ``holes`` of a uint8 plane from the surrounding pixels.

    First pass peels the hole inward, one ring at a time, setting each pixel
    to the mean of its already-known 4-neighbours. Then Jacobi sweeps replace
    every hole pixel by the mean of its in-frame 4-neighbours until the
    largest update is below ``tol`` gray levels or ``iterations`` run out.
    A plane with no known pixel at all is returned unchanged.
    """
    if not holes.any() or holes.all():
        return plane.copy()
    vals = plane.astype(np.float64)
    known = ~holes
    while not known.all():
        s, c = _neighbor_stats(vals, known)
        ring = ~known & (c > 0)
        vals[ring] = s[ring] / c[ring]
        known = known | ring
    everything = np.ones_like(holes)
    _, deg = _neighbor_stats(vals, everything)
    for _ in range(iterations):
        s, _ = _neighbor_stats(vals, everything)
        new = s[holes] / deg[holes]
        delta = np.max(np.abs(new - vals[holes]))
        vals[holes] = new
        if delta < tol:
            break
    out = plane.copy()
    out[holes] = np.clip(np.round(vals[holes]), 0, 255).astype(np.uint8)
    return out


def recover_spatial(inp: RecoveryInput, iterations: int = 200) -> List[FramePlane]:
    out = []
    for f, m in zip(inp.frames, inp.masks):
        cm = chroma_mask(m.bits)
        y, u, v = (diffuse_fill(p, mk, iterations) for p, mk in zip(_planes(f), (m.bits, cm, cm)))
        out.append(FramePlane(y, u, v, f.frame_index, f.placeholder))
    return out


def recover_temporal(inp: RecoveryInput, search_radius: int = 8, iterations: int = 200) -> List[FramePlane]:
    """Copy co-located clean pixels from the temporally nearest frame.

    Candidates are tried at distance 1, 2, ... ``search_radius``, the past
    frame before the future one at each distance. Pixels that stay masked
    across the whole window go to spatial fill.
    """
    n = len(inp.frames)
    lmasks = [m.bits for m in inp.masks]
    cmasks = [chroma_mask(b) for b in lmasks]
    offsets = [s * d for d in range(1, search_radius + 1) for s in (-1, 1)]
    out = []
    for i, f in enumerate(inp.frames):
        planes = [p.copy() for p in _planes(f)]
        todo = [lmasks[i].copy(), cmasks[i].copy(), cmasks[i].copy()]
        for off in offsets:
            j = i + off
            if not 0 <= j < n or not any(t.any() for t in todo):
                continue
            src = _planes(inp.frames[j])
            src_masks = (lmasks[j], cmasks[j], cmasks[j])
            for k in range(3):
                take = todo[k] & ~src_masks[k]
                planes[k][take] = src[k][take]
                todo[k] &= ~take
        planes = [diffuse_fill(p, t, iterations) if t.any() else p for p, t in zip(planes, todo)]
        out.append(FramePlane(*planes, frame_index=f.frame_index, placeholder=f.placeholder))
    return out


METHODS: Dict[str, Callable[[RecoveryInput], List[FramePlane]]] = {
    "identity": recover_identity,
    "temporal": recover_temporal,
    "spatial": recover_spatial,
}
