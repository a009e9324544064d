"""Procedural test clips: panning texture plus moving objects.

Used to build desk-scale fixture corpora when no real footage is at hand.
The content is busy enough that P-frames carry real residual and motion
data, so damage propagates through a GOP the way it does on camera footage.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .yuv import FramePlane, PathLike, write_yuv, yuv_name


def _texture(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    t = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    t -= t.min()
    return t / max(t.max(), 1e-9)


def _warp(img, rot, shift, centre, shape):
    offset = shift - rot @ centre
    return ndimage.affine_transform(img, rot, offset=offset, output_shape=shape, order=1, mode="grid-wrap")


def _stretch(t: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(t, [1, 99])
    return np.clip((t - lo) / max(hi - lo, 1e-9), 0, 1)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = _stretch(0.5 * _texture(rng, h, w, 6) + 0.35 * _texture(rng, h, w, 1.5) + 0.15 * _texture(rng, h, w, 20))
    # hard-edged blocks give the pan some man-made structure
    for _ in range(12):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        bh, bw = rng.integers(h // 16, h // 4), rng.integers(w // 16, w // 4)
        base[y0:y0 + bh, x0:x0 + bw] = 0.5 * base[y0:y0 + bh, x0:x0 + bw] + 0.5 * rng.uniform()
    return 20 + 215 * base


def synth_clip(
    width: int = 320,
    height: int = 240,
    frames: int = 64,
    seed: int = 0,
    motion: float = 2.0,
    objects: int = 5,
    static: bool = False,
    grain: float = 2.5,
    zoom: float = 0.004,
) -> List[FramePlane]:
    """Generate a clip; ``static=True`` gives a still, noise-free scene."""
    rng = np.random.default_rng(seed)
    if static:
        grain = 0.0
    bh, bw = height * 2, width * 2
    bg_y = _background(rng, bh, bw)
    bg_u = 128 + 50 * (_texture(rng, bh // 2, bw // 2, 8) - 0.5)
    bg_v = 128 + 50 * (_texture(rng, bh // 2, bw // 2, 8) - 0.5)
    vel = rng.uniform(-1, 1, 2) * motion
    objs = []
    for _ in range(objects):
        r = rng.uniform(0.1, 0.25) * min(width, height)
        n = int(2 * r) + 3
        objs.append(
            dict(
                r=r,
                pos=rng.uniform([0, 0], [height, width]),
                vel=rng.uniform(-1, 1, 2) * motion * 2.5,
                spin=rng.uniform(-0.08, 0.08),
                tex=20 + 215 * _stretch(_texture(rng, n, n, 2.0)),
                chroma=rng.uniform(60, 196, 2),
            )
        )
    yy, xx = np.mgrid[0:height, 0:width]
    ch, cw = (height + 1) // 2, (width + 1) // 2
    centre = np.array([height / 2, width / 2])
    out = []
    for t in range(frames):
        k = 0 if static else t
        # slow zoom + rotation about the frame centre, on top of the pan
        scale = 1.0 / (1.0 + zoom * k)
        ang = 0.002 * motion * k
        rot = scale * np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        shift = centre + vel * k
        y = _warp(bg_y, rot, shift, centre, (height, width))
        u = _warp(bg_u, rot, shift / 2, centre / 2, (ch, cw))
        v = _warp(bg_v, rot, shift / 2, centre / 2, (ch, cw))
        for o in objs:
            cy, cx = (o["pos"] + o["vel"] * k) % [height, width]
            dy, dx = yy - cy, xx - cx
            inside = dy ** 2 + dx ** 2 < o["r"] ** 2
            # spinning texture: sample the object's own texture in rotated coordinates
            a = o["spin"] * k
            c0 = (o["tex"].shape[0] - 1) / 2
            sy = c0 + np.cos(a) * dy[inside] - np.sin(a) * dx[inside]
            sx = c0 + np.sin(a) * dy[inside] + np.cos(a) * dx[inside]
            y[inside] = ndimage.map_coordinates(o["tex"], [sy, sx], order=1, mode="nearest")
            cin = inside[0::2, 0::2]
            u[cin] = o["chroma"][0]
            v[cin] = o["chroma"][1]
        if grain:
            y = y + rng.normal(0, grain, y.shape)
        out.append(
            FramePlane(
                np.clip(np.round(y), 0, 255).astype(np.uint8),
                np.clip(np.round(u), 0, 255).astype(np.uint8),
                np.clip(np.round(v), 0, 255).astype(np.uint8),
                t,
            )
        )
    return out


def write_corpus(
    directory: PathLike,
    clips: int = 8,
    frames: int = 64,
    width: int = 320,
    height: int = 240,
    seed: int = 0,
    motion: Optional[float] = None,
    objects: Optional[int] = None,
) -> List[Path]:
    """Write ``clips`` raw sources named ``clipNN_<W>x<H>.yuv``.

    Unless fixed by the caller, camera motion and the number of independently
    moving objects vary per clip, from a plain pan to a busy scene.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    rng = np.random.default_rng(seed)
    for i in range(clips):
        mo = motion if motion is not None else float(rng.uniform(0.3, 3.0))
        nobj = objects if objects is not None else int(rng.integers(0, 7))
        p = directory / yuv_name(f"clip{i:02d}", width, height)
        write_yuv(p, synth_clip(width, height, frames, seed=seed * 1000 + i, motion=mo, objects=nobj))
        paths.append(p)
    return paths
