"""Planar 4:2:0 frames and their on-disk forms (raw .yuv, .y4m, PNG)."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]

_YUV_NAME = re.compile(r"^(?P<stem>.+)_(?P<w>\d+)x(?P<h>\d+)\.yuv$")


def chroma_shape(width: int, height: int) -> Tuple[int, int]:
    return (height + 1) // 2, (width + 1) // 2


@dataclass
class FramePlane:
    luma: np.ndarray
    chroma_u: np.ndarray
    chroma_v: np.ndarray
    frame_index: int = 0
    # synthesized stand-in for a frame the decoder dropped
    placeholder: bool = False

    def __post_init__(self):
        h, w = self.luma.shape
        cs = chroma_shape(w, h)
        if self.chroma_u.shape != cs or self.chroma_v.shape != cs:
            raise ValueError(f"chroma planes must be {cs} for a {w}x{h} frame")
        for p in (self.luma, self.chroma_u, self.chroma_v):
            if p.dtype != np.uint8:
                raise TypeError("planes must be uint8")

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def size(self) -> Tuple[int, int]:
        return self.width, self.height

    @classmethod
    def blank(cls, width: int, height: int, luma: int = 0, frame_index: int = 0, **kw) -> "FramePlane":
        cs = chroma_shape(width, height)
        return cls(
            np.full((height, width), luma, np.uint8),
            np.full(cs, 128, np.uint8),
            np.full(cs, 128, np.uint8),
            frame_index,
            **kw,
        )

    @classmethod
    def from_luma(cls, luma: np.ndarray, frame_index: int = 0) -> "FramePlane":
        luma = np.ascontiguousarray(luma, dtype=np.uint8)
        cs = chroma_shape(luma.shape[1], luma.shape[0])
        return cls(luma, np.full(cs, 128, np.uint8), np.full(cs, 128, np.uint8), frame_index)

    def copy(self) -> "FramePlane":
        return FramePlane(
            self.luma.copy(), self.chroma_u.copy(), self.chroma_v.copy(), self.frame_index, self.placeholder
        )

    def tobytes(self) -> bytes:
        return self.luma.tobytes() + self.chroma_u.tobytes() + self.chroma_v.tobytes()

    @classmethod
    def frombuffer(cls, buf: bytes, width: int, height: int, frame_index: int = 0) -> "FramePlane":
        ch, cw = chroma_shape(width, height)
        ny, nc = width * height, ch * cw
        if len(buf) != ny + 2 * nc:
            raise ValueError("buffer size does not match frame geometry")
        a = np.frombuffer(buf, np.uint8)
        return cls(
            a[:ny].reshape(height, width).copy(),
            a[ny:ny + nc].reshape(ch, cw).copy(),
            a[ny + nc:].reshape(ch, cw).copy(),
            frame_index,
        )

    def upsampled_chroma(self) -> Tuple[np.ndarray, np.ndarray]:
        """U and V at luma resolution, nearest neighbour."""
        h, w = self.luma.shape
        up = lambda p: np.repeat(np.repeat(p, 2, 0), 2, 1)[:h, :w]  # noqa: E731
        return up(self.chroma_u), up(self.chroma_v)

    def to_rgb(self) -> np.ndarray:
        u, v = self.upsampled_chroma()
        ycc = np.stack([self.luma, u, v], axis=-1)
        return np.asarray(Image.fromarray(ycc, "YCbCr").convert("RGB"))

    @classmethod
    def from_rgb(cls, rgb: np.ndarray, frame_index: int = 0) -> "FramePlane":
        ycc = np.asarray(Image.fromarray(np.ascontiguousarray(rgb, np.uint8), "RGB").convert("YCbCr"))
        h, w = ycc.shape[:2]
        return cls(ycc[..., 0].copy(), _subsample(ycc[..., 1]), _subsample(ycc[..., 2]), frame_index)


def _subsample(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    p = np.pad(plane.astype(np.uint16), ((0, h % 2), (0, w % 2)), mode="edge")
    s = p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2]
    return ((s + 2) // 4).astype(np.uint8)


def frame_bytes(width: int, height: int) -> int:
    ch, cw = chroma_shape(width, height)
    return width * height + 2 * ch * cw


def yuv_name(stem: str, width: int, height: int) -> str:
    return f"{stem}_{width}x{height}.yuv"


def parse_yuv_name(path: PathLike) -> Tuple[str, int, int]:
    m = _YUV_NAME.match(Path(path).name)
    if not m:
        raise ValueError(f"raw YUV files must be named <stem>_<W>x<H>.yuv: {path}")
    return m["stem"], int(m["w"]), int(m["h"])


def read_yuv(path: PathLike, width: Optional[int] = None, height: Optional[int] = None) -> List[FramePlane]:
    if width is None or height is None:
        _, width, height = parse_yuv_name(path)
    data = Path(path).read_bytes()
    fb = frame_bytes(width, height)
    if len(data) % fb:
        raise ValueError(f"{path}: size {len(data)} is not a multiple of the {width}x{height} frame size")
    return [FramePlane.frombuffer(data[i:i + fb], width, height, k) for k, i in enumerate(range(0, len(data), fb))]


def write_yuv(path: PathLike, frames: Iterable[FramePlane]) -> None:
    with open(path, "wb") as f:
        for fr in frames:
            f.write(fr.tobytes())


def read_y4m(path: PathLike) -> List[FramePlane]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if not data.startswith(b"YUV4MPEG2") or nl < 0:
        raise ValueError(f"{path}: not a YUV4MPEG2 file")
    width = height = None
    for tok in data[:nl].split()[1:]:
        key, val = chr(tok[0]), tok[1:].decode()
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "C" and not val.startswith("420"):
            raise ValueError(f"{path}: only 4:2:0 is supported, got C{val}")
    if width is None or height is None:
        raise ValueError(f"{path}: missing W/H in header")
    fb = frame_bytes(width, height)
    frames = []
    pos = nl + 1
    while pos < len(data):
        eol = data.find(b"\n", pos)
        if eol < 0 or not data.startswith(b"FRAME", pos):
            raise ValueError(f"{path}: bad FRAME marker at byte {pos}")
        start = eol + 1
        if start + fb > len(data):
            break  # partial trailing frame
        frames.append(FramePlane.frombuffer(data[start:start + fb], width, height, len(frames)))
        pos = start + fb
    return frames


def write_y4m(path: PathLike, frames: Sequence[FramePlane], fps: int = 25) -> None:
    if not frames:
        raise ValueError("no frames to write")
    w, h = frames[0].size
    with open(path, "wb") as f:
        f.write(f"YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C420jpeg\n".encode())
        for fr in frames:
            f.write(b"FRAME\n" + fr.tobytes())


def read_png_dir(path: PathLike) -> List[FramePlane]:
    files = sorted(Path(path).glob("*.png"))
    frames = []
    for k, p in enumerate(files):
        with Image.open(p) as im:
            if im.mode in ("L", "I", "I;16"):
                frames.append(FramePlane.from_luma(np.asarray(im.convert("L")), k))
            else:
                frames.append(FramePlane.from_rgb(np.asarray(im.convert("RGB")), k))
    return frames


def write_png_dir(path: PathLike, frames: Iterable[FramePlane], luma_only: bool = False) -> List[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    out = []
    for k, fr in enumerate(frames):
        p = path / f"{k:05d}.png"
        arr = fr.luma if luma_only else fr.to_rgb()
        Image.fromarray(arr).save(p)
        out.append(p)
    return out


def find_raw(directory: PathLike) -> Path:
    """The single ``*_WxH.yuv`` file inside a frame directory."""
    found = sorted(Path(directory).glob("*.yuv"))
    if len(found) != 1:
        raise FileNotFoundError(f"expected one .yuv file in {directory}, found {len(found)}")
    return found[0]


def load_frames(path: PathLike) -> List[FramePlane]:
    """Frames from a .yuv/.y4m file, a PNG directory, or a directory holding one .yuv."""
    path = Path(path)
    if path.is_dir():
        yuvs = sorted(path.glob("*.yuv"))
        if len(yuvs) == 1:
            return read_yuv(yuvs[0])
        return read_png_dir(path)
    if path.suffix == ".yuv":
        return read_yuv(path)
    if path.suffix == ".y4m":
        return read_y4m(path)
    raise ValueError(f"unsupported frame source: {path}")
