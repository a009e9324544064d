"""External H.264 encode/decode through command templates.

Templates are plain command lines with ``str.format`` placeholders.
``{ffmpeg}`` resolves to $BITCORRUPT_FFMPEG, an ``ffmpeg`` on PATH, or the
binary shipped with imageio-ffmpeg, in that order.
"""
from __future__ import annotations

import json
import logging
import os
import shlex
import shutil
import string
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from .annexb import AnnexBError, Bitstream, build_gop_index, scan_nalus
from .yuv import FramePlane, PathLike, parse_yuv_name, read_png_dir, read_y4m, write_yuv, yuv_name

log = logging.getLogger(__name__)


class CodecError(RuntimeError):
    pass


class EncoderUnavailable(CodecError):
    pass


class DecoderUnavailable(CodecError):
    pass


class EncodeFailed(CodecError):
    def __init__(self, exit_code: int, stderr: str = ""):
        self.exit_code = exit_code
        self.stderr = stderr
        super().__init__(f"encoder exited with {exit_code}: {stderr.strip()[-2000:]}")


class DecodeFailed(CodecError):
    def __init__(self, exit_code: int, stderr: str = ""):
        self.exit_code = exit_code
        self.stderr = stderr
        super().__init__(f"decoder exited with {exit_code}: {stderr.strip()[-2000:]}")


class EmptyDecode(CodecError):
    pass


DEFAULT_ENCODE = (
    "{ffmpeg} -nostdin -y -loglevel error"
    " -f rawvideo -pix_fmt yuv420p -s {width}x{height} -r {fps} -i {in}"
    " -c:v libx264 -preset medium -crf 18 -threads 1"
    " -g {gop} -keyint_min {gop} -sc_threshold 0 -bf 0 -x264-params {x264_params}"
    " -f h264 {out}"
)
# ffmpeg's h264 decoder conceals damaged macroblocks on its own; ignore_err
# keeps it decoding past bitstream errors.
DEFAULT_DECODE = (
    "{ffmpeg} -nostdin -y -loglevel error -err_detect ignore_err"
    " -f h264 -i {in} -fps_mode passthrough -pix_fmt yuv420p -f yuv4mpegpipe {out}"
)


def _placeholders(template: str) -> set:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


@dataclass(frozen=True)
class CodecProfile:
    encode_cmd_template: str = DEFAULT_ENCODE
    decode_cmd_template: str = DEFAULT_DECODE
    gop_size: int = 16
    closed_gop: bool = True
    fps: int = 25

    def __post_init__(self):
        missing = {"in", "out", "gop"} - _placeholders(self.encode_cmd_template)
        if missing:
            raise ValueError(f"encode template lacks placeholders: {sorted(missing)}")
        missing = {"in", "out"} - _placeholders(self.decode_cmd_template)
        if missing:
            raise ValueError(f"decode template lacks placeholders: {sorted(missing)}")
        if self.gop_size < 1:
            raise ValueError("gop_size must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "CodecProfile":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @classmethod
    def load(cls, path: PathLike) -> "CodecProfile":
        d = json.loads(Path(path).read_text())
        return cls.from_json(d.get("codec_profile", d))


def find_ffmpeg() -> Optional[str]:
    env = os.environ.get("BITCORRUPT_FFMPEG")
    if env:
        return env if shutil.which(env) or Path(env).is_file() else None
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        return None
    try:
        return imageio_ffmpeg.get_ffmpeg_exe()
    except RuntimeError:
        return None


def render(template: str, **values) -> List[str]:
    if "{ffmpeg}" in template and "ffmpeg" not in values:
        exe = find_ffmpeg()
        if exe is None:
            raise FileNotFoundError("ffmpeg")
        values["ffmpeg"] = exe
    quoted = {k: shlex.quote(str(v)) for k, v in values.items()}
    return shlex.split(template.format(**quoted))


def _run(argv: Sequence[str]) -> subprocess.CompletedProcess:
    log.debug("running %s", " ".join(argv))
    return subprocess.run(list(argv), stdin=subprocess.DEVNULL, capture_output=True, text=True)


def _check_binary(argv: Sequence[str]) -> bool:
    exe = argv[0]
    return bool(shutil.which(exe)) or (os.sep in exe and os.access(exe, os.X_OK))


def to_raw_yuv(frames_path: PathLike, workdir: PathLike) -> Tuple[Path, int, int, int]:
    """Normalize any supported frame source to a raw 4:2:0 file in ``workdir``.

    Returns (path, width, height, frame_count).
    """
    src = Path(frames_path)
    workdir = Path(workdir)
    if src.is_file() and src.suffix == ".yuv":
        _, w, h = parse_yuv_name(src)
        n = src.stat().st_size // (w * h + 2 * ((w + 1) // 2) * ((h + 1) // 2))
        return src, w, h, n
    if src.is_dir():
        raw = sorted(src.glob("*.yuv"))
        if len(raw) == 1:
            return to_raw_yuv(raw[0], workdir)
        frames = read_png_dir(src)
    elif src.suffix == ".y4m":
        frames = read_y4m(src)
    elif src.is_file():
        exe = find_ffmpeg()
        if exe is None:
            raise EncoderUnavailable("ffmpeg is needed to read containered video; set BITCORRUPT_FFMPEG")
        tmp = workdir / "source.y4m"
        proc = _run([exe, "-nostdin", "-y", "-loglevel", "error", "-i", str(src),
                     "-pix_fmt", "yuv420p", "-f", "yuv4mpegpipe", str(tmp)])
        if proc.returncode != 0:
            raise EncodeFailed(proc.returncode, proc.stderr)
        frames = read_y4m(tmp)
        tmp.unlink()
    else:
        raise FileNotFoundError(src)
    if not frames:
        raise ValueError(f"no frames found in {src}")
    w, h = frames[0].size
    out = workdir / yuv_name("source", w, h)
    write_yuv(out, frames)
    return out, w, h, len(frames)


def encode(
    frames_path: PathLike, profile: CodecProfile = CodecProfile(), out_path: Optional[PathLike] = None
) -> Bitstream:
    """Encode a frame source to an Annex-B stream and check its GOP layout."""
    with tempfile.TemporaryDirectory(prefix="bitcorrupt-enc-") as tmp:
        raw, w, h, n = to_raw_yuv(frames_path, tmp)
        target = Path(out_path) if out_path else Path(tmp) / "out.264"
        params = "closed_gop=1" if profile.closed_gop else "open_gop=1"
        try:
            argv = render(
                profile.encode_cmd_template,
                **{"in": raw, "out": target, "gop": profile.gop_size, "width": w, "height": h,
                   "fps": profile.fps, "x264_params": params},
            )
        except FileNotFoundError as e:
            raise EncoderUnavailable(
                "no ffmpeg binary found: install ffmpeg, `pip install imageio-ffmpeg`, or set BITCORRUPT_FFMPEG"
            ) from e
        if not _check_binary(argv):
            raise EncoderUnavailable(f"encoder binary not found: {argv[0]}")
        proc = _run(argv)
        if proc.returncode != 0:
            raise EncodeFailed(proc.returncode, proc.stderr)
        bs = Bitstream(target.read_bytes(), str(target) if out_path else None)
    _check_gops(bs, n, profile.gop_size)
    return bs


def _check_gops(bs: Bitstream, frame_count: int, gop_size: int) -> None:
    try:
        idx = build_gop_index(scan_nalus(bs))
    except AnnexBError as e:
        raise EncodeFailed(0, f"encoder output is not a usable Annex-B stream: {e}") from e
    sizes = [len(g) for g in idx.gops]
    expected = [gop_size] * (frame_count // gop_size) + ([frame_count % gop_size] if frame_count % gop_size else [])
    if sizes != expected:
        raise EncodeFailed(0, f"GOP layout {sizes} does not match gop_size={gop_size} for {frame_count} frames")


def decode(bitstream_path: PathLike, profile: CodecProfile = CodecProfile()) -> List[FramePlane]:
    """Decode an Annex-B file; content errors are concealed, not raised."""
    bitstream_path = Path(bitstream_path)
    if not bitstream_path.is_file():
        raise FileNotFoundError(bitstream_path)
    with tempfile.TemporaryDirectory(prefix="bitcorrupt-dec-") as tmp:
        out = Path(tmp) / "decoded.y4m"
        try:
            argv = render(profile.decode_cmd_template, **{"in": bitstream_path, "out": out})
        except FileNotFoundError as e:
            raise DecoderUnavailable(
                "no ffmpeg binary found: install ffmpeg, `pip install imageio-ffmpeg`, or set BITCORRUPT_FFMPEG"
            ) from e
        if not _check_binary(argv):
            raise DecoderUnavailable(f"decoder binary not found: {argv[0]}")
        proc = _run(argv)
        if proc.returncode != 0:
            raise DecodeFailed(proc.returncode, proc.stderr)
        if not out.exists():
            return []
        return read_y4m(out)


def align_frames(
    original: Sequence[FramePlane], corrupted: Sequence[FramePlane]
) -> List[Tuple[FramePlane, FramePlane]]:
    """Pair frames by index; missing corrupted frames become flagged placeholders.

    Extra corrupted frames (a splice that forged a slice) are dropped.
    """
    if not corrupted:
        raise EmptyDecode("corrupted stream decoded to zero frames")
    if len(corrupted) > len(original):
        log.warning("decoder produced %d frames for %d originals; extras dropped", len(corrupted), len(original))
    pairs = []
    for i, orig in enumerate(original):
        if i < len(corrupted):
            pairs.append((orig, corrupted[i]))
        else:
            pairs.append((orig, FramePlane.blank(orig.width, orig.height, frame_index=i, placeholder=True)))
    return pairs
