"""H.264 Annex-B byte stream indexing.

Splits an elementary stream into NAL units without touching the EBSP bytes
(emulation-prevention bytes stay in place) and derives the frame/GOP layout
used by the corruption engine.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

log = logging.getLogger(__name__)

START_CODE_3 = b"\x00\x00\x01"
START_CODE_4 = b"\x00\x00\x00\x01"


class AnnexBError(ValueError):
    """Base class for structural problems in an Annex-B stream."""


class NoStartCode(AnnexBError):
    pass


class NoIdrFound(AnnexBError):
    pass


class OrphanFrames(AnnexBError):
    """VCL NAL units appear before the first IDR slice."""


class TruncatedNaluWarning(UserWarning):
    """A start code is the final bytes of the stream."""


class MultiSliceWarning(UserWarning):
    pass


class NaluKind(str, Enum):
    SPS = "SPS"
    PPS = "PPS"
    SLICE_IDR = "SliceIDR"
    SLICE_NON_IDR = "SliceNonIDR"
    SEI = "SEI"
    AUD = "AUD"
    OTHER = "Other"

    @property
    def is_vcl(self) -> bool:
        return self in (NaluKind.SLICE_IDR, NaluKind.SLICE_NON_IDR)


_KIND_BY_TYPE = {
    7: NaluKind.SPS,
    8: NaluKind.PPS,
    5: NaluKind.SLICE_IDR,
    1: NaluKind.SLICE_NON_IDR,
    6: NaluKind.SEI,
    9: NaluKind.AUD,
}


def classify_nal_type(nal_unit_type: int) -> NaluKind:
    if not 0 <= nal_unit_type <= 31:
        raise ValueError(f"nal_unit_type out of range: {nal_unit_type}")
    return _KIND_BY_TYPE.get(nal_unit_type, NaluKind.OTHER)


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    source_path: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))

    def __len__(self) -> int:
        return len(self.data)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "Bitstream":
        path = Path(path)
        return cls(path.read_bytes(), str(path))

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.data)


@dataclass(frozen=True)
class NaluSpan:
    start_code_offset: int
    start_code_len: int
    payload_len: int
    nal_ref_idc: int
    nal_unit_type: int
    forbidden_bit: int = 0
    # start code with no header byte at the very end of the stream
    truncated: bool = False

    @property
    def header_offset(self) -> int:
        return self.start_code_offset + self.start_code_len

    @property
    def payload_offset(self) -> int:
        return self.header_offset + 1

    @property
    def payload_end(self) -> int:
        return self.payload_offset + self.payload_len

    @property
    def end(self) -> int:
        """First byte after this unit (header included)."""
        if self.truncated:
            return self.header_offset
        return self.payload_end

    @property
    def kind(self) -> NaluKind:
        return classify_nal_type(self.nal_unit_type)

    @property
    def is_vcl(self) -> bool:
        return not self.truncated and self.kind.is_vcl

    def to_json(self) -> dict:
        return {
            "offset": self.start_code_offset,
            "start_code_len": self.start_code_len,
            "type": self.nal_unit_type,
            "kind": self.kind.value,
            "payload_len": self.payload_len,
        }


def _as_bytes(bitstream: Union[Bitstream, bytes, bytearray, memoryview]) -> bytes:
    if isinstance(bitstream, Bitstream):
        return bitstream.data
    return bytes(bitstream)


def scan_nalus(bitstream: Union[Bitstream, bytes]) -> List[NaluSpan]:
    """Index every NAL unit of an Annex-B stream, in order.

    A ``00 00 00 01`` sequence is always read as a 4-byte start code; any
    extra leading zero bytes (trailing_zero_8bits) stay in the previous
    unit's payload so the spans tile the input exactly.
    """
    data = _as_bytes(bitstream)
    n = len(data)
    if n == 0:
        raise NoStartCode("empty stream")
    if data.startswith(START_CODE_4):
        sc_off, sc_len = 0, 4
    elif data.startswith(START_CODE_3):
        sc_off, sc_len = 0, 3
    else:
        pos = data.find(START_CODE_3)
        if pos < 0:
            raise NoStartCode("no start code in stream")
        raise NoStartCode(f"stream does not begin with a start code (first one at byte {pos})")

    spans: List[NaluSpan] = []
    while True:
        header = sc_off + sc_len
        if header >= n:
            warnings.warn(
                f"start code at byte {sc_off} ends the stream", TruncatedNaluWarning, stacklevel=2
            )
            spans.append(NaluSpan(sc_off, sc_len, 0, 0, 0, truncated=True))
            break
        b0 = data[header]
        nxt = data.find(START_CODE_3, header + 1)
        if nxt < 0:
            end, next_len = n, 0
        elif nxt - 1 > header and data[nxt - 1] == 0:
            end, next_len = nxt - 1, 4
        else:
            end, next_len = nxt, 3
        spans.append(
            NaluSpan(
                start_code_offset=sc_off,
                start_code_len=sc_len,
                payload_len=end - header - 1,
                nal_ref_idc=(b0 >> 5) & 0x3,
                nal_unit_type=b0 & 0x1F,
                forbidden_bit=b0 >> 7,
            )
        )
        if next_len == 0:
            break
        sc_off, sc_len = end, next_len
    return spans


def serialize(data: bytes, spans: Sequence[NaluSpan]) -> bytes:
    """Rebuild a stream from its spans (start codes, headers, payloads)."""
    out = bytearray()
    for s in spans:
        out += START_CODE_4 if s.start_code_len == 4 else START_CODE_3
        if s.truncated:
            continue
        out += data[s.header_offset:s.payload_end]
    return bytes(out)


def nalu_index_json(spans: Iterable[NaluSpan]) -> str:
    return json.dumps([s.to_json() for s in spans], indent=1)


def _first_mb_is_zero(data: bytes, span: NaluSpan) -> bool:
    # first_mb_in_slice is ue(v); its value is 0 iff the first coded bit is 1
    if span.payload_len == 0:
        return True
    return bool(data[span.payload_offset] & 0x80)


@dataclass
class Gop:
    idr_frame_index: int
    # positions into GopIndex.frames, in bitstream order
    frame_indices: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frame_indices)


@dataclass
class GopIndex:
    gops: List[Gop]
    # NaluSpan indices of the VCL units; position in this list = frame number
    frames: List[int]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def gop_of_frame(self, frame: int) -> int:
        for gi, g in enumerate(self.gops):
            if g.frame_indices[0] <= frame <= g.frame_indices[-1]:
                return gi
        raise IndexError(frame)


def build_gop_index(nalus: Sequence[NaluSpan], data: Optional[bytes] = None) -> GopIndex:
    """Group VCL units into closed GOPs starting at each IDR slice.

    One VCL unit is one frame. When ``data`` is given, slices whose
    first_mb_in_slice is nonzero (i.e. continuation slices of a multi-slice
    picture) trigger a MultiSliceWarning.
    """
    frames = [i for i, s in enumerate(nalus) if s.is_vcl]
    if not any(nalus[i].kind is NaluKind.SLICE_IDR for i in frames):
        raise NoIdrFound("no IDR slice in stream")
    gops: List[Gop] = []
    for f, ni in enumerate(frames):
        span = nalus[ni]
        if data is not None and not _first_mb_is_zero(data, span):
            warnings.warn(
                f"NALU {ni} continues a multi-slice picture; treated as its own frame",
                MultiSliceWarning,
                stacklevel=2,
            )
        if span.kind is NaluKind.SLICE_IDR:
            gops.append(Gop(idr_frame_index=f))
        elif not gops:
            raise OrphanFrames(f"VCL NALU {ni} precedes the first IDR slice")
        gops[-1].frame_indices.append(f)
    return GopIndex(gops=gops, frames=frames)


def payload_fraction(nalus: Sequence[NaluSpan], total_len: Optional[int] = None) -> float:
    """Share of stream bytes that are VCL slice payload (header bytes excluded)."""
    if not nalus:
        return 0.0
    if total_len is None:
        total_len = nalus[-1].end
    if total_len == 0:
        return 0.0
    vcl = sum(s.payload_len for s in nalus if s.is_vcl)
    return vcl / total_len
