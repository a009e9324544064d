"""Three-parameter (P, L, S) bitstream corruption.

P = m/l: within every l-frame window of a GOP, m frames are picked at random.
L: start of the removed fragment as a fraction of the slice payload.
S: fragment length in bytes (clamped at the payload end).

Only VCL slice payload bytes are ever removed; start codes, NAL headers and
non-VCL units (SPS, PPS, SEI, AUD) pass through untouched.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .annexb import Bitstream, GopIndex, NaluSpan, build_gop_index, scan_nalus
from .rng import SplitMix64, derive

log = logging.getLogger(__name__)


class CorruptionError(ValueError):
    pass


class ZeroPayload(CorruptionError):
    pass


class NoEligibleFrames(CorruptionError):
    pass


@dataclass(frozen=True)
class CorruptionParams:
    p_num: int
    p_den: int
    location: float
    frag_size: int
    seed: int = 0
    idr_eligible: bool = True
    bernoulli: bool = False

    def __post_init__(self):
        if not (isinstance(self.p_num, int) and isinstance(self.p_den, int)):
            raise TypeError("p_num and p_den must be integers")
        if not 0 < self.p_num <= self.p_den:
            raise ValueError(f"need 0 < m <= l, got {self.p_num}/{self.p_den}")
        if not 0.0 <= self.location <= 1.0:
            raise ValueError(f"location must be in [0, 1], got {self.location}")
        if self.frag_size < 1:
            raise ValueError("frag_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def p(self) -> str:
        return f"{self.p_num}/{self.p_den}"

    @property
    def branch_id(self) -> str:
        return f"({self.p}, {self.location:g}, {self.frag_size})"

    @property
    def slug(self) -> str:
        """Filesystem-safe branch name, e.g. ``p1-16_l0.4_s4096``."""
        tag = f"p{self.p_num}-{self.p_den}_l{self.location:g}_s{self.frag_size}"
        if not self.idr_eligible:
            tag += "_noidr"
        if self.bernoulli:
            tag += "_bern"
        return tag

    def with_seed(self, seed: int) -> "CorruptionParams":
        return CorruptionParams(**{**asdict(self), "seed": seed})

    @classmethod
    def parse(cls, p: str, location: float, frag_size: int, **kw) -> "CorruptionParams":
        num, _, den = p.partition("/")
        if not den:
            raise ValueError(f"P must look like m/l, got {p!r}")
        return cls(int(num), int(den), float(location), int(frag_size), **kw)

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "loc": self.location,
            "size": self.frag_size,
            "seed": self.seed,
            "exclude_idr": not self.idr_eligible,
            "mode": "bernoulli" if self.bernoulli else "exact",
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorruptionParams":
        return cls.parse(
            d["p"],
            d["loc"],
            d["size"],
            seed=d.get("seed", 0),
            idr_eligible=not d.get("exclude_idr", False),
            bernoulli=d.get("mode") == "bernoulli",
        )


# (m, l, L, S) of the seven branches
STANDARD_SETTINGS: Tuple[Tuple[int, int, float, int], ...] = (
    (1, 16, 0.4, 2048),
    (1, 16, 0.4, 8192),
    (1, 16, 0.4, 4096),
    (1, 16, 0.2, 4096),
    (1, 16, 0.8, 4096),
    (2, 16, 0.4, 4096),
    (4, 16, 0.4, 4096),
)


def standard_params(seed: int = 0) -> List[CorruptionParams]:
    return [CorruptionParams(m, l, loc, s, seed) for m, l, loc, s in STANDARD_SETTINGS]


@dataclass(frozen=True)
class CorruptionRecord:
    frame_index: int
    gop_index: int
    nalu_index: int
    removed_offset: int
    removed_len: int
    requested_len: int

    def to_json(self) -> dict:
        return {
            "frame": self.frame_index,
            "gop": self.gop_index,
            "nalu": self.nalu_index,
            "offset": self.removed_offset,
            "len": self.removed_len,
            "requested": self.requested_len,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorruptionRecord":
        return cls(d["frame"], d["gop"], d["nalu"], d["offset"], d["len"], d["requested"])


@dataclass
class CorruptionLog:
    params: CorruptionParams
    records: List[CorruptionRecord]
    original_len: int
    corrupted_len: int
    # frames selected but left alone because their payload was empty
    skipped: List[int] = field(default_factory=list)

    @property
    def removed_total(self) -> int:
        return sum(r.removed_len for r in self.records)

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "original_len": self.original_len,
            "corrupted_len": self.corrupted_len,
            "records": [r.to_json() for r in self.records],
            "skipped": list(self.skipped),
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorruptionLog":
        return cls(
            params=CorruptionParams.from_json(d["params"]),
            records=[CorruptionRecord.from_json(r) for r in d["records"]],
            original_len=d["original_len"],
            corrupted_len=d["corrupted_len"],
            skipped=list(d.get("skipped", [])),
        )

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CorruptionLog":
        return cls.from_json(json.loads(Path(path).read_text()))


def select_frames(gop_index: GopIndex, params: CorruptionParams) -> List[int]:
    """Global frame numbers to corrupt, ascending.

    Each GOP is cut into windows of l frames; window ``w`` of GOP ``g`` draws
    from its own SplitMix64 stream seeded with ``derive(seed, g, w)``, so any
    GOP can be planned independently of the others.
    """
    m, l = params.p_num, params.p_den
    chosen: List[int] = []
    for g, gop in enumerate(gop_index.gops):
        frames = gop.frame_indices
        for w, start in enumerate(range(0, len(frames), l)):
            window = frames[start:start + l]
            eligible = [f for f in window if params.idr_eligible or f != gop.idr_frame_index]
            if not eligible:
                continue
            rng = SplitMix64(derive(params.seed, g, w))
            if params.bernoulli:
                chosen.extend(f for f in eligible if rng.below(l) < m)
            else:
                chosen.extend(rng.sample(eligible, m))
    return sorted(chosen)


def _exact_fraction(x: float) -> Fraction:
    # shortest decimal repr, so 0.4 * 10000 is exactly 4000
    return Fraction(repr(float(x)))


def plan_fragment(nalu: NaluSpan, location: float, frag_size: int) -> Tuple[int, int]:
    """(removed_offset, removed_len) for one selected slice."""
    if nalu.payload_len <= 0:
        raise ZeroPayload(f"NALU at byte {nalu.start_code_offset} has no payload")
    rel = math.floor(_exact_fraction(location) * nalu.payload_len)
    rel = min(rel, nalu.payload_len - 1)
    offset = nalu.payload_offset + rel
    return offset, min(frag_size, nalu.payload_end - offset)


def plan_corruption(
    nalus: Sequence[NaluSpan], gop_index: GopIndex, params: CorruptionParams
) -> Tuple[List[CorruptionRecord], List[int]]:
    records: List[CorruptionRecord] = []
    skipped: List[int] = []
    gop_of = {}
    for g, gop in enumerate(gop_index.gops):
        for f in gop.frame_indices:
            gop_of[f] = g
    for f in select_frames(gop_index, params):
        ni = gop_index.frames[f]
        try:
            off, n = plan_fragment(nalus[ni], params.location, params.frag_size)
        except ZeroPayload:
            log.info("frame %d has an empty slice payload; left intact", f)
            skipped.append(f)
            continue
        records.append(CorruptionRecord(f, gop_of[f], ni, off, n, params.frag_size))
    return records, skipped


def apply_log(data: bytes, records: Iterable[CorruptionRecord]) -> bytes:
    """Remove every logged byte range from ``data``."""
    out = bytearray()
    pos = 0
    for r in sorted(records, key=lambda r: r.removed_offset):
        if r.removed_offset < pos:
            raise CorruptionError("overlapping corruption records")
        out += data[pos:r.removed_offset]
        pos = r.removed_offset + r.removed_len
    out += data[pos:]
    return bytes(out)


def apply_corruption(
    bitstream: Union[Bitstream, bytes],
    params: CorruptionParams,
    allow_passthrough: bool = False,
) -> Tuple[Bitstream, CorruptionLog]:
    if not isinstance(bitstream, Bitstream):
        bitstream = Bitstream(bytes(bitstream))
    data = bitstream.data
    nalus = scan_nalus(data)
    gops = build_gop_index(nalus)
    records, skipped = plan_corruption(nalus, gops, params)
    if not records and not allow_passthrough:
        raise NoEligibleFrames(f"{params.branch_id} selected no frames (seed {params.seed})")
    out = apply_log(data, records)
    clog = CorruptionLog(params, records, len(data), len(out), skipped)
    assert clog.corrupted_len == clog.original_len - clog.removed_total
    return Bitstream(out, None), clog
