"""Corruption statistics over error masks.

Levels follow the corrupted-area-ratio bands 0 / (0, 0.10] / (0.10, 0.30] /
above 0.30; a ratio sitting exactly on 0.10 or 0.30 goes to the lower level.
The ratio histogram has a dedicated zero bin plus 20 bins of width 0.05,
each closed on the right: (0, 0.05], (0.05, 0.10], ..., (0.95, 1].
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .mask import ErrorMask

N_BINS = 20
BOUNDARY_CONVENTION = "upper-inclusive: 0.10 -> Min, 0.30 -> Mod"
BIN_SCHEME = "zero bin + 20 bins of width 0.05, right-closed"


class OutOfRange(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class CorruptionLevel(str, Enum):
    UNC = "Unc"
    MIN = "Min"
    MOD = "Mod"
    SEV = "Sev"


LEVELS = tuple(CorruptionLevel)


def classify(ratio: float) -> CorruptionLevel:
    if not 0.0 <= ratio <= 1.0:
        raise OutOfRange(f"ratio {ratio} outside [0, 1]")
    if ratio == 0.0:
        return CorruptionLevel.UNC
    if ratio <= 0.10:
        return CorruptionLevel.MIN
    if ratio <= 0.30:
        return CorruptionLevel.MOD
    return CorruptionLevel.SEV


def _classify_count(count: int, area: int) -> CorruptionLevel:
    # integer comparisons so 3/10 of an area is never nudged across a band
    if count == 0:
        return CorruptionLevel.UNC
    if 10 * count <= area:
        return CorruptionLevel.MIN
    if 10 * count <= 3 * area:
        return CorruptionLevel.MOD
    return CorruptionLevel.SEV


def ratio_bin(count: int, area: int) -> int:
    """0 for the zero bin, else 1..20."""
    if count == 0:
        return 0
    return min(-(-count * N_BINS // area), N_BINS)


@dataclass
class ClipSummary:
    clip_id: str
    frames: int
    corrupted_frames: int
    ratio_sum: float
    max_ratio: float

    @property
    def mean_ratio(self) -> float:
        return self.ratio_sum / self.frames if self.frames else 0.0

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "frames": self.frames,
            "corrupted_frames": self.corrupted_frames,
            "mean_ratio": self.mean_ratio,
            "ratio_sum": self.ratio_sum,
            "max_ratio": self.max_ratio,
        }


@dataclass
class BranchStats:
    frame_count: int = 0
    level_histogram: Dict[str, int] = field(default_factory=lambda: {lv.value: 0 for lv in LEVELS})
    ratio_histogram: List[int] = field(default_factory=lambda: [0] * (N_BINS + 1))
    ratio_sum: float = 0.0
    per_video: List[ClipSummary] = field(default_factory=list)
    placeholder_frames: int = 0

    @property
    def corrupted_frame_fraction(self) -> float:
        if not self.frame_count:
            return 0.0
        return 1.0 - self.level_histogram[CorruptionLevel.UNC.value] / self.frame_count

    @property
    def mean_area_ratio(self) -> float:
        return self.ratio_sum / self.frame_count if self.frame_count else 0.0

    def merge(self, other: "BranchStats") -> "BranchStats":
        per_video = sorted(self.per_video + other.per_video, key=lambda c: c.clip_id)
        return BranchStats(
            frame_count=self.frame_count + other.frame_count,
            level_histogram={k: self.level_histogram[k] + other.level_histogram[k] for k in self.level_histogram},
            ratio_histogram=[a + b for a, b in zip(self.ratio_histogram, other.ratio_histogram)],
            ratio_sum=_sum_ratios(per_video) if per_video else self.ratio_sum + other.ratio_sum,
            per_video=per_video,
            placeholder_frames=self.placeholder_frames + other.placeholder_frames,
        )

    def to_json(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "corrupted_frame_fraction": self.corrupted_frame_fraction,
            "mean_area_ratio": self.mean_area_ratio,
            "ratio_sum": self.ratio_sum,
            "level_histogram": dict(self.level_histogram),
            "ratio_histogram": list(self.ratio_histogram),
            "placeholder_frames": self.placeholder_frames,
            "per_video": [c.to_json() for c in self.per_video],
            "meta": {"level_boundaries": BOUNDARY_CONVENTION, "bins": BIN_SCHEME},
        }

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def from_json(cls, d: dict) -> "BranchStats":
        clips = [
            ClipSummary(c["clip_id"], c["frames"], c["corrupted_frames"], c["ratio_sum"], c["max_ratio"])
            for c in d["per_video"]
        ]
        return cls(
            frame_count=d["frame_count"],
            level_histogram=dict(d["level_histogram"]),
            ratio_histogram=list(d["ratio_histogram"]),
            ratio_sum=d["ratio_sum"],
            per_video=clips,
            placeholder_frames=d.get("placeholder_frames", 0),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BranchStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def _sum_ratios(clips: Sequence[ClipSummary]) -> float:
    # fixed summation order (by clip id) keeps the float result independent of merge order
    return sum(c.ratio_sum for c in sorted(clips, key=lambda c: c.clip_id))


def clip_stats(clip_id: str, masks: Sequence[ErrorMask]) -> BranchStats:
    st = BranchStats()
    ratios = []
    for m in masks:
        count, area = m.count, m.area
        st.frame_count += 1
        st.level_histogram[_classify_count(count, area).value] += 1
        st.ratio_histogram[ratio_bin(count, area)] += 1
        st.placeholder_frames += int(m.placeholder)
        ratios.append(count / area)
    st.ratio_sum = sum(ratios)
    st.per_video.append(
        ClipSummary(clip_id, len(masks), sum(r > 0 for r in ratios), st.ratio_sum, max(ratios, default=0.0))
    )
    return st


def aggregate(masks_by_clip: Mapping[str, Sequence[ErrorMask]]) -> BranchStats:
    if not masks_by_clip or not any(len(m) for m in masks_by_clip.values()):
        raise EmptyInput("no masks to aggregate")
    total = BranchStats()
    for clip_id in sorted(masks_by_clip):
        total = total.merge(clip_stats(clip_id, masks_by_clip[clip_id]))
    return total


def write_ratios_csv(path: Union[str, Path], masks: Sequence[ErrorMask]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "ratio"])
        for k, m in enumerate(masks):
            w.writerow([k, repr(m.area_ratio)])


def read_ratios_csv(path: Union[str, Path]) -> List[float]:
    with open(path, newline="") as f:
        return [float(r["ratio"]) for r in csv.DictReader(f)]


@dataclass
class BranchComparison:
    rows: List[dict]
    # trend checks over P = m/l among branches that share (l, L, S)
    fraction_nondecreasing_in_m: Optional[bool]
    ratio_nondecreasing_in_m: Optional[bool]

    def to_json(self) -> dict:
        return {
            "branches": self.rows,
            "fraction_nondecreasing_in_m": self.fraction_nondecreasing_in_m,
            "ratio_nondecreasing_in_m": self.ratio_nondecreasing_in_m,
        }


def compare_branches(stats: Mapping[Tuple[int, int, float, int], BranchStats]) -> BranchComparison:
    """Summarize branches keyed by (m, l, L, S) and check the trend in m."""
    if len(stats) < 2:
        raise ValueError("need at least two branches to compare")
    rows = []
    for key in sorted(stats):
        m, l, loc, s = key
        st = stats[key]
        rows.append(
            {
                "branch": f"({m}/{l}, {loc:g}, {s})",
                "m": m, "l": l, "loc": loc, "size": s,
                "corrupted_frame_fraction": st.corrupted_frame_fraction,
                "mean_area_ratio": st.mean_area_ratio,
            }
        )
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault((r["l"], r["loc"], r["size"]), []).append(r)
    frac_ok = ratio_ok = None
    for g in groups.values():
        if len({r["m"] for r in g}) < 2:
            continue
        g = sorted(g, key=lambda r: r["m"])
        f = all(a["corrupted_frame_fraction"] <= b["corrupted_frame_fraction"] for a, b in zip(g, g[1:]))
        q = all(a["mean_area_ratio"] <= b["mean_area_ratio"] for a, b in zip(g, g[1:]))
        frac_ok = f if frac_ok is None else frac_ok and f
        ratio_ok = q if ratio_ok is None else ratio_ok and q
    return BranchComparison(rows, frac_ok, ratio_ok)
