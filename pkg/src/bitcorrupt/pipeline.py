"""Branch builder: sources -> encode -> corrupt -> decode -> masks -> stats.

Layout of one branch directory::

    <branch>/manifest.json          written last, atomically
    <branch>/stats.json
    <branch>/<clip>/pristine.264
    <branch>/<clip>/corrupted.264
    <branch>/<clip>/orig_frames/<clip>_<W>x<H>.yuv
    <branch>/<clip>/corr_frames/<clip>_<W>x<H>.yuv   aligned to orig_frames
    <branch>/<clip>/masks/%05d.png
    <branch>/<clip>/corruption.json
    <branch>/<clip>/ratios.csv

Per-clip seeds are keyed BLAKE2b hashes of (master seed, clip id), so adding
or removing clips never changes another clip's corruption.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .analytics import BranchStats, BranchComparison, aggregate, compare_branches, read_ratios_csv, write_ratios_csv
from .annexb import Bitstream, NaluKind, scan_nalus
from .codec_io import CodecProfile, align_frames, decode, encode
from .corrupt import CorruptionLog, CorruptionParams, apply_corruption, apply_log
from .mask import MaskParams, mask_sequence, read_masks, write_masks
from .rng import keyed_seed
from .yuv import PathLike, frame_bytes, parse_yuv_name, read_yuv, write_yuv, yuv_name

log = logging.getLogger(__name__)

VIDEO_SUFFIXES = {".mp4", ".mkv", ".avi", ".mov", ".webm", ".m4v", ".ts", ".264", ".h264", ".y4m"}
ARTIFACT_KEYS = ("pristine", "corrupted", "orig_frames", "corr_frames", "masks", "corruption_log")


class BranchFailed(RuntimeError):
    """Every clip of a branch failed."""


class ManifestMissing(FileNotFoundError):
    pass


@dataclass
class BranchSpec:
    source_dir: Path
    params: CorruptionParams
    out_dir: Path
    mask_params: MaskParams = field(default_factory=MaskParams)
    parallelism: int = 1
    codec_profile: CodecProfile = field(default_factory=CodecProfile)
    allow_passthrough: bool = False

    def __post_init__(self):
        self.source_dir = Path(self.source_dir)
        self.out_dir = Path(self.out_dir)
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def discover_sources(source_dir: PathLike) -> Dict[str, Path]:
    """clip id -> source: raw ``<id>_WxH.yuv``, video files, or frame directories."""
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise FileNotFoundError(f"source directory not found: {source_dir}")
    found: Dict[str, Path] = {}
    for p in sorted(source_dir.iterdir()):
        if p.name.startswith("."):
            continue
        if p.is_dir():
            cid = p.name
        elif p.suffix == ".yuv":
            try:
                cid = parse_yuv_name(p)[0]
            except ValueError:
                cid = p.stem
        elif p.suffix.lower() in VIDEO_SUFFIXES:
            cid = p.stem
        else:
            continue
        if cid in found:
            raise ValueError(f"two sources map to clip id {cid!r}: {found[cid].name}, {p.name}")
        found[cid] = p
    if not found:
        raise FileNotFoundError(f"no sources in {source_dir}")
    return found


@dataclass
class BranchManifest:
    branch_id: str
    params: CorruptionParams
    codec_profile: CodecProfile
    mask_params: MaskParams
    master_seed: int
    clips: List[dict]
    failures: List[dict]
    stats_path: str
    tool_version: str = __version__
    fingerprint: str = ""
    created_at: str = ""

    def to_json(self) -> dict:
        return {
            "branch_id": self.branch_id,
            "params": self.params.to_json(),
            "master_seed": self.master_seed,
            "codec_profile": self.codec_profile.to_json(),
            "mask_params": self.mask_params.to_json(),
            "tool_version": self.tool_version,
            "fingerprint": self.fingerprint,
            "stats_path": self.stats_path,
            "clips": self.clips,
            "failures": self.failures,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BranchManifest":
        return cls(
            branch_id=d["branch_id"],
            params=CorruptionParams.from_json(d["params"]),
            codec_profile=CodecProfile.from_json(d["codec_profile"]),
            mask_params=MaskParams.from_json(d["mask_params"]),
            master_seed=d["master_seed"],
            clips=d["clips"],
            failures=d["failures"],
            stats_path=d["stats_path"],
            tool_version=d.get("tool_version", ""),
            fingerprint=d.get("fingerprint", ""),
            created_at=d.get("created_at", ""),
        )

    @classmethod
    def load(cls, path: PathLike) -> "BranchManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.is_file():
            raise ManifestMissing(f"no manifest at {path}")
        return cls.from_json(json.loads(path.read_text()))


def _fingerprint(spec: BranchSpec, sources: Dict[str, Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(
        {
            "params": spec.params.to_json(),
            "profile": spec.codec_profile.to_json(),
            "mask": spec.mask_params.to_json(),
            "passthrough": spec.allow_passthrough,
            "sources": {cid: [p.name, _source_size(p)] for cid, p in sources.items()},
        },
        sort_keys=True,
    ).encode())
    return h.hexdigest()


def _source_size(p: Path) -> int:
    if p.is_dir():
        return sum(f.stat().st_size for f in p.iterdir() if f.is_file())
    return p.stat().st_size


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def prepare_pristine(source: Path, dest: Path, clip_id: str, profile: CodecProfile) -> Tuple[Path, Path]:
    """Encode a source and decode the clean stream into ``dest``.

    Returns (pristine.264, orig_frames/<clip>_WxH.yuv).
    """
    dest.mkdir(parents=True, exist_ok=True)
    pristine = dest / "pristine.264"
    encode(source, profile, pristine)
    frames = decode(pristine, profile)
    if not frames:
        raise RuntimeError(f"{clip_id}: clean stream decoded to no frames")
    w, h = frames[0].size
    (dest / "orig_frames").mkdir(exist_ok=True)
    raw = dest / "orig_frames" / yuv_name(clip_id, w, h)
    write_yuv(raw, frames)
    return pristine, raw


def _process_clip(
    spec: BranchSpec, clip_id: str, source: Path, shared: Optional[Path]
) -> dict:
    clip_dir = spec.out_dir / clip_id
    if clip_dir.exists():
        shutil.rmtree(clip_dir)
    clip_dir.mkdir(parents=True)
    profile = spec.codec_profile
    if shared is not None:
        (clip_dir / "orig_frames").mkdir()
        src_raw = next((shared / clip_id / "orig_frames").glob("*.yuv"))
        shutil.copyfile(shared / clip_id / "pristine.264", clip_dir / "pristine.264")
        shutil.copyfile(src_raw, clip_dir / "orig_frames" / src_raw.name)
        pristine, orig_raw = clip_dir / "pristine.264", clip_dir / "orig_frames" / src_raw.name
    else:
        pristine, orig_raw = prepare_pristine(source, clip_dir, clip_id, profile)
    original = read_yuv(orig_raw)

    seed = keyed_seed(spec.params.seed, clip_id)
    params = spec.params.with_seed(seed)
    corrupted, clog = apply_corruption(Bitstream.read(pristine), params, spec.allow_passthrough)
    corrupted.write(clip_dir / "corrupted.264")
    clog.dump(clip_dir / "corruption.json")

    decoded = decode(clip_dir / "corrupted.264", profile)
    pairs = align_frames(original, decoded)
    (clip_dir / "corr_frames").mkdir()
    write_yuv(clip_dir / "corr_frames" / orig_raw.name, [c for _, c in pairs])

    masks = mask_sequence(pairs, spec.mask_params)
    write_masks(clip_dir / "masks", masks)
    write_ratios_csv(clip_dir / "ratios.csv", masks)
    rel = lambda p: Path(p).relative_to(spec.out_dir).as_posix()  # noqa: E731
    w, h = original[0].size
    return {
        "clip_id": clip_id,
        "source_path": str(source),
        "seed": seed,
        "frames": len(original),
        "decoded_frames": len(decoded),
        "width": w,
        "height": h,
        "placeholders": [i for i, (_, c) in enumerate(pairs) if c.placeholder],
        "corrupted_frames": [r.frame_index for r in clog.records],
        "removed_bytes": clog.removed_total,
        "artifacts": {
            "pristine": rel(pristine),
            "corrupted": rel(clip_dir / "corrupted.264"),
            "orig_frames": rel(orig_raw.parent),
            "corr_frames": rel(clip_dir / "corr_frames"),
            "masks": rel(clip_dir / "masks"),
            "corruption_log": rel(clip_dir / "corruption.json"),
        },
        "ratios_csv": rel(clip_dir / "ratios.csv"),
        "_masks": masks,
    }


def build_branch(spec: BranchSpec, resume: bool = False, shared: Optional[PathLike] = None) -> BranchManifest:
    """Build one dataset branch; ``shared`` points at precomputed pristine data.

    Clip failures are recorded in the manifest; BranchFailed is raised only
    when no clip succeeds.
    """
    sources = discover_sources(spec.source_dir)
    fp = _fingerprint(spec, sources)
    manifest_path = spec.out_dir / "manifest.json"
    if resume and manifest_path.exists():
        old = BranchManifest.load(manifest_path)
        if old.fingerprint == fp:
            log.info("branch %s already complete; nothing to do", old.branch_id)
            return old
        log.info("manifest fingerprint changed; rebuilding %s", spec.out_dir)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    if manifest_path.exists():
        manifest_path.unlink()
    shared = Path(shared) if shared is not None else None

    def run(item):
        cid, src = item
        try:
            return _process_clip(spec, cid, src, shared)
        except Exception as e:  # noqa: BLE001 - isolate per-clip failures
            log.warning("clip %s failed: %s", cid, e)
            shutil.rmtree(spec.out_dir / cid, ignore_errors=True)
            return {"clip_id": cid, "source_path": str(src), "error": f"{type(e).__name__}: {e}"}

    with ThreadPoolExecutor(max_workers=spec.parallelism) as pool:
        results = list(pool.map(run, sorted(sources.items())))
    clips = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    if not clips:
        raise BranchFailed(f"all {len(failures)} clips failed: " + "; ".join(f["error"] for f in failures))

    stats = aggregate({c["clip_id"]: c.pop("_masks") for c in clips})
    stats.dump(spec.out_dir / "stats.json")
    manifest = BranchManifest(
        branch_id=spec.params.branch_id,
        params=spec.params,
        codec_profile=spec.codec_profile,
        mask_params=spec.mask_params,
        master_seed=spec.params.seed,
        clips=clips,
        failures=failures,
        stats_path="stats.json",
        fingerprint=fp,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    _atomic_write(manifest_path, json.dumps(manifest.to_json(), indent=1) + "\n")
    return manifest


@dataclass
class Check:
    check: str
    clip: Optional[str]
    ok: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {"check": self.check, "clip": self.clip, "ok": self.ok, "detail": self.detail}


@dataclass
class VerificationReport:
    branch_dir: Path
    checks: List[Check]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failed(self, check: Optional[str] = None) -> List[Check]:
        return [c for c in self.checks if not c.ok and (check is None or c.check == check)]

    def to_json(self) -> dict:
        return {"branch_dir": str(self.branch_dir), "ok": self.ok, "checks": [c.to_json() for c in self.checks]}


def _check_accounting(root: Path, clip: dict) -> Check:
    a = clip["artifacts"]
    try:
        pristine = (root / a["pristine"]).read_bytes()
        corrupted = (root / a["corrupted"]).read_bytes()
        clog = CorruptionLog.load(root / a["corruption_log"])
    except (OSError, ValueError, KeyError) as e:
        return Check("byte_accounting", clip["clip_id"], False, f"unreadable: {e}")
    problems = []
    removed = clog.removed_total
    if clog.original_len != len(pristine):
        problems.append(f"original_len {clog.original_len} != pristine size {len(pristine)}")
    if clog.corrupted_len != len(corrupted):
        problems.append(f"corrupted_len {clog.corrupted_len} != corrupted size {len(corrupted)}")
    if clog.original_len - clog.corrupted_len != removed:
        problems.append(f"log does not balance: {clog.original_len} - {clog.corrupted_len} != {removed}")
    if not problems:
        spans = scan_nalus(pristine)
        for r in clog.records:
            s = spans[r.nalu_index]
            if not (s.kind.is_vcl and s.payload_offset <= r.removed_offset
                    and r.removed_offset + r.removed_len <= s.payload_end):
                problems.append(f"record for frame {r.frame_index} leaves its VCL payload")
        if apply_log(pristine, clog.records) != corrupted:
            problems.append("corrupted stream differs from pristine minus logged ranges")
    return Check("byte_accounting", clip["clip_id"], not problems, "; ".join(problems))


def _check_parity(root: Path, clip: dict) -> Check:
    a = clip["artifacts"]
    n = clip["frames"]
    problems = []
    for key in ("orig_frames", "corr_frames"):
        raws = sorted((root / a[key]).glob("*.yuv"))
        if len(raws) != 1:
            problems.append(f"{key}: expected one .yuv file")
            continue
        got = raws[0].stat().st_size // frame_bytes(clip["width"], clip["height"])
        if got != n:
            problems.append(f"{key}: {got} frames, expected {n}")
    mask_dir = root / a["masks"]
    present = {p.name for p in mask_dir.glob("*.png")} if mask_dir.is_dir() else set()
    missing = [k for k in range(n) if f"{k:05d}.png" not in present]
    if missing:
        problems.append("missing mask frames " + ",".join(str(k) for k in missing))
    extra = len(present) - (n - len(missing))
    if extra:
        problems.append(f"{extra} unexpected mask files")
    return Check("mask_frame_parity", clip["clip_id"], not problems, "; ".join(problems))


def verify_branch(manifest_path: PathLike) -> VerificationReport:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.is_file():
        raise ManifestMissing(f"no manifest at {manifest_path}")
    root = manifest_path.parent
    data = json.loads(manifest_path.read_text())
    checks: List[Check] = []

    referenced = {manifest_path.resolve(), (root / data["stats_path"]).resolve()}
    missing_paths = []
    for clip in data["clips"]:
        for key in ARTIFACT_KEYS:
            p = root / clip["artifacts"][key]
            if not p.exists():
                missing_paths.append(f"{clip['clip_id']}:{key}")
        referenced.add((root / clip["ratios_csv"]).resolve())
    checks.append(Check("paths_exist", None, not missing_paths, ", ".join(missing_paths)))

    masks_by_clip = {}
    for clip in data["clips"]:
        checks.append(_check_accounting(root, clip))
        parity = _check_parity(root, clip)
        checks.append(parity)
        if parity.ok:
            masks = read_masks(root / clip["artifacts"]["masks"])
            for k in clip.get("placeholders", []):
                masks[k].placeholder = True
            masks_by_clip[clip["clip_id"]] = masks
            csv_ok = (root / clip["ratios_csv"]).exists() and read_ratios_csv(root / clip["ratios_csv"]) == [
                m.area_ratio for m in masks
            ]
            checks.append(Check("ratios_csv", clip["clip_id"], csv_ok, "" if csv_ok else "ratios.csv disagrees with masks"))

    stats_file = root / data["stats_path"]
    if len(masks_by_clip) == len(data["clips"]) and stats_file.exists():
        recomputed = aggregate(masks_by_clip).to_json()
        stored = json.loads(stats_file.read_text())
        same = recomputed == stored
        checks.append(Check("stats_recompute", None, same, "" if same else "stats.json differs from recomputation"))
    else:
        checks.append(Check("stats_recompute", None, False, "skipped: masks or stats.json unavailable"))

    orphans = []
    for clip in data["clips"]:
        cdir = root / clip["clip_id"]
        allowed = {(root / clip["artifacts"][k]).resolve() for k in ARTIFACT_KEYS}
        for p in cdir.rglob("*") if cdir.is_dir() else []:
            rp = p.resolve()
            if rp in allowed or rp in referenced or any(q in rp.parents for q in allowed):
                continue
            orphans.append(p.relative_to(root).as_posix())
    checks.append(Check("no_orphans", None, not orphans, ", ".join(orphans)))
    return VerificationReport(root, checks)


@dataclass
class MatrixResult:
    manifests: List[BranchManifest]
    comparison: Optional[BranchComparison]


def branch_matrix(
    specs: Sequence[BranchSpec], shared_dir: Optional[PathLike] = None, resume: bool = False
) -> MatrixResult:
    """Build several branches over one corpus, encoding and decoding each clip once."""
    if not specs:
        raise ValueError("no branch specs")
    src = {s.source_dir.resolve() for s in specs}
    prof = {json.dumps(s.codec_profile.to_json(), sort_keys=True) for s in specs}
    if len(src) != 1 or len(prof) != 1:
        raise ValueError("matrix branches must share one source corpus and codec profile")
    first = specs[0]
    shared = Path(shared_dir) if shared_dir else first.out_dir.parent / "_shared"
    sources = discover_sources(first.source_dir)

    def prep(item):
        cid, path = item
        dest = shared / cid
        if (dest / "pristine.264").exists() and any((dest / "orig_frames").glob("*.yuv")):
            return
        try:
            prepare_pristine(path, dest, cid, first.codec_profile)
        except Exception as e:  # noqa: BLE001 - build_branch reports it per clip
            log.warning("clip %s: pristine preparation failed: %s", cid, e)
            shutil.rmtree(dest, ignore_errors=True)

    with ThreadPoolExecutor(max_workers=first.parallelism) as pool:
        list(pool.map(prep, sorted(sources.items())))
    manifests = [build_branch(s, resume=resume, shared=shared) for s in specs]
    stats = {}
    for s, m in zip(specs, manifests):
        p = s.params
        st = json.loads((s.out_dir / m.stats_path).read_text())
        stats[(p.p_num, p.p_den, p.location, p.frag_size)] = BranchStats.from_json(st)
    comparison = compare_branches(stats) if len(stats) >= 2 else None
    return MatrixResult(manifests, comparison)

