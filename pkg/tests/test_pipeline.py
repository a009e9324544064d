import json
import shutil

import numpy as np
import pytest

from bitcorrupt.analytics import BranchStats
from bitcorrupt.corrupt import CorruptionLog, CorruptionParams
from bitcorrupt.mask import read_masks
from bitcorrupt.pipeline import (
    ARTIFACT_KEYS,
    BranchFailed,
    BranchManifest,
    BranchSpec,
    ManifestMissing,
    branch_matrix,
    build_branch,
    discover_sources,
    verify_branch,
)
from bitcorrupt.quality import evaluate_clip
from bitcorrupt.recover import RecoveryInput, recover_identity, recover_temporal
from bitcorrupt.synth import synth_clip
from bitcorrupt.yuv import read_yuv, write_yuv, yuv_name

pytestmark = pytest.mark.codec

P = CorruptionParams(2, 16, 0.4, 1024, seed=21)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def branch(tmp_path_factory, small_sources):
    out = tmp_path_factory.mktemp("branch")
    spec = BranchSpec(small_sources, P, out / "b")
    return spec, build_branch(spec)


def test_branch_layout(branch):
    spec, man = branch
    assert [c["clip_id"] for c in man.clips] == ["clip00", "clip01", "clip02", "clip03"]
    assert man.failures == []
    for c in man.clips:
        assert set(c["artifacts"]) == set(ARTIFACT_KEYS)
        for rel in c["artifacts"].values():
            assert (spec.out_dir / rel).exists()
        assert len(read_masks(spec.out_dir / c["artifacts"]["masks"])) == c["frames"] == 32
        clog = CorruptionLog.load(spec.out_dir / c["artifacts"]["corruption_log"])
        assert clog.params.seed == c["seed"]
        assert [r.frame_index for r in clog.records] == c["corrupted_frames"]
    stats = BranchStats.load(spec.out_dir / "stats.json")
    assert stats.frame_count == 4 * 32
    assert BranchManifest.load(spec.out_dir).to_json() == man.to_json()


def test_verify_passes(branch):
    spec, _ = branch
    rep = verify_branch(spec.out_dir / "manifest.json")
    assert rep.ok, [c.to_json() for c in rep.failed()]


def test_rebuild_is_byte_identical(branch, tmp_path):
    spec, _ = branch
    again = BranchSpec(spec.source_dir, P, tmp_path / "b", parallelism=3)
    build_branch(again)
    a, b = tree_bytes(spec.out_dir), tree_bytes(again.out_dir)
    a.pop("manifest.json")
    b.pop("manifest.json")
    assert a == b


def test_resume_does_no_work(branch):
    spec, man = branch
    before = {p: p.stat().st_mtime_ns for p in spec.out_dir.rglob("*")}
    man2 = build_branch(spec, resume=True)
    assert man2.to_json() == man.to_json()
    assert {p: p.stat().st_mtime_ns for p in spec.out_dir.rglob("*")} == before


def test_clip_seeds_independent_of_corpus(branch, tmp_path):
    spec, man = branch
    src = tmp_path / "src"
    src.mkdir()
    shutil.copy(spec.source_dir / yuv_name("clip02", 160, 128), src)
    solo = build_branch(BranchSpec(src, P, tmp_path / "solo"))
    full = {c["clip_id"]: c for c in man.clips}
    assert solo.clips[0]["seed"] == full["clip02"]["seed"]
    assert (tmp_path / "solo/clip02/corrupted.264").read_bytes() == (spec.out_dir / "clip02/corrupted.264").read_bytes()


def test_bad_source_is_isolated(small_sources, tmp_path):
    src = tmp_path / "src"
    shutil.copytree(small_sources, src)
    (src / "broken.mp4").write_bytes(b"not a video at all")
    man = build_branch(BranchSpec(src, P, tmp_path / "b"))
    assert [f["clip_id"] for f in man.failures] == ["broken"]
    assert len(man.clips) == 4
    assert not (tmp_path / "b" / "broken").exists()
    assert verify_branch(tmp_path / "b").ok


def test_all_sources_bad(tmp_path):
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "x.mp4").write_bytes(b"junk")
    with pytest.raises(BranchFailed):
        build_branch(BranchSpec(tmp_path / "src", P, tmp_path / "b"))


def test_discover_sources_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        discover_sources(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        discover_sources(tmp_path / "empty")


def _copy_branch(spec, dest):
    shutil.copytree(spec.out_dir, dest)
    return dest


def test_verify_detects_truncated_bitstream(branch, tmp_path):
    root = _copy_branch(branch[0], tmp_path / "b")
    f = root / "clip01" / "corrupted.264"
    f.write_bytes(f.read_bytes()[:-100])
    rep = verify_branch(root)
    assert not rep.ok
    assert {(c.check, c.clip) for c in rep.failed()} == {("byte_accounting", "clip01")}


def test_verify_detects_deleted_mask(branch, tmp_path):
    root = _copy_branch(branch[0], tmp_path / "b")
    (root / "clip03" / "masks" / "00007.png").unlink()
    rep = verify_branch(root)
    bad = rep.failed()
    assert ("mask_frame_parity", "clip03") in {(c.check, c.clip) for c in bad}
    assert all(c.clip in ("clip03", None) for c in bad)
    assert "7" in rep.failed("mask_frame_parity")[0].detail


def test_verify_detects_orphans_and_stats_drift(branch, tmp_path):
    root = _copy_branch(branch[0], tmp_path / "b")
    (root / "clip00" / "stray.bin").write_bytes(b"x")
    stats = json.loads((root / "stats.json").read_text())
    stats["frame_count"] += 1
    (root / "stats.json").write_text(json.dumps(stats))
    rep = verify_branch(root)
    assert {c.check for c in rep.failed()} == {"no_orphans", "stats_recompute"}


def test_verify_without_manifest(tmp_path):
    with pytest.raises(ManifestMissing):
        verify_branch(tmp_path)


def test_matrix_shares_pristine(small_sources, tmp_path):
    specs = [BranchSpec(small_sources, CorruptionParams(m, 16, 0.4, 1024, seed=1), tmp_path / f"m{m}") for m in (1, 4)]
    res = branch_matrix(specs, shared_dir=tmp_path / "shared")
    assert len(res.manifests) == 2 and res.comparison is not None
    for c1, c4 in zip(res.manifests[0].clips, res.manifests[1].clips):
        assert (tmp_path / "m1" / c1["artifacts"]["pristine"]).read_bytes() == (
            tmp_path / "m4" / c4["artifacts"]["pristine"]).read_bytes()
        assert set(c1["corrupted_frames"]) <= set(c4["corrupted_frames"])
    assert all(verify_branch(s.out_dir).ok for s in specs)


def test_temporal_beats_identity_on_static_scenes(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(2):
        write_yuv(src / yuv_name(f"still{i}", 160, 128), synth_clip(160, 128, 32, seed=40 + i, static=True))
    spec = BranchSpec(src, CorruptionParams(1, 16, 0.4, 1024, seed=5), tmp_path / "b")
    man = build_branch(spec)
    for c in man.clips:
        ref = read_yuv(next((spec.out_dir / c["artifacts"]["orig_frames"]).glob("*.yuv")))
        cor = read_yuv(next((spec.out_dir / c["artifacts"]["corr_frames"]).glob("*.yuv")))
        inp = RecoveryInput(cor, read_masks(spec.out_dir / c["artifacts"]["masks"]))
        ident = evaluate_clip(c["clip_id"], recover_identity(inp), ref).per_clip_mean[0]
        temp = evaluate_clip(c["clip_id"], recover_temporal(inp), ref).per_clip_mean[0]
        assert ident <= temp
