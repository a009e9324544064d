"""Command line entry point: ``bitcorrupt <command> ...``.

Exit codes: 0 success, 1 partial failure, 2 total failure, 3 environment
error (no usable encoder/decoder).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .analytics import aggregate, write_ratios_csv
from .annexb import AnnexBError, Bitstream, build_gop_index, nalu_index_json, payload_fraction, scan_nalus
from .codec_io import CodecError, CodecProfile, DecoderUnavailable, EncoderUnavailable, align_frames, decode, encode
from .corrupt import CorruptionParams, NoEligibleFrames, STANDARD_SETTINGS, apply_corruption
from .mask import MaskParams, mask_sequence, read_masks, write_masks
from .pipeline import BranchFailed, BranchManifest, BranchSpec, ManifestMissing, branch_matrix, build_branch, verify_branch
from .quality import InventoryMismatch, evaluate_set
from .recover import METHODS, RecoveryInput
from .synth import write_corpus
from .yuv import load_frames, write_png_dir, write_y4m, write_yuv, yuv_name

log = logging.getLogger("bitcorrupt")

EXIT_OK, EXIT_PARTIAL, EXIT_FAIL, EXIT_ENV = 0, 1, 2, 3


def _load_config(path: Optional[str]):
    if not path:
        return CodecProfile(), MaskParams()
    d = json.loads(Path(path).read_text())
    profile = CodecProfile.from_json(d.get("codec_profile", {}))
    masks = MaskParams.from_json(d.get("mask_params", {}))
    return profile, masks


def _mask_params(args, base: MaskParams) -> MaskParams:
    over = {k: getattr(args, k) for k in ("threshold", "open_radius", "close_radius", "min_component_area")
            if getattr(args, k, None) is not None}
    if getattr(args, "chroma", False):
        over["chroma"] = True
    return MaskParams(**{**base.to_json(), **over})


def _params(args) -> CorruptionParams:
    return CorruptionParams.parse(
        args.p, args.loc, args.size, seed=args.seed,
        idr_eligible=not args.exclude_idr, bernoulli=args.bernoulli,
    )


def cmd_inspect(args) -> int:
    data = Path(args.file).read_bytes()
    spans = scan_nalus(data)
    if args.json:
        Path(args.json).write_text(nalu_index_json(spans) + "\n")
    if not args.quiet:
        for i, s in enumerate(spans):
            print(f"{i:5d} @{s.start_code_offset:9d} sc={s.start_code_len} type={s.nal_unit_type:2d} "
                  f"{s.kind.value:12s} ref={s.nal_ref_idc} payload={s.payload_len}")
    print(f"nalus={len(spans)} bytes={len(data)} payload_fraction={payload_fraction(spans, len(data)):.6f}")
    try:
        gi = build_gop_index(spans, data)
        print(f"frames={gi.frame_count} gops={len(gi.gops)} sizes={[len(g) for g in gi.gops]}")
    except AnnexBError as e:
        print(f"gop index unavailable: {e}")
    return EXIT_OK


def cmd_encode(args) -> int:
    profile, _ = _load_config(args.config)
    bs = encode(args.input, profile, args.out)
    print(f"wrote {args.out} ({len(bs)} bytes)")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    params = _params(args)
    src = Bitstream.read(args.input)
    try:
        out, clog = apply_corruption(src, params, allow_passthrough=args.allow_passthrough)
    except NoEligibleFrames as e:
        log.error("%s (use --allow-passthrough to accept an unmodified stream)", e)
        return EXIT_FAIL
    out.write(args.out)
    if args.log:
        clog.dump(args.log)
    print(f"{params.branch_id}: {len(clog.records)} fragments, {clog.removed_total} bytes removed "
          f"({clog.original_len} -> {clog.corrupted_len})")
    return EXIT_OK


def _write_frames(frames, out: str, stem: str = "decoded") -> None:
    p = Path(out)
    if p.suffix == ".y4m":
        write_y4m(p, frames)
    elif p.suffix == ".yuv":
        write_yuv(p, frames)
    else:
        p.mkdir(parents=True, exist_ok=True)
        w, h = frames[0].size
        write_yuv(p / yuv_name(stem, w, h), frames)


def cmd_decode(args) -> int:
    profile, _ = _load_config(args.config)
    frames = decode(args.input, profile)
    if not frames:
        log.error("decoder produced no frames")
        return EXIT_FAIL
    _write_frames(frames, args.out, Path(args.input).stem)
    if args.png:
        write_png_dir(args.png, frames)
    print(f"decoded {len(frames)} frames of {frames[0].width}x{frames[0].height}")
    return EXIT_OK


def cmd_mask(args) -> int:
    _, base = _load_config(args.config)
    params = _mask_params(args, base)
    pairs = align_frames(load_frames(args.orig), load_frames(args.corr))
    masks = mask_sequence(pairs, params)
    write_masks(args.out, masks)
    if args.ratios:
        write_ratios_csv(args.ratios, masks)
    st = aggregate({"clip": masks})
    print(f"{len(masks)} masks, corrupted_frame_fraction={st.corrupted_frame_fraction:.4f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    branch = Path(args.branch)
    manifest = BranchManifest.load(branch)
    masks = {}
    for c in manifest.clips:
        ms = read_masks(branch / c["artifacts"]["masks"])
        for k in c.get("placeholders", []):
            ms[k].placeholder = True
        masks[c["clip_id"]] = ms
    st = aggregate(masks)
    out = Path(args.out) if args.out else branch / manifest.stats_path
    st.dump(out)
    print(json.dumps({k: v for k, v in st.to_json().items() if k != "per_video"}, indent=1))
    return EXIT_OK


def _spec(args, params: CorruptionParams, out: Path) -> BranchSpec:
    profile, base = _load_config(args.config)
    return BranchSpec(
        source_dir=Path(args.src), params=params, out_dir=out, mask_params=_mask_params(args, base),
        parallelism=args.jobs, codec_profile=profile, allow_passthrough=args.allow_passthrough,
    )


def _report_manifest(m: BranchManifest) -> int:
    print(f"{m.branch_id}: {len(m.clips)} clips built, {len(m.failures)} failed")
    for f in m.failures:
        print(f"  failed {f['clip_id']}: {f['error']}")
    return EXIT_PARTIAL if m.failures else EXIT_OK


def cmd_branch(args) -> int:
    spec = _spec(args, _params(args), Path(args.out))
    return _report_manifest(build_branch(spec, resume=args.resume))


def cmd_matrix(args) -> int:
    settings = args.setting or [f"{m}/{l},{loc},{s}" for m, l, loc, s in STANDARD_SETTINGS]
    root = Path(args.out)
    specs = []
    for item in settings:
        p, loc, size = item.split(",")
        params = CorruptionParams.parse(p, float(loc), int(size), seed=args.seed,
                                        idr_eligible=not args.exclude_idr, bernoulli=args.bernoulli)
        specs.append(_spec(args, params, root / params.slug))
    result = branch_matrix(specs, shared_dir=root / "_shared", resume=args.resume)
    codes = [_report_manifest(m) for m in result.manifests]
    if result.comparison is not None:
        (root / "comparison.json").write_text(json.dumps(result.comparison.to_json(), indent=1) + "\n")
        for r in result.comparison.rows:
            print(f"  {r['branch']:22s} fraction={r['corrupted_frame_fraction']:.4f} "
                  f"mean_ratio={r['mean_area_ratio']:.5f}")
    return max(codes)


def cmd_verify(args) -> int:
    rep = verify_branch(args.branch)
    for c in rep.checks:
        where = f" [{c.clip}]" if c.clip else ""
        print(f"{'PASS' if c.ok else 'FAIL'} {c.check}{where} {c.detail}".rstrip())
    if args.out:
        Path(args.out).write_text(json.dumps(rep.to_json(), indent=1) + "\n")
    return EXIT_OK if rep.ok else EXIT_PARTIAL


def cmd_eval(args) -> int:
    rep = evaluate_set(args.rec, args.ref)
    rep.dump(args.out)
    s = rep.to_json()["set"]
    print(f"PSNR={s['psnr_db']} SSIM={s['ssim']:.4f} frames={s['frames']} infinite={s['infinite_psnr_frames']}")
    return EXIT_OK


def cmd_recover(args) -> int:
    branch = Path(args.input)
    manifest = BranchManifest.load(branch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    method = METHODS[args.method]
    for c in manifest.clips:
        frames = load_frames(branch / c["artifacts"]["corr_frames"])
        masks = read_masks(branch / c["artifacts"]["masks"])
        rec = method(RecoveryInput(frames, masks, c["clip_id"]))
        write_yuv(out / yuv_name(c["clip_id"], c["width"], c["height"]), rec)
    print(f"{args.method}: recovered {len(manifest.clips)} clips into {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    paths = write_corpus(args.out, clips=args.clips, frames=args.frames, width=args.width,
                         height=args.height, seed=args.seed)
    print(f"wrote {len(paths)} clips to {args.out}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON with codec_profile / mask_params")
    p.add_argument("--seed", type=int, default=d(0), help="master seed (64-bit)")
    p.add_argument("--jobs", type=int, default=d(1), help="parallel clips")
    p.add_argument("--resume", action="store_true", default=d(False), help="skip completed branches")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _add_params(p: argparse.ArgumentParser, with_p: bool = True) -> None:
    if with_p:
        p.add_argument("--p", required=True, help="corruption probability m/l, e.g. 1/16")
        p.add_argument("--loc", type=float, required=True, help="fragment start, fraction of payload")
        p.add_argument("--size", type=int, required=True, help="fragment size in bytes")
    p.add_argument("--exclude-idr", action="store_true")
    p.add_argument("--bernoulli", action="store_true", help="per-frame coin flips instead of exactly m of l")
    p.add_argument("--allow-passthrough", action="store_true",
                   help="accept streams where no frame was selected")


def _add_mask_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=int)
    p.add_argument("--open-radius", type=int)
    p.add_argument("--close-radius", type=int)
    p.add_argument("--min-component-area", type=int)
    p.add_argument("--chroma", action="store_true", help="also difference chroma planes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bitcorrupt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        _add_common(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("inspect", cmd_inspect, "list NAL units, GOPs and payload share")
    p.add_argument("file")
    p.add_argument("--json", help="write the NALU index as JSON")
    p.add_argument("-q", "--quiet", action="store_true")

    p = add("synth", cmd_synth, "write a synthetic raw-YUV test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)

    p = add("encode", cmd_encode, "encode frames to an Annex-B stream")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("corrupt", cmd_corrupt, "apply the (P, L, S) corruption model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="corruption log JSON")
    _add_params(p)

    p = add("decode", cmd_decode, "decode a (possibly corrupted) stream")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help=".yuv, .y4m, or a directory")
    p.add_argument("--png", help="also write RGB PNGs here")

    p = add("mask", cmd_mask, "error masks from original/corrupted frames")
    p.add_argument("--orig", required=True)
    p.add_argument("--corr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", help="per-frame ratios CSV")
    _add_mask_opts(p)

    p = add("stats", cmd_stats, "recompute branch statistics from masks")
    p.add_argument("--branch", required=True)
    p.add_argument("--out")

    p = add("branch", cmd_branch, "build one dataset branch")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    _add_params(p)
    _add_mask_opts(p)

    p = add("matrix", cmd_matrix, "build several branches over one corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--setting", action="append", help="m/l,L,S (repeatable; default: the seven standard settings)")
    _add_params(p, with_p=False)
    _add_mask_opts(p)

    p = add("verify", cmd_verify, "re-check a built branch")
    p.add_argument("branch")
    p.add_argument("--out", help="write the report as JSON")

    p = add("eval", cmd_eval, "PSNR/SSIM of recovered vs reference clips")
    p.add_argument("--rec", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)

    p = add("recover", cmd_recover, "run a baseline recovery over a branch")
    p.add_argument("--method", choices=sorted(METHODS), required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (EncoderUnavailable, DecoderUnavailable) as e:
        log.error("%s", e)
        return EXIT_ENV
    except (BranchFailed, CodecError, AnnexBError, ManifestMissing, InventoryMismatch, FileNotFoundError, ValueError) as e:
        log.error("%s", e)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
