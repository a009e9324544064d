import os
import time
from pathlib import Path

import pytest

from bitcorrupt.codec_io import find_ffmpeg
from bitcorrupt.corrupt import CorruptionParams
from bitcorrupt.pipeline import BranchSpec, branch_matrix
from bitcorrupt.synth import write_corpus

from .helpers import ACCEPTANCE

HAVE_CODEC = find_ffmpeg() is not None
JOBS = min(os.cpu_count() or 1, 8)

# fixture corpus: 8 clips x 64 frames at 320x240, corpus seed 0, master seed 0
FIXTURE_SETTINGS = [(1, 16, 0.4, 4096), (2, 16, 0.4, 4096), (4, 16, 0.4, 4096)]


def pytest_collection_modifyitems(config, items):
    if HAVE_CODEC:
        return
    skip = pytest.mark.skip(reason="ffmpeg with libx264 not available")
    for item in items:
        if "codec" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def fixture_sources(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("fixture_src")
    write_corpus(d, clips=8, frames=64, width=320, height=240, seed=0)
    return d


@pytest.fixture(scope="session")
def fixture_matrix(tmp_path_factory, fixture_sources):
    """The three P branches at (0.4, 4096) built once per session."""
    if not HAVE_CODEC:
        pytest.skip("ffmpeg with libx264 not available")
    out = tmp_path_factory.mktemp("fixture_out")
    specs = [
        BranchSpec(fixture_sources, CorruptionParams(m, l, loc, s, seed=0), out / f"p{m}", parallelism=JOBS)
        for m, l, loc, s in FIXTURE_SETTINGS
    ]
    t0 = time.perf_counter()
    result = branch_matrix(specs, shared_dir=out / "_shared")
    return specs, result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def small_sources(tmp_path_factory) -> Path:
    """Four short clips for quick pipeline checks."""
    d = tmp_path_factory.mktemp("small_src")
    write_corpus(d, clips=4, frames=32, width=160, height=128, seed=3)
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
