"""Test-side oracles and builders; nothing here imports the code under test."""
from typing import List, Tuple

import numpy as np

HEADERS = {"sps": 0x67, "pps": 0x68, "idr": 0x65, "p": 0x41, "sei": 0x06, "aud": 0x09}


def make_stream(kinds, payload_len=40, seed: int = 0) -> bytes:
    """Annex-B bytes with one NALU per entry of ``kinds``.

    Payload bytes are drawn from 0x10..0xff so no start code can appear, and
    the leading payload bit is 1 (first_mb_in_slice = 0). ``payload_len``
    is one length for all NALUs or a per-NALU list.
    """
    lens = [payload_len] * len(kinds) if isinstance(payload_len, int) else list(payload_len)
    rng = np.random.default_rng(seed)
    out = bytearray()
    for k, kind in enumerate(kinds):
        out += b"\x00\x00\x00\x01" if k == 0 or kind in ("sps", "pps") else b"\x00\x00\x01"
        out.append(HEADERS[kind])
        body = rng.integers(0x10, 0x100, lens[k], dtype=np.uint8)
        if lens[k]:
            body[0] |= 0x80
        out += body.tobytes()
    return bytes(out)


def reference_scan(data: bytes) -> List[Tuple[int, int, int, int]]:
    """Byte-at-a-time state machine: (start_code_offset, start_code_len, header, payload_len).

    A run of two or more zeros followed by 0x01 is a start code; it is four
    bytes long when at least three zeros precede the 0x01, and any further
    leading zeros belong to the previous NALU. A start code with no header
    byte after it is not reported.
    """
    starts = []
    zeros = 0
    i = 0
    skip_header = False
    while i < len(data):
        b = data[i]
        if skip_header:
            skip_header = False
            zeros = 0
        elif b == 0:
            zeros += 1
        elif b == 1 and zeros >= 2:
            n = 4 if zeros >= 3 else 3
            starts.append((i - n + 1, n))
            skip_header = True
            zeros = 0
        else:
            zeros = 0
        i += 1
    out = []
    for k, (off, n) in enumerate(starts):
        end = starts[k + 1][0] if k + 1 < len(starts) else len(data)
        header_at = off + n
        if header_at >= len(data):
            continue
        out.append((off, n, data[header_at], end - header_at - 1))
    return out


def _shifted(bits: np.ndarray, dy: int, dx: int, fill: bool) -> np.ndarray:
    """out[y, x] = bits[y + dy, x + dx], or ``fill`` where that falls outside."""
    h, w = bits.shape
    out = np.full_like(bits, fill)
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[yd, xd] = bits[ys, xs]
    return out


def brute_erode(bits: np.ndarray, r: int) -> np.ndarray:
    """AND over every offset of the (2r+1)^2 square; outside pixels never veto."""
    out = np.ones_like(bits, dtype=bool)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out &= _shifted(bits.astype(bool), dy, dx, True)
    return out


def brute_dilate(bits: np.ndarray, r: int) -> np.ndarray:
    out = np.zeros_like(bits, dtype=bool)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out |= _shifted(bits.astype(bool), dy, dx, False)
    return out


def brute_erode_loops(bits: np.ndarray, r: int) -> np.ndarray:
    """Per-pixel loop version, used to cross-check the offset version on small planes."""
    h, w = bits.shape
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(
                bits[yy, xx]
                for yy in range(y - r, y + r + 1)
                for xx in range(x - r, x + r + 1)
                if 0 <= yy < h and 0 <= xx < w
            )
    return out


def flood_components(bits: np.ndarray) -> List[List[Tuple[int, int]]]:
    """8-connected components of the True pixels, by explicit flood fill."""
    h, w = bits.shape
    seen = np.zeros_like(bits)
    comps = []
    for y in range(h):
        for x in range(w):
            if not bits[y, x] or seen[y, x]:
                continue
            stack, comp = [(y, x)], []
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                comp.append((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            comps.append(comp)
    return comps


def brute_clean(diff: np.ndarray, threshold=20, r_open=2, r_close=2, min_area=64) -> np.ndarray:
    bits = diff >= threshold
    bits = brute_dilate(brute_erode(bits, r_open), r_open)
    bits = brute_erode(brute_dilate(bits, r_close), r_close)
    out = np.zeros_like(bits)
    for comp in flood_components(bits):
        if len(comp) >= min_area:
            for y, x in comp:
                out[y, x] = True
    h, w = out.shape
    for comp in flood_components(~out):
        touches = any(y in (0, h - 1) or x in (0, w - 1) for y, x in comp)
        if not touches and len(comp) < min_area:
            for y, x in comp:
                out[y, x] = True
    return out


def brute_ssim(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Explicit sliding-window SSIM with a Gaussian window, valid positions only."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            pa = a[y:y + size, x:x + size]
            pb = b[y:y + size, x:x + size]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
