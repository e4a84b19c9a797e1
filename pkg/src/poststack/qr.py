"""QR decoder for clean, axis-aligned codes: versions 1-4, byte mode,
EC levels L/M.

Pipeline: grayscale image -> mean-threshold binarization -> finder
pattern location (1:1:3:1:1 run ratios) -> module sampling -> format
info (BCH(15,5)) -> unmask -> zigzag codeword read -> Reed-Solomon
syndrome verification over GF(256) -> byte-mode payload. No error
correction is attempted: corrupted data is rejected, not repaired.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

from .errors import (
    FormatInfoInvalid,
    QrDecodeError,
    RsSyndromeNonZero,
    UnsupportedImage,
    UnsupportedMode,
    UnsupportedVersion,
)

VALID_SIZES = (21, 25, 29, 33)
FORMAT_XOR_MASK = 0b101010000010010
_BCH_GENERATOR = 0x537

# (version, level) -> (total codewords, ec codewords per block, blocks)
EC_TABLE = {
    (1, "L"): (26, 7, 1),
    (1, "M"): (26, 10, 1),
    (2, "L"): (44, 10, 1),
    (2, "M"): (44, 16, 1),
    (3, "L"): (70, 15, 1),
    (3, "M"): (70, 26, 1),
    (4, "L"): (100, 20, 1),
    (4, "M"): (100, 18, 2),
}

ALIGNMENT_POSITIONS = {1: [], 2: [6, 18], 3: [6, 22], 4: [6, 26]}


# ---------------------------------------------------------------------------
# GF(256), generator polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D)

GF_EXP = [0] * 512
GF_LOG = [0] * 256
_x = 1
for _i in range(255):
    GF_EXP[_i] = _x
    GF_LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= 0x11D
for _i in range(255, 512):
    GF_EXP[_i] = GF_EXP[_i - 255]


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


def gf_pow(base: int, exp: int) -> int:
    if base == 0:
        return 0
    return GF_EXP[(GF_LOG[base] * exp) % 255]


def rs_syndromes(codewords: list, n_ec: int) -> list:
    """Syndromes S_j = C(alpha^j) for j = 0..n_ec-1; codewords[0] is the
    highest-degree coefficient."""
    out = []
    for j in range(n_ec):
        alpha_j = gf_pow(2, j)
        acc = 0
        for cw in codewords:
            acc = gf_mul(acc, alpha_j) ^ cw
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# BCH(15,5) format information

def _bch_remainder(value: int) -> int:
    rem = value
    for i in range(10, -1, -1):
        if rem & (1 << (i + 10)):
            rem ^= _BCH_GENERATOR << i
    return rem


VALID_FORMAT_WORDS = {}
for _data in range(32):
    _word = (_data << 10) | _bch_remainder(_data << 10)
    VALID_FORMAT_WORDS[_word] = _data

EC_LEVEL_BITS = {0b01: "L", 0b00: "M", 0b11: "Q", 0b10: "H"}


def check_format_word(word: int):
    """Returns (ec_level, mask) when word is one of the 32 valid BCH
    codewords (pre-XOR value), else None."""
    data = VALID_FORMAT_WORDS.get(word)
    if data is None:
        return None
    return EC_LEVEL_BITS[data >> 3], data & 7


# ---------------------------------------------------------------------------
# module matrix

@dataclass
class ModuleMatrix:
    modules: list  # n x n booleans, True = dark

    @property
    def size(self) -> int:
        return len(self.modules)

    @property
    def version(self) -> int:
        return (self.size - 21) // 4 + 1


@dataclass
class QrPayload:
    text: str
    version: int
    ec_level: str
    mask: int


_FINDER = [
    [1, 1, 1, 1, 1, 1, 1],
    [1, 0, 0, 0, 0, 0, 1],
    [1, 0, 1, 1, 1, 0, 1],
    [1, 0, 1, 1, 1, 0, 1],
    [1, 0, 1, 1, 1, 0, 1],
    [1, 0, 0, 0, 0, 0, 1],
    [1, 1, 1, 1, 1, 1, 1],
]


def has_finder_at(m: ModuleMatrix, top: int, left: int) -> bool:
    for r in range(7):
        for c in range(7):
            if bool(m.modules[top + r][left + c]) != bool(_FINDER[r][c]):
                return False
    return True


def has_valid_finders(m: ModuleMatrix) -> bool:
    n = m.size
    return (
        has_finder_at(m, 0, 0)
        and has_finder_at(m, 0, n - 7)
        and has_finder_at(m, n - 7, 0)
    )


def function_module_map(size: int) -> list:
    """True where a module belongs to a function pattern (never data)."""
    n = size
    version = (n - 21) // 4 + 1
    fm = [[False] * n for _ in range(n)]

    def mark(r, c):
        if 0 <= r < n and 0 <= c < n:
            fm[r][c] = True

    # finders + separators + format areas around them
    for r in range(9):
        for c in range(9):
            mark(r, c)
    for r in range(9):
        for c in range(n - 8, n):
            mark(r, c)
    for r in range(n - 8, n):
        for c in range(9):
            mark(r, c)
    # timing
    for i in range(n):
        mark(6, i)
        mark(i, 6)
    # alignment patterns
    positions = ALIGNMENT_POSITIONS.get(version, [])
    for pr in positions:
        for pc in positions:
            # skip the three finder corners
            if (pr <= 8 and pc <= 8) or (pr <= 8 and pc >= n - 9) or (pr >= n - 9 and pc <= 8):
                continue
            for r in range(pr - 2, pr + 3):
                for c in range(pc - 2, pc + 3):
                    mark(r, c)
    return fm


def mask_predicate(mask: int, r: int, c: int) -> bool:
    if mask == 0:
        return (r + c) % 2 == 0
    if mask == 1:
        return r % 2 == 0
    if mask == 2:
        return c % 3 == 0
    if mask == 3:
        return (r + c) % 3 == 0
    if mask == 4:
        return (r // 2 + c // 3) % 2 == 0
    if mask == 5:
        return (r * c) % 2 + (r * c) % 3 == 0
    if mask == 6:
        return ((r * c) % 2 + (r * c) % 3) % 2 == 0
    if mask == 7:
        return ((r + c) % 2 + (r * c) % 3) % 2 == 0
    raise QrDecodeError(f"invalid mask {mask}")


def read_format_info(m: ModuleMatrix):
    """Try both format-info copies; returns (ec_level, mask)."""
    n = m.size
    g = m.modules

    def bit(r, c):
        return 1 if g[r][c] else 0

    # copy 1, around the top-left finder (bit i of the 15-bit word)
    copy1 = [0] * 15
    for i in range(6):
        copy1[i] = bit(i, 8)
    copy1[6] = bit(7, 8)
    copy1[7] = bit(8, 8)
    copy1[8] = bit(8, 7)
    for i in range(9, 15):
        copy1[i] = bit(8, 14 - i)
    # copy 2, split between top-right and bottom-left
    copy2 = [0] * 15
    for i in range(8):
        copy2[i] = bit(8, n - 1 - i)
    for i in range(8, 15):
        copy2[i] = bit(n - 15 + i, 8)

    for bits in (copy1, copy2):
        word = 0
        for i, b in enumerate(bits):
            word |= b << i
        result = check_format_word(word ^ FORMAT_XOR_MASK)
        if result is not None:
            return result
    raise FormatInfoInvalid("both format-info copies fail the BCH check")


def zigzag_coordinates(size: int, fm: list):
    """Data module coordinates in standard read order."""
    n = size
    col = n - 1
    upward = True
    while col > 0:
        if col == 6:
            col -= 1
        rows = range(n - 1, -1, -1) if upward else range(n)
        for r in rows:
            for c in (col, col - 1):
                if not fm[r][c]:
                    yield r, c
        upward = not upward
        col -= 2


def decode_matrix(m: ModuleMatrix) -> QrPayload:
    n = m.size
    if n not in VALID_SIZES:
        raise UnsupportedVersion(f"matrix size {n} not in supported range (v1-4)")
    if not has_valid_finders(m):
        raise QrDecodeError("finder patterns missing or damaged")
    version = m.version
    ec_level, mask = read_format_info(m)
    if (version, ec_level) not in EC_TABLE:
        raise UnsupportedVersion(f"EC level {ec_level} not supported (L/M only)")
    total_cw, ec_per_block, n_blocks = EC_TABLE[(version, ec_level)]

    fm = function_module_map(n)
    bits = []
    for r, c in zigzag_coordinates(n, fm):
        value = 1 if m.modules[r][c] else 0
        if mask_predicate(mask, r, c):
            value ^= 1
        bits.append(value)
    if len(bits) < total_cw * 8:
        raise QrDecodeError("not enough data modules")
    codewords = []
    for i in range(total_cw):
        byte = 0
        for j in range(8):
            byte = (byte << 1) | bits[i * 8 + j]
        codewords.append(byte)

    data_codewords = _deinterleave_and_verify(codewords, total_cw, ec_per_block, n_blocks)
    return _parse_bitstream(data_codewords, version, ec_level, mask)


def _deinterleave_and_verify(codewords, total_cw, ec_per_block, n_blocks):
    n_data = total_cw - ec_per_block * n_blocks
    if n_blocks == 1:
        blocks = [codewords]
        data_parts = [codewords[:n_data]]
    else:
        # v1-4 block lengths divide evenly; interleaving is round-robin
        per_block_data = n_data // n_blocks
        data_parts = [[] for _ in range(n_blocks)]
        for i, cw in enumerate(codewords[:n_data]):
            data_parts[i % n_blocks].append(cw)
        ec_parts = [[] for _ in range(n_blocks)]
        for i, cw in enumerate(codewords[n_data:]):
            ec_parts[i % n_blocks].append(cw)
        blocks = [d + e for d, e in zip(data_parts, ec_parts)]
        assert all(len(d) == per_block_data for d in data_parts)
    for block in blocks:
        if any(s != 0 for s in rs_syndromes(block, ec_per_block)):
            raise RsSyndromeNonZero("Reed-Solomon syndromes nonzero; data corrupted")
    out = []
    for part in data_parts:
        out.extend(part)
    return out


def _parse_bitstream(data_codewords, version, ec_level, mask) -> QrPayload:
    bits = []
    for cw in data_codewords:
        for j in range(7, -1, -1):
            bits.append((cw >> j) & 1)

    def take(k):
        nonlocal pos
        value = 0
        for _ in range(k):
            value = (value << 1) | bits[pos]
            pos += 1
        return value

    pos = 0
    mode = take(4)
    if mode == 0:  # terminator only: empty message
        raise UnsupportedMode("empty bitstream (no byte-mode segment)")
    if mode != 0b0100:
        raise UnsupportedMode(f"mode indicator {mode:04b} is not byte mode")
    length = take(8)  # byte-mode count field is 8 bits for versions 1-9
    if pos + 8 * length > len(bits):
        raise QrDecodeError("declared payload length exceeds capacity")
    payload = bytes(take(8) for _ in range(length))
    return QrPayload(
        text=payload.decode("utf-8", "replace"),
        version=version,
        ec_level=ec_level,
        mask=mask,
    )


# ---------------------------------------------------------------------------
# imaging: load, binarize, locate, sample

def load_grayscale(data: bytes) -> list:
    """Decode PNG/PGM/PPM bytes into a grayscale pixel grid (0-255)."""
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise UnsupportedImage(f"cannot decode image: {exc}") from exc
    if img.format == "PNG":
        if img.info.get("interlace"):
            raise UnsupportedImage("interlaced PNG not supported")
        if img.mode in ("I", "I;16", "I;16B", "F"):
            raise UnsupportedImage("16-bit PNG not supported")
    if img.mode not in ("L", "RGB", "RGBA", "P", "1"):
        raise UnsupportedImage(f"unsupported image mode {img.mode}")
    gray = img.convert("L")
    w, h = gray.size
    px = list(gray.tobytes())
    return [px[r * w : (r + 1) * w] for r in range(h)]


def binarize(grid: list) -> list:
    """Global mean-luminance threshold; dark = below the mean."""
    if not grid or not grid[0]:
        return []
    total = sum(sum(row) for row in grid)
    count = len(grid) * len(grid[0])
    threshold = total / count
    return [[px < threshold for px in row] for row in grid]


def _runs(values: list) -> list:
    """Run-length encoding: list of (value, start, length)."""
    out = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            out.append((values[start], start, i - start))
            start = i
    return out


def _finder_candidates_1d(values: list) -> list:
    """Centers of 1:1:3:1:1 dark/light run patterns along one line."""
    runs = _runs(values)
    out = []
    for i in range(len(runs) - 4):
        window = runs[i : i + 5]
        if not (window[0][0] and not window[1][0] and window[2][0] and not window[3][0] and window[4][0]):
            continue
        lengths = [w[2] for w in window]
        unit = sum(lengths) / 7.0
        expected = (1, 1, 3, 1, 1)
        if all(abs(l - e * unit) <= 0.5 * unit + 0.5 for l, e in zip(lengths, expected)):
            center = window[2][1] + window[2][2] / 2.0
            out.append((center, unit))
    return out


def locate_and_sample(grid: list) -> list:
    """Detect finder patterns and sample every detected code's modules."""
    if not grid:
        return []
    h = len(grid)
    w = len(grid[0])
    centers: list[tuple[float, float, float]] = []  # (x, y, module_size)
    for y in range(h):
        for cx, unit in _finder_candidates_1d(grid[y]):
            x = int(cx)
            if not (0 <= x < w):
                continue
            column = [grid[r][x] for r in range(h)]
            for cy, vunit in _finder_candidates_1d(column):
                if abs(cy - y) <= 2 * vunit:
                    centers.append((cx, cy, (unit + vunit) / 2.0))
                    break

    clusters: list[list] = []
    for cx, cy, ms in centers:
        for cl in clusters:
            px, py, pms = cl[0]
            if abs(cx - px) <= 2 * pms and abs(cy - py) <= 2 * pms:
                cl.append((cx, cy, ms))
                break
        else:
            clusters.append([(cx, cy, ms)])
    finders = []
    for cl in clusters:
        if len(cl) < 2:  # require corroboration from at least 2 scan rows
            continue
        fx = sum(c[0] for c in cl) / len(cl)
        fy = sum(c[1] for c in cl) / len(cl)
        fms = sum(c[2] for c in cl) / len(cl)
        finders.append((fx, fy, fms))

    matrices = []
    n_f = len(finders)
    used = set()
    for i in range(n_f):
        for j in range(n_f):
            for k in range(n_f):
                if len({i, j, k}) != 3:
                    continue
                tl, tr, bl = finders[i], finders[j], finders[k]
                ms = (tl[2] + tr[2] + bl[2]) / 3.0
                # axis-aligned right angle at TL
                if abs(tr[1] - tl[1]) > 2 * ms or abs(bl[0] - tl[0]) > 2 * ms:
                    continue
                dx = tr[0] - tl[0]
                dy = bl[1] - tl[1]
                if dx <= 0 or dy <= 0 or abs(dx - dy) > 4 * ms:
                    continue
                if (i, j, k) in used:
                    continue
                matrix = _sample_matrix(grid, tl, tr, bl, ms)
                if matrix is not None:
                    used.update({(i, j, k)})
                    matrices.append(matrix)
    return matrices


def _sample_matrix(grid, tl, tr, bl, module_size):
    span = tr[0] - tl[0]
    n_est = span / module_size + 7
    n = min(VALID_SIZES, key=lambda v: abs(v - n_est))
    if abs(n - n_est) > 2:
        return None
    pitch_x = span / (n - 7)
    pitch_y = (bl[1] - tl[1]) / (n - 7)
    h = len(grid)
    w = len(grid[0])
    modules = []
    for r in range(n):
        row = []
        for c in range(n):
            x = int(round(tl[0] + (c - 3) * pitch_x))
            y = int(round(tl[1] + (r - 3) * pitch_y))
            if not (0 <= x < w and 0 <= y < h):
                return None
            row.append(grid[y][x])
        modules.append(row)
    m = ModuleMatrix(modules)
    return m if has_valid_finders(m) else None


def scan_and_decode(image_bytes: bytes) -> tuple[list, list]:
    """Full pipeline: image bytes in, (payloads, warnings) out."""
    warnings: list[str] = []
    try:
        grid = binarize(load_grayscale(image_bytes))
    except UnsupportedImage as exc:
        return [], [str(exc)]
    payloads = []
    for matrix in locate_and_sample(grid):
        try:
            payloads.append(decode_matrix(matrix))
        except UnsupportedVersion as exc:
            warnings.append(f"unscannable QR present: {exc}")
        except QrDecodeError as exc:
            warnings.append(f"QR decode failed: {exc}")
    return payloads, warnings
