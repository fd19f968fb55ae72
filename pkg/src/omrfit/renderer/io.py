"""Binary PGM (P5) mask files.

Label images store the part id per pixel (0 background, 1..6); soft mask
stacks store one PGM per part channel with values round(255 * p). Parsing
is strict and reports the byte offset of the first offending byte.
"""

from __future__ import annotations

import numpy as np

from ..errors import FormatError, IoError

MAX_PART = 6


def write_pgm(path, data):
    """Write a uint8 image as binary PGM with maxval 255."""
    data = np.asarray(data)
    if data.ndim != 2 or data.dtype != np.uint8:
        raise FormatError(f"PGM payload must be a 2-D uint8 array, got {data.dtype} {data.shape}")
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(data.tobytes())
    except OSError as e:
        raise IoError(f"cannot write PGM {path}: {e}") from e


def read_pgm(path):
    """Read a binary PGM; returns a uint8 (H, W) array."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read PGM {path}: {e}") from e
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (bad magic)", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: malformed PGM header token {token!r}", offset=start)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}", offset=pos)
    pos += 1  # single whitespace byte after maxval
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise FormatError(
            f"{path}: truncated PGM payload ({len(data)} of {width * height} bytes)",
            offset=len(raw),
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy(), pos


def save_labels(path, labels):
    """Write a part-label image (values 0..6)."""
    labels = np.asarray(labels)
    if labels.max(initial=0) > MAX_PART:
        raise FormatError(f"label image contains values above {MAX_PART}")
    write_pgm(path, labels.astype(np.uint8))


def load_labels(path):
    """Read a part-label image; values above 6 are a format error."""
    labels, data_offset = read_pgm(path)
    bad = np.nonzero(labels.ravel() > MAX_PART)[0]
    if bad.size:
        raise FormatError(
            f"{path}: label value {labels.ravel()[bad[0]]} exceeds {MAX_PART}",
            offset=data_offset + int(bad[0]),
        )
    return labels


def soft_mask_paths(directory, sample_id):
    return [f"{directory}/{sample_id}_part{d}.pgm" for d in range(1, MAX_PART + 1)]


def save_soft_stack(directory, sample_id, stack_data):
    """Write one quantized PGM per part channel (round(255 * p))."""
    for d, path in enumerate(soft_mask_paths(directory, sample_id)):
        write_pgm(path, np.round(255.0 * stack_data[d]).astype(np.uint8))


def load_soft_stack(directory, sample_id):
    """Read the per-part PGMs back as a float stack in [0, 1]."""
    channels = []
    for path in soft_mask_paths(directory, sample_id):
        data, _ = read_pgm(path)
        channels.append(data.astype(np.float64) / 255.0)
    return np.stack(channels, axis=0)
