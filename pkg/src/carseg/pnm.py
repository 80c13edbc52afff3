"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""

import numpy as np


def _write(path, magic, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_ppm(path, rgb):
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM wants HxWx3, got {rgb.shape}")
    _write(path, "P6", rgb)


def write_pgm(path, gray):
    if gray.ndim != 2:
        raise ValueError(f"PGM wants HxW, got {gray.shape}")
    _write(path, "P5", gray)


def _read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(blob):
            raise ValueError(f"truncated header in {path}")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            fields.append(blob[pos:end])
            pos = end
    magic = fields[0].decode("ascii")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"only 8-bit maps supported, maxval={maxval}")
    data = blob[pos + 1:]  # single whitespace byte after maxval
    return magic, w, h, np.frombuffer(data, dtype=np.uint8)


def read_ppm(path):
    magic, w, h, data = _read(path)
    if magic != "P6":
        raise ValueError(f"expected P6, got {magic}")
    return data[:h * w * 3].reshape(h, w, 3).copy()


def read_pgm(path):
    magic, w, h, data = _read(path)
    if magic != "P5":
        raise ValueError(f"expected P5, got {magic}")
    return data[:h * w].reshape(h, w).copy()
