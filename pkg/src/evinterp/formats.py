"""Readers and writers for event streams and frame directories.

Event files:

* CSV with header ``t_us,x,y,p``; polarity ``1``/``-1`` (``0`` is read as ``-1``).
* ``EVS1`` binary: magic, little-endian ``u32`` width, ``u32`` height, ``u64``
  count, then packed ``{u64 t_us, u16 x, u16 y, i8 p, i8 pad}`` records.

Frame directories hold zero-padded numbered images plus either
``timestamps.txt`` (one integer microsecond per line) or ``triggers.csv``
(``t_us,p`` exposure-start ``p=1`` / exposure-end ``p=0`` pairs; each frame
is stamped at the midpoint of its pair).
"""

from __future__ import annotations

import re
import struct
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import InputError
from .events import EventStream, Frame

EVS_MAGIC = b"EVS1"
EVS_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])
IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp")


def load_events(path, width: Optional[int] = None, height: Optional[int] = None) -> EventStream:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
    if head == EVS_MAGIC:
        return _load_evs(path)
    return _load_csv(path, width, height)


def save_events(ev: EventStream, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w") as f:
            f.write("t_us,x,y,p\n")
            for t, x, y, p in zip(ev.t, ev.x, ev.y, ev.p):
                f.write(f"{t},{x},{y},{p}\n")
        return
    rec = np.zeros(len(ev), dtype=EVS_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = ev.t, ev.x, ev.y, ev.p
    with open(path, "wb") as f:
        f.write(EVS_MAGIC + struct.pack("<IIQ", ev.width, ev.height, len(ev)))
        f.write(rec.tobytes())


def _load_evs(path: Path) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < 20:
        raise InputError(f"{path}: truncated EVS1 header ({len(raw)} bytes)")
    w, h, n = struct.unpack_from("<IIQ", raw, 4)
    expect = 20 + n * EVS_RECORD.itemsize
    if len(raw) != expect:
        have = (len(raw) - 20) // EVS_RECORD.itemsize
        raise InputError(f"{path}: header declares {n} events but file holds {have} "
                         f"(expected {expect} bytes, got {len(raw)})")
    rec = np.frombuffer(raw, dtype=EVS_RECORD, count=n, offset=20)
    _validate(path, w, h, rec["t"].astype(np.int64), rec["x"].astype(np.int64),
              rec["y"].astype(np.int64), rec["p"].astype(np.int64), "record")
    return EventStream(w, h, rec["t"], rec["x"], rec["y"], rec["p"])


def _load_csv(path: Path, width, height) -> EventStream:
    lines = path.read_text().splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")] != ["t_us", "x", "y", "p"]:
        raise InputError(f"{path}: expected header 't_us,x,y,p'")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            rows.append([int(v) for v in parts])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: non-integer field") from exc
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    t, x, y, p = arr.T
    bad = np.flatnonzero(~np.isin(p, (-1, 0, 1)))
    if len(bad):
        raise InputError(f"{path}:{bad[0] + 2}: polarity {p[bad[0]]} not in {{-1, 0, 1}}")
    p = np.where(p == 0, -1, p)
    if width is None:
        width = int(x.max()) + 1 if len(x) else 1
    if height is None:
        height = int(y.max()) + 1 if len(y) else 1
    _validate(path, width, height, t, x, y, p, "line", offset=2)
    return EventStream(width, height, t, x, y, p)


def _validate(path, w, h, t, x, y, p, unit: str, offset: int = 0) -> None:
    bad = np.flatnonzero((x < 0) | (x >= w) | (y < 0) | (y >= h))
    if len(bad):
        i = bad[0]
        raise InputError(f"{path}: {unit} {i + offset} at ({x[i]}, {y[i]}) outside {w}x{h} sensor")
    bad = np.flatnonzero((p != 1) & (p != -1))
    if len(bad):
        raise InputError(f"{path}: {unit} {bad[0] + offset} has polarity {p[bad[0]]}")
    bad = np.flatnonzero(np.diff(t) < 0)
    if len(bad):
        raise InputError(f"{path}: {unit} {bad[0] + 1 + offset} is earlier than its predecessor")


def _numbered_images(folder: Path) -> List[Path]:
    files = [f for f in folder.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES]
    keyed = []
    for f in files:
        m = re.search(r"(\d+)$", f.stem)
        if m is None:
            raise InputError(f"{f}: image file name has no frame number")
        keyed.append((int(m.group(1)), f))
    keyed.sort()
    return [f for _, f in keyed]


def read_trigger_timestamps(path) -> List[int]:
    """Frame timestamps from exposure-start/end trigger pairs (midpoint of each)."""
    lines = Path(path).read_text().splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")][:2] != ["t_us", "p"]:
        raise InputError(f"{path}: expected header 't_us,p'")
    stamps, start = [], None
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            t, p = (int(v) for v in line.split(",")[:2])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: malformed trigger") from exc
        if p == 1:
            if start is not None:
                raise InputError(f"{path}:{lineno}: exposure start without preceding end")
            start = t
        elif p == 0:
            if start is None:
                raise InputError(f"{path}:{lineno}: exposure end without start")
            if t < start:
                raise InputError(f"{path}:{lineno}: exposure ends before it starts")
            stamps.append((start + t) // 2)
            start = None
        else:
            raise InputError(f"{path}:{lineno}: trigger polarity must be 0 or 1")
    if start is not None:
        raise InputError(f"{path}: last exposure has no end trigger")
    return stamps


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def load_frames(folder) -> List[Frame]:
    folder = Path(folder)
    files = _numbered_images(folder)
    if not files:
        raise InputError(f"{folder}: no images found")
    ts_file, trig_file = folder / "timestamps.txt", folder / "triggers.csv"
    if ts_file.exists():
        try:
            stamps = [int(s) for s in ts_file.read_text().split()]
        except ValueError as exc:
            raise InputError(f"{ts_file}: timestamps must be integers") from exc
    elif trig_file.exists():
        stamps = read_trigger_timestamps(trig_file)
    else:
        raise InputError(f"{folder}: needs timestamps.txt or triggers.csv")
    if len(stamps) != len(files):
        raise InputError(f"{folder}: {len(files)} images but {len(stamps)} timestamps")
    return [Frame.from_hwc(read_image(f), t) for f, t in zip(files, stamps)]


def save_frames(frames: Sequence[Frame], folder, digits: int = 6) -> None:
    """Write numbered PNGs (16-bit for gray, 8-bit RGB for colour) and ``timestamps.txt``."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        if fr.channels == 1:
            arr = np.round(fr.data[0] * 65535).astype(np.uint16)
            img = Image.fromarray(arr)
        else:
            img = Image.fromarray(np.round(fr.to_hwc() * 255).astype(np.uint8), "RGB")
        img.save(folder / f"{i:0{digits}d}.png")
    (folder / "timestamps.txt").write_text("".join(f"{f.t}\n" for f in frames))
