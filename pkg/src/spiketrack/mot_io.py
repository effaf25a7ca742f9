"""MOTChallenge text files: gt.txt / det.txt / result files and seqinfo.ini."""
from __future__ import annotations

import configparser
import math
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .geometry import BBox


class MOTFormatError(ValueError):
    pass


class SequenceRecord(NamedTuple):
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = 1.0
    extra1: float = -1.0
    extra2: float = -1.0
    extra3: float = -1.0

    @property
    def box(self) -> BBox:
        return BBox.from_tlwh(self.x, self.y, self.w, self.h)


Frames = dict[int, list[SequenceRecord]]


def parse_line(line: str, lineno: int = 0) -> SequenceRecord:
    toks = [t.strip() for t in line.strip().split(",")]
    if len(toks) < 6:
        raise MOTFormatError(f"line {lineno}: expected at least 6 fields, got {len(toks)}")
    try:
        vals = [float(t) for t in toks[:10]]
    except ValueError as exc:
        raise MOTFormatError(f"line {lineno}: {exc}") from None
    if not all(math.isfinite(v) for v in vals):
        raise MOTFormatError(f"line {lineno}: non-finite value")
    if not vals[0].is_integer() or not vals[1].is_integer():
        raise MOTFormatError(f"line {lineno}: frame and id must be integers")
    vals += [-1.0] * (10 - len(vals))
    if len(vals) == 10 and len(toks) < 7:
        vals[6] = 1.0
    return SequenceRecord(int(vals[0]), int(vals[1]), *vals[2:10])


def load_sequence(path, kind: str = "result") -> Frames:
    """Parse a MOT file into ``{frame: [records]}`` sorted by frame.

    ``kind`` is ``"gt"``, ``"det"`` or ``"result"``; gt files must have positive
    sizes, result files non-negative ids.
    """
    frames: Frames = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = parse_line(line, lineno)
            if rec.frame < 1:
                raise MOTFormatError(f"line {lineno}: frames are 1-based")
            if kind == "gt" and (rec.w <= 0 or rec.h <= 0):
                raise MOTFormatError(f"line {lineno}: ground-truth box needs w > 0 and h > 0")
            if kind == "result" and rec.id < 0:
                raise MOTFormatError(f"line {lineno}: result rows need a track id")
            frames.setdefault(rec.frame, []).append(rec)
    return dict(sorted(frames.items()))


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def format_record(r: SequenceRecord) -> str:
    return ",".join([str(r.frame), str(r.id)] + [_fmt(v) for v in r[2:]])


def write_sequence(path, frames: Mapping[int, Sequence[SequenceRecord]]) -> None:
    lines = [format_record(r) for f in sorted(frames) for r in frames[f]]
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_results(path, tracks_per_frame: Mapping[int, Sequence]) -> None:
    """Write tracker output as ``frame,id,x,y,w,h,conf,-1,-1,-1`` rows.

    Values may be :class:`SequenceRecord` or anything with ``track_id``, ``box``
    and ``conf`` attributes (e.g. ``TrackOutput``).
    """
    frames: Frames = {}
    for f, items in tracks_per_frame.items():
        rows = []
        for it in items:
            if isinstance(it, SequenceRecord):
                rec = it
            else:
                x, y, w, h = it.box.tlwh()
                rec = SequenceRecord(int(f), int(it.track_id), x, y, w, h, float(it.conf))
            if rec.id < 0:
                raise MOTFormatError("result rows need a track id")
            rows.append(rec)
        frames[int(f)] = rows
    write_sequence(path, frames)


def records_from_boxes(frame: int, ids: Iterable[int], boxes: Iterable[BBox],
                       confs: Iterable[float]) -> list[SequenceRecord]:
    return [SequenceRecord(frame, int(i), *b.tlwh(), float(c)) for i, b, c in zip(ids, boxes, confs)]


def read_seqinfo(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    s = cp["Sequence"]
    return {"name": s.get("name", ""), "imWidth": s.getint("imWidth"),
            "imHeight": s.getint("imHeight"), "seqLength": s.getint("seqLength"),
            "imDir": s.get("imDir", "img1"), "imExt": s.get("imExt", ".png")}


def write_seqinfo(path, name: str, width: int, height: int, length: int,
                  im_dir: str = "img1", im_ext: str = ".png") -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["Sequence"] = {"name": name, "imDir": im_dir, "frameRate": "30", "seqLength": str(length),
                      "imWidth": str(width), "imHeight": str(height), "imExt": im_ext}
    with open(path, "w") as fh:
        cp.write(fh)
