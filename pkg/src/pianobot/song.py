"""Song ingestion: an SMF (Standard MIDI File) subset reader, a native text
format for human-readable fixtures, and discretization into 20 Hz target
timelines with lookahead.

The native format is one note interval per line: ``key_index on_time
off_time`` with ``#`` comments. Key indices 0..48 map MIDI notes 36..84
(C2..C6) onto the 49-key board.
"""

from __future__ import annotations

import importlib.resources
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .errors import SongParseError

DEFAULT_TEMPO_USPQ = 500000  # microseconds per quarter note (120 bpm)


@dataclass(frozen=True)
class NoteEvent:
    key_index: int
    on: bool
    time: float


@dataclass
class MidiReport:
    """Diagnostics from parse_midi: nothing here is fatal."""
    dropped_out_of_range: int = 0
    implicit_note_offs: int = 0
    stray_note_offs: int = 0


@dataclass
class SongTimeline:
    steps: np.ndarray  # (n_steps, 49) bool
    dt_control: float = C.DT_CONTROL
    name: str = ""

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=bool)
        if self.steps.ndim != 2 or self.steps.shape[1] != C.KEY_COUNT:
            raise ValueError("timeline steps must have shape (n, 49)")
        if len(self.steps) < 1:
            raise ValueError("timeline must contain at least one step")

    def __len__(self) -> int:
        return len(self.steps)

    def targets(self, t: int) -> np.ndarray:
        return self.steps[t]


def _canonical(events) -> list:
    # off sorts before on at equal times so a key can retrigger at an instant
    return sorted(events, key=lambda e: (e.time, e.on, e.key_index))


# ---------------------------------------------------------------------------
# Standard MIDI File subset
# ---------------------------------------------------------------------------

class _ByteReader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] in the whole file, for messages

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.remaining() < n:
            raise SongParseError(f"truncated {what}", offset=self.base + self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        b = self.take(2, what)
        return (b[0] << 8) | b[1]

    def u32(self, what: str) -> int:
        b = self.take(4, what)
        return (b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3]

    def vlq(self) -> int:
        value = 0
        for _ in range(4):
            byte = self.u8("variable-length quantity")
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise SongParseError("variable-length quantity longer than 4 bytes",
                             offset=self.base + self.pos - 1)


def _parse_track(reader: _ByteReader, raw_notes: list, tempo_changes: list) -> None:
    """Collect (tick, pitch, is_on) note events and (tick, uspq) tempo marks."""
    tick = 0
    status = None
    while reader.remaining() > 0:
        tick += reader.vlq()
        first = reader.u8("event")
        if first < 0x80:
            if status is None:
                raise SongParseError("data byte without running status",
                                     offset=reader.base + reader.pos - 1)
            data0 = first
        else:
            status = first
            data0 = None
        if status == 0xFF:
            meta_type = reader.u8("meta type")
            length = reader.vlq()
            payload = reader.take(length, "meta payload")
            if meta_type == 0x51:
                if length != 3:
                    raise SongParseError("tempo meta must carry 3 bytes",
                                         offset=reader.base + reader.pos - length)
                uspq = (payload[0] << 16) | (payload[1] << 8) | payload[2]
                tempo_changes.append((tick, uspq))
            elif meta_type == 0x2F:
                return
            status = None  # meta and sysex clear running status
            continue
        if status in (0xF0, 0xF7):
            length = reader.vlq()
            reader.take(length, "sysex payload")
            status = None
            continue
        if status is None or status < 0x80 or status >= 0xF0:
            raise SongParseError(f"unsupported event byte 0x{first:02x}",
                                 offset=reader.base + reader.pos - 1)
        kind = status & 0xF0
        if data0 is None:
            data0 = reader.u8("event data")
        if kind in (0xC0, 0xD0):
            continue  # one data byte, already consumed
        data1 = reader.u8("event data")
        if kind == 0x90:
            raw_notes.append((tick, data0, data1 > 0))
        elif kind == 0x80:
            raw_notes.append((tick, data0, False))
        # 0xA0 / 0xB0 / 0xE0 carry two data bytes and are ignored


def _tick_to_seconds(tempo_changes, division: int):
    """Build a piecewise-linear tick->seconds map."""
    marks = sorted(tempo_changes)
    segs = []  # (start_tick, start_seconds, seconds_per_tick)
    cur_tick, cur_sec = 0, 0.0
    cur_spt = DEFAULT_TEMPO_USPQ / 1e6 / division
    for tick, uspq in marks:
        if tick > cur_tick:
            segs.append((cur_tick, cur_sec, cur_spt))
            cur_sec += (tick - cur_tick) * cur_spt
            cur_tick = tick
        cur_spt = uspq / 1e6 / division
    segs.append((cur_tick, cur_sec, cur_spt))

    def convert(tick: int) -> float:
        lo, hi = 0, len(segs) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if segs[mid][0] <= tick:
                lo = mid
            else:
                hi = mid - 1
        start_tick, start_sec, spt = segs[lo]
        return start_sec + (tick - start_tick) * spt

    return convert


def parse_midi_with_report(data: bytes):
    """Parse an SMF byte string; returns (events, MidiReport)."""
    reader = _ByteReader(data)
    if reader.take(4, "header") != b"MThd":
        raise SongParseError("not a MIDI file (missing MThd)", offset=0)
    header_len = reader.u32("header length")
    if header_len < 6:
        raise SongParseError("MThd length must be >= 6", offset=4)
    fmt = reader.u16("format")
    ntracks = reader.u16("track count")
    division = reader.u16("division")
    reader.take(header_len - 6, "header padding")
    if fmt not in (0, 1):
        raise SongParseError(f"unsupported MIDI format {fmt}", offset=8)
    if ntracks > 16:
        raise SongParseError(f"too many tracks ({ntracks})", offset=10)
    if division & 0x8000:
        raise SongParseError("SMPTE time division not supported", offset=12)
    if division == 0:
        raise SongParseError("zero ticks-per-quarter division", offset=12)

    raw_notes, tempo_changes = [], []
    for _ in range(ntracks):
        chunk_at = reader.base + reader.pos
        tag = reader.take(4, "track tag")
        length = reader.u32("track length")
        body = reader.take(length, "track body")
        if tag != b"MTrk":
            # unknown chunk types are skipped per the SMF spec
            continue
        _parse_track(_ByteReader(body, base=chunk_at + 8), raw_notes, tempo_changes)

    convert = _tick_to_seconds(tempo_changes, division)
    report = MidiReport()
    intervals = []
    depth = [0] * C.KEY_COUNT
    opened_at = [0.0] * C.KEY_COUNT
    last_time = 0.0
    # stable sort by tick keeps same-tick events in file/track order, so a
    # same-instant off-then-on retrigger and an on-then-off zero-length
    # note both resolve the way they were written
    for tick, pitch, is_on in sorted(raw_notes, key=lambda r: r[0]):
        time = convert(tick)
        last_time = max(last_time, time)
        if not (C.MIDI_LOW <= pitch <= C.MIDI_HIGH):
            report.dropped_out_of_range += 1
            continue
        key = pitch - C.MIDI_LOW
        if is_on:
            if depth[key] == 0:
                opened_at[key] = time
            depth[key] += 1
        else:
            if depth[key] == 0:
                report.stray_note_offs += 1
                continue
            depth[key] -= 1
            if depth[key] == 0 and time > opened_at[key]:
                intervals.append((key, opened_at[key], time))
    for key in range(C.KEY_COUNT):
        if depth[key] > 0:
            report.implicit_note_offs += 1
            if last_time > opened_at[key]:
                intervals.append((key, opened_at[key], last_time))
    events = []
    for key, on_t, off_t in intervals:
        events.append(NoteEvent(key, True, on_t))
        events.append(NoteEvent(key, False, off_t))
    return _canonical(events), report


def parse_midi(data: bytes) -> list:
    events, _ = parse_midi_with_report(data)
    return events


# ---------------------------------------------------------------------------
# Native text format
# ---------------------------------------------------------------------------

def parse_song_text(text: str) -> list:
    """Parse ``key on off`` lines into a canonical NoteEvent list."""
    intervals = {}  # key -> list of (on, off, line_no)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise SongParseError("expected `key on off`", line=line_no)
        try:
            key = int(parts[0])
            on_t = float(parts[1])
            off_t = float(parts[2])
        except ValueError:
            raise SongParseError(f"bad numbers in {line!r}", line=line_no) from None
        if not 0 <= key < C.KEY_COUNT:
            raise SongParseError(f"key {key} outside 0..48", line=line_no)
        if not (math.isfinite(on_t) and math.isfinite(off_t)):
            raise SongParseError("times must be finite", line=line_no)
        if on_t < 0 or off_t <= on_t:
            raise SongParseError("need 0 <= on < off", line=line_no)
        intervals.setdefault(key, []).append((on_t, off_t, line_no))
    events = []
    for key, spans in intervals.items():
        spans.sort()
        prev_off = -1.0
        for on_t, off_t, line_no in spans:
            if on_t < prev_off:
                raise SongParseError(
                    f"key {key} interval overlaps the previous one", line=line_no)
            prev_off = off_t
            events.append(NoteEvent(key, True, on_t))
            events.append(NoteEvent(key, False, off_t))
    return _canonical(events)


def events_to_intervals(events) -> list:
    """Pair alternating on/off events into (key, on_time, off_time) triples."""
    open_at = {}
    intervals = []
    for ev in _canonical(events):
        if ev.on:
            if ev.key_index in open_at:
                raise ValueError(f"key {ev.key_index} turned on twice")
            open_at[ev.key_index] = ev.time
        else:
            if ev.key_index not in open_at:
                raise ValueError(f"key {ev.key_index} turned off while off")
            intervals.append((ev.key_index, open_at.pop(ev.key_index), ev.time))
    if open_at:
        raise ValueError(f"keys left on at end: {sorted(open_at)}")
    intervals.sort(key=lambda iv: (iv[1], iv[0], iv[2]))
    return intervals


def render_song_text(events) -> str:
    lines = [f"{key} {on_t:.6f} {off_t:.6f}"
             for key, on_t, off_t in events_to_intervals(events)]
    return "\n".join(lines) + ("\n" if lines else "")


def render_midi(events, division: int = 480,
                tempo_uspq: int = DEFAULT_TEMPO_USPQ) -> bytes:
    """Write events as a format-0 SMF. At the default tempo one tick is
    1/960 s, so timelines on the 0.05 s control grid round-trip exactly."""
    ticks_per_second = division * 1e6 / tempo_uspq

    def to_tick(t: float) -> int:
        return int(round(t * ticks_per_second))

    def vlq(n: int) -> bytes:
        out = [n & 0x7F]
        n >>= 7
        while n:
            out.append((n & 0x7F) | 0x80)
            n >>= 7
        return bytes(reversed(out))

    body = bytearray()
    body += vlq(0) + bytes([0xFF, 0x51, 0x03]) + tempo_uspq.to_bytes(3, "big")
    last_tick = 0
    for ev in _canonical(events):
        tick = to_tick(ev.time)
        body += vlq(tick - last_tick)
        last_tick = tick
        status = 0x90 if ev.on else 0x80
        body += bytes([status, ev.key_index + C.MIDI_LOW, 64 if ev.on else 0])
    body += vlq(0) + bytes([0xFF, 0x2F, 0x00])
    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    out += b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
    return bytes(out)


# ---------------------------------------------------------------------------
# Discretization and lookahead
# ---------------------------------------------------------------------------

def discretize(events, dt_control: float = C.DT_CONTROL,
               name: str = "") -> SongTimeline:
    """Sample note intervals at control-step midpoints.

    Step t targets key k iff the midpoint (t+0.5)*dt falls inside one of
    k's half-open [on, off) intervals. Length is ceil(last_off/dt) plus a
    terminal all-off step (the small epsilon keeps grid-aligned off times
    from spilling into an extra step).
    """
    if dt_control <= 0:
        raise ValueError("dt_control must be positive")
    intervals = events_to_intervals(events)
    if not intervals:
        return SongTimeline(np.zeros((1, C.KEY_COUNT), dtype=bool),
                            dt_control, name)
    last_off = max(iv[2] for iv in intervals)
    n_steps = int(math.ceil(last_off / dt_control - 1e-9)) + 1
    steps = np.zeros((n_steps, C.KEY_COUNT), dtype=bool)
    for key, on_t, off_t in intervals:
        for t in range(n_steps):
            mid = (t + 0.5) * dt_control
            if on_t <= mid < off_t:
                steps[t, key] = True
    return SongTimeline(steps, dt_control, name)


def timeline_to_events(timeline: SongTimeline) -> list:
    """Reconstruct note intervals from runs of targeted steps."""
    dt = timeline.dt_control
    events = []
    for key in range(C.KEY_COUNT):
        col = timeline.steps[:, key]
        t = 0
        n = len(col)
        while t < n:
            if col[t]:
                t0 = t
                while t < n and col[t]:
                    t += 1
                events.append(NoteEvent(key, True, t0 * dt))
                events.append(NoteEvent(key, False, t * dt))
            else:
                t += 1
    return _canonical(events)


def lookahead(timeline: SongTimeline, t: int, horizon: int = C.LOOKAHEAD_STEPS
              ) -> np.ndarray:
    """Flattened targets for steps t+1 .. t+horizon, zero-padded past the end."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = len(timeline)
    if not 0 <= t < n:
        raise IndexError(f"step {t} outside timeline of length {n}")
    out = np.zeros((horizon, C.KEY_COUNT), dtype=bool)
    avail = min(horizon, n - 1 - t)
    if avail > 0:
        out[:avail] = timeline.steps[t + 1:t + 1 + avail]
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_song(path, dt_control: float = C.DT_CONTROL) -> SongTimeline:
    """Load .mid/.midi or native .song/.txt into a timeline."""
    name = os.path.splitext(os.path.basename(str(path)))[0]
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".mid", ".midi"):
        with open(path, "rb") as fh:
            events = parse_midi(fh.read())
    else:
        with open(path, "r", encoding="utf-8") as fh:
            events = parse_song_text(fh.read())
    return discretize(events, dt_control, name=name)


FIXTURE_NAMES = ("twinkle", "c_major_scale", "d_major_scale",
                 "chord_progression", "hold_c4", "hold_c6")


def load_fixture(name: str, dt_control: float = C.DT_CONTROL) -> SongTimeline:
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; have {FIXTURE_NAMES}")
    text = (importlib.resources.files("pianobot")
            .joinpath("data", "songs", f"{name}.song").read_text(encoding="utf-8"))
    return discretize(parse_song_text(text), dt_control, name=name)
