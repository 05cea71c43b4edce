"""Asynchronous stereo event ingest, synchronous clustering, SAE lookup.

Event file format: one event per line, ``t x y polarity side`` with t in
seconds (decimal), polarity in {1, -1}, side in {L, R}; ``#`` starts a
comment line.  The writer emits the identical format.

A cluster pairs one binary event frame and one surface of active events
(SAE, the most recent event timestamp per pixel) per camera over a shared
time interval.  SAEs are rebuilt per cluster; nothing carries across
cluster boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import EventParseError, NoEventNearbyError, NonMonotonicTimeError

SIDES = ("L", "R")


@dataclass(eq=False)
class Event:
    """One brightness-change measurement."""

    t: float
    x: int
    y: int
    polarity: int
    side: str


@dataclass(eq=False)
class EventCluster:
    """Synchronized left/right event frames and SAEs over [t_start, t_end)."""

    index: int
    t_start: float
    t_end: float
    frame_left: np.ndarray
    frame_right: np.ndarray
    sae_left: np.ndarray
    sae_right: np.ndarray
    count_left: int = 0
    count_right: int = 0

    def frame(self, side: str) -> np.ndarray:
        return self.frame_left if side == "L" else self.frame_right

    def sae(self, side: str) -> np.ndarray:
        return self.sae_left if side == "L" else self.sae_right


def read_events(path, width: int, height: int) -> Iterator[Event]:
    """Yield events from a file, validating bounds and per-side time order."""
    last_t = {"L": -np.inf, "R": -np.inf}
    with open(path, "r") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 5:
                raise EventParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            try:
                t = float(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                polarity = int(parts[3])
            except ValueError as exc:
                raise EventParseError(f"line {lineno}: {exc}") from None
            side = parts[4]
            if side not in SIDES:
                raise EventParseError(f"line {lineno}: side must be L or R, got {side!r}")
            if polarity not in (1, -1):
                raise EventParseError(f"line {lineno}: polarity must be 1 or -1")
            if not (0 <= x < width) or not (0 <= y < height):
                raise EventParseError(
                    f"line {lineno}: pixel ({x}, {y}) outside {width}x{height}")
            if not np.isfinite(t) or t < 0:
                raise EventParseError(f"line {lineno}: bad timestamp {parts[0]}")
            if t < last_t[side]:
                raise NonMonotonicTimeError(
                    f"line {lineno}: time {t} decreases on side {side}")
            last_t[side] = t
            yield Event(t, x, y, polarity, side)


def write_events(path, events: Iterable[Event]) -> None:
    lines = [f"{e.t:.9f} {e.x} {e.y} {e.polarity} {e.side}\n" for e in events]
    with open(path, "w") as handle:
        handle.write("".join(lines))


@dataclass(eq=False)
class _OpenCluster:
    width: int
    height: int
    t_start: float
    events: dict = field(default_factory=lambda: {"L": [], "R": []})

    def add(self, event: Event) -> None:
        self.events[event.side].append(event)

    def close(self, index: int, t_end: float) -> EventCluster:
        # Degenerate all-simultaneous case still satisfies t_start < t_end.
        if t_end <= self.t_start:
            t_end = float(np.nextafter(self.t_start, np.inf))
        frames = {}
        saes = {}
        for side in SIDES:
            frame = np.zeros((self.height, self.width), dtype=np.uint8)
            sae = np.full((self.height, self.width), np.nan)
            for e in self.events[side]:
                frame[e.y, e.x] = 1
                current = sae[e.y, e.x]
                if np.isnan(current) or e.t > current:
                    sae[e.y, e.x] = e.t
            frames[side] = frame
            saes[side] = sae
        return EventCluster(
            index=index,
            t_start=self.t_start,
            t_end=t_end,
            frame_left=frames["L"],
            frame_right=frames["R"],
            sae_left=saes["L"],
            sae_right=saes["R"],
            count_left=len(self.events["L"]),
            count_right=len(self.events["R"]),
        )


def cluster_events(events: Iterable[Event], width: int, height: int,
                   window_s: float, max_count: int) -> Iterator[EventCluster]:
    """Group a merged stereo stream into synchronized clusters.

    A cluster closes when an incoming event lies window_s or later past the
    cluster start (that event opens the next cluster: closed-open interval)
    or when either side's count reaches max_count (that event stays in the
    closing cluster).  Both sides always share the same bounds.
    """
    if window_s <= 0 or max_count <= 0:
        raise ValueError("window_s and max_count must be positive")
    index = 0
    current: _OpenCluster | None = None
    for event in events:
        if current is None:
            current = _OpenCluster(width, height, t_start=event.t)
        elif event.t - current.t_start >= window_s:
            yield current.close(index, current.t_start + window_s)
            index += 1
            current = _OpenCluster(width, height, t_start=event.t)
        current.add(event)
        if max(len(current.events["L"]), len(current.events["R"])) >= max_count:
            yield current.close(index, event.t)
            index += 1
            current = None
    if current is not None:
        last_t = max(e.t for side in SIDES for e in current.events[side])
        yield current.close(index, last_t)


def sae_lookup(cluster: EventCluster, side: str, x: int, y: int,
               radius: int = 2) -> float:
    """Timestamp of the nearest active SAE entry within a Chebyshev radius.

    Ties at equal distance go to the larger timestamp, then to row-major
    order.  Raises NoEventNearbyError when the neighborhood holds no event.
    """
    sae = cluster.sae(side)
    height, width = sae.shape
    if not (0 <= x < width and 0 <= y < height):
        raise NoEventNearbyError(f"pixel ({x}, {y}) out of bounds")
    best = None
    for dist in range(radius + 1):
        y0, y1 = max(0, y - dist), min(height - 1, y + dist)
        x0, x1 = max(0, x - dist), min(width - 1, x + dist)
        for yy in range(y0, y1 + 1):
            for xx in range(x0, x1 + 1):
                if max(abs(yy - y), abs(xx - x)) != dist:
                    continue
                value = sae[yy, xx]
                if np.isnan(value):
                    continue
                if best is None or value > best:
                    best = float(value)
        if best is not None:
            return best
    raise NoEventNearbyError(
        f"no event within radius {radius} of ({x}, {y}) on side {side}")
