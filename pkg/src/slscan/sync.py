"""Group timestamped camera images into frame sets using projector triggers.

An image taken at ``t_c`` fills slot ``i`` of a sequence triggered at
``t_p`` when::

    -tol_lower <= t_c - (t_p + (i - 1) * dt_img) <= tol_upper

Slots are resolved in order of their expected capture time. Each slot takes
the still-unassigned matching image with the smallest absolute residual
(ties go to the earlier image). A sequence is emitted only if every slot is
filled; otherwise it is reported and dropped.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .decode import FrameSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyncConfig:
    dt_img: float = 1.0 / 30.0
    tol_lower: float | None = None
    tol_upper: float | None = None

    def __post_init__(self):
        if not self.dt_img > 0:
            raise ValueError("dt_img must be positive")
        if self.tol_lower is None:
            object.__setattr__(self, "tol_lower", 0.2 * self.dt_img)
        if self.tol_upper is None:
            object.__setattr__(self, "tol_upper", 0.2 * self.dt_img)
        if self.tol_lower < 0 or self.tol_upper < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class TriggerEvent:
    """Slot ``index`` (1-based) of sequence ``sequence_id`` started at ``t_p``."""

    t_p: float
    sequence_id: int
    index: int

    def expected(self, cfg: SyncConfig) -> float:
        return self.t_p + (self.index - 1) * cfg.dt_img


def sequence_triggers(t_p: float, sequence_id: int, seq_len: int) -> list[TriggerEvent]:
    return [TriggerEvent(t_p, sequence_id, i) for i in range(1, seq_len + 1)]


def residual(t_c: float, trig: TriggerEvent, cfg: SyncConfig) -> float:
    return t_c - (trig.t_p + (trig.index - 1) * cfg.dt_img)


def match_image(t_c: float, trig: TriggerEvent, cfg: SyncConfig) -> bool:
    r = residual(t_c, trig, cfg)
    return -cfg.tol_lower <= r <= cfg.tol_upper


@dataclass
class Rejection:
    sequence_id: int
    t_p: float
    missing: list[int]

    def __str__(self):
        return f"sequence {self.sequence_id} (t_p={self.t_p:.6f}) incomplete: missing slot(s) {self.missing}"


@dataclass
class Conflict:
    sequence_id: int
    index: int
    chosen: int
    rejected: list[int]


@dataclass
class SyncResult:
    """Completed sets plus diagnostics. ``assignments`` maps
    ``(sequence_id, index) -> image position`` in the input stream."""

    framesets: list = field(default_factory=list)
    sequence_ids: list = field(default_factory=list)
    rejections: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)
    assignments: dict = field(default_factory=dict)
    unmatched: list = field(default_factory=list)


def _slot_key(trig: TriggerEvent, cfg: SyncConfig):
    return (trig.expected(cfg), trig.sequence_id, trig.index)


class Assembler:
    """Streaming assembler fed with triggers and images in time order.

    A slot is resolved once an input newer than its window has been seen, so
    the assembler never waits for more than one sequence duration plus the
    tolerance.
    """

    def __init__(self, seq_len: int, cfg: SyncConfig = SyncConfig()):
        if seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        self.seq_len = seq_len
        self.cfg = cfg
        self.horizon = seq_len * cfg.dt_img + cfg.tol_lower + cfg.tol_upper
        self._pending: list = []            # heap of (slot key, trigger)
        self._images: dict[int, tuple] = {}  # position -> (t_c, image)
        self._sequences: dict[int, dict] = {}
        self._seq_t: dict[int, float] = {}
        self._n_images = 0
        self._now = -np.inf
        self.result = SyncResult()
        self._done: list = []  # completed/rejected sequences waiting for ordered emission

    def push_trigger(self, trig: TriggerEvent):
        if not 1 <= trig.index <= self.seq_len:
            raise ValueError(f"trigger index {trig.index} outside 1..{self.seq_len}")
        self._advance(trig.t_p)
        heapq.heappush(self._pending, (_slot_key(trig, self.cfg), trig))
        self._sequences.setdefault(trig.sequence_id, {})
        self._seq_t.setdefault(trig.sequence_id, trig.t_p)

    def push_image(self, t_c: float, image=None) -> int:
        pos = self._n_images
        self._n_images += 1
        self._advance(t_c)
        self._images[pos] = (t_c, image)
        return pos

    def flush(self) -> SyncResult:
        self._resolve(np.inf)
        # sequences whose trigger stream itself was short
        queued = {sid for _, sid in self._done}
        for sid in self._sequences:
            if sid not in queued:
                heapq.heappush(self._done, (self._seq_t[sid], sid))
        self.result.unmatched.extend(sorted(self._images))
        self._images.clear()
        self._emit()
        return self.result

    def _advance(self, t):
        if t < self._now:
            raise ValueError("stream is not time ordered")
        self._now = t
        self._resolve(t)

    def _resolve(self, now):
        cfg = self.cfg
        # same arithmetic as the window test, so no rounding edge can close a
        # slot that a later image would still match
        while self._pending and now - self._pending[0][0][0] > cfg.tol_upper:
            _, trig = heapq.heappop(self._pending)
            self._fill(trig)
        # release images that no future slot can claim
        cutoff = now - self.horizon
        if np.isfinite(cutoff):
            for pos in [p for p, (tc, _) in self._images.items() if tc < cutoff]:
                self.result.unmatched.append(pos)
                del self._images[pos]
        self._emit()

    def _fill(self, trig: TriggerEvent):
        cands = []
        for pos, (tc, _) in self._images.items():
            if match_image(tc, trig, self.cfg):
                cands.append((abs(residual(tc, trig, self.cfg)), tc, pos))
        slots = self._sequences[trig.sequence_id]
        if cands:
            cands.sort()
            chosen = cands[0][2]
            if len(cands) > 1:
                rejected = [c[2] for c in cands[1:]]
                log.info("sequence %d slot %d: %d candidate images, kept image %d",
                         trig.sequence_id, trig.index, len(cands), chosen)
                self.result.conflicts.append(Conflict(trig.sequence_id, trig.index, chosen, rejected))
            slots[trig.index] = (chosen, self._images.pop(chosen))
        else:
            slots.setdefault(trig.index, None)
        n_resolved = len(slots)
        if n_resolved == self.seq_len:
            heapq.heappush(self._done, (self._seq_t[trig.sequence_id], trig.sequence_id))

    def _emit(self):
        # Sequences finish in order of their first trigger unless a later one
        # has no pending slots; emit only when no earlier sequence is open.
        while self._done:
            t_p, sid = self._done[0]
            if any(k[0] < t_p or (k[0] == t_p and k[1] < sid)
                   for k in ((self._seq_t[s], s) for s in self._open_sequences())):
                break
            heapq.heappop(self._done)
            slots = self._sequences.pop(sid)
            missing = [i for i in range(1, self.seq_len + 1) if slots.get(i) is None]
            if missing:
                rej = Rejection(sid, t_p, missing)
                log.info("%s", rej)
                self.result.rejections.append(rej)
                self.result.unmatched.extend(v[0] for v in slots.values() if v is not None)
                continue
            order = [slots[i] for i in range(1, self.seq_len + 1)]
            for i, (pos, _) in enumerate(order, start=1):
                self.result.assignments[(sid, i)] = pos
            images = [img for _, (tc, img) in order]
            stamps = np.array([tc for _, (tc, _) in order])
            if all(img is not None for img in images):
                fs = FrameSet(np.stack(images), stamps)
            else:
                fs = stamps
            self.result.framesets.append(fs)
            self.result.sequence_ids.append(sid)

    def _open_sequences(self):
        done = {sid for _, sid in self._done}
        return [s for s in self._sequences if s not in done]


def assemble(triggers, images, seq_len: int, cfg: SyncConfig = SyncConfig()) -> SyncResult:
    """Match whole trigger and image streams.

    ``images`` is a sequence of ``(t_c, image)`` pairs or bare timestamps.
    Completed frame sets carry the images when provided; with bare
    timestamps the emitted entries are timestamp arrays.
    """
    asm = Assembler(seq_len, cfg)
    events = [(t.t_p, 0, k, t) for k, t in enumerate(triggers)]
    for k, item in enumerate(images):
        if isinstance(item, (tuple, list)):
            tc, img = item
        else:
            tc, img = item, None
        events.append((float(tc), 1, k, (float(tc), img)))
    # triggers before images at equal times; otherwise stable stream order
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    for _, kind, _, payload in events:
        if kind == 0:
            asm.push_trigger(payload)
        else:
            asm.push_image(*payload)
    return asm.flush()


def brute_force_assign(triggers, timestamps, cfg: SyncConfig = SyncConfig()):
    """Reference matcher: evaluate the window test for every (image, slot) pair,
    then resolve slots in expected-time order. Returns the slot -> image map."""
    timestamps = np.asarray(timestamps, dtype=float)
    slots = sorted(triggers, key=lambda t: _slot_key(t, cfg))
    taken = set()
    out = {}
    for trig in slots:
        best = None
        for pos, tc in enumerate(timestamps):
            if pos in taken or not match_image(tc, trig, cfg):
                continue
            key = (abs(residual(tc, trig, cfg)), tc, pos)
            if best is None or key < best:
                best = key
        if best is not None:
            taken.add(best[2])
            out[(trig.sequence_id, trig.index)] = best[2]
    return out
