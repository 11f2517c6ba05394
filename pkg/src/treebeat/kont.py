"""Defunctionalized continuation frames and the linear continuation stack.

One traversal's continuation lives in a `ContinuationStack`: a ring buffer
of fixed-size frames ordered outermost (front) to innermost (back), plus a
ring of "promotion potentials" holding the positions of every first-branch
frame (KSBRANCH0).  Positions are stable logical indices (a base counter
advances as the front is consumed), so both ends mutate in O(1) and the
outermost potential is always a constant-time peek.

The record kinds:

    KTERM      final continuation; f0 = destination cell id
    KPBRANCH   parallel branch return; f0 = branch index, f1 = result
               buffer id, f2 = join task id
    KSBRANCH0  first branch of f0's node is in flight
    KSBRANCH1  second branch in flight; f0 = first-branch sum, f1 = node

Records are stored inline as int64 rows; tail links between records are
replaced by positional adjacency.  The nopython helpers below operate on
the raw arrays and are shared with the compiled traversal engine, so the
Python methods and the hot loops execute the same logic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KTERM = 0
KPBRANCH = 1
KSBRANCH0 = 2
KSBRANCH1 = 3

_KIND_NAMES = ("KTerm", "KPBranch", "KSBranch0", "KSBranch1")

# meta slots; 6+ are reserved for the engine's per-task state
M_CAP = 0
M_LEN = 1
M_HEAD = 2
M_BASE = 3
M_PLEN = 4
M_PHEAD = 5
NMETA = 16

_INITIAL_CAP = 8


class ContractError(RuntimeError):
    """A continuation-stack precondition was violated."""


class Frame:
    """One continuation record.  Immutable value object."""

    __slots__ = ("kind", "f0", "f1", "f2")

    def __init__(self, kind, f0=0, f1=0, f2=0):
        self.kind = int(kind)
        self.f0 = int(f0)
        self.f1 = int(f1)
        self.f2 = int(f2)

    @classmethod
    def kterm(cls, ans_cell=0):
        return cls(KTERM, ans_cell)

    @classmethod
    def pbranch(cls, i, buf, task):
        if i not in (0, 1):
            raise ContractError(f"KPBranch index must be 0 or 1, got {i}")
        return cls(KPBRANCH, i, buf, task)

    @classmethod
    def sbranch0(cls, node):
        return cls(KSBRANCH0, node)

    @classmethod
    def sbranch1(cls, s0, node):
        return cls(KSBRANCH1, s0, node)

    @property
    def node(self):
        if self.kind == KSBRANCH0:
            return self.f0
        if self.kind == KSBRANCH1:
            return self.f1
        raise AttributeError(f"{_KIND_NAMES[self.kind]} has no node field")

    @property
    def s0(self):
        if self.kind != KSBRANCH1:
            raise AttributeError(f"{_KIND_NAMES[self.kind]} has no s0 field")
        return self.f0

    def __eq__(self, other):
        return (
            isinstance(other, Frame)
            and (self.kind, self.f0, self.f1, self.f2)
            == (other.kind, other.f0, other.f1, other.f2)
        )

    def __hash__(self):
        return hash((self.kind, self.f0, self.f1, self.f2))

    def render(self):
        if self.kind == KTERM:
            return "KTerm"
        if self.kind == KPBRANCH:
            return f"KPB({self.f0},s{self.f1},t{self.f2})"
        if self.kind == KSBRANCH0:
            return f"KSB0(n{self.f0})"
        return f"KSB1({self.f0},n{self.f1})"

    def __repr__(self):
        return self.render()


@njit(cache=True)
def k_grow(frames, pots, meta):
    """Double capacity, unrolling the ring so the front lands at index 0."""
    cap = meta[M_CAP]
    length = meta[M_LEN]
    head = meta[M_HEAD]
    ncap = cap * 2
    nframes = np.empty((ncap, 4), dtype=np.int64)
    for i in range(length):
        src = (head + i) % cap
        nframes[i, 0] = frames[src, 0]
        nframes[i, 1] = frames[src, 1]
        nframes[i, 2] = frames[src, 2]
        nframes[i, 3] = frames[src, 3]
    npots = np.empty(ncap, dtype=np.int64)
    plen = meta[M_PLEN]
    phead = meta[M_PHEAD]
    for i in range(plen):
        npots[i] = pots[(phead + i) % cap]
    meta[M_CAP] = ncap
    meta[M_HEAD] = 0
    meta[M_PHEAD] = 0
    return nframes, npots


@njit(cache=True)
def k_push(frames, pots, meta, tag, f0, f1, f2):
    """Append a frame at the innermost end; caller keeps the returned arrays."""
    if meta[M_LEN] >= meta[M_CAP]:
        frames, pots = k_grow(frames, pots, meta)
    cap = meta[M_CAP]
    at = (meta[M_HEAD] + meta[M_LEN]) % cap
    frames[at, 0] = tag
    frames[at, 1] = f0
    frames[at, 2] = f1
    frames[at, 3] = f2
    if tag == KSBRANCH0:
        pots[(meta[M_PHEAD] + meta[M_PLEN]) % cap] = meta[M_BASE] + meta[M_LEN]
        meta[M_PLEN] += 1
    meta[M_LEN] += 1
    return frames, pots


@njit(cache=True)
def k_pop(frames, pots, meta):
    """Remove and return the innermost frame as (tag, f0, f1, f2)."""
    cap = meta[M_CAP]
    meta[M_LEN] -= 1
    at = (meta[M_HEAD] + meta[M_LEN]) % cap
    tag = frames[at, 0]
    if tag == KSBRANCH0:
        meta[M_PLEN] -= 1
    return tag, frames[at, 1], frames[at, 2], frames[at, 3]


@njit(cache=True)
def k_back(frames, meta):
    """Peek the innermost frame."""
    at = (meta[M_HEAD] + meta[M_LEN] - 1) % meta[M_CAP]
    return frames[at, 0], frames[at, 1], frames[at, 2], frames[at, 3]


@njit(cache=True)
def k_set_back(frames, pots, meta, tag, f0, f1, f2):
    """Overwrite the innermost frame in place, keeping potentials exact."""
    cap = meta[M_CAP]
    at = (meta[M_HEAD] + meta[M_LEN] - 1) % cap
    was = frames[at, 0]
    if was == KSBRANCH0 and tag != KSBRANCH0:
        meta[M_PLEN] -= 1
    elif was != KSBRANCH0 and tag == KSBRANCH0:
        pots[(meta[M_PHEAD] + meta[M_PLEN]) % cap] = meta[M_BASE] + meta[M_LEN] - 1
        meta[M_PLEN] += 1
    frames[at, 0] = tag
    frames[at, 1] = f0
    frames[at, 2] = f1
    frames[at, 3] = f2


@njit(cache=True)
def k_outermost_potential(pots, meta):
    """Position of the outermost KSBRANCH0, or -1.  Constant time."""
    if meta[M_PLEN] == 0:
        return np.int64(-1)
    return pots[meta[M_PHEAD]]


@njit(cache=True)
def k_get(frames, meta, pos):
    """Read the frame at logical position pos."""
    at = (meta[M_HEAD] + (pos - meta[M_BASE])) % meta[M_CAP]
    return frames[at, 0], frames[at, 1], frames[at, 2], frames[at, 3]


@njit(cache=True)
def k_split_replace(frames, pots, meta, at, rtag, rf0, rf1, rf2):
    """Split off all frames outer than `at` and replace the frame at `at`.

    The stack described by (frames, pots, meta) is mutated: its new front is
    the replacement frame at position `at`.  The removed outer frames are
    returned as fresh (frames, pots, meta) arrays forming a valid stack that
    keeps its original base, so positions stay stable on both sides.
    """
    cap = meta[M_CAP]
    head = meta[M_HEAD]
    base = meta[M_BASE]
    outer_len = at - base
    ocap = _INITIAL_CAP
    while ocap < outer_len + 4:
        ocap *= 2
    oframes = np.empty((ocap, 4), dtype=np.int64)
    opots = np.empty(ocap, dtype=np.int64)
    ometa = np.zeros(NMETA, dtype=np.int64)
    for i in range(outer_len):
        src = (head + i) % cap
        oframes[i, 0] = frames[src, 0]
        oframes[i, 1] = frames[src, 1]
        oframes[i, 2] = frames[src, 2]
        oframes[i, 3] = frames[src, 3]
    # potentials strictly outer than `at` migrate, the one at `at` dies
    oplen = 0
    while meta[M_PLEN] > 0 and pots[meta[M_PHEAD]] < at:
        opots[oplen] = pots[meta[M_PHEAD]]
        oplen += 1
        meta[M_PHEAD] = (meta[M_PHEAD] + 1) % cap
        meta[M_PLEN] -= 1
    meta[M_PHEAD] = (meta[M_PHEAD] + 1) % cap
    meta[M_PLEN] -= 1
    ometa[M_CAP] = ocap
    ometa[M_LEN] = outer_len
    ometa[M_HEAD] = 0
    ometa[M_BASE] = base
    ometa[M_PLEN] = oplen
    ometa[M_PHEAD] = 0
    # the remaining stack now fronts on the replacement frame
    nhead = (head + outer_len) % cap
    frames[nhead, 0] = rtag
    frames[nhead, 1] = rf0
    frames[nhead, 2] = rf1
    frames[nhead, 3] = rf2
    meta[M_HEAD] = nhead
    meta[M_BASE] = at
    meta[M_LEN] -= outer_len
    return oframes, opots, ometa


def _new_arrays(cap=_INITIAL_CAP):
    frames = np.empty((cap, 4), dtype=np.int64)
    pots = np.empty(cap, dtype=np.int64)
    meta = np.zeros(NMETA, dtype=np.int64)
    meta[M_CAP] = cap
    return frames, pots, meta


class ContinuationStack:
    """Linear double-ended frame sequence with O(1) outermost-potential lookup.

    Owned by exactly one traversal at a time; never shared across threads.
    `lookup_steps` counts primitive steps spent answering potential lookups,
    so tests can assert the amortized bound without wall-clock timing.
    """

    def __init__(self, base_frame: Frame | None = None, arena=None):
        self.frames, self.pots, self.meta = _new_arrays()
        self.arena = arena
        self.registry = None  # per-traversal id table for buffer/task refs
        self.lookup_steps = 0
        if base_frame is not None:
            if base_frame.kind not in (KTERM, KPBRANCH):
                raise ContractError("base frame must be KTerm or KPBranch")
            self.frames, self.pots = k_push(
                self.frames, self.pots, self.meta,
                base_frame.kind, base_frame.f0, base_frame.f1, base_frame.f2,
            )

    @classmethod
    def from_frames(cls, frames, arena=None):
        frames = list(frames)
        stack = cls(frames[0] if frames else None, arena=arena)
        for f in frames[1:]:
            stack.push(f)
        return stack

    def __len__(self):
        return int(self.meta[M_LEN])

    @property
    def base(self) -> int:
        """Logical position of the front frame."""
        return int(self.meta[M_BASE])

    def push(self, frame: Frame) -> None:
        if frame.kind in (KTERM, KPBRANCH) and len(self) > 0:
            raise ContractError(
                f"{_KIND_NAMES[frame.kind]} is a base continuation and can "
                "only sit at the front"
            )
        self.frames, self.pots = k_push(
            self.frames, self.pots, self.meta,
            frame.kind, frame.f0, frame.f1, frame.f2,
        )

    def pop(self) -> Frame:
        if len(self) == 0:
            raise ContractError("pop on empty continuation stack")
        return Frame(*k_pop(self.frames, self.pots, self.meta))

    def peek(self) -> Frame:
        if len(self) == 0:
            raise ContractError("peek on empty continuation stack")
        return Frame(*k_back(self.frames, self.meta))

    def get(self, pos: int) -> Frame:
        if not self.base <= pos < self.base + len(self):
            raise ContractError(f"position {pos} out of range")
        return Frame(*k_get(self.frames, self.meta, pos))

    def find_outermost_potential(self):
        """Position of the outermost KSBRANCH0 frame, or None.  O(1)."""
        self.lookup_steps += 1
        pos = int(k_outermost_potential(self.pots, self.meta))
        return None if pos < 0 else pos

    def split_and_replace(self, at: int, replacement: Frame) -> "ContinuationStack":
        """Cut off everything outer than `at`, swap in `replacement` there.

        Returns the outer part as its own stack; self keeps the inner part
        fronted by the replacement frame.
        """
        if replacement.kind != KPBRANCH:
            raise ContractError("replacement frame must be KPBranch")
        if not self.base <= at < self.base + len(self):
            raise ContractError(f"split position {at} out of range")
        if self.get(at).kind != KSBRANCH0:
            raise ContractError(f"frame at {at} is not KSBranch0")
        outer = ContinuationStack.__new__(ContinuationStack)
        outer.arena = self.arena
        outer.registry = self.registry
        outer.lookup_steps = 0
        outer.frames, outer.pots, outer.meta = k_split_replace(
            self.frames, self.pots, self.meta, at,
            replacement.kind, replacement.f0, replacement.f1, replacement.f2,
        )
        return outer

    def as_frames(self) -> list[Frame]:
        """Snapshot, outermost first."""
        return [Frame(*k_get(self.frames, self.meta, self.base + i)) for i in range(len(self))]

    def potential_positions(self) -> list[int]:
        """Snapshot of the potentials index, outermost first."""
        cap = int(self.meta[M_CAP])
        phead = int(self.meta[M_PHEAD])
        return [int(self.pots[(phead + i) % cap]) for i in range(int(self.meta[M_PLEN]))]

    def render(self) -> str:
        return "|".join(f.render() for f in self.as_frames())

    def __repr__(self):
        return f"ContinuationStack({self.render()})"
