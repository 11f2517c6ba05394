"""Compiled traversal engine: the iterative serial loop and its heartbeat twin.

The serial iterative traversal and the heartbeat traversal are nopython
kernels over the tree arena and the continuation-stack arrays, so the trip
loop runs at native speed and, crucially, outside the GIL: pool worker
threads executing these kernels overlap on real cores.

The heartbeat runtime keeps every piece of shared state in plain arrays and
typed lists guarded by one CAS spinlock (`ctl[CTL_LOCK]`):

    meta_l / frames_l / pots_l   one continuation stack + registers per task
    buffers_l                    2-slot result buffer per promotion
    deques / dqmeta              per-worker ready queues of task ids
    counters                     per-worker instrumentation row

Lock traffic is one acquire per promotion, task start, and task end -- a
few hundred thousand per second at realistic heartbeat rates, far below
the lock's throughput.  Task stacks themselves are single-owner and run
lock-free.  A task id is an index into the three task lists; a task never
migrates after it starts running (run-to-completion), so grown stack
arrays never need to be written back.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import List as TypedList

from ._atomics import atomic_load, atomic_store, cpu_yield, lock_acquire, lock_release
from .kont import (
    KPBRANCH,
    KSBRANCH0,
    KSBRANCH1,
    KTERM,
    M_BASE,
    M_CAP,
    M_HEAD,
    M_LEN,
    M_PHEAD,
    M_PLEN,
    NMETA,
    k_back,
    k_get,
    k_outermost_potential,
    k_pop,
    k_push,
    k_set_back,
    k_split_replace,
)

NULL = -1

# task meta slots, extending the stack meta block
M_PENDING = 6
M_REG_N = 7
M_SEED_BUF = 8
M_SEED_NODE = 9

# ctl slots
CTL_LOCK = 0
CTL_DONE = 1

# per-worker counter columns
C_TRIPS = 0
C_FIRES = 1
C_PROMOS = 2
C_TASKS = 3
C_JOINS = 4
C_STEALS = 5
NCOUNT = 6

COUNTER_NAMES = (
    "loop_trips",
    "heartbeat_fires",
    "promotions",
    "tasks_created",
    "joins",
    "steals",
)

_DQ_INITIAL = 256


@njit(cache=True)
def _new_stack_arrays(cap):
    frames = np.empty((cap, 4), dtype=np.int64)
    pots = np.empty(cap, dtype=np.int64)
    meta = np.zeros(NMETA, dtype=np.int64)
    meta[M_CAP] = cap
    return frames, pots, meta


@njit(cache=True)
def _dq_push(deques, dqmeta, w, tid):
    cap = dqmeta[w, 0]
    head = dqmeta[w, 1]
    length = dqmeta[w, 2]
    if length >= cap:
        ncap = cap * 2
        fresh = np.empty(ncap, dtype=np.int64)
        old = deques[w]
        for i in range(length):
            fresh[i] = old[(head + i) % cap]
        deques[w] = fresh
        dqmeta[w, 0] = ncap
        dqmeta[w, 1] = 0
        cap, head = ncap, 0
    deques[w][(head + length) % cap] = tid
    dqmeta[w, 2] = length + 1


@njit(cache=True)
def _dq_pop_back(deques, dqmeta, w):
    cap = dqmeta[w, 0]
    length = dqmeta[w, 2] - 1
    dqmeta[w, 2] = length
    return deques[w][(dqmeta[w, 1] + length) % cap]


@njit(cache=True)
def _dq_pop_front(deques, dqmeta, w):
    head = dqmeta[w, 1]
    tid = deques[w][head]
    dqmeta[w, 1] = (head + 1) % dqmeta[w, 0]
    dqmeta[w, 2] -= 1
    return tid


@njit(cache=True)
def _rng_next(rng, w):
    # xorshift64*; any nonzero state cycles through all of 2^64-1
    x = np.uint64(rng[w])
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    rng[w] = np.int64(x)
    return np.int64((x * np.uint64(0x2545F4914F6CDD1D)) >> np.uint64(33))


@njit(nogil=True, cache=True)
def iterative_sum_kernel(val, c0, c1, root, frames, pots, meta, results):
    """Tail-call-eliminated serial traversal: two nested dispatch loops."""
    trips = np.int64(0)
    n = root
    sa = np.int64(0)
    while True:
        trips += 1
        if n == NULL:
            sa = 0
            while True:
                trips += 1
                tag, f0, f1, f2 = k_back(frames, meta)
                if tag == KSBRANCH0:
                    n = c1[f0]
                    k_set_back(frames, pots, meta, KSBRANCH1, sa, f0, 0)
                    break
                elif tag == KSBRANCH1:
                    k_pop(frames, pots, meta)
                    sa = f0 + sa + val[f1]
                else:  # KTERM
                    results[f0] = sa
                    return trips
        else:
            frames, pots = k_push(frames, pots, meta, KSBRANCH0, n, 0, 0)
            n = c0[n]


@njit(nogil=True, cache=True)
def _promote(c1, frames_l, pots_l, meta_l, buffers_l, deques, dqmeta, ctl,
             counters, wid, fr, pt, mt, promolog, plmeta):
    """Turn the outermost latent first-branch frame into real tasks.

    The outer continuation migrates into a join task expecting two results;
    a child task takes the node's second branch; the current stack keeps
    running the in-flight first branch under a parallel-return frame.
    """
    pos = k_outermost_potential(pt, mt)
    tag, n1, _u1, _u2 = k_get(fr, mt, pos)
    if plmeta[0] == 1 and plmeta[1] < len(promolog):
        # instrumented runs record the chosen position and an independent
        # front-to-back frame scan for the outermost-targeting check
        scanned = np.int64(-1)
        for i in range(mt[M_LEN]):
            p = mt[M_BASE] + i
            stag, _a, _b, _c = k_get(fr, mt, p)
            if stag == KSBRANCH0:
                scanned = p
                break
        promolog[plmeta[1], 0] = pos
        promolog[plmeta[1], 1] = scanned
        plmeta[1] += 1
    cbranch = c1[n1]
    # join-task stack = everything outer than the promotion point
    ofr, opt, omt = k_split_replace(fr, pt, mt, pos, KPBRANCH, 0, 0, 0)
    omt[M_PENDING] = 2
    omt[M_SEED_NODE] = n1
    omt[M_REG_N] = NULL
    # child task: second branch under a parallel-return base frame
    cfr, cpt, cmt = _new_stack_arrays(8)
    cfr, cpt = k_push(cfr, cpt, cmt, KPBRANCH, 1, 0, 0)
    cmt[M_SEED_BUF] = NULL
    cmt[M_REG_N] = cbranch
    buf = np.zeros(2, dtype=np.int64)
    lock_acquire(ctl, CTL_LOCK)
    bufid = len(buffers_l)
    buffers_l.append(buf)
    tjid = len(meta_l)
    frames_l.append(ofr)
    pots_l.append(opt)
    meta_l.append(omt)
    cid = len(meta_l)
    frames_l.append(cfr)
    pots_l.append(cpt)
    meta_l.append(cmt)
    omt[M_SEED_BUF] = bufid
    # patch buffer/join ids into both parallel-return frames
    cfr[0, 2] = bufid
    cfr[0, 3] = tjid
    hd = mt[M_HEAD]
    fr[hd, 2] = bufid
    fr[hd, 3] = tjid
    _dq_push(deques, dqmeta, wid, cid)
    lock_release(ctl, CTL_LOCK)
    counters[wid, C_TASKS] += 2
    counters[wid, C_PROMOS] += 1


@njit(nogil=True, cache=True)
def heartbeat_worker(val, c0, c1, frames_l, pots_l, meta_l, buffers_l,
                     deques, dqmeta, ctl, counters, hbctr, rng, results,
                     rate, wid, nworkers, promolog, plmeta):
    """Worker loop: take or steal a task, run its traversal to completion.

    The traversal is the serial iterative loop extended with the heartbeat
    check at the top of both loops and the parallel-return dispatch arm.
    """
    while atomic_load(ctl, CTL_DONE) == 0:
        tid = np.int64(-1)
        lock_acquire(ctl, CTL_LOCK)
        if dqmeta[wid, 2] > 0:
            tid = _dq_pop_back(deques, dqmeta, wid)
        elif nworkers > 1:
            start = _rng_next(rng, wid) % nworkers
            for k in range(nworkers):
                v = (start + k) % nworkers
                if v != wid and dqmeta[v, 2] > 0:
                    tid = _dq_pop_front(deques, dqmeta, v)
                    counters[wid, C_STEALS] += 1
                    break
        lock_release(ctl, CTL_LOCK)
        if tid < 0:
            cpu_yield()
            continue

        lock_acquire(ctl, CTL_LOCK)
        fr = frames_l[tid]
        pt = pots_l[tid]
        mt = meta_l[tid]
        seedbuf = mt[M_SEED_BUF]
        if seedbuf >= 0:
            buf = buffers_l[seedbuf]
            s01 = buf[0] + buf[1]
        else:
            s01 = np.int64(0)
        lock_release(ctl, CTL_LOCK)
        if seedbuf >= 0:
            # a join task resumes the outer continuation with the combined
            # branch results, entering the dispatch from the empty-node case
            fr, pt = k_push(fr, pt, mt, KSBRANCH1, s01, mt[M_SEED_NODE], 0)

        n = mt[M_REG_N]
        sa = np.int64(0)
        running = True
        while running:
            counters[wid, C_TRIPS] += 1
            hbctr[wid] += 1
            if hbctr[wid] >= rate:
                hbctr[wid] = 0
                counters[wid, C_FIRES] += 1
                if mt[M_PLEN] > 0:
                    _promote(c1, frames_l, pots_l, meta_l, buffers_l, deques,
                             dqmeta, ctl, counters, wid, fr, pt, mt,
                             promolog, plmeta)
            if n != NULL:
                fr, pt = k_push(fr, pt, mt, KSBRANCH0, n, 0, 0)
                n = c0[n]
                continue
            sa = 0
            while True:
                counters[wid, C_TRIPS] += 1
                hbctr[wid] += 1
                if hbctr[wid] >= rate:
                    hbctr[wid] = 0
                    counters[wid, C_FIRES] += 1
                    if mt[M_PLEN] > 0:
                        _promote(c1, frames_l, pots_l, meta_l, buffers_l,
                                 deques, dqmeta, ctl, counters, wid, fr, pt,
                                 mt, promolog, plmeta)
                tag, f0, f1, f2 = k_back(fr, mt)
                if tag == KSBRANCH0:
                    n = c1[f0]
                    k_set_back(fr, pt, mt, KSBRANCH1, sa, f0, 0)
                    break
                elif tag == KSBRANCH1:
                    k_pop(fr, pt, mt)
                    sa = f0 + sa + val[f1]
                elif tag == KPBRANCH:
                    # deliver this branch's sum, resolve one join edge
                    lock_acquire(ctl, CTL_LOCK)
                    buffers_l[f1][f0] = sa
                    tjm = meta_l[f2]
                    tjm[M_PENDING] -= 1
                    ready = tjm[M_PENDING] == 0
                    if ready:
                        _dq_push(deques, dqmeta, wid, f2)
                    lock_release(ctl, CTL_LOCK)
                    counters[wid, C_JOINS] += 1
                    running = False
                    break
                else:  # KTERM: the whole traversal is complete
                    results[f0] = sa
                    atomic_store(ctl, CTL_DONE, 1)
                    running = False
                    break
    return 0


_I64_1D = types.int64[::1]
_I64_2D = types.int64[:, ::1]


class EngineCounters:
    """Per-run instrumentation, one row per worker plus totals."""

    def __init__(self, per_worker):
        self.per_worker = per_worker

    def total(self, name: str) -> int:
        return int(self.per_worker[:, COUNTER_NAMES.index(name)].sum())

    def worker(self, wid: int, name: str) -> int:
        return int(self.per_worker[wid, COUNTER_NAMES.index(name)])

    def as_dict(self) -> dict:
        return {name: self.total(name) for name in COUNTER_NAMES}

    def __repr__(self):
        return f"EngineCounters({self.as_dict()})"


def _empty_counters(nworkers=1):
    return EngineCounters(np.zeros((nworkers, NCOUNT), dtype=np.int64))


def run_iterative(arena, root_index: int):
    """Serial iterative sum over an arena tree.  Returns (total, trips)."""
    if root_index == NULL:
        return 0, 0
    frames, pots, meta = _new_stack_arrays(1024)
    results = np.zeros(1, dtype=np.int64)
    frames, pots = k_push(frames, pots, meta, KTERM, 0, 0, 0)
    trips = iterative_sum_kernel(arena.val, arena.c0, arena.c1,
                                 np.int64(root_index), frames, pots, meta,
                                 results)
    return int(results[0]), int(trips)


class HeartbeatRun:
    """State for one heartbeat-traversal execution on a worker pool."""

    def __init__(self, arena, root_index, nworkers, rate, seed=0, instrument=0):
        self.arena = arena
        self.root_index = root_index
        self.nworkers = nworkers
        self.rate = rate
        self.frames_l = TypedList.empty_list(_I64_2D)
        self.pots_l = TypedList.empty_list(_I64_1D)
        self.meta_l = TypedList.empty_list(_I64_1D)
        self.buffers_l = TypedList.empty_list(_I64_1D)
        self.deques = TypedList.empty_list(_I64_1D)
        for _ in range(nworkers):
            self.deques.append(np.empty(_DQ_INITIAL, dtype=np.int64))
        self.dqmeta = np.zeros((nworkers, 3), dtype=np.int64)
        self.dqmeta[:, 0] = _DQ_INITIAL
        self.ctl = np.zeros(8, dtype=np.int64)
        self.counters = np.zeros((nworkers, NCOUNT), dtype=np.int64)
        self.hbctr = np.zeros(nworkers, dtype=np.int64)
        self.rng = np.empty(nworkers, dtype=np.int64)
        for w in range(nworkers):
            self.rng[w] = (seed * 0x9E3779B1 + w * 0x6A09E667 + 1) & 0x7FFFFFFFFFFFFFFF
        self.results = np.zeros(1, dtype=np.int64)
        cap = instrument if instrument > 0 else 1
        self.promolog = np.full((cap, 2), -1, dtype=np.int64)
        self.plmeta = np.array([1 if instrument > 0 else 0, 0], dtype=np.int64)

        # root task: whole tree under the final continuation
        fr, pt, mt = _new_stack_arrays(64)
        fr, pt = k_push(fr, pt, mt, KTERM, 0, 0, 0)
        mt[M_REG_N] = root_index
        mt[M_SEED_BUF] = NULL
        self.frames_l.append(fr)
        self.pots_l.append(pt)
        self.meta_l.append(mt)
        self.counters[0, C_TASKS] = 1
        _dq_push(self.deques, self.dqmeta, 0, 0)

    def worker_entry(self, wid: int) -> None:
        a = self.arena
        heartbeat_worker(a.val, a.c0, a.c1, self.frames_l, self.pots_l,
                         self.meta_l, self.buffers_l, self.deques,
                         self.dqmeta, self.ctl, self.counters, self.hbctr,
                         self.rng, self.results, np.int64(self.rate),
                         np.int64(wid), np.int64(self.nworkers),
                         self.promolog, self.plmeta)

    def result(self) -> int:
        return int(self.results[0])

    def promotion_log(self):
        return self.promolog[: int(self.plmeta[1])].copy()


def run_heartbeat(arena, root_index, pool, rate, instrument=0):
    """Heartbeat-scheduled sum on `pool`'s workers.  (total, counters[, run])."""
    if root_index == NULL:
        return 0, _empty_counters(pool.nworkers), None
    run = HeartbeatRun(arena, root_index, pool.nworkers, rate,
                       seed=pool.seed, instrument=instrument)
    pool.invoke_on_workers(run.worker_entry)
    return run.result(), EngineCounters(run.counters.copy()), run


def warm_kernels() -> None:
    """Compile (or load from cache) both kernels on a trivial input."""
    from .tree import TreeSpec, TreeKind, generate

    root = generate(TreeSpec(TreeKind.PERFECT, height=2))
    arena = root.arena
    run_iterative(arena, root.index)
    from .scheduler import WorkerPool

    with WorkerPool(1) as pool:
        run_heartbeat(arena, root.index, pool, 4)
