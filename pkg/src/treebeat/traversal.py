"""The traversal variants, from recursive reference to heartbeat scheduling.

Seven implementations of one function (sum every node of a binary tree),
each the product of one refactoring step:

    V0  recursive reference
    V1  fork/join parallel, realized through CPS over the task scheduler
    V2  parallel with defunctionalized continuations (one task per branch)
    V3  serial continuation-passing style (heap closures)
    V4  serial defunctionalized (linked activation records)
    V5  serial iterative stack machine (compiled kernel, constant call stack)
    V6  heartbeat traversal: V5 plus promotion of latent parallelism

V5 and V6 are the measured pair; they run as nopython kernels (see engine).
V6 also exists here as `sum_heartbeat_stepwise`, a pure-Python drive loop
over the same continuation stack, which is what `try_promote` plugs into;
it is the slow cross-checking twin of the compiled engine.
"""

from __future__ import annotations

import enum
import sys
import threading
from dataclasses import dataclass, field

from . import engine
from .kont import (
    KPBRANCH,
    KSBRANCH0,
    KSBRANCH1,
    KTERM,
    ContinuationStack,
    Frame,
)
from .scheduler import HeartbeatClock, WorkerPool, heartbeat
from .tree import NULL, Node, TreeSpec, arena_depth, generate, wrap64

DEFAULT_HEARTBEAT = 512

# V0-V2 nest call frames with tree depth; refuse deeper inputs
SAFE_RECURSION_DEPTH = 1000
# V3/V4 are CPS without tail calls: the frame chain grows with node count,
# not depth, so their bound is on tree size
SAFE_CPS_NODES = 50_000
# V1/V2 build three Python tasks per node
SAFE_TASK_NODES = 1 << 20
# stack for the helper thread that hosts deep CPS frame chains
_DEEP_STACK_BYTES = 512 << 20
_DEEP_STACK_THRESHOLD = 800  # frames; below this, run inline


class Variant(enum.Enum):
    V0_RECURSIVE = "v0"
    V1_FORK2JOIN = "v1"
    V2_PARALLEL_DEFUNC = "v2"
    V3_SERIAL_CPS = "v3"
    V4_SERIAL_DEFUNC = "v4"
    V5_SERIAL_ITERATIVE = "v5"
    V6_HEARTBEAT = "v6"

    @classmethod
    def parse(cls, token: str) -> "Variant":
        t = token.strip().lower()
        for v in cls:
            if t in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown variant {token!r}")


class VariantRefused(RuntimeError):
    """Variant/input combination rejected by a safety precondition."""


PARALLEL_VARIANTS = (
    Variant.V1_FORK2JOIN,
    Variant.V2_PARALLEL_DEFUNC,
    Variant.V6_HEARTBEAT,
)

DEPTH_BOUND_VARIANTS = (
    Variant.V0_RECURSIVE,
    Variant.V1_FORK2JOIN,
    Variant.V2_PARALLEL_DEFUNC,
    Variant.V3_SERIAL_CPS,
    Variant.V4_SERIAL_DEFUNC,
)


# -- V0: recursive reference -------------------------------------------------

def sum_recursive(root: Node | None) -> int:
    """Direct recursion; call-stack depth equals tree depth."""
    if root is None:
        return 0
    b0, b1 = root.bs
    return wrap64(sum_recursive(b0) + sum_recursive(b1) + root.v)


# -- V1: fork2join via the CPS conversion rule -------------------------------

def _sum_cps_parallel(pool, n, k):
    # fork2join(f0, f1) expands to: join task carrying the return
    # continuation, one child task per branch, an edge per child.  The
    # caller holds a reservation edge across the two forks so the first
    # child's join can never schedule tj early.
    if n is None:
        k(0)
        return
    s = [0, 0]
    b = n.bs
    v = n.v
    tj = pool.new_task(lambda: k(wrap64(s[0] + s[1] + v)))
    pool.add_edge(tj)
    for i in (0, 1):
        def receive(si, i=i):
            s[i] = si
            pool.join(tj)

        def child(i=i, receive=receive):
            _sum_cps_parallel(pool, b[i], receive)

        pool.fork(pool.new_task(child), tj)
    pool.join(tj)


def sum_fork2join(root: Node | None, pool: WorkerPool) -> int:
    """Branch pairs run as parallel tasks; results meet in a join task."""
    out = []
    pool.run_to_completion(pool.new_task(lambda: _sum_cps_parallel(pool, root, out.append)))
    return out[0]


# -- V2: parallel with defunctionalized continuations ------------------------

class _PBranch:
    __slots__ = ("i", "s", "tj")

    def __init__(self, i, s, tj):
        self.i = i
        self.s = s
        self.tj = tj


class _Term:
    __slots__ = ("cell",)

    def __init__(self, cell):
        self.cell = cell


def _apply_parallel(pool, k, sa):
    if isinstance(k, _PBranch):
        k.s[k.i] = sa
        pool.join(k.tj)
    else:
        k.cell.append(sa)


def _sum_defunc_parallel(pool, n, k):
    if n is None:
        _apply_parallel(pool, k, 0)
        return
    s = [0, 0]
    b = n.bs
    v = n.v
    tj = pool.new_task(lambda: _apply_parallel(pool, k, wrap64(s[0] + s[1] + v)))
    pool.add_edge(tj)
    for i in (0, 1):
        def child(i=i):
            _sum_defunc_parallel(pool, b[i], _PBranch(i, s, tj))

        pool.fork(pool.new_task(child), tj)
    pool.join(tj)


def sum_parallel_defunc(root: Node | None, pool: WorkerPool) -> int:
    """One task per branch per node plus a join task per node.

    Highly parallel but work-inefficient by design: each task does almost
    no useful work.
    """
    out = []
    pool.run_to_completion(
        pool.new_task(lambda: _sum_defunc_parallel(pool, root, _Term(out)))
    )
    return out[0]


# -- V3: serial CPS -----------------------------------------------------------

def sum_serial_cps(root: Node | None) -> int:
    """Heap-allocated closure continuations; Python frames mirror depth."""
    cell = []

    def go(n, k):
        if n is None:
            k(0)
            return
        b0, b1 = n.bs
        v = n.v
        go(b0, lambda s0: go(b1, lambda s1: k(wrap64(s0 + s1 + v))))

    go(root, cell.append)
    return cell[0]


# -- V4: serial defunctionalized ----------------------------------------------

_RT_TERM = 0
_RT_BRANCH0 = 1
_RT_BRANCH1 = 2


def sum_serial_defunc(root: Node | None) -> int:
    """Linked activation records with a mutually recursive sum/apply pair."""
    cell = []

    def go(n, k):
        if n is None:
            apply_k(k, 0)
            return
        go(n.bs[0], (_RT_BRANCH0, n, k))

    def apply_k(k, sa):
        tag = k[0]
        if tag == _RT_BRANCH0:
            _, n, k1 = k
            go(n.bs[1], (_RT_BRANCH1, sa, n, k1))
        elif tag == _RT_BRANCH1:
            _, s0, n, k1 = k
            apply_k(k1, wrap64(s0 + sa + n.v))
        else:
            cell.append(sa)

    go(root, (_RT_TERM,))
    return cell[0]


# -- V5: serial iterative -----------------------------------------------------

def sum_serial_iterative(root: Node | None) -> int:
    """Iterative stack-machine traversal; handles any depth."""
    if root is None:
        return 0
    total, _trips = engine.run_iterative(root.arena, root.index)
    return total


# -- V6: heartbeat ------------------------------------------------------------

def sum_heartbeat(root: Node | None, pool: WorkerPool,
                  clock: HeartbeatClock | None = None) -> int:
    """Heartbeat traversal on the pool's workers (compiled engine)."""
    if root is None:
        return 0
    rate = (clock.rate if clock is not None else pool.heartbeat_rate)
    total, _counters, _run = engine.run_heartbeat(root.arena, root.index, pool, rate)
    return total


class PromotionRegistry:
    """Maps the int ids stored in KPBranch frames to live Python objects.

    One registry per Python-level traversal; shared by all of its promoted
    tasks.  Appends are serialized; slot writes are disjoint by index.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.buffers = []
        self.tasks = []
        self.results = {}

    def add_buffer(self):
        with self._lock:
            self.buffers.append([0, 0])
            return len(self.buffers) - 1

    def add_task(self, task):
        with self._lock:
            self.tasks.append(task)
            return len(self.tasks) - 1


def _registry_of(stack: ContinuationStack) -> PromotionRegistry:
    if stack.registry is None:
        stack.registry = PromotionRegistry()
    return stack.registry


def try_promote(stack: ContinuationStack, pool: WorkerPool,
                clock: HeartbeatClock) -> None:
    """Promote the outermost latent first-branch frame, if there is one.

    No potential: the stack is left untouched.  Otherwise the frames outer
    than the promotion point migrate into a fresh join task, the promoted
    frame becomes the parallel-return frame of the continuing traversal,
    and the node's second branch starts as a stealable child task.  The
    join task waits on exactly two edges: the child's and this traversal's.
    """
    pos = stack.find_outermost_potential()
    if pos is None:
        return
    arena = stack.arena
    reg = _registry_of(stack)
    ks0 = stack.get(pos)
    node_index = ks0.node
    second = int(arena.c1[node_index])
    bufid = reg.add_buffer()
    buf = reg.buffers[bufid]
    outer_cell = []

    def resume_outer():
        outer = outer_cell[0]
        outer.push(Frame.sbranch1(wrap64(buf[0] + buf[1]), node_index))
        _drive_heartbeat(NULL, outer, pool, clock)

    tj = pool.new_task(resume_outer)
    tjid = reg.add_task(tj)
    pool.add_edge(tj)  # the promoting traversal's own edge

    child_stack = ContinuationStack(Frame.pbranch(1, bufid, tjid), arena=arena)
    child_stack.registry = reg
    t1 = pool.new_task(lambda: _drive_heartbeat(second, child_stack, pool, clock))
    reg.add_task(t1)
    pool.fork(t1, tj)  # tj now waits on exactly two edges

    outer = stack.split_and_replace(pos, Frame.pbranch(0, bufid, tjid))
    outer_cell.append(outer)


def _drive_heartbeat(n: int, stack: ContinuationStack, pool: WorkerPool,
                     clock: HeartbeatClock) -> None:
    """Stepwise heartbeat drive loop: V5's two loops plus promotion checks.

    Pure-Python counterpart of the compiled engine, promoted tasks and all;
    kept slow and observable for cross-checking.
    """
    arena = stack.arena
    val, c1 = arena.val, arena.c1
    c0 = arena.c0
    reg = _registry_of(stack)
    sa = 0
    while True:
        if heartbeat(clock):
            try_promote(stack, pool, clock)
        if n != NULL:
            stack.push(Frame.sbranch0(n))
            n = int(c0[n])
            continue
        sa = 0
        while True:
            if heartbeat(clock):
                try_promote(stack, pool, clock)
            f = stack.peek()
            if f.kind == KSBRANCH0:
                n1 = f.f0
                n = int(c1[n1])
                stack.pop()
                stack.push(Frame.sbranch1(sa, n1))
                break
            elif f.kind == KSBRANCH1:
                stack.pop()
                sa = wrap64(f.f0 + sa + int(val[f.f1]))
            elif f.kind == KPBRANCH:
                reg.buffers[f.f1][f.f0] = sa
                pool.join(reg.tasks[f.f2])
                return
            else:  # KTERM
                reg.results[f.f0] = sa
                return


def sum_heartbeat_stepwise(root: Node | None, pool: WorkerPool,
                           clock: HeartbeatClock) -> int:
    """Heartbeat traversal in pure Python over the continuation stack.

    Semantics-faithful reference twin of `sum_heartbeat`; use only at test
    scale.
    """
    if root is None:
        return 0
    stack = ContinuationStack(Frame.kterm(0), arena=root.arena)
    reg = _registry_of(stack)

    def start():
        _drive_heartbeat(root.index, stack, pool, clock)

    pool.run_to_completion(pool.new_task(start))
    return reg.results[0]


# -- harness entry -------------------------------------------------------------

@dataclass
class VariantResult:
    variant: Variant
    total: int
    counters: dict = field(default_factory=dict)


def _guard_input(variant: Variant, root: Node | None) -> int:
    """Refuse variant/input pairs that would blow the call stack (or the
    task heap); returns the Python-frame budget the run needs."""
    if root is None:
        return 0
    depth = arena_depth(root.arena, root.index)
    nodes = len(root.arena)
    if variant in (Variant.V0_RECURSIVE, Variant.V1_FORK2JOIN,
                   Variant.V2_PARALLEL_DEFUNC):
        if depth > SAFE_RECURSION_DEPTH:
            raise VariantRefused(
                f"{variant.name} nests one activation record per tree level "
                f"on the call stack; this input is {depth} deep, past the "
                f"safe bound of {SAFE_RECURSION_DEPTH} (v5/v6 handle it)"
            )
    if variant in (Variant.V1_FORK2JOIN, Variant.V2_PARALLEL_DEFUNC):
        if nodes > SAFE_TASK_NODES:
            raise VariantRefused(
                f"{variant.name} allocates three tasks per node; "
                f"{nodes} nodes is past the safe bound of {SAFE_TASK_NODES}"
            )
        return 64
    if variant in (Variant.V3_SERIAL_CPS, Variant.V4_SERIAL_DEFUNC):
        if nodes > SAFE_CPS_NODES:
            raise VariantRefused(
                f"{variant.name} chains one continuation frame per visited "
                f"node without tail calls; {nodes} nodes is past the safe "
                f"bound of {SAFE_CPS_NODES} (v5/v6 handle it)"
            )
        return 6 * nodes + 2 * depth + 64
    return 2 * depth + 64


def _call_deep(fn, frame_budget: int):
    """Run fn() where frame_budget nested Python calls are safe.

    CPython 3.10 burns C stack per Python call, so deep chains move to a
    helper thread with a large stack and a raised recursion limit.
    """
    if frame_budget < _DEEP_STACK_THRESHOLD:
        return fn()
    out: list = []
    old_limit = sys.getrecursionlimit()

    def runner():
        sys.setrecursionlimit(frame_budget + 1000)
        try:
            out.append(fn())
        except BaseException as exc:  # propagated to the caller below
            out.append(exc)
        finally:
            sys.setrecursionlimit(old_limit)

    old_size = threading.stack_size(_DEEP_STACK_BYTES)
    try:
        t = threading.Thread(target=runner)
    finally:
        threading.stack_size(old_size)
    t.start()
    t.join()
    if isinstance(out[0], BaseException):
        raise out[0]
    return out[0]


def run_variant(variant: Variant, spec: TreeSpec, nworkers: int = 1,
                rate: int | str = DEFAULT_HEARTBEAT, seed: int = 0,
                pool: WorkerPool | None = None, root: Node | None = None,
                instrument: int = 0) -> VariantResult:
    """Generate the input (unless given), run one variant, report counters.

    Depth-unsafe variant/input pairs raise VariantRefused instead of
    crashing the interpreter.
    """
    if root is None:
        root = generate(spec)
    frame_budget = 0
    if variant in DEPTH_BOUND_VARIANTS:
        frame_budget = _guard_input(variant, root)
    rate = DEFAULT_HEARTBEAT if rate in (None, "calibrate") else int(rate)

    own_pool = None
    if pool is None and variant in PARALLEL_VARIANTS:
        pool = own_pool = WorkerPool(nworkers, seed=seed, heartbeat_rate=rate)
    try:
        counters: dict = {}
        if variant is Variant.V0_RECURSIVE:
            total = _call_deep(lambda: sum_recursive(root), frame_budget)
        elif variant is Variant.V1_FORK2JOIN:
            before = dict(pool.counters)
            total = sum_fork2join(root, pool)
            counters = {k: pool.counters[k] - before[k] for k in before}
        elif variant is Variant.V2_PARALLEL_DEFUNC:
            before = dict(pool.counters)
            total = sum_parallel_defunc(root, pool)
            counters = {k: pool.counters[k] - before[k] for k in before}
        elif variant is Variant.V3_SERIAL_CPS:
            total = _call_deep(lambda: sum_serial_cps(root), frame_budget)
        elif variant is Variant.V4_SERIAL_DEFUNC:
            total = _call_deep(lambda: sum_serial_defunc(root), frame_budget)
        elif variant is Variant.V5_SERIAL_ITERATIVE:
            total, trips = engine.run_iterative(root.arena, root.index)
            counters = {"loop_trips": trips}
        elif variant is Variant.V6_HEARTBEAT:
            total, eng_counters, run = engine.run_heartbeat(
                root.arena, root.index, pool, rate, instrument=instrument
            )
            counters = eng_counters.as_dict()
            counters["per_worker"] = eng_counters.per_worker
            if instrument:
                counters["promotion_log"] = run.promotion_log()
        else:
            raise ValueError(f"unhandled variant {variant}")
        return VariantResult(variant, total, counters)
    finally:
        if own_pool is not None:
            own_pool.close()
