"""Minimal fork/join task scheduler with a work-stealing worker pool.

Tasks carry a thunk and a counter of unresolved incoming dependency edges.
`fork(c, k)` registers an edge from child c to continuation k and makes c
runnable on the calling worker's queue; `join(j)` resolves one edge on j
and schedules it when the last edge resolves.  Workers pop their own queue
LIFO and steal FIFO from uniformly random victims.

One pool serves every traversal variant.  The compiled heartbeat engine
borrows the same worker threads through `invoke_on_workers` instead of
submitting Python-level tasks.
"""

from __future__ import annotations

import os
import random
import threading
from collections import deque

CREATED = 0
READY = 1
RUNNING = 2
DONE = 3


class SchedulerError(RuntimeError):
    pass


class TaskContractError(SchedulerError):
    """A fork/join precondition was violated."""


class DeadlockError(SchedulerError):
    """Quiescence with unresolved dependency edges."""


class InvalidConfigError(SchedulerError, ValueError):
    pass


_tls = threading.local()


def current_worker() -> int:
    """Index of the pool worker running this thread, 0 outside the pool."""
    return getattr(_tls, "worker_id", 0)


class Task:
    """A schedulable unit: a no-argument thunk plus dependency bookkeeping."""

    __slots__ = ("thunk", "pending", "state")

    def __init__(self, thunk):
        self.thunk = thunk
        self.pending = 0
        self.state = CREATED

    def __repr__(self):
        return f"Task(pending={self.pending}, state={self.state})"


class HeartbeatClock:
    """Per-worker trip counter that fires once every `rate` calls."""

    def __init__(self, rate: int, nworkers: int = 1):
        if rate < 1:
            raise InvalidConfigError(f"heartbeat rate must be >= 1, got {rate}")
        self.rate = int(rate)
        self._counts = [0] * max(1, nworkers)

    def beat(self, worker: int | None = None) -> bool:
        """Count one trip for `worker`; True on every rate-th call."""
        w = current_worker() if worker is None else worker
        c = self._counts[w] + 1
        if c >= self.rate:
            self._counts[w] = 0
            return True
        self._counts[w] = c
        return False

    def reset(self) -> None:
        self._counts = [0] * len(self._counts)


def heartbeat(clock: HeartbeatClock) -> bool:
    return clock.beat()


class WorkerPool:
    """Fixed set of worker threads with per-worker steal queues.

    Thread-safety: one lock guards queues, task states, and edge counters.
    Python-level tasks are scheduling-bound anyway (they exist for the
    task-graph variants and tests); the measured traversals run compiled
    code on these same threads via invoke_on_workers.
    """

    def __init__(self, nworkers: int, seed: int = 0, heartbeat_rate: int = 512):
        if nworkers < 1:
            raise InvalidConfigError(f"nworkers must be >= 1, got {nworkers}")
        if heartbeat_rate < 1:
            raise InvalidConfigError(
                f"heartbeat rate must be >= 1, got {heartbeat_rate}"
            )
        self.nworkers = nworkers
        self.seed = seed
        self.heartbeat_rate = heartbeat_rate
        self.counters = {"tasks_created": 0, "joins": 0, "steals": 0}
        self._queues = [deque() for _ in range(nworkers)]
        self._rngs = [random.Random(seed * 0x9E3779B1 + w) for w in range(nworkers)]
        self._cv = threading.Condition()
        self._inflight = 0
        self._blocked = set()  # tasks holding unresolved edges, not yet runnable
        self._failure = None
        self._stop = False
        self._directive = None
        self._directive_gen = 0
        self._directive_left = 0
        self._threads = [
            threading.Thread(target=self._worker, args=(w,), daemon=True)
            for w in range(nworkers)
        ]
        for t in self._threads:
            t.start()

    # -- task API ----------------------------------------------------------

    def new_task(self, thunk) -> Task:
        with self._cv:
            self.counters["tasks_created"] += 1
        return Task(thunk)

    def add_edge(self, cont: Task, count: int = 1) -> None:
        """Register dependency edges on cont without forking a child.

        Used when the resolver is not a fresh child task: the promoting
        traversal registers its own edge this way, and a parent forking two
        siblings holds a reservation edge so the first sibling's join cannot
        schedule cont before the second fork lands.
        """
        with self._cv:
            if cont.state != CREATED:
                raise TaskContractError("add_edge: continuation already scheduled")
            cont.pending += count
            self._blocked.add(cont)

    def fork(self, child: Task, cont: Task) -> None:
        """Register edge child -> cont and make child runnable."""
        with self._cv:
            if child.state != CREATED:
                raise TaskContractError("fork: child was already forked or run")
            if cont.state not in (CREATED,):
                raise TaskContractError("fork: continuation already scheduled")
            cont.pending += 1
            self._blocked.add(cont)
            child.state = READY
            self._queues[current_worker()].append(child)
            self._inflight += 1
            self._cv.notify_all()

    def join(self, task: Task) -> None:
        """Resolve one incoming edge; schedule the task on the last one."""
        with self._cv:
            self.counters["joins"] += 1
            if task.pending < 1:
                raise TaskContractError("join on a task with no unresolved edges")
            task.pending -= 1
            if task.pending == 0:
                self._blocked.discard(task)
                task.state = READY
                self._queues[current_worker()].append(task)
                self._inflight += 1
                self._cv.notify_all()

    def run_to_completion(self, root: Task, timeout: float = 120.0) -> None:
        """Run root and everything transitively forked from it.

        Returns once all scheduled work is done.  Raises DeadlockError if
        the pool goes quiescent while unresolved dependency edges remain.
        """
        with self._cv:
            if root.state == CREATED and root.pending == 0:
                root.state = READY
                self._queues[0].append(root)
                self._inflight += 1
                self._cv.notify_all()
            elif root.state != READY:
                raise TaskContractError("root must be runnable")
            while True:
                if self._failure is not None:
                    exc, self._failure = self._failure, None
                    raise exc
                if self._inflight == 0:
                    if self._blocked:
                        blocked, self._blocked = self._blocked, set()
                        raise DeadlockError(
                            f"{len(blocked)} task(s) still wait on edges that "
                            "can never resolve"
                        )
                    return
                if not self._cv.wait(timeout=timeout):
                    raise DeadlockError("pool made no progress within timeout")

    # -- engine hook ---------------------------------------------------------

    def invoke_on_workers(self, fn) -> None:
        """Run fn(worker_id) once on every worker thread; block until done."""
        with self._cv:
            self._directive = fn
            self._directive_gen += 1
            self._directive_left = self.nworkers
            self._cv.notify_all()
            while self._directive_left > 0:
                if self._failure is not None:
                    exc, self._failure = self._failure, None
                    raise exc
                self._cv.wait()
            self._directive = None

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        for t in self._threads:
            t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- internals -----------------------------------------------------------

    def _take_locked(self, wid):
        q = self._queues[wid]
        if q:
            return q.pop()
        others = [v for v in range(self.nworkers) if v != wid and self._queues[v]]
        if others:
            victim = self._rngs[wid].choice(others)
            self.counters["steals"] += 1
            return self._queues[victim].popleft()
        return None

    def _worker(self, wid):
        _tls.worker_id = wid
        seen_gen = 0
        while True:
            directive = None
            task = None
            with self._cv:
                while True:
                    if self._stop:
                        return
                    if self._directive_gen > seen_gen:
                        seen_gen = self._directive_gen
                        directive = self._directive
                        break
                    task = self._take_locked(wid)
                    if task is not None:
                        task.state = RUNNING
                        break
                    self._cv.wait()
            if directive is not None:
                try:
                    directive(wid)
                except BaseException as exc:  # surfaced to invoke_on_workers
                    with self._cv:
                        if self._failure is None:
                            self._failure = exc
                finally:
                    with self._cv:
                        self._directive_left -= 1
                        self._cv.notify_all()
                continue
            try:
                task.thunk()
            except BaseException as exc:  # surfaced to run_to_completion
                with self._cv:
                    if self._failure is None:
                        self._failure = exc
            finally:
                with self._cv:
                    task.state = DONE
                    self._inflight -= 1
                    self._cv.notify_all()


def hardware_parallelism() -> int:
    return os.cpu_count() or 1
