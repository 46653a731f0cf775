"""Futures-based task engine with work stealing and kernel splitting.

Workers own FIFO deques and steal the oldest task from a randomly chosen
victim when idle.  Continuations run inline on whichever worker resolves
their antecedent, so dependency chains never pay a re-queue.  Blocking on
a handle is reserved for the orchestration layer: a worker that calls
``result()`` on a still-pending handle raises instead of deadlocking.
"""

from __future__ import annotations

import random
import threading
from collections import deque
from dataclasses import dataclass, field

from .errors import EngineShutdown

PENDING, READY, FAILED = "pending", "ready", "failed"

# Continuations run inline on the resolving thread, but iteratively: each
# thread drains its own callback queue at the outermost resolution frame,
# so arbitrarily long then() chains cannot overflow the stack.
_tls = threading.local()


def _dispatch_inline(callbacks, resolved):
    queue = getattr(_tls, "queue", None)
    if queue is None:
        queue = _tls.queue = deque()
    for cb in callbacks:
        queue.append((cb, resolved))
    if getattr(_tls, "draining", False):
        return
    _tls.draining = True
    try:
        while queue:
            cb, res = queue.popleft()
            cb(res)
    finally:
        _tls.draining = False


@dataclass
class EngineConfig:
    workers: int = 1
    discipline: str = "fifo-steal"
    steal_seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.discipline != "fifo-steal":
            raise ValueError(f"unknown queue discipline {self.discipline!r}")


@dataclass
class SplitPolicy:
    """How many tasks a kernel launch is split into (clamped to range length)."""

    tasks_per_kernel: int = 1

    def __post_init__(self):
        if self.tasks_per_kernel < 1:
            raise ValueError("tasks_per_kernel must be >= 1")

    def chunks(self, length: int):
        """Contiguous [start, stop) chunks with sizes differing by at most 1."""
        k = min(self.tasks_per_kernel, length)
        return [(i * length // k, (i + 1) * length // k) for i in range(k)]


class TaskHandle:
    """Completion token; resolves pending -> ready | failed exactly once."""

    __slots__ = ("_engine", "_lock", "_event", "_state", "_value", "_callbacks")

    def __init__(self, engine):
        self._engine = engine
        self._lock = threading.Lock()
        self._event = threading.Event()
        self._state = PENDING
        self._value = None
        self._callbacks = []

    @property
    def state(self):
        return self._state

    def done(self):
        return self._state != PENDING

    def _resolve(self, state, value):
        with self._lock:
            if self._state != PENDING:
                raise RuntimeError("handle resolved twice")
            self._state = state
            self._value = value
            callbacks, self._callbacks = self._callbacks, []
        self._event.set()
        if callbacks:
            _dispatch_inline(callbacks, self)

    def _add_callback(self, cb):
        """Attach cb; returns True if it will be invoked by the resolver,
        False if the handle is already resolved (caller must invoke)."""
        with self._lock:
            if self._state == PENDING:
                self._callbacks.append(cb)
                return True
        return False

    def result(self, timeout=None):
        if self._state == PENDING and self._engine._on_worker_thread():
            raise RuntimeError(
                "blocking on a pending handle inside a worker is forbidden; "
                "use then()/when_all() or join at the orchestration layer")
        if not self._event.wait(timeout):
            raise TimeoutError("handle not resolved within timeout")
        if self._state == FAILED:
            raise self._value
        return self._value

    def exception(self):
        self._event.wait()
        return self._value if self._state == FAILED else None


class TaskEngine:
    """Thread-pool engine with per-worker FIFO deques and random stealing."""

    def __init__(self, config: EngineConfig | int | None = None):
        if config is None:
            config = EngineConfig()
        elif isinstance(config, int):
            config = EngineConfig(workers=config)
        self.config = config
        self._queues = [deque() for _ in range(config.workers)]
        self._mutex = threading.Lock()
        self._work_cv = threading.Condition(self._mutex)
        self._idle_cv = threading.Condition(self._mutex)
        self._outstanding = 0
        self._shutdown = False
        self._submit_rr = 0
        self._threads = []
        self._worker_ids = {}
        for w in range(config.workers):
            rng = random.Random(config.steal_seed * 1_000_003 + w)
            t = threading.Thread(target=self._worker_loop, args=(w, rng),
                                 name=f"octomini-worker-{w}", daemon=True)
            self._threads.append(t)
        for t in self._threads:
            t.start()

    # -- worker machinery ------------------------------------------------

    def _on_worker_thread(self):
        return threading.get_ident() in self._worker_ids

    def _worker_loop(self, wid, rng):
        self._worker_ids[threading.get_ident()] = wid
        my_queue = self._queues[wid]
        n = self.config.workers
        while True:
            task = None
            with self._mutex:
                while True:
                    if my_queue:
                        task = my_queue.popleft()
                        break
                    # steal the oldest task from a random victim
                    victims = [v for v in range(n) if v != wid and self._queues[v]]
                    if victims:
                        task = self._queues[rng.choice(victims)].popleft()
                        break
                    if self._shutdown:
                        return
                    self._work_cv.wait()
            task()

    def _enqueue(self, task, wid=None):
        with self._mutex:
            if self._shutdown:
                raise EngineShutdown("engine is shut down")
            if wid is None:
                wid = self._worker_ids.get(threading.get_ident())
                if wid is None:
                    wid = self._submit_rr % self.config.workers
                    self._submit_rr += 1
            self._queues[wid].append(task)
            self._work_cv.notify()

    def _work_started(self):
        with self._mutex:
            self._outstanding += 1

    def _work_finished(self):
        with self._mutex:
            self._outstanding -= 1
            if self._outstanding == 0:
                self._idle_cv.notify_all()

    # -- public API --------------------------------------------------------

    def submit(self, fn, *args) -> TaskHandle:
        """Run fn(*args) on some worker; the handle resolves with its result."""
        handle = TaskHandle(self)
        self._work_started()

        def task():
            try:
                value = fn(*args)
            except BaseException as exc:  # noqa: BLE001 -- failure is a result
                handle._resolve(FAILED, exc)
            else:
                handle._resolve(READY, value)
            self._work_finished()

        try:
            self._enqueue(task)
        except EngineShutdown:
            self._work_finished()
            raise
        return handle

    def then(self, antecedent: TaskHandle, fn, on_error=None) -> TaskHandle:
        """Continuation: fn(result) after antecedent succeeds.

        If the antecedent failed, fn is skipped and the failure propagates,
        unless on_error is given, in which case on_error(exc) supplies the
        result instead.
        """
        with self._mutex:
            if self._shutdown:
                raise EngineShutdown("engine is shut down")
        handle = TaskHandle(self)
        self._work_started()

        def fire(resolved):
            try:
                if resolved._state == FAILED:
                    if on_error is None:
                        handle._resolve(FAILED, resolved._value)
                        return
                    value = on_error(resolved._value)
                else:
                    value = fn(resolved._value)
            except BaseException as exc:  # noqa: BLE001
                handle._resolve(FAILED, exc)
            else:
                handle._resolve(READY, value)

        def run(resolved):
            fire(resolved)
            self._work_finished()

        if not antecedent._add_callback(run):
            # antecedent already resolved: run as a fresh task
            try:
                self._enqueue(lambda: run(antecedent))
            except EngineShutdown:
                self._work_finished()
                raise
        return handle

    def when_all(self, handles) -> TaskHandle:
        """Resolves with the results of all handles in their given order."""
        handles = list(handles)
        joined = TaskHandle(self)
        self._work_started()
        if not handles:
            joined._resolve(READY, [])
            self._work_finished()
            return joined
        remaining = [len(handles)]
        lock = threading.Lock()

        def arrive(_resolved):
            with lock:
                remaining[0] -= 1
                last = remaining[0] == 0
            if last:
                failure = next((h._value for h in handles if h._state == FAILED), None)
                if failure is not None:
                    joined._resolve(FAILED, failure)
                else:
                    joined._resolve(READY, [h._value for h in handles])
                self._work_finished()

        for h in handles:
            if not h._add_callback(arrive):
                arrive(h)
        return joined

    def launch_split_kernel(self, length: int, policy: SplitPolicy, body) -> TaskHandle:
        """Split [0, length) into min(T, length) contiguous chunks and run
        body(start, stop) for each; resolves with the ordered chunk results."""
        if length == 0:
            done = TaskHandle(self)
            done._resolve(READY, [])
            return done
        return self.when_all(
            [self.submit(body, start, stop) for start, stop in policy.chunks(length)])

    def quiesce(self, timeout=None):
        """Block until every task and its transitive continuations are done."""
        with self._mutex:
            if not self._idle_cv.wait_for(lambda: self._outstanding == 0, timeout):
                raise TimeoutError(
                    f"{self._outstanding} tasks still outstanding after {timeout}s")

    def shutdown(self):
        """Drain queued work, then stop the workers. Idempotent."""
        self.quiesce()
        with self._mutex:
            if self._shutdown:
                return
            self._shutdown = True
            self._work_cv.notify_all()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False
