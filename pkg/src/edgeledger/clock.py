"""Time sources.

Everything that waits or stamps time goes through a clock object so the same
ledger, gateway and daemon code can run against the host clock or against a
deterministic virtual timeline.

A clock provides ``now_ms`` (wall time for record stamps), ``monotonic``
(elapsed-time measurement), ``sleep``, condition waiting (``wait`` /
``notify_all``), event waiting and thread spawning/joining.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
import time
from typing import Callable, Iterable

VIRTUAL_EPOCH_MS = 1_600_000_000_000
_FOREVER = float("inf")


class SystemClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def wait(self, cond: threading.Condition, timeout: float | None) -> bool:
        return cond.wait(timeout)

    def notify_all(self, cond: threading.Condition) -> None:
        cond.notify_all()

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        return event.wait(max(timeout, 0.0))

    def spawn(self, target: Callable[[], object], name: str) -> threading.Thread:
        thread = threading.Thread(target=target, name=name, daemon=True)
        thread.start()
        return thread

    def join(self, threads: Iterable[threading.Thread]) -> None:
        for thread in threads:
            thread.join()

    def attach(self):
        return contextlib.nullcontext(self)


class ManualClock(SystemClock):
    """Single-threaded clock that only moves when told to (or when slept on)."""

    def __init__(self, now_ms: int = VIRTUAL_EPOCH_MS):
        self._now_us = now_ms * 1000
        self._mono_us = 0

    def now_ms(self) -> int:
        return self._now_us // 1000

    def monotonic(self) -> float:
        return self._mono_us / 1e6

    def set_ms(self, now_ms: int) -> None:
        """Jump the wall clock; the monotonic clock is unaffected."""
        self._now_us = now_ms * 1000

    def advance(self, seconds: float) -> None:
        step = max(0, round(seconds * 1e6))
        self._now_us += step
        self._mono_us += step

    def sleep(self, seconds: float) -> None:
        self.advance(seconds)

    def wait(self, cond: threading.Condition, timeout: float | None) -> bool:
        if timeout is None:
            raise RuntimeError("ManualClock cannot wait without a timeout")
        self.advance(timeout)
        return False

    def notify_all(self, cond: threading.Condition) -> None:
        pass

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        if not event.is_set():
            self.advance(timeout)
        return event.is_set()


class _Participant:
    __slots__ = ("name", "wake", "seq", "tag", "done")

    def __init__(self, name: str):
        self.name = name
        self.wake = 0
        self.seq = 0
        self.tag: object = None
        self.done = False


class VirtualDeadlockError(RuntimeError):
    pass


class VirtualClock:
    """Cooperative virtual-time scheduler.

    Threads that take part (``attach``/``spawn``) run one at a time; a thread
    gives up its turn only by sleeping, waiting or exiting. When every
    participant is blocked, time jumps to the earliest wake-up and that thread
    resumes. Ties resolve by the order in which threads blocked, so a run is
    fully deterministic given deterministic participants.

    Threads outside the participant set must not call into the clock.
    """

    def __init__(self, start_ms: int = VIRTUAL_EPOCH_MS):
        self._start_ms = start_ms
        self._now_us = 0
        self._mutex = threading.Lock()
        self._cv = threading.Condition(self._mutex)
        self._waiting: list[_Participant] = []
        self._running: _Participant | None = None
        self._seq = itertools.count()
        self._local = threading.local()
        self._failure: BaseException | None = None
        self._exit_tag = object()

    # time queries never block
    def now_ms(self) -> int:
        return self._start_ms + self._now_us // 1000

    def monotonic(self) -> float:
        return self._now_us / 1e6

    def _me(self) -> _Participant:
        p = getattr(self._local, "participant", None)
        if p is None:
            raise RuntimeError("thread is not attached to the virtual clock")
        return p

    def _dispatch(self) -> None:
        if self._running is not None or not self._waiting:
            return
        nxt = min(self._waiting, key=lambda q: (q.wake, q.seq))
        if nxt.wake == _FOREVER:
            names = ", ".join(q.name for q in self._waiting)
            self._failure = VirtualDeadlockError(f"all participants blocked forever: {names}")
            self._cv.notify_all()
            return
        self._waiting.remove(nxt)
        self._now_us = max(self._now_us, nxt.wake)
        self._running = nxt
        self._cv.notify_all()

    def _park(self, p: _Participant, wake: float, tag: object = None) -> None:
        # mutex held, p is the running participant
        p.wake = wake
        p.seq = next(self._seq)
        p.tag = tag
        self._waiting.append(p)
        self._running = None
        self._dispatch()
        self._cv.wait_for(lambda: self._running is p or self._failure is not None)
        if self._failure is not None and self._running is not p:
            raise self._failure

    def sleep(self, seconds: float) -> None:
        p = self._me()
        with self._mutex:
            self._park(p, self._now_us + max(0, round(seconds * 1e6)))

    def wait(self, cond: threading.Condition, timeout: float | None) -> bool:
        """Release ``cond`` until ``notify_all(cond)`` or the virtual timeout."""
        p = self._me()
        cond.release()
        try:
            with self._mutex:
                wake = _FOREVER if timeout is None else self._now_us + max(0, round(timeout * 1e6))
                self._park(p, wake, tag=cond)
                notified = p.tag is None
        finally:
            cond.acquire()
        return notified

    def notify_all(self, cond: threading.Condition) -> None:
        with self._mutex:
            self._wake_tagged(cond)

    def _wake_tagged(self, tag: object) -> None:
        for q in self._waiting:
            if q.tag is tag:
                q.tag = None
                q.wake = self._now_us
                q.seq = next(self._seq)

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        if not event.is_set():
            self.sleep(timeout)
        return event.is_set()

    @contextlib.contextmanager
    def attach(self, name: str = "main"):
        """Make the calling thread a participant for the duration of the block."""
        p = _Participant(name)
        with self._mutex:
            if self._running is not None:
                raise RuntimeError("another participant is already running")
            self._local.participant = p
            if self._waiting:
                self._park(p, self._now_us)
            else:
                self._running = p
        try:
            yield self
        finally:
            with self._mutex:
                self._local.participant = None
                self._finish(p)

    def _finish(self, p: _Participant) -> None:
        p.done = True
        if self._running is p:
            self._running = None
        self._wake_tagged(self._exit_tag)
        self._dispatch()

    def spawn(self, target: Callable[[], object], name: str) -> _Participant:
        p = _Participant(name)

        def body() -> None:
            self._local.participant = p
            with self._mutex:
                self._cv.wait_for(lambda: self._running is p or self._failure is not None)
                if self._running is not p:
                    return
            try:
                target()
            finally:
                with self._mutex:
                    self._finish(p)

        with self._mutex:
            p.wake = self._now_us
            p.seq = next(self._seq)
            self._waiting.append(p)
        threading.Thread(target=body, name=name, daemon=True).start()
        return p

    def join(self, participants: Iterable[_Participant]) -> None:
        pending = list(participants)
        me = self._me()
        with self._mutex:
            while not all(q.done for q in pending):
                self._park(me, _FOREVER, tag=self._exit_tag)
