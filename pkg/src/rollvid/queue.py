"""Diagonal denoising queue.

T slots hold frames at strictly increasing noise levels 1..T; every global
step denoises all slots one level, emits the now-clean head, shifts, and
enqueues a fresh max-noise tail.  Each emitted frame has therefore visited
every noise level exactly once, T steps apart from its neighbours in age.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, QueueInvariantError
from .schedule import FrameLatent, NoiseSchedule, forward_diffuse


@dataclass(frozen=True)
class DiagonalQueue:
    """tau counts frames already emitted; capacity T is fixed at init."""

    slots: tuple
    tau: int
    f: int
    T: int

    @property
    def is_full(self) -> bool:
        return len(self.slots) == self.T

    def check(self):
        """Assert the full-queue invariants; raises QueueInvariantError."""
        if len(self.slots) != self.T:
            raise QueueInvariantError(
                f"queue holds {len(self.slots)} slots, capacity {self.T}"
            )
        for k, s in enumerate(self.slots):
            if s.noise_level != k + 1:
                raise QueueInvariantError(
                    f"slot {k} at noise level {s.noise_level}, expected {k + 1}"
                )
            if s.frame_index != self.tau + k + 1:
                raise QueueInvariantError(
                    f"slot {k} has frame_index {s.frame_index}, "
                    f"expected {self.tau + k + 1}"
                )
        return self


@dataclass(frozen=True)
class Window:
    latents: tuple
    timesteps: tuple
    window_index: int


def init_queue(warmup, sched: NoiseSchedule, noise_source) -> DiagonalQueue:
    """Bootstrap the queue from f clean warm-up frames.

    Slot k re-noises warmup[min(k, f-1)] to level k+1 (clamped repeat of
    the last warm-up frame fills the deep slots).  noise_source must
    provide standard_normal(shape).
    """
    f = len(warmup)
    if f < 1:
        raise ConfigurationError("warmup must contain at least one frame")
    T = sched.T
    if T % f:
        raise ConfigurationError(f"queue length T={T} not a multiple of f={f}")
    shape = np.asarray(warmup[0]).shape
    slots = []
    for k in range(T):
        x0 = np.asarray(warmup[min(k, f - 1)], dtype=np.float64)
        eps = noise_source.standard_normal(shape)
        slots.append(FrameLatent(
            data=forward_diffuse(x0, k + 1, eps, sched),
            noise_level=k + 1,
            frame_index=k + 1,
        ))
    return DiagonalQueue(slots=tuple(slots), tau=0, f=f, T=T).check()


def partition_windows(q: DiagonalQueue):
    """Split the full queue into T/f contiguous windows, head first."""
    q.check()
    windows = []
    for w in range(q.T // q.f):
        chunk = q.slots[w * q.f:(w + 1) * q.f]
        windows.append(Window(
            latents=tuple(chunk),
            timesteps=tuple(s.noise_level for s in chunk),
            window_index=w,
        ))
    return windows


def advance(q: DiagonalQueue, denoised):
    """Emit the head after a one-level denoise of every slot.

    denoised[k] is slot k's data at noise level k (one ddim_step down).
    Returns (head frame at level 0, open queue of T-1 slots with tau
    bumped); enqueue_tail closes the cycle.
    """
    if len(denoised) != q.T:
        raise DimensionError(f"expected {q.T} denoised grids, got {len(denoised)}")
    head = FrameLatent(
        data=np.asarray(denoised[0], dtype=np.float64),
        noise_level=0,
        frame_index=q.tau + 1,
    )
    shifted = tuple(
        FrameLatent(
            data=np.asarray(denoised[k], dtype=np.float64),
            noise_level=k,
            frame_index=q.slots[k].frame_index,
        )
        for k in range(1, q.T)
    )
    return head, DiagonalQueue(slots=shifted, tau=q.tau + 1, f=q.f, T=q.T)


def enqueue_tail(q_open: DiagonalQueue, tail: FrameLatent) -> DiagonalQueue:
    """Append the fresh max-noise tail and restore full invariants."""
    if len(q_open.slots) != q_open.T - 1:
        raise QueueInvariantError(
            f"enqueue_tail expects {q_open.T - 1} slots, found {len(q_open.slots)}"
        )
    if tail.noise_level != q_open.T:
        raise QueueInvariantError(
            f"tail at noise level {tail.noise_level}, expected {q_open.T}"
        )
    want = q_open.tau + q_open.T
    if tail.frame_index != want:
        raise QueueInvariantError(
            f"tail frame_index {tail.frame_index}, expected {want}"
        )
    q = DiagonalQueue(
        slots=q_open.slots + (tail,), tau=q_open.tau, f=q_open.f, T=q_open.T
    )
    return q.check()
