"""Multi-channel detection strategies built on the per-channel OMP.

independent   OMP per channel, union of the detected sets.
strict        OMP per channel, keep users detected on every channel they use.
iterative     channels in turn; each new detection is projected out of the
              user's remaining channels before those are searched.
superchannel  per C-subset of channels, stack the observations and search
              only the users assigned exactly to that subset.

A stopping rule of ``KnownK()`` (no explicit k) means the receiver knows the
number of active users in each channel (in each subset for super-channels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import FrameRealization
from .config import Fusion
from .omp import KnownK, ResidualThreshold, omp_path, prefix_thresholds, run_omp
from .pilots import PilotBook


@dataclass(eq=False)
class DetectionOutcome:
    per_channel_detected: list[np.ndarray]   # global ids per channel, detection order
    fused_detected: np.ndarray               # sorted global ids
    strategy: Fusion
    estimates: list[np.ndarray] = field(default_factory=list)


def _resolve(stopping, num_active: int):
    if isinstance(stopping, KnownK) and stopping.k is None:
        return KnownK(num_active)
    return stopping


def _per_channel(frame: FrameRealization, book: PilotBook, stopping, max_iters):
    detected, estimates = [], []
    for f in range(book.num_channels):
        rule = _resolve(stopping, len(frame.active_per_channel[f]))
        res = run_omp(frame.received[f], book.per_channel_matrix[f], rule, max_iters,
                      phi_h=book.per_channel_matrix_h[f])
        detected.append(book.per_channel_users[f][res.selected])
        estimates.append(res.estimate)
    return detected, estimates


def _sorted_union(sets) -> np.ndarray:
    if not sets:
        return np.empty(0, dtype=np.intp)
    return np.unique(np.concatenate([np.asarray(s, dtype=np.intp) for s in sets]))


def detect_independent(frame, book, stopping, max_iters=None) -> DetectionOutcome:
    detected, estimates = _per_channel(frame, book, stopping, max_iters)
    strategy = Fusion.SINGLE if book.num_channels == 1 else Fusion.INDEPENDENT
    return DetectionOutcome(detected, _sorted_union(detected), strategy, estimates)


def detect_strict(frame, book, stopping, max_iters=None) -> DetectionOutcome:
    """Accept a user only if it was detected on all of its channels."""
    detected, estimates = _per_channel(frame, book, stopping, max_iters)
    hits = np.zeros(book.num_users, dtype=np.intp)
    for ids in detected:
        hits[ids] += 1
    fused = np.flatnonzero(hits == book.channel_sets.shape[1])
    return DetectionOutcome(detected, fused, Fusion.STRICT, estimates)


def detect_iterative(frame, book, stopping, max_iters=None,
                     order=None) -> DetectionOutcome:
    """Sequential detection with propagation of detected users to their other channels.

    Propagated users are removed from a pending channel with a single-column
    least-squares fit on that channel's own observation (fading differs per
    channel, so the source channel's estimate is of no use there). With a
    known-K rule the pending channel searches for ``K_g`` minus the number of
    users already propagated into it.
    """
    F = book.num_channels
    order = list(range(F)) if order is None else [int(f) for f in order]
    Y = [np.array(y, dtype=complex) for y in frame.received]
    found = np.zeros(book.num_users, dtype=bool)
    propagated: list[list[int]] = [[] for _ in range(F)]
    detected: list[np.ndarray] = [np.empty(0, dtype=np.intp)] * F
    estimates: list[np.ndarray] = [np.empty((0, Y[0].shape[1]), dtype=complex)] * F
    done = np.zeros(F, dtype=bool)
    for f in order:
        rule = stopping
        if isinstance(stopping, KnownK):
            k = len(frame.active_per_channel[f]) if stopping.k is None else stopping.k
            rule = KnownK(max(k - len(propagated[f]), 0))
        res = run_omp(Y[f], book.per_channel_matrix[f], rule, max_iters,
                      phi_h=book.per_channel_matrix_h[f])
        ids = book.per_channel_users[f][res.selected]
        detected[f] = np.concatenate([np.asarray(propagated[f], dtype=np.intp), ids])
        estimates[f] = res.estimate
        done[f] = True
        for q in ids:
            if found[q]:
                continue
            found[q] = True
            for g in book.channel_sets[q]:
                if done[g]:
                    continue
                col = book.per_channel_matrix[g][:, book.local_index[g, q]]
                coef = col.conj() @ Y[g] / np.vdot(col, col).real
                Y[g] -= np.outer(col, coef)
                propagated[g].append(int(q))
    strategy = Fusion.SINGLE if F == 1 else Fusion.ITERATIVE
    return DetectionOutcome(detected, np.flatnonzero(found), strategy, estimates)


def _stack(frame, sc) -> np.ndarray:
    return np.concatenate([frame.received[f] for f in sc.channels], axis=0)


def _superchannel_active(frame, sc) -> int:
    return int(np.count_nonzero(frame.activity.active[sc.users]))


def detect_superchannel(frame, book, stopping, max_iters=None) -> DetectionOutcome:
    """One OMP per channel subset on the stacked observation.

    ``max_iters`` defaults to the stacked length C*T_p. Users of other
    subsets stay in the stacked signal as interference.
    """
    F = book.num_channels
    per_channel: list[list[np.ndarray]] = [[] for _ in range(F)]
    found, estimates = [], []
    for sc in book.superchannels:
        rule = _resolve(stopping, _superchannel_active(frame, sc))
        res = run_omp(_stack(frame, sc), sc.matrix, rule, max_iters, phi_h=sc.matrix_h)
        ids = sc.users[res.selected]
        found.append(ids)
        estimates.append(res.estimate)
        for f in sc.channels:
            per_channel[f].append(ids)
    detected = [_sorted_union(p) for p in per_channel]
    strategy = Fusion.SINGLE if F == 1 else Fusion.SUPERCHANNEL
    return DetectionOutcome(detected, _sorted_union(found), strategy, estimates)


_DETECTORS = {
    Fusion.SINGLE: detect_independent,
    Fusion.INDEPENDENT: detect_independent,
    Fusion.STRICT: detect_strict,
    Fusion.ITERATIVE: detect_iterative,
    Fusion.SUPERCHANNEL: detect_superchannel,
}


def detect(frame, book, strategy: Fusion, stopping, max_iters=None, **kw) -> DetectionOutcome:
    return _DETECTORS[Fusion(strategy)](frame, book, stopping, max_iters, **kw)


def detection_thresholds(frame, book, strategy: Fusion, floor: float = 0.0,
                         max_iters=None) -> np.ndarray:
    """Per-user threshold below which the user belongs to the fused set.

    For every ``epsilon >= floor``, ``detect(..., ResidualThreshold(epsilon))``
    returns exactly ``{q : thresholds[q] >= epsilon}``; users never reached
    get ``-inf``. One unstopped OMP path per channel serves the whole grid.
    Not available for the iterative strategy, whose later channels depend on
    the threshold used on earlier ones.
    """
    strategy = Fusion(strategy)
    if strategy is Fusion.ITERATIVE and book.num_channels > 1:
        raise ValueError("iterative detection has no single-path threshold form")
    n = book.num_users
    if strategy is Fusion.SUPERCHANNEL and book.num_channels > 1:
        out = np.full(n, -np.inf)
        for sc in book.superchannels:
            res = omp_path(_stack(frame, sc), sc.matrix, max_iters, floor, sc.matrix_h,
                           with_estimate=False)
            ids = sc.users[res.selected]
            out[ids] = np.maximum(out[ids], prefix_thresholds(res.residual_norm_history))
        return out
    per_channel = np.full((book.num_channels, n), -np.inf)
    for f in range(book.num_channels):
        res = omp_path(frame.received[f], book.per_channel_matrix[f], max_iters, floor,
                       book.per_channel_matrix_h[f], with_estimate=False)
        ids = book.per_channel_users[f][res.selected]
        per_channel[f, ids] = prefix_thresholds(res.residual_norm_history)
    if strategy is Fusion.STRICT:
        per_channel[~book.membership] = np.inf
        return per_channel.min(axis=0)
    return per_channel.max(axis=0)


def stopping_for(cfg, epsilon: float | None = None):
    """Solver-level stopping rule for a config (``epsilon`` overrides the config's)."""
    from .config import Stopping

    if cfg.stopping is Stopping.KNOWN_K:
        return KnownK()
    eps = cfg.epsilon if epsilon is None else epsilon
    if eps is None:
        raise ValueError("residual stopping needs an epsilon (calibrate first)")
    return ResidualThreshold(float(eps))
