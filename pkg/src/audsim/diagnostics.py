"""Small-instance checks of the recovery condition: brute-force isometry
constants, the minimum-to-average power ratio, the SNR bound built from them,
and expected per-channel sparsity."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SUBSET_CAP = 200_000


@dataclass(frozen=True)
class RipReport:
    delta: float
    order: int
    matrix_dims: tuple[int, int]
    subsets: int


class SubsetCapExceeded(ValueError):
    def __init__(self, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(f"{required} column subsets needed, cap is {cap}")


def isometry_constant(phi: np.ndarray, order: int, cap: int = DEFAULT_SUBSET_CAP,
                      batch: int = 4096) -> RipReport:
    """Exact restricted isometry constant of the given order by enumerating column subsets.

    delta = max over subsets S of max(lambda_max(G_S) - 1, 1 - lambda_min(G_S)),
    G_S the Gram matrix of the columns in S.
    """
    T, n = phi.shape
    if order < 1 or order > n:
        raise ValueError(f"order must be in 1..{n}")
    required = math.comb(n, order)
    if required > cap:
        raise SubsetCapExceeded(required, cap)
    gram = phi.conj().T @ phi
    delta = 0.0
    combos = itertools.combinations(range(n), order)
    while True:
        block = np.array(list(itertools.islice(combos, batch)), dtype=np.intp)
        if block.size == 0:
            break
        sub = gram[block[:, :, None], block[:, None, :]]
        eig = np.linalg.eigvalsh(sub)
        delta = max(delta, float(np.max(eig[:, -1] - 1.0)), float(np.max(1.0 - eig[:, 0])))
    return RipReport(max(delta, 0.0), order, (T, n), required)


def max_coherence(phi: np.ndarray) -> float:
    """Largest |<phi_i, phi_j>| over distinct columns."""
    g = np.abs(phi.conj().T @ phi)
    np.fill_diagonal(g, 0.0)
    return float(g.max())


def recovery_snr_bound(delta: float, K: int, mar: float) -> float:
    """SNR (linear) that the measured per-channel SNR must reach for exact recovery.

    Squared form of sqrt(Gamma) >= sqrt(K)(1 + delta) / ((1 - sqrt(K) delta) sqrt(MAR)).
    Returns ``inf`` when sqrt(K) * delta >= 1 (no finite SNR suffices).
    """
    rk = math.sqrt(K)
    if rk * delta >= 1.0:
        return math.inf
    return (rk * (1.0 + delta) / ((1.0 - rk * delta) * math.sqrt(mar))) ** 2


def mar(X: np.ndarray) -> float:
    """Minimum-to-average power ratio over the non-zero rows of a system matrix."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    power = np.sum(np.abs(X) ** 2, axis=1)
    rows = power[power > 0]
    if rows.size == 0:
        raise ValueError("system matrix has no active rows")
    return float(rows.min() / (rows.sum() / rows.size))


def expected_sparsity_check(p: float, Q: int, C: int) -> float:
    """Expected number of active users per channel, p * Q * C."""
    return p * Q * C


def toy_report(T_p: int = 8, n: int = 12, K: int = 1, snr_db: float = 20.0,
               M: int = 1, seed: int = 0, cap: int = DEFAULT_SUBSET_CAP) -> dict:
    """Diagnostics of one small random instance, JSON-ready.

    Draws a T_p x n QPSK pilot matrix, the isometry constants up to order
    K + 1, one K-sparse frame, its MAR and measured SNR, and the SNR bound.
    """
    from .channel import complex_normal
    from .pilots import generate_pilots

    rng = np.random.default_rng(seed)
    phi = generate_pilots(n, T_p, rng)
    deltas = [isometry_constant(phi, k, cap).delta for k in range(1, K + 2)]
    active = rng.choice(n, size=K, replace=False)
    X = np.zeros((n, M), dtype=complex)
    X[active] = math.sqrt(T_p * 10 ** (snr_db / 10)) * complex_normal(rng, (K, M))
    V = complex_normal(rng, (T_p, M))
    S = phi @ X
    measured = float(np.vdot(S, S).real / np.vdot(V, V).real)
    ratio = mar(X)
    bound = recovery_snr_bound(deltas[-1], K, ratio)
    return {
        "pilot_length": T_p, "columns": n, "K": K, "antennas": M, "seed": seed,
        "isometry_constants": {str(k + 1): d for k, d in enumerate(deltas)},
        "max_coherence": max_coherence(phi),
        "mar": ratio,
        "measured_snr": measured,
        "snr_bound": None if math.isinf(bound) else bound,
        "bound_met": bool(measured >= bound),
    }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def empirical_active_per_channel(cfg, trials: int, seed: int = 0) -> dict:
    """Monte-Carlo mean and standard error of the per-channel active count.

    Each trial contributes the mean count over its F channels, to be compared
    with ``expected_sparsity_check(p, Q, C)``.
    """
    from .channel import sample_activity
    from .pilots import assign_channels

    rng = np.random.default_rng(seed)
    sets = assign_channels(cfg.users_per_channel_base, cfg.num_channels, cfg.num_copies)
    counts = np.empty(trials)
    for t in range(trials):
        act = sample_activity(len(sets), cfg.activation_prob, rng).active
        per = np.bincount(sets[act].ravel(), minlength=cfg.num_channels)
        counts[t] = per.mean()
    mean, se = _mean_se(counts)
    return {"expected": expected_sparsity_check(cfg.activation_prob,
                                                cfg.users_per_channel_base, cfg.num_copies),
            "mean": mean, "stderr": se, "trials": trials}


def max_channel_snr(cfg, copies: int, trials: int, seed: int = 0) -> dict:
    """Monte-Carlo mean of max_f Gamma_f for the F = C = ``copies`` construction.

    Gamma_f is the SNR measured in channel f (signal over noise energy);
    total transmit power is split across the copies as in the simulator.
    Trials without any active user contribute 0.
    """
    from dataclasses import replace

    from .channel import per_channel_snr, sample_activity, synthesize_frame
    from .pilots import make_pilot_book

    c = replace(cfg, num_channels=copies, num_copies=copies,
                fusion="single" if copies == 1 else "independent")
    rng = np.random.default_rng(seed)
    book = make_pilot_book(c, rng)
    best = np.empty(trials)
    for t in range(trials):
        act = sample_activity(book.num_users, c.activation_prob, rng)
        frame = synthesize_frame(book, act, c, rng)
        best[t] = float(np.max(per_channel_snr(frame))) if act.num_active else 0.0
    mean, se = _mean_se(best)
    return {"copies": copies, "mean": mean, "stderr": se, "trials": trials}


def empirical_channel_stats(cfg, trials: int = 2000, seed: int = 0,
                            copies: tuple[int, ...] = (1, 2, 4)) -> dict:
    """Sparsity and channel-selection SNR checks for a configuration, JSON-ready."""
    return {"active_per_channel": empirical_active_per_channel(cfg, trials, seed),
            "max_channel_snr": [max_channel_snr(cfg, c, trials, seed) for c in copies]}
