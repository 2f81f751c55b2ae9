"""User activity, Rayleigh fading with power control, and received-signal synthesis.

Per channel f the receiver sees ``Y_f = Phi_f X_f + V_f`` where row q of
``X_f`` is ``sqrt(T_p * rho'_q) * alpha_q * beta_q * h_{q,f}`` with
``rho = Gamma / beta**2`` (power control) and ``rho' = rho / C`` (each of the
C replicas gets an equal share of the power budget).

Test hooks: ``synthesize_frame`` accepts ``fading`` (an (N, F, M) array of
small-scale gains for every user and channel) and ``noise`` (an (F, T_p, M)
array, zeros for a noiseless frame) to replace the random draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pilots import PilotBook


@dataclass(frozen=True, eq=False)
class ActivityRealization:
    active: np.ndarray   # (N,) bool

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @property
    def num_active(self) -> int:
        return int(np.count_nonzero(self.active))


def sample_activity(num_users: int, p: float, rng: np.random.Generator) -> ActivityRealization:
    return ActivityRealization(rng.random(num_users) < p)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    z = rng.standard_normal((*np.atleast_1d(shape), 2))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


@dataclass(eq=False)
class FrameRealization:
    activity: ActivityRealization
    system_matrices: list[np.ndarray]   # X_f, (Q', M)
    received: list[np.ndarray]          # Y_f, (T_p, M)
    noise: list[np.ndarray]             # V_f, (T_p, M)
    clean: list[np.ndarray]             # Phi_f X_f
    beta: float = 1.0
    active_per_channel: list[np.ndarray] = field(default_factory=list)

    @property
    def num_channels(self) -> int:
        return len(self.received)


def synthesize_frame(book: PilotBook, activity: ActivityRealization, cfg,
                     rng: np.random.Generator | None, *, fading: np.ndarray | None = None,
                     noise: np.ndarray | None = None, beta: float = 1.0) -> FrameRealization:
    """Draw fading and noise for one frame and build the received signal of every channel.

    Only active users' fading is drawn (one (F, M) block per active user, in
    ascending id order); channels outside a user's set are simply unused.
    """
    F, M, T = book.num_channels, cfg.num_antennas, book.pilot_length
    C = book.channel_sets.shape[1]
    rho = cfg.snr_linear / beta**2
    amplitude = np.sqrt(T * rho / C) * beta

    act = activity.active_set
    if fading is None:
        gains = complex_normal(rng, (len(act), F, M))
    else:
        gains = np.asarray(fading)[act]
    if noise is None:
        noise = complex_normal(rng, (F, T, M))
    noise = np.asarray(noise, dtype=complex)

    X_list, Y_list, V_list, S_list, act_list = [], [], [], [], []
    for f in range(F):
        local = book.local_index[f, act]
        on = local >= 0
        rows, cols = local[on], amplitude * gains[on, f, :]
        X = np.zeros((book.per_channel_matrix[f].shape[1], M), dtype=complex)
        X[rows] = cols
        S = book.per_channel_matrix[f][:, rows] @ cols
        V = noise[f]
        X_list.append(X)
        S_list.append(S)
        V_list.append(V)
        Y_list.append(S + V)
        act_list.append(act[on])
    return FrameRealization(activity, X_list, Y_list, V_list, S_list, beta, act_list)


def per_channel_snr(frame: FrameRealization) -> np.ndarray:
    """Measured SNR ||Phi_f X_f||^2 / ||V_f||^2 for every channel (inf when V_f = 0)."""
    out = np.empty(frame.num_channels)
    for f, (S, V) in enumerate(zip(frame.clean, frame.noise)):
        den = np.vdot(V, V).real
        num = np.vdot(S, S).real
        out[f] = num / den if den > 0 else np.inf
    return out
