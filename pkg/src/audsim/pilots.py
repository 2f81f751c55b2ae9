"""Non-orthogonal QPSK pilots, user-to-channel assignment and per-channel pilot matrices."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


def generate_pilots(count: int, pilot_length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` unit-norm pilots with entries in (+-1 +-1j) / sqrt(2 T_p).

    Returns
    -------
    ndarray of shape (pilot_length, count)
        Column ``q`` is the pilot of global user ``q``.
    """
    signs = 1.0 - 2.0 * rng.integers(0, 2, size=(2, pilot_length, count))
    return (signs[0] + 1j * signs[1]) / np.sqrt(2.0 * pilot_length)


def assign_channels(Q: int, F: int, C: int, rng: np.random.Generator | None = None,
                    mode: str = "modular") -> np.ndarray:
    """Channel sets of all Q*F users, shape (Q*F, C), each row ascending.

    ``modular`` gives user u the channels (u + j) mod F, j < C. ``random``
    applies the same rule to a random permutation of the users, so the
    per-channel load stays exactly Q*C.
    """
    if C > F:
        raise ValueError(f"C={C} exceeds F={F}")
    users = np.arange(Q * F)
    if mode == "random":
        if rng is None:
            raise ValueError("random assignment needs an rng")
        users = rng.permutation(users)
    elif mode != "modular":
        raise ValueError(f"unknown assignment mode {mode!r}")
    sets = (users[:, None] + np.arange(C)[None, :]) % F
    return np.sort(sets, axis=1)


@dataclass(frozen=True, eq=False)
class PilotBook:
    """Pilots of every user plus the per-channel views used by the receiver."""

    pilots: np.ndarray                  # (T_p, N), column per global user
    channel_sets: np.ndarray            # (N, C)
    per_channel_users: tuple[np.ndarray, ...]
    per_channel_matrix: tuple[np.ndarray, ...]

    @property
    def num_users(self) -> int:
        return self.pilots.shape[1]

    @property
    def num_channels(self) -> int:
        return len(self.per_channel_users)

    @property
    def pilot_length(self) -> int:
        return self.pilots.shape[0]

    @cached_property
    def per_channel_matrix_h(self) -> tuple[np.ndarray, ...]:
        """Conjugate transposes of the channel matrices (cached for OMP)."""
        return tuple(np.ascontiguousarray(m.conj().T) for m in self.per_channel_matrix)

    @cached_property
    def local_index(self) -> np.ndarray:
        """(F, N) array: column of user q in channel f's matrix, or -1."""
        out = np.full((self.num_channels, self.num_users), -1, dtype=np.intp)
        for f, users in enumerate(self.per_channel_users):
            out[f, users] = np.arange(len(users))
        return out

    @cached_property
    def membership(self) -> np.ndarray:
        """(F, N) boolean array: user q operates in channel f."""
        return self.local_index >= 0

    @cached_property
    def superchannels(self) -> tuple["SuperChannel", ...]:
        """One stacked problem per C-subset of channels that has users assigned to it."""
        F, C = self.num_channels, self.channel_sets.shape[1]
        out = []
        for subset in itertools.combinations(range(F), C):
            users = np.flatnonzero((self.channel_sets == np.array(subset)).all(axis=1))
            if users.size == 0:
                continue
            # identical pilot on every channel of the subset, renormalized to unit norm
            stacked = np.tile(self.pilots[:, users], (C, 1)) / np.sqrt(C)
            out.append(SuperChannel(subset, users, stacked,
                                    np.ascontiguousarray(stacked.conj().T)))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class SuperChannel:
    channels: tuple[int, ...]
    users: np.ndarray
    matrix: np.ndarray       # (C*T_p, n_users), unit-norm columns
    matrix_h: np.ndarray


def build_pilot_matrices(pilots: np.ndarray, channel_sets: np.ndarray,
                         num_channels: int | None = None) -> PilotBook:
    pilots = np.asarray(pilots)
    channel_sets = np.asarray(channel_sets)
    if pilots.shape[1] != channel_sets.shape[0]:
        raise ValueError("one pilot per user required")
    F = int(channel_sets.max()) + 1 if num_channels is None else num_channels
    users = tuple(np.flatnonzero((channel_sets == f).any(axis=1)) for f in range(F))
    matrices = tuple(np.ascontiguousarray(pilots[:, u]) for u in users)
    return PilotBook(pilots, channel_sets, users, matrices)


def make_pilot_book(cfg, rng: np.random.Generator) -> PilotBook:
    """Pilots and assignment for one experiment config."""
    n = cfg.total_users
    pilots = generate_pilots(n, cfg.pilot_length, rng)
    sets = assign_channels(cfg.users_per_channel_base, cfg.num_channels, cfg.num_copies,
                           rng=rng, mode=cfg.assignment)
    return build_pilot_matrices(pilots, sets, cfg.num_channels)


# --- dumps for cross-implementation comparison --------------------------------
#
# CSV: header "user,row,real,imag", rows in column-major order (all rows of
# user 0, then user 1, ...), plus a second file "<stem>.channels.csv" with
# "user,channel" pairs.
# Binary: raw little-endian float64 (real, imag) pairs in column-major order of
# the T_p x N pilot matrix, with a JSON sidecar "<path>.json" holding
# {"pilot_length", "num_users", "channel_sets"}.

def save_pilot_book(book: PilotBook, path: str | Path, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "row", "real", "imag"])
            for q in range(book.num_users):
                for t in range(book.pilot_length):
                    z = book.pilots[t, q]
                    w.writerow([q, t, repr(float(z.real)), repr(float(z.imag))])
        with open(path.with_suffix(".channels.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "channel"])
            for q, chans in enumerate(book.channel_sets):
                for f in chans:
                    w.writerow([q, int(f)])
    elif fmt == "bin":
        flat = book.pilots.T.astype("<c16")  # column-major: user-major rows
        path.write_bytes(flat.tobytes())
        meta = {"pilot_length": book.pilot_length, "num_users": book.num_users,
                "num_channels": book.num_channels,
                "channel_sets": book.channel_sets.tolist()}
        Path(str(path) + ".json").write_text(json.dumps(meta), encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_pilot_book(path: str | Path, fmt: str = "csv") -> PilotBook:
    path = Path(path)
    if fmt == "csv":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        n = max(int(r["user"]) for r in rows) + 1
        tp = max(int(r["row"]) for r in rows) + 1
        pilots = np.empty((tp, n), dtype=complex)
        for r in rows:
            pilots[int(r["row"]), int(r["user"])] = complex(float(r["real"]), float(r["imag"]))
        with open(path.with_suffix(".channels.csv"), encoding="utf-8") as fh:
            pairs = [(int(r["user"]), int(r["channel"])) for r in csv.DictReader(fh)]
        per_user: dict[int, list[int]] = {}
        for q, f in pairs:
            per_user.setdefault(q, []).append(f)
        sets = np.array([sorted(per_user[q]) for q in range(n)])
        return build_pilot_matrices(pilots, sets)
    if fmt == "bin":
        meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        flat = np.frombuffer(path.read_bytes(), dtype="<c16")
        pilots = flat.reshape(meta["num_users"], meta["pilot_length"]).T.astype(complex)
        return build_pilot_matrices(pilots, np.array(meta["channel_sets"]),
                                    meta["num_channels"])
    raise ValueError(f"unknown format {fmt!r}")
