"""Desk-scale acceptance criteria.

Each test records a one-line verdict that the terminal summary prints as
PASS/FAIL. Trend criteria compare configurations at 3 standard errors of the
difference of means.
"""

import itertools
import math
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from audsim.channel import complex_normal
from audsim.cli import preset_path
from audsim.config import ExperimentConfig, load_spec
from audsim.diagnostics import (empirical_active_per_channel, isometry_constant,
                                max_channel_snr, max_coherence)
from audsim.harness import run_experiment, run_sweep
from audsim.metrics import balanced_accuracy, score
from audsim.omp import KnownK, least_squares_estimate, run_omp
from audsim.pilots import generate_pilots

from conftest import ACCEPTANCE

pytestmark = pytest.mark.acceptance

TRIALS = 10_000
CAL_TRIALS = 2_000


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
    assert ok, detail


def z_gap(worse, better):
    """(worse - better) in standard errors of the difference."""
    se = math.hypot(worse.stderr, better.stderr)
    gap = worse.mean - better.mean
    if se == 0:
        return math.inf if gap > 0 else (0.0 if gap == 0 else -math.inf)
    return gap / se


@lru_cache(maxsize=None)
def measure(**kw):
    base = dict(num_trials=TRIALS, calibration_trials=CAL_TRIALS)
    base.update(kw)
    return run_experiment(ExperimentConfig(**base))


def fmt(rec):
    return f"{rec.mean:.3g}+-{rec.stderr:.1g}"


# --- 1. OMP correctness -------------------------------------------------------

def test_criterion_1_omp():
    rng = np.random.default_rng(1)
    worst_orth, monotone = 0.0, True
    for i in range(1000):
        M, K = 1 + i % 4, 1 + i % 5
        phi = generate_pilots(24, 8, rng)
        X = np.zeros((24, M), dtype=complex)
        X[rng.choice(24, K, replace=False)] = 4 * complex_normal(rng, (K, M))
        Y = phi @ X + complex_normal(rng, (8, M))
        res = run_omp(Y, phi, KnownK(8))
        prev = np.linalg.norm(Y)
        for k in range(1, res.iterations + 1):
            S = res.selected[:k]
            R = Y - phi[:, S] @ least_squares_estimate(Y, phi[:, S])
            worst_orth = max(worst_orth, np.abs(phi[:, S].conj().T @ R).max())
            monotone &= np.linalg.norm(R) <= prev + 1e-10
            prev = np.linalg.norm(R)

    ortho_ok = 0
    for _ in range(100):
        basis, _ = np.linalg.qr(complex_normal(rng, (8, 8)))
        q = int(rng.integers(8))
        Y = basis[:, [q]] * complex_normal(rng, (1, 1))
        res = run_omp(Y, basis, KnownK(1))
        ortho_ok += res.selected.tolist() == [q] and np.linalg.norm(res.residual) < 1e-10

    matches = 0
    for seed in range(1000):
        r = np.random.default_rng(10_000 + seed)
        phi = generate_pilots(16, 8, r)
        X = np.zeros((16, 1), dtype=complex)
        X[r.choice(16, 2, replace=False)] = complex_normal(r, (2, 1))
        Y = phi @ X
        best = min(np.linalg.norm(Y - phi[:, list(s)] @ least_squares_estimate(Y, phi[:, list(s)]))
                   for s in itertools.combinations(range(16), 2))
        omp_res = np.linalg.norm(run_omp(Y, phi, KnownK(2)).residual)
        matches += abs(omp_res - best) < 1e-8

    ok = worst_orth < 1e-8 and monotone and ortho_ok == 100 and matches >= 990
    record("1 OMP", ok, f"orthogonality {worst_orth:.1e}, monotone {monotone}, "
           f"orthogonal K=1 {ortho_ok}/100, best-subset agreement {matches}/1000 (need 990)")


# --- 2. metric ----------------------------------------------------------------

def test_criterion_2_metric():
    def acc(detected, active, n):
        a = np.zeros(n, bool)
        a[active] = True
        return score(np.array(detected, dtype=int), a)[1].balanced_accuracy

    cases = [
        (acc([3, 9], [3, 9], 256), 1.0),
        (acc([], [5], 256), 0.5),
        (acc([1, 10, 11], [1, 2], 256), 0.5 * (0.5 + 252 / 254)),
        (acc([], [], 256), 1.0),
        (acc([7], [], 256), 0.5 * (1 + 255 / 256)),
        (acc(list(range(4)), list(range(4)), 4), 1.0),
    ]
    exact = all(abs(a - b) <= 1e-12 for a, b in cases)
    rng = np.random.default_rng(2)
    mono = True
    for _ in range(1000):
        n = int(rng.integers(2, 400))
        k = int(rng.integers(1, n))
        tp, fp = int(rng.integers(0, k + 1)), int(rng.integers(0, n - k + 1))
        a = balanced_accuracy(tp, n - k - fp, k, n)
        if fp < n - k:
            mono &= balanced_accuracy(tp, n - k - fp - 1, k, n) <= a
        if tp < k:
            mono &= balanced_accuracy(tp + 1, n - k - fp, k, n) >= a
    record("2 metric", exact and mono, f"hand cases exact {exact}, monotone over 1000 {mono}")


# --- 3. copies hurt at short pilots --------------------------------------------

def test_criterion_3_short_pilots():
    common = dict(pilot_length=8, num_antennas=1, snr_db=20.0, master_seed=3)
    recs = {C: measure(num_channels=4, num_copies=C, **common) for C in (1, 2, 3, 4)}
    gaps = [z_gap(recs[C + 1], recs[C]) for C in (1, 2, 3)]
    f2 = measure(num_channels=2, num_copies=2, **common)
    same_c = abs(z_gap(f2, recs[2]))
    ok = all(g >= 3 for g in gaps) and same_c <= 3
    record("3 short pilots", ok,
           "C=1..4: " + ", ".join(fmt(recs[C]) for C in (1, 2, 3, 4))
           + f"; steps {', '.join(f'{g:.1f}' for g in gaps)} sigma"
           + f"; F=2,C=2 {fmt(f2)} vs F=4,C=2 differ by {same_c:.1f} sigma")


# --- 4. copies help at long pilots ---------------------------------------------

def test_criterion_4_long_pilots():
    recs = {C: measure(num_channels=4, num_copies=C, pilot_length=32, num_antennas=1,
                       snr_db=20.0, master_seed=4) for C in (1, 2, 3, 4)}
    best = min(recs[2].mean, recs[3].mean)
    ratio = best / recs[1].mean if recs[1].mean > 0 else math.inf
    gap = z_gap(recs[1], recs[2])
    ok = ratio <= 0.2 and gap >= 3
    record("4 long pilots", ok,
           "C=1..4: " + ", ".join(fmt(recs[C]) for C in (1, 2, 3, 4))
           + f"; best(C=2,3)/C=1 = {ratio:.3f} (need <= 0.2); C=1 vs C=2 {gap:.1f} sigma")


# --- 5. antennas favour sparsity ------------------------------------------------

# Errors at large M are rare events (a few false positives per 10^4 trials),
# so this cell uses more evaluation and calibration trials.
M_STAR_CANDIDATES = (8,)


def test_criterion_5_antennas():
    lines, ok = [], True
    for M in M_STAR_CANDIDATES:
        recs = {C: measure(num_channels=4, num_copies=C, num_antennas=M, pilot_length=20,
                           snr_db=10.0, master_seed=5, num_trials=20_000,
                           calibration_trials=20_000) for C in (1, 2, 3, 4)}
        gaps = [z_gap(recs[C], recs[1]) for C in (2, 3, 4)]
        ok &= all(g >= 3 for g in gaps)
        lines.append(f"M={M}: " + ", ".join(fmt(recs[C]) for C in (1, 2, 3, 4))
                     + f"; C>1 behind C=1 by {', '.join(f'{g:.1f}' for g in gaps)} sigma")
    record("5 antennas", ok, f"M*={min(M_STAR_CANDIDATES)}; " + "; ".join(lines))


# --- 6. activation-probability regimes -----------------------------------------

def test_criterion_6_activation():
    def cells(pq):
        return {C: measure(num_channels=4, num_copies=C, pilot_length=32, num_antennas=1,
                           snr_db=20.0, activation_prob=pq / 256, master_seed=6)
                for C in (1, 2, 3, 4)}
    low, high = cells(0.5), cells(8.0)
    low_gaps = [z_gap(low[1], low[C]) for C in (2, 3, 4)]
    high_gaps = [z_gap(high[C], high[1]) for C in (2, 3, 4)]
    ok = max(low_gaps) >= 3 and min(high_gaps) >= 3
    record("6 activation", ok,
           "pQ=0.5: " + ", ".join(fmt(low[C]) for C in (1, 2, 3, 4))
           + f" (C>1 ahead by {', '.join(f'{g:.1f}' for g in low_gaps)} sigma); pQ=8: "
           + ", ".join(fmt(high[C]) for C in (1, 2, 3, 4))
           + f" (C>1 behind by {', '.join(f'{g:.1f}' for g in high_gaps)} sigma)")


# --- 7. strategy ordering -------------------------------------------------------

def test_criterion_7_strategies():
    recs = {s: measure(num_channels=2, num_copies=2, num_antennas=1, pilot_length=16,
                       snr_db=10.0, fusion=s, master_seed=7)
            for s in ("independent", "strict", "iterative", "superchannel")}
    ind = recs["independent"]
    gaps = {s: z_gap(r, ind) for s, r in recs.items() if s != "independent"}
    ok = (all(ind.mean <= r.mean for r in recs.values())
          and gaps["strict"] >= 3 and gaps["iterative"] >= 3)
    record("7 strategies", ok, ", ".join(f"{s} {fmt(r)}" for s, r in recs.items())
           + "; gaps " + ", ".join(f"{s} {g:.1f}" for s, g in gaps.items()) + " sigma")


# --- 8. diagnostics -------------------------------------------------------------

def test_criterion_8_diagnostics():
    rng = np.random.default_rng(8)
    nondecreasing, coh_err = True, 0.0
    for _ in range(100):
        phi = generate_pilots(12, 8, rng)
        deltas = [isometry_constant(phi, k).delta for k in range(1, 7)]
        nondecreasing &= all(b >= a - 1e-12 for a, b in zip(deltas, deltas[1:]))
        coh_err = max(coh_err, abs(deltas[1] - max_coherence(phi)))

    sparsity = []
    for F, C in ((1, 1), (4, 1), (4, 2), (4, 4)):
        cfg = ExperimentConfig(num_channels=F, num_copies=C)
        r = empirical_active_per_channel(cfg, 10_000, seed=80 + C)
        sparsity.append((F, C, r, abs(r["mean"] - r["expected"]) <= 3 * r["stderr"]))

    base = ExperimentConfig(pilot_length=8, snr_db=20.0)
    snr = [max_channel_snr(base, C, 10_000, seed=88) for C in (1, 2, 4)]
    steps = [(b["mean"] - a["mean"]) / math.hypot(a["stderr"], b["stderr"])
             for a, b in zip(snr, snr[1:])]

    ok = (nondecreasing and coh_err <= 1e-10 and all(s[3] for s in sparsity)
          and all(z >= -3 for z in steps))
    record("8 diagnostics", ok,
           f"delta non-decreasing {nondecreasing}, |delta_2 - coherence| {coh_err:.1e}; "
           + "active/channel " + ", ".join(f"F={F},C={C} {r['mean']:.3f} vs {r['expected']:.0f}"
                                           for F, C, r, _ in sparsity)
           + "; E[max Gamma] " + ", ".join(f"C={s['copies']} {s['mean']:.1f}" for s in snr)
           + f" (steps {', '.join(f'{z:+.1f}' for z in steps)} sigma)")


# --- 9. reproducibility ---------------------------------------------------------

def test_criterion_9_reproducibility(tmp_path):
    # full cell list of the preset, trial counts reduced to keep the suite short
    spec = load_spec(preset_path("fig3"), {"num_trials": 500, "calibration_trials": 300})
    run_sweep(spec, tmp_path / "a", workers=1, name="fig3")
    run_sweep(spec, tmp_path / "b", workers=1, name="fig3")
    par = run_sweep(spec, tmp_path / "c", workers=2, name="fig3")
    a = (tmp_path / "a" / "fig3.csv").read_bytes()
    b = (tmp_path / "b" / "fig3.csv").read_bytes()
    from audsim.harness import read_results
    ref = read_results(tmp_path / "a" / "fig3.csv")
    worst = max(max(abs(float(r["mean_inaccuracy"]) - p.mean),
                    abs(float(r["stderr"]) - p.stderr)) for r, p in zip(ref, par))
    ok = a == b and worst <= 1e-12 and len(par) == len(ref) == 50
    record("9 reproducibility", ok, f"{len(ref)} cells, byte-identical {a == b}, "
           f"workers 1 vs 2 max difference {worst:.1e}")
