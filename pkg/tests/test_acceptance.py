"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (collected again in the terminal summary)
and asserts at the stated tolerance. Run with ``pytest tests/test_acceptance.py -s``
to see the lines as they are produced.
"""

import json
import time

import numpy as np
import pytest

from conftest import mp, mp_density, mp_m_real, record_criterion, two_level
from strategies import random_spec
from deformed_rmt.cli import main as cli_main
from deformed_rmt.fluctuations import (
    compute_alpha_sq,
    compute_delta,
    compute_lemma3p_variances,
    fluctuation_report,
    g_prime,
)
from deformed_rmt.measure import DiscreteMeasure, ModelSpec
from deformed_rmt.outliers import find_outliers
from deformed_rmt.simulate import (
    RealizationConfig,
    experiment_fluctuations,
    run_trials,
    shat_gap_census,
)
from deformed_rmt.stieltjes import density, solve_m
from deformed_rmt.support import compute_support, emit_xm_curve

pytestmark = pytest.mark.acceptance


def fixed_map(spec, z, m):
    t, w, c = spec.nu.locations, spec.nu.weights, spec.c
    return 1.0 / (-z + np.sum(w * t / (1 + c * m * t)))


def edge_scale(N, n):
    """Fluctuation scale of the largest eigenvalue of a null sample covariance."""
    return (np.sqrt(n) + np.sqrt(N)) * (1 / np.sqrt(n) + 1 / np.sqrt(N)) ** (1 / 3) / n


def test_c01_fixed_point():
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(1000):
        spec = random_spec(rng)
        z = complex(rng.uniform(-20, 40), 10 ** rng.uniform(-3, 1.5))
        cases.append((spec, z))
    start = time.perf_counter()
    sols = [solve_m(spec, z) for spec, z in cases]
    elapsed = time.perf_counter() - start
    worst, herglotz = 0.0, True
    for (spec, z), sol in zip(cases, sols):
        m = sol.m
        res = abs(m - fixed_map(spec, z, m)) / max(1.0, abs(m))
        worst = max(worst, res, sol.residual / max(1.0, abs(m)))
        herglotz &= m.imag > 0 and (z * m).imag > 0 and abs(m) <= 1 / z.imag * (1 + 1e-12)
    ok = worst <= 1e-12 and herglotz and elapsed < 5
    record_criterion(1, ok, f"max relative residual {worst:.2e}, Herglotz {herglotz}", elapsed)
    assert ok


def test_c02_marchenko_pastur():
    start = time.perf_counter()
    c = 0.25
    rep = compute_support(mp(c))
    (bulk,) = rep.bulks
    edge_err = max(abs(bulk[0] - 0.25), abs(bulk[1] - 2.25))
    grid = np.linspace(0, 3, 2001)
    curve = density(mp(c), grid)
    l1 = float(np.trapezoid(np.abs(curve.values - mp_density(grid, c)), grid))
    elapsed = time.perf_counter() - start
    ok = edge_err <= 1e-8 and l1 < 1e-3
    record_criterion(2, ok, f"edge error {edge_err:.1e}, density L1 {l1:.2e}", elapsed)
    assert ok


def test_c03_figure1():
    start = time.perf_counter()
    spec = two_level(0.1, 1.0, 3.0)
    rep = compute_support(spec)
    rows = emit_xm_curve(spec, np.linspace(-30, 30, 20001)).rows
    elapsed = time.perf_counter() - start
    # split the curve at the poles -1/(c t) and at 0, then collect increasing runs
    poles = np.sort(np.append(-1 / (spec.c * spec.nu.locations), 0.0))
    comp = np.searchsorted(poles, rows[:, 0])
    inc = (rows[:, 2] > 0) & (rows[:, 1] > 0)
    runs = []
    for k in range(rows.shape[0]):
        if inc[k] and (k == 0 or not inc[k - 1] or comp[k] != comp[k - 1]):
            runs.append([k, k])
        elif inc[k]:
            runs[-1][1] = k
    (a, b), = rep.bulks
    images = [(rows[i, 1], rows[j, 1]) for i, j in runs]
    outside = all(hi <= a or lo >= b for lo, hi in images)
    # the increasing images must approach both edges of the single bulk
    reach_a = min(a - hi for lo, hi in images if hi <= a)
    reach_b = min(lo - b for lo, hi in images if lo >= b)
    ok = len(rep.bulks) == 1 and len(runs) == len(rep.gaps) == 2 and outside
    ok = ok and max(reach_a, reach_b) < 0.01 and elapsed < 1
    record_criterion(3, ok, f"bulks {len(rep.bulks)}, increasing runs {len(runs)}, "
                     f"edge reach {max(reach_a, reach_b):.1e}", elapsed)
    assert ok


def test_c04_figure2():
    start = time.perf_counter()
    spec = two_level(5.0, 0.5, 2.5)
    rep = compute_support(spec)
    cfg = RealizationConfig(spec, 100, trials=20)
    trials = run_trials(cfg, rep)
    elapsed = time.perf_counter() - start
    zeros = [int(np.count_nonzero(t.eigenvalues <= 1e-8)) for t in trials]
    inner = [g for g in rep.gaps if g.lo > 0 and g.bounded]
    in_gap = [sum(np.count_nonzero((t.eigenvalues > g.lo) & (t.eigenvalues < g.hi)) for g in inner)
              for t in trials]
    ok = (len(rep.bulks) == 2 and abs(rep.atom_at_zero - 0.8) <= 1e-12 and len(inner) == 1
          and set(zeros) == {400} and sum(in_gap) == 0 and elapsed < 30)
    record_criterion(4, ok, f"bulks {len(rep.bulks)}, atom {rep.atom_at_zero:.3f}, zero counts "
                     f"{sorted(set(zeros))}, eigenvalues in inner gap {sum(in_gap)}", elapsed)
    assert ok


def test_c05_outlier_location():
    start = time.perf_counter()
    spec = mp(1.0, [(2.0, 1)])
    (pred,) = find_outliers(spec)
    # root of the quadratic (x - 4.5)(x - ...) obtained from m(x) in closed form
    m = mp_m_real(pred.rho)
    g = m * (pred.rho * m)
    rep = fluctuation_report(spec, pred.rho, 2.0)
    trials = run_trials(RealizationConfig(spec, 1000, trials=50))
    tops = np.array([t.top[0] for t in trials])
    elapsed = time.perf_counter() - start
    tol = 3 * abs(rep.scale) * np.sqrt(rep.alpha_sq) / np.sqrt(1000) / np.sqrt(50) + 0.02
    dev = abs(tops.mean() - 4.5)
    ok = abs(pred.rho - 4.5) <= 1e-8 and abs(2.0 * g - 1) <= 1e-10 and dev <= tol
    record_criterion(5, ok, f"|rho - 4.5| = {abs(pred.rho - 4.5):.1e}, MC mean {tops.mean():.4f} "
                     f"(deviation {dev:.4f} <= {tol:.4f})", elapsed)
    assert ok


def _random_spiked_spec(rng):
    c = rng.uniform(0.1, 0.4) if rng.random() < 0.5 else rng.uniform(2.5, 5.0)
    k = rng.integers(1, 4)
    locs = rng.uniform(0.2, 5.0, size=k)
    w = rng.uniform(0.2, 1.0, size=k)
    spikes = [(float(rng.uniform(0.3, 30.0)), int(rng.integers(1, 3))) for _ in range(rng.integers(1, 3))]
    spikes.sort(key=lambda s: -s[0])
    return ModelSpec(c, DiscreteMeasure(locs, w / w.sum()), tuple(spikes))


def test_c06_nothing_left_of_first_bulk():
    start = time.perf_counter()
    rng = np.random.default_rng(606)
    bad_pred, bad_mc, checked = 0, 0, 0
    for k in range(20):
        spec = _random_spiked_spec(rng)
        rep = compute_support(spec.without_spikes())
        a = rep.first_bulk_left_edge
        assert a > 0 and rep.gaps[0].lo == 0 and rep.gaps[0].hi == pytest.approx(a)
        bad_pred += sum(p.rho < a for p in find_outliers(spec, rep))
        eps = 0.1 * a
        for t in run_trials(RealizationConfig(spec, 1000, seed=6000 + k, trials=20), rep):
            ev = t.eigenvalues
            bad_mc += int(np.count_nonzero((ev > eps) & (ev < a - eps)))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = bad_pred == 0 and bad_mc == 0
    record_criterion(6, ok, f"20 specs x 20 trials ({checked} matrices): predictions left of A "
                     f"{bad_pred}, eigenvalues in (eps, A - eps) {bad_mc}", elapsed)
    assert ok


def test_c07_phase_transition():
    start = time.perf_counter()
    n = 1000
    at = mp(1.0, [(1.0, 1)])
    above = mp(1.0, [(1.5, 1)])
    none_predicted = find_outliers(at) == []
    tops_at = np.array([t.top[0] for t in run_trials(RealizationConfig(at, n, trials=50))])
    (pred,) = find_outliers(above)
    tops_above = np.array([t.top[0] for t in run_trials(RealizationConfig(above, n, trials=50))])
    elapsed = time.perf_counter() - start
    scale = edge_scale(n, n)
    sep_pred = pred.rho - 4.0
    sep_obs = tops_above.mean() - 4.0
    ok = (none_predicted and abs(tops_at.mean() - 4.0) <= 0.15
          and sep_pred >= 3 * scale and sep_obs >= 3 * scale)
    record_criterion(7, ok, f"threshold mean top {tops_at.mean():.4f}; omega^2 = 1.5: rho {pred.rho:.4f}, "
                     f"MC mean {tops_above.mean():.4f}, 3 x edge scale {3 * scale:.4f}", elapsed)
    assert ok


def test_c08_fluctuation_variance():
    start = time.perf_counter()
    spec = mp(1.0, [(2.0, 1)])
    (pred,) = find_outliers(spec)
    # closed-form cross-check of the predicted standard deviation
    m = mp_m_real(4.5)
    delta = 1 - (m / (1 + m)) ** 2
    gp = m * m / delta * (2 * 4.5 * m) + m * m
    alpha_sq = m * m / delta * (5 / (1 + m) ** 2 + (2 * m / (1 + m) ** 2) ** 2)
    target = abs(1 / (2 * gp)) * np.sqrt(alpha_sq)
    rep = fluctuation_report(spec, pred.rho, 2.0)
    cfg = RealizationConfig(spec, 400, trials=2000, deterministic_s=True)
    summ = experiment_fluctuations(cfg, pred, rep, draws=10_000)
    elapsed = time.perf_counter() - start
    std = float(summ.std[0])
    ok = (abs(alpha_sq - 2) <= 1e-12 and abs(rep.limit_std - target) <= 1e-12
          and abs(std - target) <= 0.1 * target and elapsed < 600)
    record_criterion(8, ok, f"empirical std {std:.4f} vs predicted {target:.4f} "
                     f"(ratio {std / target:.3f}, {summ.escaped} escaped)", elapsed)
    assert ok


def test_c09_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(909)
    pts = []
    while len(pts) < 50:
        spec = random_spec(rng)
        rep = compute_support(spec)
        w = rng.uniform(0.5, 30)
        pts += [(spec, p.rho, w, rep) for p in find_outliers(spec.with_spikes([(w, 1)]), rep)]
    worst_fd, worst_sum = 0.0, 0.0
    for spec, rho, w, rep in pts[:50]:
        gap = rep.gap_containing(rho)
        h = 1e-3 * min(rho - gap.lo, gap.hi - rho, max(rho, 1.0))
        f = lambda x: solve_m(spec, x).m.real
        m_fd = (-f(rho + 2 * h) + 8 * f(rho + h) - 8 * f(rho - h) + f(rho - 2 * h)) / (12 * h)
        m = f(rho)
        delta = compute_delta(spec, rho, rep)
        worst_fd = max(worst_fd, abs(m_fd * delta - m * m) / max(1.0, m * m))
        alpha = compute_alpha_sq(spec, rho, w, rep)
        vs, s, st = compute_lemma3p_variances(spec, rho, w, rep)
        worst_sum = max(worst_sum, abs(s / m**2 + rho**2 * m**2 * st + 2 * vs - alpha) / max(1.0, alpha))
    elapsed = time.perf_counter() - start
    ok = worst_fd <= 1e-8 and worst_sum <= 1e-10
    record_criterion(9, ok, f"m' Delta = m^2 worst {worst_fd:.1e}, variance recombination worst "
                     f"{worst_sum:.1e}", elapsed)
    assert ok


def test_c10_detection_determinant():
    start = time.perf_counter()
    spec = mp(1.0, [(2.0, 1)])
    rep = compute_support(spec.without_spikes())
    gap = rep.gaps[-1]
    cfg = RealizationConfig(spec, 400, trials=10)
    pairs = [shat_gap_census(cfg, k, gap, support=rep)[:2] for k in range(10)]
    elapsed = time.perf_counter() - start
    ok = all(a == b for a, b in pairs)
    record_criterion(10, ok, f"(sign changes, eigenvalues in gap) per trial: {pairs}", elapsed)
    assert ok


def test_c11_multiplicity_two():
    start = time.perf_counter()
    spec = mp(1.0, [(2.0, 2)])
    (pred,) = find_outliers(spec)
    rep = fluctuation_report(spec, pred.rho, 2.0, multiplicity=2)
    cfg = RealizationConfig(spec, 400, trials=2000, deterministic_s=True)
    summ = experiment_fluctuations(cfg, pred, rep, draws=100_000)
    elapsed = time.perf_counter() - start
    ok = pred.multiplicity == 2 and bool(np.all(summ.ks < 0.05))
    record_criterion(11, ok, f"KS per ordered coordinate {np.round(summ.ks, 4).tolist()} "
                     f"({summ.escaped} escaped)", elapsed)
    assert ok


def test_c12_cli_determinism(tmp_path):
    start = time.perf_counter()
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"c": 1, "nu": [[1, 1]], "spikes": [[2, 2], [1.5, 1]]}))
    commands = [
        ["density", "--grid", "301"],
        ["support"],
        ["outliers"],
        ["fluct", "--trials", "2000", "--bias", "--n", "150"],
        ["design", "--targets", "5,6,6"],
        ["simulate", "--n", "120", "--trials", "4"],
        ["simulate", "--n", "120", "--trials", "3", "--det-s"],
    ]
    same = True
    for k, cmd in enumerate(commands):
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{k}{rep}"
            assert cli_main([*cmd, "--model", str(model), "--seed", "123", "--out", str(out)]) == 0
            files = sorted(tmp_path.glob(f"{k}{rep}.*"))
            blobs.append([(f.suffix, f.read_bytes()) for f in files])
        same &= blobs[0] == blobs[1] and len(blobs[0]) >= 1
    elapsed = time.perf_counter() - start
    record_criterion(12, same, f"{len(commands)} invocations repeated, outputs byte-identical: {same}", elapsed)
    assert same
