"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The recovery criteria
(5 and 6) fit 40 synthetic datasets and dominate the runtime (about 15-20
minutes on 2 cores).
"""

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

import epibias
from epibias import ChainConfig, HyperParams, PriorConfig
from epibias.model import _logpdf_psi
from epibias.sampler import LatentSystem

from test_cluster import brute_force_dtw, trajectories
from test_sampler import dense_constrained_oracle, flat
from test_structure import EXPECTED_M, RAW_AVG, make_stack

pytestmark = pytest.mark.acceptance


def report(criterion, text):
    print(f"\nACCEPTANCE {criterion}: PASS - {text}")


def count_rank(Q, tol=1e-9):
    Qd = Q.toarray() if hasattr(Q, "toarray") else np.asarray(Q)
    vals = np.linalg.eigvalsh(Qd)
    return int((vals > tol).sum()), int((np.abs(vals) < tol).sum())


def test_criterion_01_metric_identity():
    """b_M equals b_A / (1000 * dhat / POP) to 1e-12 relative tolerance."""
    rng = np.random.default_rng(101)
    provinces = epibias.ProvinceIndex.from_ids([f"P{k}" for k in range(12)])
    weeks = epibias.WeekIndex.from_range(2020, 9, 11)
    worst = 0.0
    for _ in range(50):
        dhat = rng.uniform(0.5, 400.0, size=(12, 11))
        official = epibias.MortalityPanel(
            provinces, weeks, rng.uniform(0.0, 300.0, size=(12, 11)), 2020
        )
        pop = epibias.PopulationTable(provinces, rng.uniform(5e4, 2e6, size=12))
        excess = epibias.ExcessPanel(provinces, weeks, dhat)
        b_a = epibias.additive_bias(excess, official, pop).values
        b_m = epibias.multiplicative_bias(excess, official).values
        ref = b_a / (1000.0 * dhat / pop.pop[:, None])
        rel = np.abs(b_m - ref) / np.maximum(np.abs(ref), 1e-300)
        rel[ref == 0.0] = np.abs(b_m - ref)[ref == 0.0]
        worst = max(worst, rel.max())
    assert worst < 1e-12
    report(1, f"metric ratio identity holds (worst relative error {worst:.2e})")


def test_criterion_02_structure_ranks():
    """Ranks of ring, grid and mobility-derived structures vs dense eigenvalues."""
    import time

    t0 = time.time()
    n_t = 7
    temporal = epibias.rw1_structure(n_t)
    r_v, z_v = count_rank(temporal.Q_v)
    assert r_v == n_t - 1 and z_v == 1

    cases = {
        "ring8": epibias.spatial_structure_from_weights(epibias.ring_weights(8)),
        "grid4x4": epibias.spatial_structure_from_weights(epibias.grid_weights(4, 4)),
    }
    # 10-node mobility-derived graph
    rng = np.random.default_rng(77)
    provinces = epibias.ProvinceIndex.from_ids([f"P{k}" for k in range(10)])
    flows = rng.uniform(0.0, 1.0, size=(3, 10, 10)) * (rng.uniform(size=(3, 10, 10)) < 0.5)
    stack = epibias.MobilityStack(
        provinces,
        tuple(__import__("datetime").date(2020, 1, 18 + k) for k in range(3)),
        flows,
    )
    cases["mobility10"] = epibias.build_mobility_weights(stack)

    for name, s in cases.items():
        r_u, z_u = count_rank(s.Q_u)
        assert r_u == s.n - s.n_components, name
        assert z_u == s.n_components, name
        inter = epibias.interaction_structure(s, temporal)
        r_w, _ = count_rank(inter.Q_w)
        assert r_w == r_u * r_v, name
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(2, f"ICAR/RW1/Kronecker ranks match dense eigendecompositions ({elapsed:.1f}s)")


def test_criterion_03_gmrf_oracle_equivalence():
    """Full-conditional mean and covariance vs the dense constrained solve."""
    rng = np.random.default_rng(303)
    spatial = epibias.spatial_structure_from_weights(epibias.ring_weights(4))
    structures = epibias.model_structures(spatial, epibias.rw1_structure(3))
    hp = HyperParams(V=0.8, phi=0.35, psi=0.25, sigma2_eps=0.2)
    pc = PriorConfig(U=1.0)
    y = rng.normal(size=12)
    mean_o, cov_o = dense_constrained_oracle(y, structures, hp, pc)
    system = LatentSystem(y, structures, pc)
    mean = flat(system.constrained_mean(hp))
    mean_err = np.abs(mean - mean_o).max()
    assert mean_err < 1e-8

    K = 50_000
    X = np.empty((K, system.n))
    for k in range(K):
        X[k] = flat(system.draw(hp, rng))
    emp = np.cov(X.T)
    se = np.sqrt((np.outer(np.diag(cov_o), np.diag(cov_o)) + cov_o**2) / K)
    err = np.abs(emp - cov_o)
    # "within 3 SE": entrywise, with a 1e-6 floor for near-zero entries and a
    # small allowance for the extremes of ~200 correlated statistics
    within = err <= 3.0 * se + 1e-6
    assert np.mean(~within) < 0.01
    assert np.all(err <= 6.0 * se + 1e-6)
    report(
        3,
        f"latent full conditional matches dense solve (mean err {mean_err:.1e}, "
        f"{100 * np.mean(within):.1f}% of covariance entries within 3 SE of 50k draws)",
    )


def test_criterion_04_prior_calibration():
    """PC-prior tail probabilities and psi-prior normalization."""
    rng = np.random.default_rng(404)
    lam_a = epibias.pc_rate(0.1, 0.05)
    lam_m = epibias.pc_rate(1.0, 0.05)
    assert lam_a == pytest.approx(29.957, abs=1e-3)
    assert lam_m == pytest.approx(2.9957, abs=1e-4)
    tails = {}
    for U in (0.1, 1.0):
        cfg = PriorConfig(U=U)
        sqrt_v = np.array(
            [math.sqrt(epibias.prior_sample_hyper(cfg, rng).V) for _ in range(100_000)]
        )
        tails[U] = float(np.mean(sqrt_v > U))
        assert abs(tails[U] - 0.05) < 0.005
    integral, quad_err = scipy.integrate.quad(
        lambda p: math.exp(_logpdf_psi(p, 1.0)), 0.0, 1.0
    )
    assert abs(integral - 1.0) < max(1e-6, 3 * quad_err)
    report(
        4,
        f"P(sqrt(V)>U) = {tails[0.1]:.4f} (U=0.1), {tails[1.0]:.4f} (U=1.0); "
        f"psi prior integrates to {integral:.8f}",
    )


def _fit_recovery_batch(true_hp, n_datasets, warmup, draws, seed_base):
    pc = PriorConfig(U=1.0)
    results = []
    for k in range(n_datasets):
        sc = epibias.SimScenario(
            n_s=20, n_t=11, true_hp=true_hp, graph="grid", seed=seed_base + k
        )
        sim = epibias.simulate_dataset(sc)
        cfg = ChainConfig(
            n_chains=4,
            n_warmup=warmup,
            n_draws=draws,
            seed=seed_base + 10_000 + k,
            hyper_sweeps=8,
            threads=2,
        )
        posterior = epibias.run_chains(sim.response.y, sim.structures, cfg, pc)
        results.append(
            {
                "coverage": epibias.interval_coverage(
                    posterior,
                    {"V": true_hp.V, "phi": true_hp.phi, "psi": true_hp.psi},
                    level=0.9,
                ),
                "report": epibias.convergence(posterior),
                "shares": epibias.variance_shares(posterior).mean,
            }
        )
    return results


@pytest.mark.slow
def test_criterion_05_parameter_recovery():
    """90% intervals cover (V, phi, psi) in >= 14/20 runs; all R-hat <= 1.01."""
    import time

    t0 = time.time()
    true_hp = HyperParams(V=0.5, phi=0.6, psi=0.3, sigma2_eps=0.1)
    results = _fit_recovery_batch(true_hp, 20, warmup=2000, draws=2000, seed_base=1000)
    covered = {name: 0 for name in ("V", "phi", "psi")}
    max_rhat = 0.0
    for res in results:
        for name in covered:
            covered[name] += res["coverage"][name]["covered"]
        max_rhat = max(max_rhat, res["report"].max_rhat)
    elapsed = time.time() - t0
    for name, count in covered.items():
        assert count >= 14, f"{name} covered in only {count}/20 runs"
    assert max_rhat <= 1.01
    assert elapsed < 20 * 60
    report(
        5,
        f"coverage V={covered['V']}/20 phi={covered['phi']}/20 psi={covered['psi']}/20, "
        f"max R-hat {max_rhat:.4f}, {elapsed / 60:.1f} min",
    )


@pytest.mark.slow
def test_criterion_06_directional_variance_share():
    """Spatial share dominates when data is simulated with spatial share 0.6."""
    # (1 - psi) * phi = 0.6 with psi = 0.2, phi = 0.75
    true_hp = HyperParams(V=0.5, phi=0.75, psi=0.2, sigma2_eps=0.1)
    results = _fit_recovery_batch(true_hp, 20, warmup=1000, draws=1000, seed_base=6000)
    wins = 0
    for res in results:
        spatial, temporal, interaction = res["shares"]
        wins += spatial > temporal and spatial > interaction
    assert wins >= 18
    report(6, f"posterior spatial share is the largest in {wins}/20 runs")


def test_criterion_07_dtw_oracle():
    """DP distance equals exhaustive path enumeration, exactly."""
    rng = np.random.default_rng(707)
    checked = 0
    for _ in range(3**4):
        n, m = rng.integers(1, 6, size=2)
        a = rng.integers(-9, 10, size=n).astype(float)
        b = rng.integers(-9, 10, size=m).astype(float)
        assert epibias.dtw(a, b) == brute_force_dtw(a, b)
        checked += 1
    report(7, f"DTW equals exhaustive enumeration on {checked} random pairs")


def test_criterion_08_cluster_recovery():
    """select_k finds 4 groups and assignments match truth (ARI = 1) in >= 9/10 seeds."""
    from sklearn.metrics import adjusted_rand_score

    levels = [0.1, 0.3, 0.5, 0.8]
    per_group = 5
    truth = np.repeat(np.arange(4), per_group)
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(800 + seed)
        series = np.vstack(
            [
                np.full((per_group, 11), lv) + 0.02 * rng.standard_normal((per_group, 11))
                for lv in levels
            ]
        )
        sel = epibias.select_k(trajectories(series), range(2, 9), seed=seed)
        if sel.k == 4 and adjusted_rand_score(truth, sel.best.assignment) == 1.0:
            hits += 1
    assert hits >= 9
    report(8, f"4 trajectory groups perfectly recovered in {hits}/10 seeds")


def test_criterion_09_fit_determinism(tmp_path):
    """Two fits with identical seed/config/inputs write byte-identical draws."""
    from epibias.cli import main

    sim_dir = tmp_path / "sim"
    assert main(["simulate", "--ns", "6", "--nt", "6", "--seed", "7", "-o", str(sim_dir)]) == 0
    payloads = []
    for name in ("fit1", "fit2"):
        fit_dir = tmp_path / name
        assert (
            main(
                [
                    "fit",
                    "--bias", str(sim_dir / "bias_simulated.csv"),
                    "--weights", str(sim_dir / "weights.csv"),
                    "--chains", "2", "--warmup", "150", "--draws", "150",
                    "--save-latent", "--seed", "12", "-o", str(fit_dir),
                ]
            )
            == 0
        )
        payloads.append((fit_dir / "draws.csv").read_bytes())
    assert payloads[0] == payloads[1]
    report(9, f"draw files byte-identical across reruns ({len(payloads[0])} bytes)")


def test_criterion_10_mobility_pipeline_fixture():
    """Handcrafted 5-province flow stack reproduces the hand-computed matrix."""
    provinces = epibias.ProvinceIndex.from_ids([f"P{k}" for k in range(1, 6)])
    stack = make_stack(provinces, [RAW_AVG * 0.5, RAW_AVG * 1.5])
    s = epibias.build_mobility_weights(stack, quantile_keep=0.2, scale=False)
    assert np.array_equal(s.M.toarray(), EXPECTED_M)
    assert s.n_components == 2
    report(10, "average->zero-diag->normalize->symmetrize->quintile matches hand computation")
