"""Release acceptance suite.

One test per release gate, each with its tolerance and wall-clock budget
pinned.  These run the public pipeline end to end and compare against
independent oracles (closed-form linear-Gaussian effects, exhaustive DAG
enumeration, analytic regression identities), so a pass means the package
as a whole still computes what it claims to compute.
"""

import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from causalpanel.cli import main
from causalpanel.discovery import PcmciConfig, discover
from causalpanel.graph import CausalDag, Edge, Node, ancestors, descendants
from causalpanel.harness import ExperimentConfig, depth_bench, run_pipeline
from causalpanel.metrics import (
    _pair_good,
    distance_metrics,
    edge_metrics,
    effect_metrics,
    shd,
    sid,
)
from causalpanel.panel import Panel, channel_column
from causalpanel.parcorr import parcorr_test
from causalpanel.scm import estimate_cate, fit_scm
from causalpanel.simulate import (
    SimulationConfig,
    generate_random_dag,
    simulate_panel,
    total_effect_vector,
)

# --------------------------------------------------------------------------
# 1. Metric identities: every metric must recognise a perfect answer.
# --------------------------------------------------------------------------


def test_metric_identities_on_random_dags():
    start = time.perf_counter()
    checked = 0
    for k in range(100):
        n_channels = 2 + k % 7
        depth = 2 + k % min(5, n_channels)
        cfg = SimulationConfig(
            n_channels=n_channels,
            depth=depth,
            edge_probability=(0.0, 0.3, 0.7, 1.0)[k % 4],
            seed=1000 + k,
        )
        dag = generate_random_dag(cfg)

        em = edge_metrics(dag, dag)
        assert em.tpr == 1.0
        assert em.fpr == 0.0
        assert em.f_beta == 1.0

        sh = shd(dag, dag)
        assert sh.shd == 0 and sh.shd_pairs == 0 and sh.nshd == 0.0
        sd = sid(dag, dag)
        assert sd.sid == 0 and sd.nsid == 0.0
        dm = distance_metrics(dag, dag)
        assert dm.shd == 0 and dm.nshd == 0.0 and dm.sid == 0 and dm.nsid == 0.0

        tau = total_effect_vector(dag)
        fm = effect_metrics(tau, tau.copy())
        assert fm.rrmse == 0.0
        assert fm.mape == 0.0
        assert fm.spearman_rho == 1.0
        checked += 1

    elapsed = time.perf_counter() - start
    assert checked == 100
    assert elapsed < 5.0, f"identity suite took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 2. SID against a linear-Gaussian brute-force oracle, exhaustively over
#    every ordered pair of 4-node DAGs.
# --------------------------------------------------------------------------

_N4 = 4
_ORDERED_PAIRS = [(i, j) for i in range(_N4) for j in range(_N4) if i != j]


def _is_acyclic(edges):
    adj = {i: [] for i in range(_N4)}
    indeg = {i: 0 for i in range(_N4)}
    for p, c in edges:
        adj[p].append(c)
        indeg[c] += 1
    queue = [v for v in range(_N4) if indeg[v] == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for w in adj[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen == _N4


def _enumerate_4node_dags():
    out = []
    for mask in range(1 << len(_ORDERED_PAIRS)):
        edges = tuple(
            _ORDERED_PAIRS[b] for b in range(len(_ORDERED_PAIRS)) if mask >> b & 1
        )
        if _is_acyclic(edges):
            out.append(edges)
    return out


def _bare_dag(edges):
    nodes = tuple(Node(index=i, name=f"x{i}", layer=1) for i in range(_N4))
    return CausalDag(nodes=nodes, edges=tuple(Edge(p, c, 1.0) for p, c in edges))


def _oracle_adjustment_table(edges, rng):
    """good[(i, j, Z)] decided by population regression in two random
    linear-Gaussian parameterisations of ``edges``.

    x = (I - A^T)^{-1} e gives Cov = M^T V M with M = (I - A)^{-1}; the total
    effect of i on j is M[i, j] and the adjusted estimate is the population
    OLS slope of x_j on [x_i, x_Z].  Claiming j's own value as a regressor
    (j in Z) collapses the estimate to a null effect.  Agreement within 1e-7
    on both draws marks the adjustment as sound; random continuous weights
    make accidental agreement a measure-zero event.
    """
    verdicts = None
    for _ in range(2):
        amat = np.zeros((_N4, _N4))
        for p, c in edges:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            amat[p, c] = sign * rng.uniform(0.8, 1.2)
        noise = np.diag(rng.uniform(0.8, 1.25, size=_N4))
        minv = np.linalg.inv(np.eye(_N4) - amat)
        cov = minv.T @ noise @ minv
        draw = {}
        for i in range(_N4):
            others = [v for v in range(_N4) if v != i]
            subsets = itertools.chain.from_iterable(
                itertools.combinations(others, r) for r in range(len(others) + 1)
            )
            for z_tuple in subsets:
                zset = frozenset(z_tuple)
                for j in others:
                    tau = minv[i, j]
                    if j in zset:
                        slope = 0.0
                    else:
                        sel = [i] + sorted(zset)
                        slope = float(
                            np.linalg.solve(cov[np.ix_(sel, sel)], cov[sel, j])[0]
                        )
                    draw[(i, j, zset)] = abs(slope - tau) < 1e-7
        verdicts = draw if verdicts is None else {
            key: verdicts[key] and draw[key] for key in verdicts
        }
    return verdicts


def test_sid_matches_linear_gaussian_oracle_exhaustively():
    start = time.perf_counter()
    edge_sets = _enumerate_4node_dags()
    assert len(edge_sets) == 543  # labelled DAGs on 4 nodes

    # Every adjustment decision, package vs oracle, over all 543 x 96 cells.
    rng = np.random.default_rng(4242)
    subset_index = {}
    for idx, z_tuple in enumerate(
        itertools.chain.from_iterable(
            itertools.combinations(range(_N4), r) for r in range(_N4 + 1)
        )
    ):
        subset_index[frozenset(z_tuple)] = idx
    pair_index = {pair: idx for idx, pair in enumerate(_ORDERED_PAIRS)}

    oracle_bad = np.zeros((543, len(_ORDERED_PAIRS), len(subset_index)), dtype=np.int16)
    package_bad = np.zeros_like(oracle_bad)
    dags = []
    for t, edges in enumerate(edge_sets):
        dag = _bare_dag(edges)
        dags.append(dag)
        de_cache = {v: frozenset(descendants(dag, v)) for v in range(_N4)}
        an_cache = {v: frozenset(ancestors(dag, v)) for v in range(_N4)}
        for (i, j, zset), good in _oracle_adjustment_table(edges, rng).items():
            cell = (t, pair_index[(i, j)], subset_index[zset])
            oracle_bad[cell] = 0 if good else 1
            ours = _pair_good(dag, i, j, zset, de_cache, an_cache)
            package_bad[cell] = 0 if ours else 1
    assert np.array_equal(package_bad, oracle_bad)

    # Implied SID for every ordered DAG pair must therefore agree too;
    # aggregate both tables over each predicted graph's parent sets.
    parent_subset = np.zeros((543, _N4), dtype=np.int64)
    for p, edges in enumerate(edge_sets):
        for i in range(_N4):
            parent_subset[p, i] = subset_index[
                frozenset(src for src, dst in edges if dst == i)
            ]
    source_of_pair = np.array([i for i, _ in _ORDERED_PAIRS])
    cols = np.arange(len(_ORDERED_PAIRS))[None, :]
    for t in range(543):
        oracle_sid = oracle_bad[t][cols, parent_subset[:, source_of_pair]].sum(axis=1)
        package_sid = package_bad[t][cols, parent_subset[:, source_of_pair]].sum(axis=1)
        assert np.array_equal(package_sid, oracle_sid)

    # The public function must reproduce the aggregation: every DAG against
    # itself, plus a seeded sample of cross pairs checked end to end.
    for dag in dags:
        report = sid(dag, dag)
        assert report.sid == 0 and report.nsid == 0.0
    pick = np.random.default_rng(7).integers(0, 543, size=(800, 2))
    for t, p in pick:
        expected = int(
            oracle_bad[t][cols, parent_subset[p, source_of_pair][None, :]].sum()
        )
        report = sid(dags[t], dags[p])
        assert report.sid == expected
        assert report.nsid == expected / len(_ORDERED_PAIRS)

    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"oracle equivalence took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 3. Partial-correlation test calibration under a true conditional null.
# --------------------------------------------------------------------------


def test_parcorr_null_calibration():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n, trials = 500, 2000
    pvals = np.empty(trials)
    for trial in range(trials):
        z = rng.normal(size=n)
        x = 0.8 * z + rng.normal(size=n)
        y = -0.5 * z + rng.normal(size=n)
        pvals[trial] = parcorr_test(x, y, z.reshape(-1, 1)).p_value

    rejection = float(np.mean(pvals <= 0.05))
    ks_statistic = stats.kstest(pvals, "uniform").statistic
    elapsed = time.perf_counter() - start

    assert 0.03 <= rejection <= 0.07, f"rejection rate {rejection:.4f}"
    assert ks_statistic < 0.05, f"KS statistic {ks_statistic:.4f}"
    assert elapsed < 60.0, f"calibration took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 4. Exact SCM coefficient recovery on noise-free mechanisms.
# --------------------------------------------------------------------------


def test_scm_recovers_generating_coefficients_without_noise():
    start = time.perf_counter()

    # Hand-built chain whose fitted mechanisms are all noise-free: the
    # channel weight w and conversion rate gamma must both come back.
    T = 365
    rng = np.random.default_rng(5)
    t = np.arange(T, dtype=float)
    x0 = 200.0 + 0.3 * t + 8.0 * rng.standard_normal(T)
    x1 = 50.0 + 0.1 * t + 0.5 * x0
    conv = 3.0 + 0.02 * x1
    panel = Panel(index=np.arange(T), conversion=conv, impressions=np.column_stack([x0, x1]))
    dag = CausalDag(
        nodes=(
            Node(0, channel_column(0), 2),
            Node(1, channel_column(1), 1),
            Node(2, "conversion", 0, is_outcome=True),
        ),
        edges=(Edge(0, 1, 0.5), Edge(1, 2, 0.02)),
    )
    scm = fit_scm(panel, dag)
    assert scm.mechanisms[1].coefficients[0] == pytest.approx(0.5, rel=1e-8)
    assert scm.mechanisms[1].intercept == pytest.approx(50.0, rel=1e-8)
    assert scm.mechanisms[2].coefficients[1] == pytest.approx(0.02, rel=1e-8)
    assert scm.mechanisms[2].intercept == pytest.approx(3.0, rel=1e-8)

    # Generated two-layer panel with the conversion noise switched off:
    # every gamma drawn by the generator must be recovered exactly.
    sim = SimulationConfig(
        depth=2, seed=11, noise_std_channel=(6.0, 6.0), noise_std_conversion=0.0
    )
    random_dag = generate_random_dag(sim)
    gen_panel, truth = simulate_panel(sim, random_dag)
    fitted = fit_scm(gen_panel, truth.dag)
    outcome = truth.dag.outcome.index
    mech = fitted.mechanisms[outcome]
    true_gamma = {e.src: e.weight for e in truth.dag.edges if e.dst == outcome}
    assert set(mech.coefficients) == set(true_gamma)
    for src, fitted_coef in mech.coefficients.items():
        assert fitted_coef == pytest.approx(true_gamma[src], rel=1e-8)
    assert mech.intercept == pytest.approx(truth.baseline, rel=1e-8)
    assert mech.time_coefficient == pytest.approx(0.0, abs=1e-8)

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"recovery took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 5. Monte Carlo attribution against the closed-form total effect.
# --------------------------------------------------------------------------


def test_cate_matches_known_total_effects():
    start = time.perf_counter()
    sim = SimulationConfig(n_channels=2, depth=2, seed=42)
    dag = generate_random_dag(sim)
    panel, truth = simulate_panel(sim, dag)
    scm = fit_scm(panel, truth.dag)

    for channel in range(2):
        estimate = estimate_cate(scm, channel, n_runs=5000, seed=7)
        true_effect = truth.true_total_effects[channel]
        rel_err = abs(estimate.ace_per_unit - true_effect) / abs(true_effect)
        assert rel_err < 0.05, f"channel {channel}: {rel_err:.2%} off {true_effect:.6f}"

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"attribution took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 6. Depth benchmark: attribution error grows with graph depth and the true
#    DAG never scores worse than the discovered one.
# --------------------------------------------------------------------------


def test_depth_bench_error_trend():
    start = time.perf_counter()
    cfg = ExperimentConfig(workers=4)
    rows, failures = depth_bench(cfg)
    assert failures == []

    by_key = {(row.depth, row.dag_input): row for row in rows}
    depth_labels = [str(d) for d in cfg.depths]

    # (a) the true DAG is never beaten by the predicted one, at any depth
    for label in depth_labels:
        assert by_key[(label, "true")].rrmse_mean <= by_key[(label, "predicted")].rrmse_mean

    # (b) true-DAG error is non-decreasing in depth, allowing one inversion
    #     no larger than one standard error of the difference of means
    means, std_errs = [], []
    for label in depth_labels:
        row = by_key[(label, "true")]
        assert row.n_seeds == len(cfg.seeds)
        means.append(row.rrmse_mean)
        std_errs.append(row.rrmse_std / math.sqrt(row.n_seeds))
    inversions = [
        (k, means[k] - means[k + 1])
        for k in range(len(means) - 1)
        if means[k + 1] < means[k]
    ]
    assert len(inversions) <= 1, f"means {means} invert more than once"
    for k, drop in inversions:
        allowed = math.hypot(std_errs[k], std_errs[k + 1])
        assert drop <= allowed, f"inversion {drop:.2f} exceeds 1 se {allowed:.2f}"

    # (c) shallow graphs attribute almost perfectly with the true DAG
    assert means[0] < 5.0, f"depth-2 true-DAG RRMSE {means[0]:.2f}%"

    # (d) pooled rank agreement across all depths stays high
    assert by_key[("all", "true")].spearman_mean >= 0.75

    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"bench took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 7. Discovery recovery floor on lag-1 panels.
# --------------------------------------------------------------------------

_LAGGED_SIM = SimulationConfig(
    depth=2, edge_lag=1, noise_std_channel=(5.0, 10.0), noise_std_conversion=0.02
)
_LAGGED_PCMCI = PcmciConfig(tau_min=1, tau_max=45)


def _lagged_recovery(seed: int) -> tuple[float, float]:
    sim = replace(_LAGGED_SIM, seed=seed)
    dag = generate_random_dag(sim)
    panel, truth = simulate_panel(sim, dag)
    predicted, links = discover(panel, _LAGGED_PCMCI)
    metrics = edge_metrics(truth.dag, predicted, links.pair_scores())
    return metrics.tpr, metrics.fpr


def test_discovery_recovery_floor_on_lagged_panels():
    start = time.perf_counter()
    with ProcessPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(_lagged_recovery, range(100)))

    full_tpr = sum(1 for tpr, _ in results if tpr == 1.0)
    low_fpr = sum(1 for _, fpr in results if fpr <= 0.10)
    elapsed = time.perf_counter() - start

    assert full_tpr >= 80, f"TPR == 1.0 on only {full_tpr}/100 seeds"
    assert low_fpr >= 80, f"FPR <= 0.10 on only {low_fpr}/100 seeds"
    assert elapsed < 300.0, f"recovery sweep took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# 8. Determinism: byte-identical reruns, worker-count independence.
# --------------------------------------------------------------------------


def _dir_bytes(directory):
    return {
        path.name: path.read_bytes()
        for path in sorted(directory.iterdir())
        if path.is_file()
    }


def test_reruns_are_byte_identical_and_worker_independent(tmp_path, capsys):
    sim_cfg = {
        "sim": {"n_channels": 3, "horizon_T": 140, "depth": 2, "seed": 0},
        "pcmci": {"tau_min": 0, "tau_max": 3, "max_subset_size": 1},
        "mc_runs": 200,
        "seeds": [0, 1],
        "depths": [2, 3],
        "tau_grid": [2, 3],
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(sim_cfg))

    def run(*argv):
        code = main([str(a) for a in argv])
        out = capsys.readouterr().out
        assert code == 0, out
        return out

    # simulate / discover / estimate / evaluate, each twice
    for attempt in ("a", "b"):
        out_dir = tmp_path / f"run_{attempt}"
        run("simulate", "--config", cfg_path, "--seed", 9, "--output-dir", out_dir)
        run("discover", "--config", cfg_path, "--panel", out_dir / "panel.csv",
            "--output-dir", out_dir)
        truth = json.loads((out_dir / "truth.json").read_text())
        dag_path = out_dir / "true_dag.json"
        dag_path.write_text(json.dumps(truth["dag"]))
        run("estimate", "--panel", out_dir / "panel.csv", "--dag", dag_path,
            "--mc-runs", 100, "--output-dir", out_dir)
        run("evaluate", "--truth", out_dir / "truth.json",
            "--predicted", out_dir / "predicted_dag.json",
            "--links", out_dir / "links.csv", "--output-dir", out_dir)
    assert _dir_bytes(tmp_path / "run_a") == _dir_bytes(tmp_path / "run_b")

    report_outputs = {
        run("report", "--attribution", tmp_path / f"run_{attempt}" / "attribution.json")
        for attempt in ("a", "b")
    }
    assert len(report_outputs) == 1

    # lag sweep and depth bench: reruns and worker counts must not matter
    for command, files in (
        ("lag-sweep", ["sweep.csv"]),
        ("bench", ["bench.csv", "bench.json"]),
    ):
        blobs = []
        for workers in (1, 2, 1):
            out_dir = tmp_path / f"{command}_{len(blobs)}"
            run(command, "--config", cfg_path, "--workers", workers,
                "--output-dir", out_dir)
            blobs.append([(out_dir / name).read_bytes() for name in files])
        assert blobs[0] == blobs[1] == blobs[2]


# --------------------------------------------------------------------------
# 9. Frozen regression fixture: these numbers were produced by the first
#    released build and must not drift.  Update them only on a deliberate,
#    documented behaviour change.
# --------------------------------------------------------------------------


def test_frozen_fixture_metrics_are_pinned():
    record = run_pipeline(ExperimentConfig(), seed=155)

    assert sorted(record.ground_truth.dag.edge_set()) == [
        (0, 5), (1, 5), (2, 5), (3, 5), (4, 5),
    ]
    assert sorted(record.predicted_dag.edge_set()) == [
        (0, 5), (1, 3), (2, 3), (3, 4),
    ]

    pin = pytest.approx
    edge = record.edge
    assert edge.tpr == pin(0.2, rel=1e-9)
    assert edge.fpr == pin(0.12, rel=1e-9)
    assert edge.auc == pin(0.884, rel=1e-9)
    assert edge.f_beta == pin(0.23809523809523808, rel=1e-9)
    assert edge.flags == ()

    distance = record.distance
    assert distance.shd == 7
    assert distance.shd_pairs == 7
    assert distance.nshd == pin(0.4666666666666667, rel=1e-9)
    assert distance.sid == 4
    assert distance.nsid == pin(0.13333333333333333, rel=1e-9)

    true_side = record.effects_true_dag
    assert true_side.rrmse == pin(2.0584289482025953, rel=1e-9)
    assert true_side.mape == pin(2.207123449898769, rel=1e-9)
    assert true_side.spearman_rho == pin(1.0, rel=1e-9)
    assert true_side.flags == ()

    pred_side = record.effects_pred_dag
    assert pred_side.rrmse == pin(99.81028517320357, rel=1e-9)
    assert pred_side.mape == pin(80.02715836934672, rel=1e-9)
    assert pred_side.spearman_rho == pin(0.25, rel=1e-9)
    assert pred_side.flags == ()
