"""Acceptance suite: one test per criterion, at the stated tolerances.

The desk-scale end-to-end run (criterion 8) dominates the runtime; its
artifacts are produced once in a module-scoped fixture and shared with the
determinism checks where valid. Budget on a 2-core desktop CPU is well
under the one-hour bound.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from metaprune import hypernet as hn
from metaprune.arch import (
    builtin_template,
    baseline_flops,
    flops_of,
    full_nev,
    random_nev,
)
from metaprune.errors import RewardDomainError
from metaprune.evosearch import (
    SearchConfig,
    flops_distribution,
    make_gene,
    mutate,
    crossover,
    run_search,
)
from metaprune.pipeline import (
    PhaseEpochs,
    default_tune_schedule,
    ingest,
    load_gene,
    retrain,
    phase_rng,
    run_all,
)
from metaprune.reward import RewardParams, alpha, psi, reward
from metaprune.tensorcore import (
    Schedule,
    Tensor,
    backward,
    channel_norm_affine,
    conv2d,
    dense,
    depthwise_conv2d,
    global_avg_pool,
    relu,
    softmax_cross_entropy,
    sum_squares,
    add,
)

from test_tensorcore import assert_grad_matches, finite_difference
from util import affine_fitness


# -- criterion 1 -------------------------------------------------------------

def test_criterion_1_static_flops_reproduction():
    published = {"resnet50": 4110e6, "mobilenet_v2": 314e6, "mobilenet_v1": 569e6}
    start = time.perf_counter()
    got = {}
    for name, target in published.items():
        t = builtin_template(name)
        got[name] = flops_of(t, full_nev(t))
    elapsed = time.perf_counter() - start
    for name, target in published.items():
        assert got[name] == pytest.approx(target, rel=0.03), name
    assert elapsed < 1.0, f"analytic FLOPs took {elapsed:.3f}s"


# -- criterion 2 -------------------------------------------------------------

def test_criterion_2_reward_identities():
    params = RewardParams(baseline_accuracy=0.766, baseline_flops=4110e6)
    assert alpha(0.0, params) == pytest.approx(1.0, rel=1e-3)
    assert alpha(0.766 / 2, params) == pytest.approx(4.0, rel=1e-3)
    with pytest.raises(RewardDomainError):
        psi(4110e6, params)
    assert psi(4110e6 / math.e, params) == pytest.approx(1.0, rel=1e-3)
    value = reward(0.7576, 1950e6, params)
    assert value.alpha == pytest.approx(8316, rel=1e-3)
    assert value.psi == pytest.approx(0.7457, rel=1e-3)
    assert value.reward == pytest.approx(6202, rel=1e-3)


# -- criterion 3 -------------------------------------------------------------

def test_criterion_3_monotonicity_and_log_base_invariance():
    params = RewardParams(baseline_accuracy=0.9, baseline_flops=1e9)
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        a = rng.uniform(0.0, 0.9 - 1e-6)
        f = rng.uniform(1.0, 1e9 - 1.0)
        da = rng.uniform(1e-9, 0.9 - a - 1e-12)
        df = rng.uniform(1e-6, 1e9 - f - 1e-9)
        base = reward(a, f, params).reward
        assert reward(a + da, f, params).reward > base
        assert reward(a, f + df, params).reward < base

    genes = [(rng.uniform(0, 0.89), rng.uniform(1e3, 0.999e9)) for _ in range(300)]
    natural = np.array([reward(a, f, params).reward for a, f in genes])
    base10 = np.array(
        [alpha(a, params) * math.log10(1e9 / f) for a, f in genes]
    )
    assert np.argsort(natural).tolist() == np.argsort(base10).tolist()


# -- criterion 4 -------------------------------------------------------------

def test_criterion_4_search_oracle_equivalence():
    template = builtin_template("mininet")
    base = baseline_flops(template)
    params = RewardParams(baseline_accuracy=0.9, baseline_flops=base * 1.05)
    fitness = affine_fitness(template)
    genes = [
        make_gene(template, nev)
        for nev in itertools.product(range(27, 31), repeat=4)
    ]
    assert len(genes) == 256
    ranked = sorted(
        genes,
        key=lambda g: (-reward(fitness(g.nev), g.flops, params).reward, g.flops, g.nev),
    )
    top_1pct = {g.nev for g in ranked[: max(1, -(-len(genes) // 100))]}
    start = time.perf_counter()
    hits = 0
    for seed in range(20):
        cfg = SearchConfig(
            min_flops=1, max_flops=base, population=50, epochs=20, patience=20,
            slot_range=(27, 30), seed=seed,
        )
        best, _ = run_search(template, cfg, fitness, params)
        hits += best.nev in top_1pct
    elapsed = time.perf_counter() - start
    assert hits >= 19, f"only {hits}/20 seeds reached the top 1%"
    assert elapsed < 60.0, f"search oracle sweep took {elapsed:.1f}s"


# -- criterion 5 -------------------------------------------------------------

def test_criterion_5_evolution_operator_statistics():
    from util import chain_template

    template = chain_template("twenty", [8] * 20, input_shape=(3, 8, 8))
    base = float(baseline_flops(template))
    cfg = SearchConfig(min_flops=1, max_flops=base, mutation_rate=0.10)
    gene = make_gene(template, (15,) * 20)
    rng = np.random.default_rng(555)
    trials = 10_000
    changed = 0
    for _ in range(trials):
        out = mutate(gene, cfg, rng, template)
        changed += sum(a != b for a, b in zip(out.nev, gene.nev))
    n = trials * 20
    p = 0.10 * 30 / 31
    sigma = math.sqrt(p * (1 - p) / n)
    observed = changed / n
    assert abs(observed - p) < 3 * sigma, f"rate {observed:.5f} vs {p:.5f}"

    mini = builtin_template("mininet")
    mini_cfg = SearchConfig(min_flops=1, max_flops=float(baseline_flops(mini)))
    a = make_gene(mini, (5, 10, 15, 20))
    b = make_gene(mini, (25, 2, 28, 9))
    rng = np.random.default_rng(556)
    for _ in range(500):
        child = crossover(a, b, mini_cfg, rng, mini)
        assert all(v in (x, y) for v, x, y in zip(child.nev, a.nev, b.nev))

    params = RewardParams(baseline_accuracy=0.9, baseline_flops=float(baseline_flops(mini)) * 1.05)
    cfg = SearchConfig(
        min_flops=1, max_flops=float(baseline_flops(mini)), population=20,
        epochs=8, patience=8, k_elite=2, mutants=8, crossovers=5, breeders=5, seed=1,
    )
    _, history = run_search(mini, cfg, affine_fitness(mini), params)
    rewards = [h.best_reward for h in history]
    assert rewards == sorted(rewards)


# -- criterion 6 -------------------------------------------------------------

def test_criterion_6_gradient_correctness():
    start = time.perf_counter()
    for seed in range(10):
        rng = np.random.default_rng(seed)

        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        check = lambda: sum_squares(dense(x, w, b))
        loss = check()
        backward(loss)
        for t in (x, w, b):
            assert_grad_matches(t.grad, finite_difference(lambda: float(check().data), t.data))

        xc = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
        wc = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        check = lambda: sum_squares(conv2d(xc, wc, stride=2, padding=1))
        backward(check())
        for t in (xc, wc):
            assert_grad_matches(t.grad, finite_difference(lambda: float(check().data), t.data))

        xd = Tensor(rng.normal(size=(2, 4, 5, 5)), requires_grad=True)
        wd = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
        check = lambda: sum_squares(depthwise_conv2d(xd, wd, padding=1))
        backward(check())
        for t in (xd, wd):
            assert_grad_matches(t.grad, finite_difference(lambda: float(check().data), t.data))

        xn = Tensor(rng.normal(size=(6, 3, 4, 4)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
        beta = Tensor(rng.normal(size=3), requires_grad=True)
        shift = rng.normal(size=(6, 3, 4, 4))
        check = lambda: sum_squares(add(channel_norm_affine(xn, gamma, beta), Tensor(shift)))
        backward(check())
        for t in (xn, gamma, beta):
            assert_grad_matches(t.grad, finite_difference(lambda: float(check().data), t.data))

        vals = rng.normal(size=(3, 4, 4, 4))
        vals[np.abs(vals) < 0.1] += 0.2
        xr = Tensor(vals, requires_grad=True)
        check = lambda: sum_squares(global_avg_pool(relu(xr)))
        backward(check())
        assert_grad_matches(xr.grad, finite_difference(lambda: float(check().data), xr.data))

        logits = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        labels = rng.integers(0, 4, size=5)
        check = lambda: softmax_cross_entropy(logits, labels)
        backward(check())
        assert_grad_matches(
            logits.grad, finite_difference(lambda: float(check().data), logits.data)
        )

    # full hypernet -> slice -> network -> loss path
    from test_hypernet import tiny_template

    for seed in (100, 101, 102):
        template = tiny_template()
        h = hn.HyperNet(template, hidden=4, rng=np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        batch = rng.normal(size=(4, 1, 5, 5))
        labels = rng.integers(0, 3, size=4)

        def path_loss():
            model = hn.generate_weights(h, (14,))
            logits = hn.forward_network(template, model.channels, model.weights,
                                        Tensor(batch))
            return softmax_cross_entropy(logits, labels)

        backward(path_loss())
        for gen in h.generators:
            for p in gen.params:
                numeric = finite_difference(lambda: float(path_loss().data), p.data)
                assert_grad_matches(p.grad, numeric)
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0, f"gradient suite took {elapsed:.0f}s"


# -- criterion 7 -------------------------------------------------------------

def test_criterion_7_flops_distribution_mechanism():
    # 8 bins keeps every core bin far above sampling noise, so the strict
    # rise-then-fall check is stable at this fixed seed
    template = builtin_template("resnet50")
    edges, counts = flops_distribution(
        template, n=1000, bins=8, rng=np.random.default_rng(777)
    )
    assert counts.sum() == 1000
    peak = int(np.argmax(counts))
    assert all(counts[i] <= counts[i + 1] for i in range(peak)), counts
    assert all(counts[i] >= counts[i + 1] for i in range(peak, len(counts) - 1)), counts

    means = []
    for lo, hi in ((0, 10), (10, 20), (20, 30)):
        e, c = flops_distribution(
            template, n=1000, slot_range=(lo, hi), bins=8,
            rng=np.random.default_rng(778),
        )
        centers = (e[:-1] + e[1:]) / 2
        means.append(float(np.average(centers, weights=c)))
    assert means[0] < means[1] < means[2]


# -- criterion 8 -------------------------------------------------------------

DESK_SEED = 42
DESK_EPOCHS = PhaseEpochs(max_training=64, max_iter=20, max_tuning=30)


@pytest.fixture(scope="module")
def desk_dataset():
    return ingest(None, "synthetic", n_train=10_000, n_val=1000, noise=3.0, seed=7)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory, desk_dataset):
    out = tmp_path_factory.mktemp("desk_run")
    template = builtin_template("mininet")
    start = time.perf_counter()
    report = run_all(template, desk_dataset, out, epochs=DESK_EPOCHS, seed=DESK_SEED)
    elapsed = time.perf_counter() - start
    return template, out, report, elapsed


def _paired_retrain_job(args):
    """Top-level worker so the paired retrains can run two-at-a-time."""
    nev, seed, stream = args
    template = builtin_template("mininet")
    dataset = ingest(None, "synthetic", n_train=10_000, n_val=1000, noise=3.0, seed=7)
    _, rep = retrain(
        tuple(nev), template, dataset, DESK_EPOCHS.max_tuning,
        default_tune_schedule(DESK_EPOCHS), np.random.default_rng((seed, stream)),
        seed=seed,
    )
    return rep.top1_error


def test_criterion_8_end_to_end_desk_scale(desk_run, desk_dataset):
    from concurrent.futures import ProcessPoolExecutor

    template, out, report, elapsed = desk_run
    base = baseline_flops(template)

    # pipeline completed with all three artifacts
    meta_rows = (out / "meta_history.csv").read_text().splitlines()
    assert len(meta_rows) == 2 + DESK_EPOCHS.max_training  # schema + header + epochs
    history = (out / "search_history.csv").read_text().splitlines()
    unique = int(history[-1].split(",")[-1])
    assert unique <= DESK_EPOCHS.max_iter * 50 == 1000

    # compute constraint on the winner
    assert report.flops == flops_of(template, report.best_nev)
    assert report.flops <= 0.7 * base

    # the pipeline itself fits the stated budget
    assert elapsed < 3600, f"pipeline took {elapsed:.0f}s"

    # hypernet quality: random-slice accuracy well above the 10-class chance
    # level, and the full-width slice beats the random-slice mean
    probes = [float(r.split(",")[3]) for r in meta_rows[-20:]]
    assert float(np.mean(probes)) >= 5 * 0.1

    h = hn.load_hypernet(out / "hypernet.ckpt", template)
    calib = desk_dataset.train_images[:256]
    fw_acc = hn.evaluate_nev(
        h, full_nev(template), desk_dataset.val_images, desk_dataset.val_labels, calib
    )
    rng = np.random.default_rng(4242)
    rand_accs = [
        hn.evaluate_nev(
            h, random_nev(template, rng),
            desk_dataset.val_images, desk_dataset.val_labels, calib,
        )
        for _ in range(20)
    ]
    assert fw_acc >= float(np.mean(rand_accs))

    # paired retraining, 3 seeds: pruned winner vs full width, same recipe
    jobs = []
    for seed in (1, 2, 3):
        jobs.append((list(report.best_nev), seed, 1))
        jobs.append((list(full_nev(template)), seed, 2))
    with ProcessPoolExecutor(max_workers=2) as pool:
        errors = list(pool.map(_paired_retrain_job, jobs))
    gaps = [errors[i] - errors[i + 1] for i in range(0, 6, 2)]
    median_gap_points = float(np.median(gaps)) * 100
    assert median_gap_points <= 3.0, f"median gap {median_gap_points:.2f} points"


# -- criterion 9 -------------------------------------------------------------

SMALL_EPOCHS = PhaseEpochs(max_training=2, max_iter=3, max_tuning=1)


@pytest.fixture(scope="module")
def small_dataset():
    return ingest(None, "synthetic", n_train=500, n_val=300, noise=3.0, seed=11)


def test_criterion_9_determinism_and_resume(tmp_path_factory, small_dataset):
    template = builtin_template("mininet")
    base = tmp_path_factory.mktemp("determinism")

    def run(name, resume=True):
        return run_all(
            template, small_dataset, base / name, epochs=SMALL_EPOCHS, seed=31,
            resume=resume,
        )

    a = run("a")
    b = run("b")
    da, db = a.to_dict(), b.to_dict()
    da.pop("timings"), db.pop("timings")
    assert da == db
    for artifact in ("hypernet.ckpt", "model.ckpt", "best_gene.json",
                     "search_history.csv", "meta_history.csv"):
        assert (base / "a" / artifact).read_bytes() == (base / "b" / artifact).read_bytes(), artifact

    # interrupt after phase 1, resume, compare with the uninterrupted run
    from metaprune.pipeline import default_meta_schedule, meta_phase

    out = base / "resumed"
    meta_phase(
        template, small_dataset, out, epochs=SMALL_EPOCHS.max_training,
        schedule=default_meta_schedule(SMALL_EPOCHS), seed=31,
    )
    resumed = run("resumed")
    assert resumed.best_nev == a.best_nev
    assert load_gene(out / "best_gene.json") == load_gene(base / "a" / "best_gene.json")
