"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in
the pytest terminal summary (see ``conftest.py``). The file also runs
standalone: ``python tests/test_acceptance.py``.
"""

import copy
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from fedpoison import data as D
from fedpoison.config import parse_config
from fedpoison.experiment import WALL_CLOCK_KEY, Run, _dumps, execute, run_matrix
from fedpoison.federation import (
    FederationConfig,
    aggregate,
    run_centralized,
    run_federated,
    select_subset,
)
from fedpoison.metrics import poisoning_attack_rate, summarize
from fedpoison.nn import Batch, ModelParams, TrainingHyperparams, backward, forward, init_model, loss

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "acceptance.yaml"
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -- shared acceptance-config run ----------------------------------------------

_MATRIX: dict = {}


def acceptance_matrix(tmp_root: Path):
    """Run the acceptance config once (timed) and cache the reports."""
    if not _MATRIX:
        specs = parse_config(CONFIG)
        t0 = time.perf_counter()
        reports = run_matrix(specs, tmp_root / "run1")
        _MATRIX["seconds"] = time.perf_counter() - t0
        _MATRIX["reports"] = {r["run_id"]: r for r in reports}
        _MATRIX["dir"] = tmp_root / "run1"
    return _MATRIX


@pytest.fixture(scope="module")
def matrix(tmp_path_factory):
    return acceptance_matrix(tmp_path_factory.mktemp("acceptance"))


# -- 1 ---------------------------------------------------------------------------


def _fd_gradient(params, batch, l2, h):
    """Central differences, one coordinate at a time, on the eval-mode loss."""
    flat = []
    for w, b in params.layers:
        for arr in (w, b):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss(forward(params, batch.features), batch.labels, params, l2)
                arr[idx] = old - h
                down = loss(forward(params, batch.features), batch.labels, params, l2)
                arr[idx] = old
                flat.append((up - down) / (2 * h))
    return np.array(flat)


def test_c01_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    n_models = 100
    for i in range(n_models):
        n_layers = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 17, size=n_layers + 1)]
        dims[-1] = max(dims[-1], 2)
        params = init_model(dims, init_range=1.0, seed=i)
        n = int(rng.integers(1, 9))
        batch = Batch(rng.normal(size=(n, dims[0])), rng.integers(0, dims[-1], n))
        l2 = float(rng.choice([0.0, 1e-3, 1e-2]))
        g = backward(params, batch, TrainingHyperparams(l2_coef=l2)).flat()
        fd = _fd_gradient(params, batch, l2, 1e-5)
        # relative error; the 1e-6 floor keeps near-zero coordinates from dividing by ~0
        denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(g - fd) / denom)))
    secs = time.perf_counter() - t0
    report(1, worst < 1e-4 and secs < 60,
           f"{n_models} random MLPs, max relative error {worst:.2e} (< 1e-4), {secs:.1f}s (< 60s)")


# -- 2 ---------------------------------------------------------------------------


def _brute_weighted_mean(updates):
    total = 0
    for _, n in updates:
        total += n
    layers = []
    for li in range(len(updates[0][0].layers)):
        pair = []
        for ti in range(2):
            shape = updates[0][0].layers[li][ti].shape
            out = np.zeros(shape)
            for idx in np.ndindex(shape):
                s = 0.0
                for p, n in updates:
                    s += n * p.layers[li][ti][idx]
                out[idx] = s / total
            pair.append(out)
        layers.append(tuple(pair))
    return ModelParams(tuple(layers))


def test_c02_aggregation_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(200):
        dims = [int(d) for d in rng.integers(1, 7, size=int(rng.integers(2, 5)))]
        k = int(rng.integers(1, 8))
        ups = [(init_model(dims, 5.0, seed=1000 * trial + j), int(rng.integers(1, 5000)))
               for j in range(k)]
        diff = np.abs(aggregate(ups).flat() - _brute_weighted_mean(ups).flat()).max()
        worst = max(worst, float(diff))
    single = init_model([5, 7, 3], seed=9)
    identity = aggregate([(single, 123)]).equals(single)
    report(2, worst <= 1e-12 and identity,
           f"200 random aggregations, max |diff| {worst:.1e} (<= 1e-12); single-update identity {identity}")


# -- 3 ---------------------------------------------------------------------------


def test_c03_fedavg_degeneracy():
    ds = D.generate_synthetic(4, 8, 150, 6.0, seed=3)
    train, test = D.split_train_test(ds, 2 / 3, 3)
    train, test, _ = D.standardize(train, test)
    rounds, epochs = 5, 2
    fed_hyper = TrainingHyperparams(learning_rate=0.1, local_epochs=epochs, batch_size=20,
                                    hidden_dims=(16,))
    cfg = FederationConfig(n_honest=1, n_malicious=0, c_honest=1.0, rounds=rounds,
                           hyper=fed_hyper, seed=11)
    fed, _ = run_federated(cfg, [train], test)
    cen_hyper = TrainingHyperparams(learning_rate=0.1, local_epochs=rounds * epochs,
                                    batch_size=20, hidden_dims=(16,))
    cen, _ = run_centralized(train, test, cen_hyper, seed=11)
    same = fed.equals(cen)
    report(3, same, f"1-client federation ({rounds}x{epochs} epochs) bit-identical to "
                    f"centralized ({rounds * epochs} epochs): {same}")


# -- 4 ---------------------------------------------------------------------------


def test_c04_inert_attack():
    spec = next(s for s in parse_config(CONFIG) if s.name == "fl-3h-7m")
    assert spec.attack.get("drop_top", 0) == 0
    honest = copy.deepcopy(spec)
    honest.federation["honest"] = spec.federation["honest"] + spec.federation["malicious"]
    honest.federation["malicious"] = 0
    a = execute(Run(spec, 0.0, 0))
    b = execute(Run(honest, 0.0, 0))
    same_model = a["model"] == b["model"]
    same_rounds = [r["accuracy"] for r in a["rounds"]] == [r["accuracy"] for r in b["rounds"]]
    report(4, same_model and same_rounds,
           f"alpha=0 with 3 honest + 7 malicious equals 10 honest: model {same_model}, "
           f"round accuracies {same_rounds}")


# -- 5 ---------------------------------------------------------------------------


def test_c05_metric_formulas():
    r = summarize([[8, 2], [1, 9]])
    checks = [
        r.accuracy == 0.85,
        r.precision[0] == 8 / 9,
        r.recall[0] == 8 / 10,
        r.precision[1] == 9 / 11,
        r.recall[1] == 9 / 10,
        r.f1[0] == 2 * (8 / 9) * 0.8 / (8 / 9 + 0.8),
    ]
    rate = poisoning_attack_rate(0.23, 1.00)
    ok = all(checks) and math.isclose(rate, 0.77, abs_tol=1e-12)
    report(5, ok, f"cm [[8,2],[1,9]] accuracy {r.accuracy}, per-class values exact {all(checks)}; "
                  f"attack rate(0.23, 1.00) = {rate:.12f}")


# -- 6 ---------------------------------------------------------------------------


def test_c06_directional_table4(matrix):
    reps = matrix["reports"]
    base = reps["fl-honest__a0__r0"]
    hit = reps["fl-3h-7m__a0.6__r0"]
    acc_h = base["final_metrics"]["accuracy"]
    acc_a = hit["final_metrics"]["accuracy"]
    rate = hit["attack_rates"]["Normal"]
    secs = matrix["seconds"]
    ok = (base["n_train"] == 1000 and acc_h >= 0.90 and acc_h - acc_a >= 0.08
          and rate is not None and rate >= 0.5 and secs < 300)
    report(6, ok, f"10 honest accuracy {acc_h:.3f} (>= 0.90); 3h/7m alpha=0.6 accuracy {acc_a:.3f} "
                  f"({100 * (acc_h - acc_a):.1f} points lower, >= 8); Normal attack rate "
                  f"{rate} (>= 0.5); matrix {secs:.1f}s (< 300s)")


# -- 7 ---------------------------------------------------------------------------


def test_c07_alpha_monotonicity(matrix):
    reps = matrix["reports"]
    alphas = [0.0, 0.4, 0.5, 0.6, 0.8]
    rates = []
    for a in alphas:
        r = reps[f"fl-3h-7m__a{a:g}__r0"]
        rates.append(0.0 if a == 0 else r["attack_rates"]["Normal"])
    ok = all(x is not None for x in rates) and all(b >= a for a, b in zip(rates, rates[1:]))
    shown = ", ".join(f"{a:g}:{r:.3f}" for a, r in zip(alphas, rates))
    report(7, ok, f"Normal attack rate non-decreasing in alpha ({shown})")


# -- 8 ---------------------------------------------------------------------------


def test_c08_subset_selection():
    bad = []
    for K in (1, 10, 100):
        for C in (0.001, 0.1, 0.5, 1.0):
            want = max(math.floor(C * K), 1)
            for t in (1, 2, 3):
                got = select_subset(range(K), C, seed=8, round_t=t)
                if len(got) != want or len(set(got)) != want:
                    bad.append((K, C, t, len(got), want))
    report(8, not bad, f"select_subset size max(floor(C*K),1) on 12-cell grid; mismatches {bad}")


# -- 9 ---------------------------------------------------------------------------


def _smote_case(rng, n_features):
    counts = rng.integers(2, 40, size=int(rng.integers(2, 5)))
    x = np.vstack([rng.normal(loc=3 * c, size=(n, n_features)) for c, n in enumerate(counts)])
    y = np.repeat(np.arange(len(counts)), counts)
    return D.LabeledDataset(x, y, [f"c{i}" for i in range(len(counts))]), int(counts.max())


def test_c09_smote_contract():
    rng = np.random.default_rng(9)
    counts_ok, exact_1d, worst_nd = True, True, 0.0
    for trial in range(60):
        n_features = 1 if trial % 2 == 0 else int(rng.integers(2, 6))
        ds, majority = _smote_case(rng, n_features)
        out, prov = D.smote_oversample(ds, k_neighbors=int(rng.integers(1, 6)), seed=trial,
                                       return_provenance=True)
        counts_ok &= bool(np.all(out.class_counts() == majority))
        synth = out.features[len(ds):]
        for s, (a, b, _) in zip(synth, prov):
            p, q = ds.features[int(a)], ds.features[int(b)]
            if n_features == 1:
                exact_1d &= bool(min(p[0], q[0]) <= s[0] <= max(p[0], q[0]))
            else:
                d = q - p
                u = np.clip(np.dot(s - p, d) / max(np.dot(d, d), 1e-300), 0.0, 1.0)
                worst_nd = max(worst_nd, float(np.linalg.norm(s - (p + u * d))))
    ok = counts_ok and exact_1d and worst_nd <= 1e-9
    report(9, ok, f"60 SMOTE cases: counts equal majority {counts_ok}; 1-D between generators "
                  f"{exact_1d}; n-D max distance to segment {worst_nd:.1e} (<= 1e-9)")


# -- 10 --------------------------------------------------------------------------


def test_c10_partition_contracts():
    rng = np.random.default_rng(10)
    failures = 0
    for i in range(1000):
        n_classes = int(rng.integers(1, 6))
        ds = D.generate_synthetic(n_classes, 1, int(rng.integers(1, 40)), seed=i)
        K = int(rng.integers(1, min(len(ds), 30) + 1))
        beta = float(10 ** rng.uniform(-2, 3))
        for plan in (D.partition_iid(ds, K, i), D.partition_noniid(ds, K, beta, i)):
            try:
                plan.check(len(ds))
            except Exception:
                failures += 1
    ds = D.generate_synthetic(4, 1, 1000, seed=10)
    glob = ds.class_counts() / len(ds)
    plan = D.partition_noniid(ds, 10, 1e6, seed=10)
    dev = max(float(np.max(np.abs(np.bincount(ds.labels[ix], minlength=4) / len(ix) - glob)))
              for ix in plan.client_indices)
    ok = failures == 0 and dev <= 0.02
    report(10, ok, f"1000 random configs x 2 partitioners: {failures} contract failures; "
                   f"beta=1e6 max class-share deviation {100 * dev:.2f} points (<= 2)")


# -- 11 --------------------------------------------------------------------------


def _strip_clock(directory: Path) -> dict[str, bytes]:
    files = {}
    for f in sorted(directory.iterdir()):
        raw = f.read_bytes()
        if f.suffix == ".json" and f.name != "index.json" and not f.name.endswith(".model.json"):
            d = json.loads(raw)
            d.pop(WALL_CLOCK_KEY, None)
            raw = _dumps(d).encode()
        files[f.name] = raw
    return files


def test_c11_end_to_end_determinism(matrix, tmp_path):
    run_matrix(parse_config(CONFIG), tmp_path / "run2")
    a, b = _strip_clock(matrix["dir"]), _strip_clock(tmp_path / "run2")
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    report(11, not differing and len(a) > 0,
           f"two executions of the acceptance config: {len(a)} files, differing {differing}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
