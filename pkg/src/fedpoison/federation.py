"""Round-based federated training with honest and malicious clients.

Client ids ``0 .. n_honest-1`` are honest and ``n_honest .. n_honest+n_malicious-1``
are malicious. Each round:

1. the server samples honest and malicious subsets;
2. selected malicious clients poison their local copy and may knock the
   best-ranked honest clients out of the round;
3. every surviving participant trains locally from the broadcast model;
4. the server takes the sample-count weighted mean, in client-id order;
5. the new model is evaluated on the held-out test set.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedpoison import _seeding
from fedpoison.attacks import (
    AttackConfig,
    ClientRanking,
    coordinate,
    drop_clients,
    identify_clients,
    observable_history,
    poison_dataset,
)
from fedpoison.data import LabeledDataset
from fedpoison.errors import AggregationError, ConfigError, ShapeError
from fedpoison.metrics import MetricsReport, evaluate
from fedpoison.nn import (
    AdamState,
    Batch,
    ModelParams,
    TrainingHyperparams,
    apply_update,
    backward,
    forward,
    init_model,
    loss,
    predict,
)


@dataclass(frozen=True)
class FederationConfig:
    n_honest: int = 10
    n_malicious: int = 0
    c_honest: float = 1.0
    c_malicious: float = 1.0
    rounds: int = 10
    hyper: TrainingHyperparams = field(default_factory=TrainingHyperparams)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_honest < 0 or self.n_malicious < 0:
            raise ConfigError("client counts must be non-negative")
        if self.n_honest + self.n_malicious < 1:
            raise ConfigError("need at least one client")
        for name in ("c_honest", "c_malicious"):
            c = getattr(self, name)
            if not 0 < c <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {c}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def n_clients(self) -> int:
        return self.n_honest + self.n_malicious

    @property
    def honest_ids(self) -> list[int]:
        return list(range(self.n_honest))

    @property
    def malicious_ids(self) -> list[int]:
        return list(range(self.n_honest, self.n_clients))


@dataclass
class RoundRecord:
    round: int
    honest_selected: list[int]
    malicious_selected: list[int]
    dropped: list[int]
    sample_counts: dict[int, int]
    client_loss: dict[int, float]
    metrics: MetricsReport
    aggregated: bool = True
    audit: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "honest_selected": self.honest_selected,
            "malicious_selected": self.malicious_selected,
            "dropped": self.dropped,
            "sample_counts": {str(k): v for k, v in sorted(self.sample_counts.items())},
            "client_loss": {str(k): v for k, v in sorted(self.client_loss.items())},
            "aggregated": self.aggregated,
            "attack_audit": {str(k): v for k, v in sorted(self.audit.items())},
            "accuracy": self.metrics.accuracy,
            "metrics": self.metrics.to_dict(),
        }


@dataclass
class RoundContext:
    """What a malicious client can see when it acts in a round."""

    round: int
    history: dict[int, list[float]]
    honest_selected: set[int]
    malicious_ids: set[int]


def select_subset(ids: Sequence[int], fraction: float, seed: int, round_t: int) -> list[int]:
    """Seeded uniform sample of ``max(floor(fraction * len(ids)), 1)`` ids, sorted."""
    ids = list(ids)
    if not ids:
        raise ConfigError("cannot select from an empty id list")
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    # small slack so that e.g. 0.29 * 100 is not floored to 28
    size = max(math.floor(fraction * len(ids) + 1e-9), 1)
    gen = _seeding.rng(seed, round_t)
    picked = gen.choice(len(ids), size=size, replace=False)
    return sorted(ids[i] for i in picked)


def _local_loss(params, local, hyper):
    return loss(forward(params, local.features), local.labels, params, hyper.l2_coef)


def train_local(params: ModelParams, local: LabeledDataset, hyper: TrainingHyperparams,
                seed: int, stream: int = 0, epoch_offset: int = 0,
                epochs: int | None = None) -> ModelParams:
    """Minibatch training; epoch ``e`` shuffles with a stream keyed by
    ``(seed, stream, epoch_offset + e)`` so a run split over several calls
    reproduces a single long run exactly (SGD)."""
    epochs = hyper.local_epochs if epochs is None else epochs
    n = len(local)
    state = AdamState.zeros_like(params) if hyper.optimizer == "adam" else None
    step = 0
    for e in range(epochs):
        ep = epoch_offset + e
        perm = _seeding.rng(_seeding.CLIENT_TRAIN, seed, stream, ep).permutation(n)
        for bi, start in enumerate(range(0, n, hyper.batch_size)):
            idx = perm[start : start + hyper.batch_size]
            step += 1
            drop_seed = _seeding.derive_seed(_seeding.CLIENT_TRAIN, seed, stream, ep, bi)
            grad = backward(params, Batch(local.features[idx], local.labels[idx]), hyper, drop_seed)
            params = apply_update(params, grad, hyper, step, state)
    return params


def client_update_honest(global_params: ModelParams, local: LabeledDataset,
                         hyper: TrainingHyperparams, seed: int, stream: int = 0,
                         epoch_offset: int = 0) -> tuple[ModelParams, float]:
    if len(local) == 0:
        raise ConfigError("local dataset is empty")
    params = train_local(global_params.copy(), local, hyper, seed, stream, epoch_offset)
    return params, _local_loss(params, local, hyper)


def malicious_ranking(attack: AttackConfig, ctx: RoundContext) -> ClientRanking | None:
    if attack.drop_top == 0:
        return None
    seen = observable_history(ctx.history, ctx.malicious_ids, attack.knowledge)
    seen = {c: h for c, h in seen.items() if len(h) >= 2}
    if not seen:
        return None
    return identify_clients(seen)


def client_update_malicious(global_params: ModelParams, local: LabeledDataset,
                            hyper: TrainingHyperparams, attack: AttackConfig,
                            ctx: RoundContext, seed: int, stream: int = 0,
                            epoch_offset: int = 0, audit: dict | None = None):
    """Returns ``(params, local_loss, honest_selection, n_k)``.

    Before ``attack.start_round`` this is exactly the honest update.
    """
    if len(local) == 0:
        raise ConfigError("local dataset is empty")
    if not attack.active(ctx.round):
        params, final = client_update_honest(global_params, local, hyper, seed, stream,
                                             epoch_offset)
        return params, final, set(ctx.honest_selected), len(local)
    ranking = malicious_ranking(attack, ctx)
    poisoned = poison_dataset(local, attack, _seeding.derive_seed(_seeding.ATTACK, seed, stream),
                              audit)
    survivors = drop_clients(ctx.honest_selected, ranking, attack.drop_top, ctx.malicious_ids)
    params, final = client_update_honest(global_params, poisoned, hyper, seed, stream,
                                         epoch_offset)
    return params, final, survivors, len(poisoned)


def aggregate(updates: Sequence[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count weighted mean, reduced in the given order."""
    if not updates:
        raise AggregationError("no updates to aggregate")
    dims = updates[0][0].layer_dims
    for p, _ in updates:
        if p.layer_dims != dims:
            raise ShapeError(f"update shape {p.layer_dims} differs from {dims}")
    counts = [int(n) for _, n in updates]
    if any(n < 0 for n in counts):
        raise AggregationError("negative sample count")
    total = sum(counts)
    if total <= 0:
        raise AggregationError("total sample count is zero")
    first, n0 = updates[0]
    acc = first.map(lambda t: (n0 / total) * t)
    for p, n in updates[1:]:
        w = n / total
        acc = acc.map(lambda a, t: a + w * t, p)
    return acc


def model_dims(n_features: int, n_classes: int, hyper: TrainingHyperparams) -> list[int]:
    return [n_features, *hyper.hidden_dims, n_classes]


def evaluate_model(params: ModelParams, test: LabeledDataset) -> MetricsReport:
    return evaluate(predict(params, test.features), test.labels, test.n_classes,
                    test.class_names)


def run_federated(config: FederationConfig, clients: Sequence[LabeledDataset],
                  test: LabeledDataset, workers: int = 1, init: ModelParams | None = None):
    """Run ``config.rounds`` rounds; returns ``(final_params, records)``.

    ``clients[k]`` is client ``k``'s local data. Results do not depend on
    ``workers``: updates are keyed by client id and reduced in id order.
    """
    if len(clients) != config.n_clients:
        raise ConfigError(f"{len(clients)} client datasets for {config.n_clients} clients")
    hyper = config.hyper
    attack = coordinate(config.attack, [clients[c] for c in config.malicious_ids])
    ref = clients[0]
    params = init if init is not None else init_model(
        model_dims(ref.n_features, ref.n_classes, hyper), hyper.init_range, config.seed
    )
    honest_ids, mal_ids = config.honest_ids, config.malicious_ids
    history: dict[int, list[float]] = {c: [] for c in range(config.n_clients)}
    track_history = attack.drop_top > 0 and config.n_malicious > 0
    records = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            s_h = select_subset(honest_ids, config.c_honest,
                                _seeding.derive_seed(_seeding.HONEST_SELECT, config.seed), t) \
                if honest_ids else []
            s_m = select_subset(mal_ids, config.c_malicious,
                                _seeding.derive_seed(_seeding.MALICIOUS_SELECT, config.seed), t) \
                if mal_ids else []
            if track_history:
                for c in range(config.n_clients):
                    history[c].append(_local_loss(params, clients[c], hyper))
            offset = (t - 1) * hyper.local_epochs
            ctx = RoundContext(t, history, set(s_h), set(mal_ids))
            audits = {c: {} for c in s_m}

            def mal_job(c, g=params, ctx=ctx, offset=offset):
                return client_update_malicious(g, clients[c], hyper, attack, ctx, config.seed,
                                               c, offset, audits[c])

            def honest_job(c, g=params, offset=offset):
                return client_update_honest(g, clients[c], hyper, config.seed, c, offset)

            run = pool.map if pool else map
            mal_out = dict(zip(s_m, run(mal_job, s_m)))
            survivors = set(s_h)
            for c in s_m:
                survivors &= mal_out[c][2]
            dropped = sorted(set(s_h) - survivors)
            kept_h = sorted(survivors)
            hon_out = dict(zip(kept_h, run(honest_job, kept_h)))

            results = {}
            for c, (p, l) in hon_out.items():
                results[c] = (p, l, len(clients[c]))
            for c, (p, l, _, n_k) in mal_out.items():
                results[c] = (p, l, n_k)
            order = sorted(results)
            if order:
                params = aggregate([(results[c][0], results[c][2]) for c in order])
            records.append(
                RoundRecord(
                    round=t,
                    honest_selected=list(s_h),
                    malicious_selected=list(s_m),
                    dropped=dropped,
                    sample_counts={c: results[c][2] for c in order},
                    client_loss={c: results[c][1] for c in order},
                    metrics=evaluate_model(params, test),
                    aggregated=bool(order),
                    audit={c: a for c, a in audits.items() if a},
                )
            )
    finally:
        if pool:
            pool.shutdown()
    return params, records


def run_centralized(train: LabeledDataset, test: LabeledDataset, hyper: TrainingHyperparams,
                    attack: AttackConfig | None = None, seed: int = 0,
                    audit: dict | None = None) -> tuple[ModelParams, MetricsReport]:
    """Poison the server's training set (when ``attack.alpha > 0``) and train on it.

    ``hyper.local_epochs`` is the total epoch budget. The shuffling streams
    match those of client 0 in :func:`run_federated`, so a single-client
    federation with ``R`` rounds of ``E`` epochs equals this with ``R * E``.
    """
    if len(train) == 0:
        raise ConfigError("training set is empty")
    attack = attack or AttackConfig()
    data = poison_dataset(train, attack, _seeding.derive_seed(_seeding.ATTACK, seed, 0), audit)
    params = init_model(model_dims(train.n_features, train.n_classes, hyper), hyper.init_range,
                        seed)
    params = train_local(params, data, hyper, seed, stream=0)
    return params, evaluate_model(params, test)
