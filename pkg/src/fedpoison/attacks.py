"""Adversarial behaviours of malicious clients.

Label flipping with four assignment strategies, poison-row insertion
(label-flipped or clean-label), ranking of clients by how much the global
model improves on their data, and targeted dropping of the best-ranked
honest clients.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from fedpoison import _seeding
from fedpoison.data import LabeledDataset, _k_nearest
from fedpoison.errors import AttackError, ConfigError, RankingError

STRATEGIES = ("swap", "shuffle", "drop", "slide")
KNOWLEDGE = ("white_box", "black_box")


@dataclass(frozen=True)
class AttackConfig:
    """Attack settings.

    ``drop_top`` is the targeted-dropping budget: 0 disables dropping,
    ``m > 0`` removes the ``m`` best-ranked honest clients from each round.
    ``poison_ratio`` sets how many poison rows a malicious client inserts,
    as a multiple of ``alpha * n_target``. ``swap_class`` pins the class
    that swap-style poisoning moves the target towards; when unset each
    dataset uses its own most populous non-target class.
    """

    alpha: float = 0.0
    target_class: str | int = "Normal"
    strategy: str = "swap"
    start_round: int = 1
    knowledge: str = "white_box"
    clean_label: bool = False
    drop_top: int = 0
    poison_ratio: float = 0.0
    swap_class: str | int | None = None

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.knowledge not in KNOWLEDGE:
            raise ConfigError(f"knowledge must be one of {KNOWLEDGE}, got {self.knowledge!r}")
        if self.start_round < 1:
            raise ConfigError(f"start_round must be >= 1, got {self.start_round}")
        if self.drop_top < 0:
            raise ConfigError(f"drop_top must be >= 0, got {self.drop_top}")
        if self.poison_ratio < 0:
            raise ConfigError(f"poison_ratio must be >= 0, got {self.poison_ratio}")

    @property
    def drop_policy(self) -> str:
        return "none" if self.drop_top == 0 else f"top_ranked({self.drop_top})"

    def active(self, round_t: int) -> bool:
        return round_t >= self.start_round

    def to_dict(self) -> dict:
        return asdict(self)


def n_selected(alpha: float, n_target: int) -> int:
    """``alpha * n_target`` rounded half up."""
    return int(math.floor(alpha * n_target + 0.5))


def majority_other_class(ds: LabeledDataset, target: int) -> int:
    """Most populous class other than ``target``; ties go to the lower id."""
    counts = ds.class_counts().astype(np.int64)
    counts[target] = -1
    return int(np.argmax(counts))


def swap_destination(ds: LabeledDataset, target: int, cfg: AttackConfig) -> int:
    if cfg.swap_class is None:
        return majority_other_class(ds, target)
    dest = ds.class_id(cfg.swap_class)
    if dest == target:
        raise AttackError("swap_class must differ from the target class")
    return dest


def coordinate(cfg: AttackConfig, datasets: Sequence[LabeledDataset]) -> AttackConfig:
    """Fix a shared swap destination for colluding attackers.

    The destination is the most populous non-target class over the union of
    the attackers' data, so every attacker pushes the target the same way.
    """
    if cfg.swap_class is not None or cfg.alpha == 0 or not datasets:
        return cfg
    target = datasets[0].class_id(cfg.target_class)
    counts = sum(ds.class_counts() for ds in datasets).astype(np.int64)
    counts[target] = -1
    return replace(cfg, swap_class=int(np.argmax(counts)))


def _wrong_labels(ds, target, cfg, size, gen):
    strategy = cfg.strategy
    if strategy == "swap":
        return np.full(size, swap_destination(ds, target, cfg), dtype=np.int64)
    if strategy == "slide":
        return np.full(size, (target + 1) % ds.n_classes, dtype=np.int64)
    if strategy == "shuffle":
        others = np.array([c for c in range(ds.n_classes) if c != target])
        return gen.choice(others, size=size)
    raise AttackError(f"strategy {strategy!r} assigns no label")


def flip_labels(dataset: LabeledDataset, cfg: AttackConfig, seed: int = 0,
                audit: dict | None = None) -> LabeledDataset:
    """Relabel a seeded ``alpha`` share of the target class per ``cfg.strategy``.

    Feature values are never touched. ``audit`` (if given) receives counts of
    relabelled and dropped rows.
    """
    if cfg.alpha == 0:
        return dataset
    if dataset.n_classes < 2:
        raise AttackError("label flipping needs at least two classes")
    target = dataset.class_id(cfg.target_class)
    target_rows = np.flatnonzero(dataset.labels == target)
    if len(target_rows) == 0:
        raise AttackError(f"target class {dataset.class_names[target]!r} absent from the data")
    gen = _seeding.rng(_seeding.ATTACK, seed, 0)
    k = n_selected(cfg.alpha, len(target_rows))
    chosen = np.sort(gen.choice(target_rows, size=k, replace=False))
    labels = dataset.labels.copy()
    relabelled = dropped = 0

    if cfg.strategy == "drop":
        keep = np.ones(len(dataset), dtype=bool)
        keep[chosen] = False
        out = dataset.subset(np.flatnonzero(keep))
        dropped = k
    else:
        labels[chosen] = _wrong_labels(dataset, target, cfg, k, gen)
        relabelled = k
        if cfg.strategy == "swap":
            dest = swap_destination(dataset, target, cfg)
            dest_rows = np.flatnonzero(dataset.labels == dest)
            partner = gen.choice(dest_rows, size=min(k, len(dest_rows)), replace=False)
            labels[partner] = target
            relabelled += len(partner)
        out = dataset.with_labels(labels)

    if audit is not None:
        audit["rows_relabelled"] = audit.get("rows_relabelled", 0) + relabelled
        audit["rows_dropped"] = audit.get("rows_dropped", 0) + dropped
    return out


def generate_poison_samples(dataset: LabeledDataset, cfg: AttackConfig, count: int,
                            seed: int = 0, audit: dict | None = None,
                            k_neighbors: int = 5) -> LabeledDataset:
    """Append ``count`` target-class look-alikes made by SMOTE-style interpolation.

    Label-flipping mode gives them a wrong label per ``cfg.strategy``
    (nothing is inserted under ``drop``). Clean-label mode keeps the target
    label but pulls the features halfway towards the centroid of the most
    populous other class.
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if count == 0:
        return dataset
    target = dataset.class_id(cfg.target_class)
    rows = np.flatnonzero(dataset.labels == target)
    if len(rows) < 2:
        raise AttackError(
            f"need at least 2 rows of {dataset.class_names[target]!r} to synthesise poison, "
            f"found {len(rows)}"
        )
    if not cfg.clean_label and cfg.strategy == "drop":
        return dataset
    gen = _seeding.rng(_seeding.ATTACK, seed, 1)
    pts = dataset.features[rows]
    k = min(k_neighbors, len(rows) - 1)
    bases = gen.integers(0, len(rows), size=count)
    picks = gen.integers(0, k, size=count)
    us = gen.random(count)
    x = np.empty((count, dataset.n_features))
    for i, (b, p, u) in enumerate(zip(bases, picks, us)):
        nn = _k_nearest(pts, int(b), k)[p]
        x[i] = pts[b] + u * (pts[nn] - pts[b])

    if cfg.clean_label:
        other = swap_destination(dataset, target, cfg)
        other_rows = dataset.labels == other
        if other_rows.any():
            centroid = dataset.features[other_rows].mean(axis=0)
            x = 0.5 * x + 0.5 * centroid
        y = np.full(count, target, dtype=np.int64)
    else:
        y = _wrong_labels(dataset, target, cfg, count, gen)

    if audit is not None:
        audit["rows_inserted"] = audit.get("rows_inserted", 0) + count
    return dataset.append(x, y)


@dataclass(frozen=True)
class ClientRanking:
    entries: tuple[tuple[int, float], ...]

    @property
    def order(self) -> list[int]:
        return [cid for cid, _ in self.entries]

    def score(self, cid: int) -> float:
        return dict(self.entries)[cid]


def identify_clients(history: Mapping[int, Sequence[float]]) -> ClientRanking:
    """Rank clients by the mean per-round decrease of the global model's loss on their data.

    ``history[c]`` lists the broadcast model's loss on client ``c`` for
    consecutive rounds. Largest decrease first; ties by ascending id.
    """
    if not history:
        raise RankingError("no loss history to rank")
    scored = []
    for cid, losses in history.items():
        if len(losses) < 2:
            raise RankingError(f"client {cid} has {len(losses)} loss observations, need >= 2")
        l = np.asarray(losses, dtype=np.float64)
        scored.append((int(cid), float(np.mean(l[:-1] - l[1:]))))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return ClientRanking(tuple(scored))


def observable_history(history: Mapping[int, Sequence[float]], malicious: Iterable[int],
                       knowledge: str) -> dict[int, list[float]]:
    """White-box attackers see every client's history, black-box only their own."""
    if knowledge == "white_box":
        return {c: list(h) for c, h in history.items()}
    mal = set(malicious)
    return {c: list(h) for c, h in history.items() if c in mal}


def drop_clients(selected: Iterable[int], ranking: ClientRanking | None, drop_top: int,
                 malicious: Iterable[int] = ()) -> set[int]:
    """Remove the ``drop_top`` best-ranked honest clients present in ``selected``."""
    selected = set(selected)
    if drop_top == 0 or ranking is None:
        return selected
    mal = set(malicious)
    victims = [c for c in ranking.order if c in selected and c not in mal][:drop_top]
    return selected - set(victims)


def poison_dataset(local: LabeledDataset, cfg: AttackConfig, seed: int = 0,
                   audit: dict | None = None) -> LabeledDataset:
    """Label flipping followed by poison insertion, as a malicious data holder applies them.

    A local set that lacks the target class is returned untouched (nothing to
    flip), and poison insertion is skipped when fewer than two target rows
    exist; both cases are noted in ``audit``.
    """
    if cfg.alpha == 0:
        return local
    target = local.class_id(cfg.target_class)
    n_target = int(np.sum(local.labels == target))
    if n_target == 0:
        if audit is not None:
            audit["target_absent"] = True
        return local
    out = flip_labels(local, cfg, seed, audit)
    count = n_selected(cfg.poison_ratio * cfg.alpha, n_target)
    if count > 0:
        if n_target < 2:
            if audit is not None:
                audit["poison_skipped"] = "fewer than 2 target rows"
            return out
        # interpolate from the clean target rows, not the relabelled ones
        base = generate_poison_samples(local, cfg, count, seed, audit)
        out = out.append(base.features[len(local):], base.labels[len(local):])
    return out
