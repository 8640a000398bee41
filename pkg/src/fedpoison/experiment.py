"""Experiment matrix runner and report/plot-data emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from fedpoison import data as D
from fedpoison.config import ExperimentSpec
from fedpoison.federation import FederationConfig, run_centralized, run_federated
from fedpoison.errors import UndefinedMetricError
from fedpoison.metrics import poisoning_attack_rate

log = logging.getLogger(__name__)

WALL_CLOCK_KEY = "wall_clock_seconds"


@dataclass(frozen=True)
class Run:
    spec: ExperimentSpec
    alpha: float
    repetition: int

    @property
    def seed(self) -> int:
        return self.spec.seed + self.repetition

    @property
    def run_id(self) -> str:
        return f"{self.spec.name}__a{self.alpha:g}__r{self.repetition}"

    @property
    def baseline_id(self) -> str | None:
        if self.alpha == 0:
            return None
        return Run(self.spec, 0.0, self.repetition).run_id


def expand(specs: list[ExperimentSpec]) -> list[Run]:
    """Every (spec, repetition, alpha) combination, baselines before attack runs."""
    runs = [Run(s, a, r) for s in specs for r in range(s.repetitions) for a in s.alphas]
    return sorted(runs, key=lambda r: r.alpha > 0)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def prepare_data(spec: ExperimentSpec, seed: int):
    """Load/generate, preprocess and (optionally) SMOTE; returns ``(train, test, notes)``."""
    notes: list[str] = []
    pp = spec.preprocessing
    if "synthetic" in spec.dataset:
        syn = dict(spec.dataset["synthetic"])
        ds = D.generate_synthetic(
            syn["n_classes"], syn["n_features"], syn["n_per_class"], syn["separation"],
            syn.get("seed", seed),
        )
        if spec.classification == "binary":
            ds = D.collapse_binary(ds)
        train, test = D.split_train_test(ds, pp["train_fraction"], seed, pp["stratified"], notes)
        train, test, _ = D.standardize(train, test)
    else:
        c = spec.dataset["csv"]
        raw = D.load_csv(c["path"], c["label_column"])
        if spec.classification == "binary":
            li = raw.columns.index(raw.label_column)
            for row in raw.rows:
                if row[li] != c["normal_class"]:
                    row[li] = "Attack"
        train, test, _ = D.preprocess(raw, c["drop_columns"], pp["train_fraction"], seed,
                                      pp["stratified"], notes)
    if pp["smote"]:
        before = len(train)
        train = D.smote_oversample(train, pp["smote_k"], seed)
        notes.append(f"smote: {before} -> {len(train)} rows")
    return train, test, notes


def execute(run: Run) -> dict:
    """Run one experiment cell; returns the report dict (without attack rates)."""
    spec = run.spec
    t0 = time.perf_counter()
    train, test, notes = prepare_data(spec, run.seed)
    hyper = spec.hyper()
    attack = spec.attack_config(run.alpha)
    report = {
        "run_id": run.run_id,
        "experiment": spec.name,
        "alpha": run.alpha,
        "repetition": run.repetition,
        "seed": run.seed,
        "mode": spec.mode,
        "spec": spec.echo(),
        "class_names": train.class_names,
        "preprocess_notes": notes,
        "n_train": len(train),
        "n_test": len(test),
        "baseline_run": run.baseline_id,
    }
    artifacts = {}
    if spec.mode == "centralized":
        audit: dict = {}
        params, metrics = run_centralized(train, test, hyper, attack, run.seed, audit)
        report["rounds"] = []
        report["attack_audit"] = audit
    else:
        fed = spec.federation
        cfg = FederationConfig(
            n_honest=fed["honest"], n_malicious=fed["malicious"], c_honest=fed["c_honest"],
            c_malicious=fed["c_malicious"], rounds=fed["rounds"], hyper=hyper, attack=attack,
            seed=run.seed,
        )
        if fed["distribution"] == "iid":
            plan = D.partition_iid(train, cfg.n_clients, run.seed)
        else:
            plan = D.partition_noniid(train, cfg.n_clients, fed["beta"], run.seed)
        clients = [train.subset(ix) for ix in plan.client_indices]
        params, records = run_federated(cfg, clients, test)
        metrics = records[-1].metrics
        report["partition_sizes"] = plan.sizes()
        report["rounds"] = [
            {k: v for k, v in r.to_dict().items() if k != "metrics"} for r in records
        ]
        report["attack_audit"] = {
            "clients_dropped_per_round": {str(r.round): r.dropped for r in records},
            "per_client": {str(r.round): r.to_dict()["attack_audit"] for r in records},
            "malicious_weight_includes_poison": cfg.n_malicious > 0 and attack.poison_ratio > 0,
        }
        artifacts["rounds.jsonl"] = "".join(
            json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records
        )
        artifacts["partition.json"] = plan.to_json() + "\n"
    report["final_metrics"] = metrics.to_dict()
    report["model"] = params.to_dict()
    report[WALL_CLOCK_KEY] = round(time.perf_counter() - t0, 3)
    report["_artifacts"] = artifacts
    report["_confusion_csv"] = metrics.confusion_csv()
    return report


def _safe_execute(run: Run) -> dict:
    try:
        return execute(run)
    except Exception as exc:  # one failed cell must not sink the matrix
        return {"run_id": run.run_id, "failed": True, "error": f"{type(exc).__name__}: {exc}",
                "baseline_run": run.baseline_id}


def _attach_attack_rates(report: dict, baseline: dict) -> None:
    names = report["class_names"]
    rates = []
    for mine, base in zip(report["final_metrics"]["per_class"],
                          baseline["final_metrics"]["per_class"]):
        try:
            rate = poisoning_attack_rate(mine["recall"], base["recall"])
        except UndefinedMetricError:
            rate = None
        mine["poisoning_attack_rate"] = rate
        rates.append(rate)
    report["attack_rates"] = dict(zip(names, rates))


def write_report(report: dict, out: Path) -> None:
    rid = report["run_id"]
    artifacts = report.pop("_artifacts", {})
    confusion_csv = report.pop("_confusion_csv", None)
    model = report.pop("model", None)
    if model is not None:
        atomic_write(out / f"{rid}.model.json", json.dumps(model) + "\n")
    if confusion_csv is not None:
        atomic_write(out / f"{rid}.confusion.csv", confusion_csv)
    for suffix, text in artifacts.items():
        atomic_write(out / f"{rid}.{suffix}", text)
    atomic_write(out / f"{rid}.json", _dumps(report))


def run_matrix(specs: list[ExperimentSpec], out: str | Path | None = None,
               jobs: int = 1) -> list[dict]:
    """Run all baselines, then all attack runs, writing reports under ``out``.

    Attack runs get per-class poisoning attack rates against the α=0 run of
    the same experiment and repetition. Failed runs appear as reports with
    ``"failed": true``.
    """
    out = Path(out or specs[0].output)
    runs = expand(specs)
    baselines = [r for r in runs if r.alpha == 0]
    attacks = [r for r in runs if r.alpha > 0]

    def run_all(batch):
        if jobs > 1 and len(batch) > 1:
            with ProcessPoolExecutor(jobs) as ex:
                return list(ex.map(_safe_execute, batch))
        return [_safe_execute(r) for r in batch]

    done: dict[str, dict] = {}
    for rep in run_all(baselines):
        done[rep["run_id"]] = rep
    for rep in run_all(attacks):
        base = done.get(rep["baseline_run"])
        if not rep.get("failed"):
            if base is None or base.get("failed"):
                rep = {"run_id": rep["run_id"], "failed": True,
                       "error": f"baseline {rep['baseline_run']} unavailable",
                       "baseline_run": rep["baseline_run"]}
            else:
                _attach_attack_rates(rep, base)
        done[rep["run_id"]] = rep

    reports = [done[r.run_id] for r in runs]
    for rep in reports:
        if rep.get("failed"):
            log.error("run %s failed: %s", rep["run_id"], rep["error"])
            atomic_write(out / f"{rep['run_id']}.json", _dumps(rep))
        else:
            write_report(rep, out)
    index = [{"run_id": r["run_id"], "failed": bool(r.get("failed"))} for r in reports]
    atomic_write(out / "index.json", _dumps(index))
    return reports


def load_reports(report_dir) -> list[dict]:
    report_dir = Path(report_dir)
    index = json.loads((report_dir / "index.json").read_text())
    return [json.loads((report_dir / f"{e['run_id']}.json").read_text()) for e in index]


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_plotdata(reports: list[dict], out) -> list[Path]:
    """Per-run ``accuracy.csv`` (round, accuracy) and ``attack_rate.csv`` (class, %)."""
    out = Path(out)
    written = []
    ok = [r for r in reports if not r.get("failed")]
    for rep in ok:
        if rep["rounds"]:
            rows = [(r["round"], r["accuracy"]) for r in rep["rounds"]]
            path = out / f"{rep['run_id']}.accuracy.csv"
            atomic_write(path, _csv(rows, ["round", "accuracy"]))
            written.append(path)
    attacked = [r for r in ok if r.get("attack_rates") is not None]
    if not attacked:
        log.warning("no attack runs among the reports; attack-rate files omitted")
    for rep in attacked:
        rows = [
            (name, "NA" if rate is None else 100.0 * rate)
            for name, rate in rep["attack_rates"].items()
        ]
        path = out / f"{rep['run_id']}.attack_rate.csv"
        atomic_write(path, _csv(rows, ["class", "attack_rate_percent"]))
        written.append(path)
    return written
