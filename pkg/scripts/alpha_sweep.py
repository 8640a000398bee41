#!/usr/bin/env python3
"""Sweep the attack rate and print the per-class poisoning attack rate.

    python scripts/alpha_sweep.py --mode federated --alphas 0.4 0.5 0.6 0.8
    python scripts/alpha_sweep.py --mode centralized --strategy shuffle
"""

import argparse

from fedpoison.attacks import AttackConfig
from fedpoison.data import generate_synthetic, partition_iid, partition_noniid, split_train_test, standardize
from fedpoison.federation import FederationConfig, run_centralized, run_federated
from fedpoison.metrics import poisoning_attack_rate
from fedpoison.nn import TrainingHyperparams


def train_and_eval(args, alpha, train, test):
    attack = AttackConfig(alpha=alpha, strategy=args.strategy, poison_ratio=args.poison_ratio,
                          drop_top=args.drop_top)
    if args.mode == "centralized":
        hyper = TrainingHyperparams(learning_rate=args.lr, local_epochs=args.epochs * args.rounds,
                                    batch_size=args.batch, hidden_dims=(32,))
        return run_centralized(train, test, hyper, attack, args.seed)[1]
    hyper = TrainingHyperparams(learning_rate=args.lr, local_epochs=args.epochs,
                                batch_size=args.batch, hidden_dims=(32,))
    cfg = FederationConfig(args.honest, args.malicious, rounds=args.rounds, hyper=hyper,
                           attack=attack, seed=args.seed)
    if args.beta is None:
        plan = partition_iid(train, cfg.n_clients, args.seed)
    else:
        plan = partition_noniid(train, cfg.n_clients, args.beta, args.seed)
    _, records = run_federated(cfg, [train.subset(ix) for ix in plan.client_indices], test)
    return records[-1].metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=["federated", "centralized"], default="federated")
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.4, 0.5, 0.6, 0.8])
    ap.add_argument("--strategy", choices=["swap", "shuffle", "drop", "slide"], default="swap")
    ap.add_argument("--poison-ratio", type=float, default=1.0)
    ap.add_argument("--drop-top", type=int, default=0)
    ap.add_argument("--honest", type=int, default=3)
    ap.add_argument("--malicious", type=int, default=7)
    ap.add_argument("--beta", type=float, default=None, help="Dirichlet beta; IID when omitted")
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--batch", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args()

    ds = generate_synthetic(4, 8, 375, 6.0, seed=args.seed)
    train, test = split_train_test(ds, 2 / 3, args.seed)
    train, test, _ = standardize(train, test)

    base = train_and_eval(args, 0.0, train, test)
    names = train.class_names
    print("alpha  accuracy  " + "  ".join(f"{n:>9}" for n in names))
    print(f"{0:5.2f}  {base.accuracy:8.3f}  " + "  ".join(f"{0:9.3f}" for _ in names))
    for alpha in args.alphas:
        m = train_and_eval(args, alpha, train, test)
        cells = []
        for c in range(len(names)):
            try:
                cells.append(f"{poisoning_attack_rate(m.recall[c], base.recall[c]):9.3f}")
            except Exception:
                cells.append(f"{'NA':>9}")
        print(f"{alpha:5.2f}  {m.accuracy:8.3f}  " + "  ".join(cells))


if __name__ == "__main__":
    main()
