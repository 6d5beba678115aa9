"""Train the mixture of VAEs on circle/plane and report routing accuracy."""

import argparse
import logging

from stratlearn import movae, recipes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--epochs1", type=int, default=2000)
    ap.add_argument("--epochs2", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="optional path for the trained model")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    hyper = movae.MoVaeHyper(epochs_phase1=args.epochs1, epochs_phase2=args.epochs2)
    acc, res, _, secs = recipes.run_movae_routing(args.n, args.seed, hyper)
    if args.save:
        movae.save_movae(res.model, args.save, hyper)
    print(f"routing accuracy {100 * acc:.2f}%  mixture weights {res.model.mixture_weights().round(3)}")
    for w in res.warnings:
        print("warning:", w)
    print(f"{secs / 60:.1f} min")


if __name__ == "__main__":
    main()
