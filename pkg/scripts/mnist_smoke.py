"""128-budget MCT search on the MNIST MLP proxy, then compare with the presets.

    python scripts/make_mnist_idx.py <mlxtend wheel> data/
    python scripts/mnist_smoke.py --data data/

Reports the top-1 rule's 1000-step cumulative training loss next to SGD,
momentum, Adam and RMSprop at their best grid learning rates.
"""
import argparse
import json
import time

from optforge.experiments import searched_vs_presets
from optforge.search import SearchConfig
from optforge.tasks import load_mnist, mnistnet_task


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--data", default=None, help="directory with the IDX files (default: $OPTFORGE_DATA_DIR)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--parallelism", type=int, default=1)
    args = parser.parse_args()

    task = mnistnet_task(load_mnist(args.data))
    start = time.perf_counter()
    result, exhausted, baselines = searched_vs_presets(
        task, SearchConfig(master_seed=args.seed, parallelism=args.parallelism)
    )
    elapsed = time.perf_counter() - start
    print(json.dumps(result.totals), "exhausted" if exhausted else "")
    for rec in result.top_k:
        print(f"search  {rec.expr:50s} cumulative loss {rec.raw_metric:.4f}  lr {rec.best_lr}")
    for name, rec in baselines.items():
        print(f"preset  {name:50s} cumulative loss {rec.raw_metric:.4f}  lr {rec.best_lr}")
    print(f"elapsed {elapsed:.0f}s")


if __name__ == "__main__":
    main()
