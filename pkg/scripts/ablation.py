"""MCT vs random search vs MCT without thresholding on the quadratic suite.

    python scripts/ablation.py [--seeds 0 1 2 ...]

Prints one JSON line per seed and the mean top-1 score of each arm.
"""
import argparse
import json
import time

from optforge.experiments import ABLATION_SEEDS, ablation


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="+", default=list(ABLATION_SEEDS))
    args = parser.parse_args()
    start = time.perf_counter()
    out = ablation(args.seeds, progress=lambda seed, row: print(seed, json.dumps(row), flush=True))
    print("means", json.dumps(out["means"]))
    print(f"elapsed {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
