#!/usr/bin/env python3
"""Sparse system identification over a 20-node network in impulsive noise.

Compares DNLMS, D-NLMM and D-SNLMM on a Q=2, L=32 ground truth with
contaminated-Gaussian noise (p=0.01) and prints the network MSD every few
hundred iterations.
"""
import argparse

import numpy as np

from dnlmm import diffusion as dif
from dnlmm.diffusion import to_db
from dnlmm.harness import build_network, build_scenario, trial_seed
from dnlmm.presets import NET20, cg, signals


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--iterations", type=int, default=2000)
    args = parser.parse_args()

    _, C = build_network(NET20)
    sc = build_scenario(signals(Q=2, noise=cg(0.01)), C.node_count)
    streams = [dif.generate_streams(sc.profiles, sc.ground_truth, args.iterations,
                                    trial_seed(1, r)) for r in range(args.trials)]
    algorithms = {
        "DNLMS": dif.dnlms(mu=0.7),
        "D-NLMM": dif.d_nlmm(mu=0.7),
        "D-SNLMM": dif.d_snlmm(mu=0.7, beta=8.6e-5, upsilon=20),
    }
    checkpoints = np.linspace(0, args.iterations, 6, dtype=int)[1:] - 1
    print("iteration " + " ".join(f"{i + 1:>8d}" for i in checkpoints))
    for label, cfg in algorithms.items():
        tr = dif.run_trials(C, sc.ground_truth, cfg, streams)
        msd = np.mean([t.squared_deviation.mean(axis=1) for t in tr], axis=0)
        print(f"{label:9s} " + " ".join(f"{v:8.2f}" for v in to_db(msd[checkpoints])))


if __name__ == "__main__":
    main()
