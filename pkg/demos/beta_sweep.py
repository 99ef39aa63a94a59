#!/usr/bin/env python3
"""Where does the zero attractor help?  Sweep beta against the predicted beta*.

For a sparse (Q=2) and a dense (Q=L) ground truth on a 10-node network,
prints the steady-state gap of D-SNLMM relative to D-NLMM over a log grid
of beta, next to the largest beneficial beta predicted by the model.
"""
import argparse

import numpy as np

from dnlmm import diffusion as dif
from dnlmm.harness import build_network, build_scenario, trial_seed
from dnlmm.presets import NET10, cg, signals
from dnlmm.signals import generate_streams
from dnlmm.theory import TheoryModel, beta_star


def steady(C, sc, cfg, streams):
    tr = dif.run_trials(C, sc.ground_truth, cfg, streams)
    return np.mean([t.squared_deviation[-100:].mean() for t in tr])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=30)
    parser.add_argument("--iterations", type=int, default=2000)
    args = parser.parse_args()

    _, C = build_network(NET10)
    grid = np.logspace(-4, -1, 7)
    for Q in (2, 5):
        sc = build_scenario(signals(L=5, Q=Q, noise=cg(0.01)), C.node_count)
        streams = [generate_streams(sc.profiles, sc.ground_truth, args.iterations,
                                    trial_seed(3, r)) for r in range(args.trials)]
        base = steady(C, sc, dif.d_nlmm(mu=0.7), streams)
        model = TheoryModel.from_setup(C.weights, sc.profiles, sc.ground_truth,
                                       dif.d_snlmm(mu=0.7, beta=1e-3), samples=50_000, seed=0)
        bs = beta_star(model)
        print(f"Q={Q}  w_o={np.round(sc.ground_truth.w_o, 3)}  "
              f"beta*={bs.value:.2e}" if bs.exists else f"Q={Q}  no beneficial beta predicted")
        for b in grid:
            gap = 10 * np.log10(steady(C, sc, dif.d_snlmm(mu=0.7, beta=b), streams) / base)
            print(f"  beta {b:8.2e}  gap {gap:+6.2f} dB")


if __name__ == "__main__":
    main()
