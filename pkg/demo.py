#!/usr/bin/env python
"""
AssignSurrogate Demo

This script runs the whole pipeline on a small grid network: it simulates a
set of sampled route assignments, trains the surrogate and its flow-only
ablation, and reports how well rollout travel times track the simulator.
"""

import argparse

from assign_surrogate.config import ExperimentConfig
from assign_surrogate.errors import LabError
from assign_surrogate.main import AssignmentLab


def main():
    """Demo the AssignSurrogate pipeline."""
    parser = argparse.ArgumentParser(description="Demo the AssignSurrogate pipeline.")
    parser.add_argument("--out", default="demo_experiment", help="Experiment directory.")
    parser.add_argument("--seed", type=int, default=0, help="Root seed.")
    parser.add_argument("--samples", type=int, default=60, help="Simulated assignments.")
    parser.add_argument("--epochs", type=int, default=20, help="Maximum training epochs.")
    parser.add_argument("--workers", type=int, default=1, help="Simulation worker processes.")
    args = parser.parse_args()

    cfg = ExperimentConfig(seed=args.seed).update({
        "demand.agents": 120,
        "sim.horizon": 900,
        "sampler.samples": args.samples,
        "model.hidden": 32,
        "model.residual_channels": 16,
        "train.max_epochs": args.epochs,
    })
    lab = AssignmentLab(args.out, cfg, force=True, workers=args.workers)

    try:
        print(f"Running the pipeline in {args.out}...")
        lab.net_gen()
        lab.demand_gen()
        lab.paths_build()
        lab.sample_grid()
        lab.simulate_batch()
        lab.dataset_build()
        lab.train()
        lab.train(flow_only=True)
        lab.eval_tt()
        lab.eval_ablation()
        lab.bench_speed()
    except LabError as e:
        print(f"Error running the pipeline: {e}")
        return 1

    print("\nDemo completed successfully! 🎉")
    print(f"Reports saved to: {args.out}/eval")
    return 0


if __name__ == "__main__":
    exit(main())
