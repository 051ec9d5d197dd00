"""
AssignSurrogate - Main module.

Coordinates the pipeline stages (network, demand, choice sets, sampling,
simulation, dataset, training, evaluation) over one experiment directory and
exposes them as the ``assign-surrogate`` command line.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import ExperimentConfig, get_config, load_experiment_config
from .dataset import (Dataset, DatasetSpec, SimulationRun, SplitSpec, load_dataset, persistence_metrics, read_matrix,
                      read_travel_time, save_dataset, split)
from .demand_paths import Assignment, ChoiceSets, Demand, assignment_matrix, build_choice_sets, gen_demand
from .errors import LabError, ValidationError
from .evaluation import ablation_compare, evaluate_tt, node_trace, speed_bench
from .manifest import RunManifest, combine_digests
from .model import GenTTP, ModelConfig
from .network import CellMap, RoadNetwork, build_cell_graph, build_cell_map, synth_grid_network
from .sampler import derive_seed, load_sampling_plan, sampling_plan, save_sampling_plan
from .simulator import Scenario, save_result, simulate_batch
from .training import train

logger = logging.getLogger(__name__)


class Stage(NamedTuple):
    sections: Tuple[str, ...]
    upstream: Tuple[str, ...]
    command: str


STAGES: Dict[str, Stage] = {
    "net": Stage(("network",), (), "net gen"),
    "demand": Stage(("demand",), ("net",), "demand gen"),
    "paths": Stage(("paths",), ("demand",), "paths build"),
    "sample": Stage(("sampler",), ("paths",), "sample grid"),
    "simulate": Stage(("sim",), ("sample",), "simulate batch"),
    "dataset": Stage(("dataset",), ("simulate",), "dataset build"),
    "train": Stage(("model", "train"), ("dataset",), "train"),
    "train_flow_only": Stage(("model", "train"), ("dataset",), "train --flow-only"),
    "eval_tt": Stage(("eval",), ("train",), "eval tt"),
    "eval_trace": Stage(("eval",), ("train",), "eval trace"),
    "eval_ablation": Stage(("eval",), ("train", "train_flow_only"), "eval ablation"),
    "bench": Stage(("eval",), ("train",), "bench speed"),
}


def stage_digest(stage: str, cfg: ExperimentConfig) -> str:
    """Digest of a stage's sections and, recursively, of its upstream stages."""
    spec = STAGES[stage]
    return combine_digests(cfg.section_digest(*spec.sections), [stage_digest(u, cfg) for u in spec.upstream])


class AssignmentLab:
    """Runs pipeline stages inside one experiment directory."""

    def __init__(self, out_dir, cfg: ExperimentConfig, force: bool = False, workers: int = 1,
                 progress: bool = True):
        """Initialize the lab.

        Args:
            out_dir: Experiment directory; created when missing.
            cfg: Effective experiment configuration.
            force: Overwrite completed stages and ignore stale upstream stages.
            workers: Processes used by batch simulation.
            progress: Show progress bars.
        """
        self.out = Path(out_dir)
        self.cfg = cfg
        self.force = force
        self.workers = workers
        self.progress = progress
        self.manifest = RunManifest(self.out)

    # -- helpers ------------------------------------------------------------

    def _run_stage(self, stage: str, body: Callable[[], List[str]]):
        spec = STAGES[stage]
        print(f"\n--- Step: {spec.command} ---\n")
        self.manifest.check_overwrite(stage, self.force)
        upstream = {}
        for name in spec.upstream:
            expected = stage_digest(name, self.cfg)
            try:
                self.manifest.require(name, expected, STAGES[name].command)
            except ValidationError:
                if not self.force or self.manifest.entry(name) is None:
                    raise
                logger.warning("Running on stale upstream stage '%s' (forced)", name)
            upstream[name] = self.manifest.entry(name)["digest"]
        self.out.mkdir(parents=True, exist_ok=True)
        outputs = body()
        self.cfg.save(self.out / "config.json")
        self.manifest.record(stage, stage_digest(stage, self.cfg), upstream, outputs, self.cfg.seed)
        print(f"{spec.command} complete: {', '.join(outputs)}")

    def _seed(self, *keys) -> int:
        return derive_seed(self.cfg.seed, *keys)

    def _net(self) -> RoadNetwork:
        return RoadNetwork.load(self.out)

    def _cmap(self) -> CellMap:
        return CellMap.load(self.out / "cells.csv")

    def _demand(self) -> Demand:
        return Demand.load(self.out / "demand.csv")

    def _choice_sets(self) -> ChoiceSets:
        return ChoiceSets.load(self.out / "choice_sets.txt", self.cfg.paths.k)

    def _plan(self):
        return load_sampling_plan(self.out / "samples.csv", self.cfg.paths.k, self.cfg.sampler.resolution)

    def _assignment(self, sample_id: int) -> Assignment:
        return Assignment.load(self.out / "assignments" / f"{sample_id}.csv")

    def _scenario(self) -> Scenario:
        return Scenario(self._net(), self._cmap(), self._demand(), self._choice_sets())

    def _adjacency(self) -> np.ndarray:
        return build_cell_graph(self._net(), self._cmap()).adjacency

    def _dataset(self) -> Dataset:
        return load_dataset(self.out / "dataset")

    def _model(self, flow_only: bool = False) -> GenTTP:
        return GenTTP.load(self.out / ("model_flow_only" if flow_only else "model"), self._adjacency())

    # -- stages -------------------------------------------------------------

    def net_gen(self):
        def body():
            s = self.cfg.network
            net = synth_grid_network(s.rows, s.cols, s.edge_length, s.speed, s.capacity)
            cmap = build_cell_map(net, s.hex_size)
            net.save(self.out)
            cmap.save(self.out / "cells.csv")
            print(f"Network: {len(net.nodes)} nodes, {len(net.edges)} edges, {cmap.cell_count} cells")
            return ["nodes.csv", "edges.csv", "cells.csv"]
        self._run_stage("net", body)

    def demand_gen(self):
        def body():
            s = self.cfg.demand
            demand = gen_demand(self._net(), s.agents, s.window, self._seed("demand"), s.max_retries)
            demand.save(self.out / "demand.csv")
            return ["demand.csv"]
        self._run_stage("demand", body)

    def paths_build(self):
        def body():
            choice_sets = build_choice_sets(self._net(), self._demand(), self.cfg.paths.k, self.progress)
            choice_sets.save(self.out / "choice_sets.txt")
            return ["choice_sets.txt"]
        self._run_stage("paths", body)

    def sample_grid(self):
        def body():
            s = self.cfg.sampler
            plan = sampling_plan(self.cfg.paths.k, s.resolution, s.samples, self._seed("sampler"), s.random_samples)
            save_sampling_plan(self.out / "samples.csv", plan, self.cfg.paths.k)
            choice_sets = self._choice_sets()
            (self.out / "assignments").mkdir(exist_ok=True)
            for spec in plan:
                spec.draw(choice_sets).save(self.out / "assignments" / f"{spec.sample_id}.csv")
            print(f"Sampled {len(plan)} assignments")
            return ["samples.csv", "assignments/"]
        self._run_stage("sample", body)

    def simulate_batch(self):
        def body():
            scenario = self._scenario()
            if scenario.demand.last_departure >= self.cfg.sim.horizon:
                raise ValidationError("simulation horizon does not cover the demand window")
            plan = self._plan()
            assignments = [self._assignment(spec.sample_id) for spec in plan]
            results = simulate_batch(scenario, assignments, self.cfg.sim, self.workers, self.progress)
            for spec, result in zip(plan, results):
                save_result(self.out / "simulations" / str(spec.sample_id), result, spec.sample_id)
            unfinished = sum(r.unfinished for r in results)
            print(f"Simulated {len(results)} assignments ({unfinished} unfinished vehicles in total)")
            return ["simulations/"]
        self._run_stage("simulate", body)

    def dataset_build(self):
        def body():
            s, sim = self.cfg.dataset, self.cfg.sim
            net, cmap, demand, choice_sets = self._net(), self._cmap(), self._demand(), self._choice_sets()
            runs = []
            for spec in self._plan():
                matrix = assignment_matrix(demand, choice_sets, self._assignment(spec.sample_id), cmap,
                                           sim.intervals, sim.interval, s.marking, net).matrix
                run_dir = self.out / "simulations" / str(spec.sample_id)
                flows = read_matrix(run_dir / "Q.csv", matrix.shape)
                runs.append(SimulationRun(spec.sample_id, matrix, flows, read_travel_time(run_dir / "summary.csv")))
            partition = split([r.sim_id for r in runs], SplitSpec(s.train, s.val, s.test), self._seed("split"))
            dataset = Dataset(DatasetSpec(cmap.cell_count, sim.interval, s.flow_window, s.assign_window),
                              tuple(runs), partition)
            save_dataset(self.out / "dataset", dataset)
            print(f"Dataset: {len(runs)} runs, split sizes {partition.sizes}")
            return ["dataset/"]
        self._run_stage("dataset", body)

    def train(self, flow_only: bool = False):
        def body():
            dataset = self._dataset()
            m = self.cfg.model
            model_cfg = ModelConfig(
                cells=dataset.spec.cells, interval=dataset.spec.interval,
                flow_window=dataset.spec.flow_window, assign_window=dataset.spec.assign_window,
                hidden=m.hidden, residual_channels=m.residual_channels, dilations=m.dilations,
                fusion=m.fusion, recurrent=m.recurrent, activation=m.activation,
            )
            train_cfg = replace(self.cfg.train, seed=self._seed("train", self.cfg.train.seed))
            target = "model_flow_only" if flow_only else "model"
            model, report = train(dataset, self._adjacency(), model_cfg, train_cfg, flow_only,
                                  self.out / target, self.progress)
            baseline_mae, _ = persistence_metrics(dataset, "val")
            print(f"Best epoch {report.best_epoch}: val MAE {report.best_val_mae:.4f} "
                  f"(persistence {baseline_mae:.4f})")
            return [f"{target}/"]
        self._run_stage("train_flow_only" if flow_only else "train", body)

    def eval_tt(self):
        def body():
            report = evaluate_tt(self._model(), self._dataset().runs_in("test"))
            (self.out / "eval").mkdir(exist_ok=True)
            report.save(self.out / "eval" / "tt_report.csv")
            for key, value in report.summary().items():
                print(f"{key}: {value}")
            return ["eval/tt_report.csv"]
        self._run_stage("eval_tt", body)

    def eval_trace(self, run_id: Optional[int] = None):
        def body():
            dataset = self._dataset()
            run = dataset.run(run_id) if run_id is not None else dataset.runs_in("test")[0]
            cell = self.cfg.eval.trace_cell
            trace = node_trace(self._model(), run, cell)
            (self.out / "eval").mkdir(exist_ok=True)
            trace.save(self.out / "eval" / f"trace_{cell}.csv")
            return [f"eval/trace_{cell}.csv"]
        self._run_stage("eval_trace", body)

    def eval_ablation(self):
        def body():
            report = ablation_compare(self._model(), self._model(flow_only=True), self._dataset())
            (self.out / "eval").mkdir(exist_ok=True)
            report.save(self.out / "eval" / "ablation.csv")
            for scores in (report.full, report.flow_only):
                print(f"{scores.name}: MAE {scores.mae:.4f}, RMSE {scores.rmse:.4f}, "
                      f"Spearman {scores.tt.spearman:.3f}")
            return ["eval/ablation.csv"]
        self._run_stage("eval_ablation", body)

    def bench_speed(self):
        def body():
            test_ids = self._dataset().partition.test[:self.cfg.eval.bench_assignments]
            assignments = [self._assignment(i) for i in test_ids]
            report = speed_bench(self._model(), self._scenario(), assignments, self.cfg.sim, self.cfg.dataset.marking)
            (self.out / "eval").mkdir(exist_ok=True)
            report.save(self.out / "eval" / "speed.csv")
            print(f"Surrogate speed-up: {report.median_ratio:.1f}x serial, {report.batched_ratio:.1f}x batched")
            return ["eval/speed.csv"]
        self._run_stage("bench", body)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

class LabArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key=value config file")
    common.add_argument("--seed", type=int, dest="seed", help="Root seed")
    common.add_argument("--out", help="Experiment directory (default: $ASSIGN_SURROGATE_OUTPUT_DIR)")
    common.add_argument("--force", action="store_true", help="Overwrite completed stages")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = LabArgumentParser(prog="assign-surrogate",
                               description="Simulate route assignments and train a travel-time surrogate")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    def group(name, help_text):
        sub = commands.add_parser(name, help=help_text).add_subparsers(dest="action", metavar="action")
        sub.required = True
        return sub

    net = group("net", "Road network").add_parser("gen", parents=[common], help="Generate a grid network")
    net.add_argument("--rows", type=int, dest="network.rows")
    net.add_argument("--cols", type=int, dest="network.cols")
    net.add_argument("--edge-length", type=float, dest="network.edge_length")
    net.add_argument("--speed", type=float, dest="network.speed")
    net.add_argument("--capacity", type=float, dest="network.capacity")
    net.add_argument("--hex-size", type=float, dest="network.hex_size")

    demand = group("demand", "Trip demand").add_parser("gen", parents=[common], help="Generate trips")
    demand.add_argument("--agents", type=int, dest="demand.agents")
    demand.add_argument("--window", type=float, dest="demand.window")

    paths = group("paths", "Choice sets").add_parser("build", parents=[common], help="Build K-shortest-path choice sets")
    paths.add_argument("--k", type=int, dest="paths.k")

    sample = group("sample", "Assignment sampling").add_parser("grid", parents=[common], help="Sample assignments")
    sample.add_argument("--resolution", type=int, dest="sampler.resolution")
    sample.add_argument("--samples", type=int, dest="sampler.samples")
    sample.add_argument("--random-samples", type=int, dest="sampler.random_samples")

    simulate = group("simulate", "Traffic simulation").add_parser("batch", parents=[common], help="Simulate every sample")
    simulate.add_argument("--workers", type=int, help="Worker processes (default: $ASSIGN_SURROGATE_WORKERS)")
    simulate.add_argument("--horizon", type=float, dest="sim.horizon")
    simulate.add_argument("--interval", type=float, dest="sim.interval")
    simulate.add_argument("--sim-step", type=float, dest="sim.sim_step")

    dataset = group("dataset", "Training data").add_parser("build", parents=[common], help="Build the windowed dataset")
    dataset.add_argument("--flow-window", type=int, dest="dataset.flow_window")
    dataset.add_argument("--assign-window", type=int, dest="dataset.assign_window")
    dataset.add_argument("--marking", choices=["departure", "expected"], dest="dataset.marking")

    training = commands.add_parser("train", parents=[common], help="Train the surrogate")
    training.add_argument("--flow-only", action="store_true", help="Train the flow-only ablation")
    training.add_argument("--epochs", type=int, dest="train.max_epochs")
    training.add_argument("--lr", type=float, dest="train.learning_rate")
    training.add_argument("--batch-size", type=int, dest="train.batch_size")
    training.add_argument("--patience", type=int, dest="train.patience")
    training.add_argument("--gate-weight", type=float, dest="train.gate_weight")
    training.add_argument("--loss", choices=["mae", "mse"], dest="train.loss")
    training.add_argument("--fusion", choices=["concat", "attention"], dest="model.fusion")
    training.add_argument("--recurrent", choices=["lstm", "gru"], dest="model.recurrent")
    training.add_argument("--hidden", type=int, dest="model.hidden")

    evaluate = group("eval", "Evaluation")
    evaluate.add_parser("tt", parents=[common], help="Rollout travel-time report")
    trace = evaluate.add_parser("trace", parents=[common], help="True and predicted flow of one cell")
    trace.add_argument("--cell", type=int, dest="eval.trace_cell")
    trace.add_argument("--run", type=int, dest="run_id", help="Simulation id (default: first test run)")
    evaluate.add_parser("ablation", parents=[common], help="Full model against the flow-only ablation")

    bench = group("bench", "Benchmarks").add_parser("speed", parents=[common], help="Simulator against surrogate timing")
    bench.add_argument("--assignments", type=int, dest="eval.bench_assignments")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    values = {k: v for k, v in vars(args).items() if v is not None and ("." in k or k == "seed")}
    return values


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one pipeline stage; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    env = get_config()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose or env.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    out = Path(args.out or env.default_output_dir)

    try:
        cfg = load_experiment_config(out, args.config, _overrides(args))
        workers = getattr(args, "workers", None) or env.workers
        lab = AssignmentLab(out, cfg, force=args.force, workers=workers)
        handlers = {
            ("net", "gen"): lab.net_gen,
            ("demand", "gen"): lab.demand_gen,
            ("paths", "build"): lab.paths_build,
            ("sample", "grid"): lab.sample_grid,
            ("simulate", "batch"): lab.simulate_batch,
            ("dataset", "build"): lab.dataset_build,
            ("train", None): lambda: lab.train(flow_only=args.flow_only),
            ("eval", "tt"): lab.eval_tt,
            ("eval", "trace"): lambda: lab.eval_trace(args.run_id),
            ("eval", "ablation"): lab.eval_ablation,
            ("bench", "speed"): lab.bench_speed,
        }
        handlers[(args.command, getattr(args, "action", None))]()
    except ValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except LabError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("Unhandled failure", exc_info=True)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
