"""Monte-Carlo experiment harness: scenarios, runners, metrics, report export.

A scenario fixes everything: feeder file, probing plan, noise, solver knobs,
run count and seed. Each run draws a topology uniformly from the candidate
configurations, simulates a probing campaign against it, solves the chosen
task and scores the result. Per-run RNG streams are keyed by (seed, run), so
results are reproducible and independent of worker count.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridProbeError
from .feeder import Feeder, reduced_laplacian
from .feeder_io import load_feeder
from .identify import PriorMask, admm_identify, round_to_tree
from .probing import NoiseConfig, make_plan, simulate
from .verify import (VerifyProblem, enumerate_tree_statuses, exhaustive_verify,
                     pgd_verify, round_status)


@dataclass
class Scenario:
    """Declarative description of one batch experiment."""

    feeder: str = ""                      # path to a feeder file
    probe_buses: list | str = "candidate_leaves"   # explicit ids, or a named rule
    delta: list | float | str = "rated"   # probing magnitudes; "rated" = nominal load
    design: str = "paired"
    repeats: int = 1                       # probing-campaign repetitions (the T knob)
    model: str = "ac"
    meas_rel_accuracy: float = 0.0001
    load_sigma_rel: float = 0.067
    gamma: float = 0.0
    power_factor: float = 0.95
    weighting: str = "identity"
    standing_generation: bool = True      # inverters produce at rating before probing
    lam: float = 5e-3
    mu_identify: float = 1.0
    rho: float = 1.0
    admm_max_iter: int = 50_000
    admm_tol_scale: float = 1e-7
    admm_adaptive_rho: bool = False
    mu_verify: float = 2e-8
    nu: float = 1e-10
    pgd_max_iter: int = 1000
    rounding: str = "top_n"
    exhaustive_check: bool = False
    runs: int = 1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def noise(self, seed: int) -> NoiseConfig:
        return NoiseConfig(
            meas_rel_accuracy=self.meas_rel_accuracy,
            load_sigma_rel=self.load_sigma_rel,
            gamma=self.gamma,
            power_factor=self.power_factor,
            seed=seed,
        )


@dataclass
class RunRecord:
    run: int
    rmse: float
    line_errors: int
    failed: bool = False
    detail: str = ""
    oracle_match: bool | None = None


@dataclass
class MetricsReport:
    task: str
    scenario: dict
    records: list[RunRecord] = field(default_factory=list)

    def aggregates(self) -> dict:
        ok = [r for r in self.records if not r.failed]
        rmse = np.array([r.rmse for r in ok]) if ok else np.array([np.nan])
        errs = np.array([r.line_errors for r in ok], dtype=float) if ok else np.array([np.nan])
        out = {
            "task": self.task,
            "runs": len(self.records),
            "failures": sum(r.failed for r in self.records),
            "mean_rmse": float(rmse.mean()),
            "std_rmse": float(rmse.std()),
            "mean_line_errors": float(errs.mean()),
            "std_line_errors": float(errs.std()),
        }
        oracle = [r.oracle_match for r in ok if r.oracle_match is not None]
        if oracle:
            out["oracle_agreement"] = float(np.mean(oracle))
        return out


def candidate_leaf_buses(f: Feeder, configs=None) -> list[int]:
    """Buses that are leaves in at least one candidate configuration."""
    configs = configs if configs is not None else enumerate_tree_statuses(f)
    leaves: set[int] = set()
    for b in configs:
        tree = f.with_status(np.asarray(b)).graph
        leaves |= {m for m in range(1, f.node_count) if not tree.children[m]}
    return sorted(leaves)


def resolve_probe_buses(scenario: Scenario, f: Feeder, configs) -> list[int]:
    spec = scenario.probe_buses
    if isinstance(spec, str):
        if spec == "candidate_leaves":
            return candidate_leaf_buses(f, configs)
        if spec == "leaves":
            return sorted(f.index.leaves)
        raise ValueError(f"unknown probe-bus rule {spec!r}")
    return [int(b) for b in spec]


def resolve_deltas(scenario: Scenario, f: Feeder, buses) -> np.ndarray:
    """Per-bus probing magnitudes; with standing generation the first action
    drops the inverter output, so the magnitudes are negative."""
    if isinstance(scenario.delta, str):
        if scenario.delta != "rated":
            raise ValueError(f"unknown delta rule {scenario.delta!r}")
        mags = f.p_load[list(buses)]
        if (mags == 0).any():
            raise ValueError("rated probing needs a nonzero load at every probed bus")
    else:
        mags = np.broadcast_to(np.asarray(scenario.delta, dtype=float), (len(buses),)).copy()
    return -mags if scenario.standing_generation else mags


def resolve_base_injection(scenario: Scenario, f: Feeder, buses):
    if not scenario.standing_generation:
        return None
    return f.p_load[list(buses)]


def _run_seeds(scenario: Scenario) -> list[int]:
    state = np.random.SeedSequence(scenario.seed).generate_state(scenario.runs)
    return [int(s) for s in state]


def _draw_config(scenario: Scenario, run: int, n_configs: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=scenario.seed,
                                                       spawn_key=(run,)))
    return int(rng.integers(n_configs))


def _identify_one(args) -> RunRecord:
    scenario, f, configs, buses, deltas, base_inj, run, noise_seed = args
    try:
        truth_idx = _draw_config(scenario, run, len(configs))
        truth = f.with_status(np.asarray(configs[truth_idx]))
        plan = make_plan(buses, deltas, design=scenario.design, repeats=scenario.repeats)
        ds = simulate(truth, plan, scenario.noise(noise_seed), model=scenario.model,
                      weighting=scenario.weighting, base_injection=base_inj)
        result = admm_identify(
            ds, PriorMask.unknown(f.node_count), lam=scenario.lam,
            mu=scenario.mu_identify, rho=scenario.rho,
            max_iter=scenario.admm_max_iter, tol_scale=scenario.admm_tol_scale,
            adaptive_rho=scenario.admm_adaptive_rho,
        )
        recovered = round_to_tree(result.theta)
        theta_o = reduced_laplacian(truth)
        rmse = float(np.linalg.norm(recovered.reduced_laplacian() - theta_o)
                     / np.linalg.norm(theta_o))
        errors = len(recovered.edge_pairs() ^ truth.graph.edge_pairs())
        return RunRecord(run=run, rmse=rmse, line_errors=errors)
    except GridProbeError as exc:
        return RunRecord(run=run, rmse=float("nan"), line_errors=-1,
                         failed=True, detail=str(exc))


def _verify_one(args) -> RunRecord:
    scenario, f, configs, buses, deltas, base_inj, run, noise_seed = args
    try:
        truth_idx = _draw_config(scenario, run, len(configs))
        truth_status = np.asarray(configs[truth_idx], dtype=np.int8)
        truth = f.with_status(truth_status)
        plan = make_plan(buses, deltas, design=scenario.design, repeats=scenario.repeats)
        ds = simulate(truth, plan, scenario.noise(noise_seed), model=scenario.model,
                      weighting=scenario.weighting, base_injection=base_inj)
        prob = VerifyProblem(feeder=f, data=ds, mu=scenario.mu_verify, nu=scenario.nu)
        relaxed = pgd_verify(prob, max_iter=scenario.pgd_max_iter)
        rounded, _ = round_status(relaxed.status, f, strategy=scenario.rounding)
        errors = int(np.abs(rounded.astype(int) - truth_status.astype(int)).sum())
        theta_o = reduced_laplacian(truth)
        theta_hat = reduced_laplacian(f, rounded.astype(float))
        rmse = float(np.linalg.norm(theta_hat - theta_o) / np.linalg.norm(theta_o))
        oracle_match = None
        if scenario.exhaustive_check:
            oracle = exhaustive_verify(prob, configs=configs)
            oracle_match = bool(np.array_equal(oracle.status, rounded))
        return RunRecord(run=run, rmse=rmse, line_errors=errors, oracle_match=oracle_match)
    except GridProbeError as exc:
        return RunRecord(run=run, rmse=float("nan"), line_errors=-1,
                         failed=True, detail=str(exc))


def _run_batch(scenario: Scenario, feeder: Feeder | None, worker) -> list[RunRecord]:
    f = feeder if feeder is not None else load_feeder(scenario.feeder)
    configs = enumerate_tree_statuses(f)
    buses = resolve_probe_buses(scenario, f, configs)
    deltas = resolve_deltas(scenario, f, buses)
    base_inj = resolve_base_injection(scenario, f, buses)
    seeds = _run_seeds(scenario)
    jobs = [(scenario, f, configs, buses, deltas, base_inj, run, seeds[run])
            for run in range(scenario.runs)]
    if scenario.workers > 1:
        with ProcessPoolExecutor(max_workers=scenario.workers) as pool:
            records = list(pool.map(worker, jobs, chunksize=max(1, len(jobs) // (4 * scenario.workers))))
    else:
        records = [worker(job) for job in jobs]
    return sorted(records, key=lambda r: r.run)


def run_identification(scenario: Scenario, feeder: Feeder | None = None) -> MetricsReport:
    """Identify topology per run and score RMSE plus line-status errors."""
    records = _run_batch(scenario, feeder, _identify_one)
    return MetricsReport(task="identification", scenario=scenario.to_dict(), records=records)


def run_verification(scenario: Scenario, feeder: Feeder | None = None) -> MetricsReport:
    """Detect line statuses per run; optionally cross-check the exhaustive oracle."""
    records = _run_batch(scenario, feeder, _verify_one)
    return MetricsReport(task="verification", scenario=scenario.to_dict(), records=records)


def export_report(report: MetricsReport, out_dir) -> dict[str, Path]:
    """Write the per-run CSV and a JSON summary; output is byte-stable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.task}_runs.csv"
    rows = ["run,rmse,line_errors,failed,oracle_match,detail"]
    for r in report.records:
        oracle = "" if r.oracle_match is None else str(int(r.oracle_match))
        rows.append(f"{r.run},{r.rmse!r},{r.line_errors},{int(r.failed)},{oracle},{r.detail}")
    csv_path.write_text("\n".join(rows) + "\n")
    summary_path = out / f"{report.task}_summary.json"
    payload = {"aggregates": report.aggregates(), "scenario": report.scenario}
    summary_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return {"runs": csv_path, "summary": summary_path}
