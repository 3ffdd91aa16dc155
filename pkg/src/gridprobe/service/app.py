"""FastAPI service exposing the probing toolkit.

The CLI is a thin client of these endpoints; all numerical work lives in the
core package. Feeders travel as the plain-text file format so parse errors
(with line numbers) surface through the API unchanged.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import MetricsReport, Scenario, run_identification, run_verification
from ..errors import GridProbeError
from ..feeder_io import parse_feeder_text
from ..identify import PriorMask, admm_identify, round_to_tree
from ..probing import NoiseConfig, ProbingDataset, make_plan, simulate
from ..recovery import check_distinct_resistances, check_verifiable
from ..verify import VerifyProblem, enumerate_tree_statuses, exhaustive_verify, pgd_verify, round_status
from ..bench import candidate_leaf_buses
from . import schemas

app = FastAPI(title="gridprobe", version=__version__,
              description="Inverter-probing simulation, topology identification "
                          "and line-status verification for radial feeders.")


def _fail(exc: GridProbeError | ValueError) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _dataset_to_payload(ds: ProbingDataset) -> schemas.DatasetPayload:
    return schemas.DatasetPayload(
        v_tilde=ds.v_tilde.tolist(),
        delta=ds.delta.tolist(),
        buses=list(ds.buses),
        w=ds.W.tolist(),
        truth_theta=None if ds.truth_theta is None else ds.truth_theta.tolist(),
        truth_status=None if ds.truth_status is None else [int(v) for v in ds.truth_status],
        meta=ds.meta,
    )


def _dataset_from_payload(p: schemas.DatasetPayload) -> ProbingDataset:
    v_tilde = np.asarray(p.v_tilde, dtype=float)
    W = np.eye(v_tilde.shape[0]) if p.w is None else np.asarray(p.w, dtype=float)
    return ProbingDataset(
        v_tilde=v_tilde,
        delta=np.asarray(p.delta, dtype=float),
        buses=tuple(int(b) for b in p.buses),
        W=W,
        truth_theta=None if p.truth_theta is None else np.asarray(p.truth_theta, dtype=float),
        truth_status=None if p.truth_status is None else np.asarray(p.truth_status, dtype=np.int8),
        meta=dict(p.meta),
    )


def _clean(x: float) -> float:
    return x if math.isfinite(x) else 0.0


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate_endpoint(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    try:
        feeder = parse_feeder_text(req.feeder_text)
        deltas = np.asarray(req.deltas, dtype=float)
        base = None
        if req.standing_generation:
            base = feeder.p_load[list(req.buses)]
            deltas = -np.abs(deltas)
        plan = make_plan(req.buses, deltas, design=req.design, repeats=req.repeats)
        noise = NoiseConfig(**req.noise.model_dump())
        ds = simulate(feeder, plan, noise, model=req.model,
                      weighting=req.weighting, base_injection=base)
    except (GridProbeError, ValueError) as exc:
        raise _fail(exc) from exc
    return schemas.SimulateResponse(dataset=_dataset_to_payload(ds))


@app.post("/identify", response_model=schemas.IdentifyResponse)
def identify_endpoint(req: schemas.IdentifyRequest) -> schemas.IdentifyResponse:
    try:
        ds = _dataset_from_payload(req.dataset)
        mask = None
        if req.prior_mask is not None:
            mask = PriorMask(np.asarray(req.prior_mask))
        result = admm_identify(ds, mask, lam=req.lam, mu=req.mu, rho=req.rho,
                               max_iter=req.max_iter, tol_scale=req.tol_scale,
                               adaptive_rho=req.adaptive_rho)
        recovered = round_to_tree(result.theta, mask)
    except (GridProbeError, ValueError) as exc:
        raise _fail(exc) from exc
    return schemas.IdentifyResponse(
        theta=result.theta.tolist(),
        converged=result.converged,
        iterations=result.iterations,
        primal_residual=result.primal_residual,
        dual_residual=result.dual_residual,
        tree=schemas.TreePayload(
            parents=recovered.tree.parents.tolist(),
            resistances=[_clean(float(r)) for r in recovered.resistances[1:]],
        ),
        edges=[(u, v, _clean(r)) for u, v, r in recovered.edges()],
    )


@app.post("/verify", response_model=schemas.VerifyResponse)
def verify_endpoint(req: schemas.VerifyRequest) -> schemas.VerifyResponse:
    try:
        feeder = parse_feeder_text(req.feeder_text)
        ds = _dataset_from_payload(req.dataset)
        prob = VerifyProblem(feeder=feeder, data=ds, mu=req.mu, nu=req.nu)
        if req.method == "exhaustive":
            result = exhaustive_verify(prob, configs=req.configs)
            return schemas.VerifyResponse(
                status=[int(v) for v in result.status],
                objective=result.objective,
                is_tree=True,
                method=req.method,
                table=[schemas.ConfigRow(config_id=e.config_id, status=list(e.status),
                                         objective=e.objective) for e in result.table],
                ties=result.ties,
            )
        if req.method != "pgd":
            raise ValueError(f"unknown method {req.method!r}")
        relaxed = pgd_verify(prob, max_iter=req.max_iter)
        rounded, is_tree = round_status(relaxed.status, feeder, strategy=req.rounding)
        objective = float(
            np.square(prob.laplacian(rounded.astype(float)) @ ds.v_tilde - ds.target()).sum()
        )
    except (GridProbeError, ValueError) as exc:
        raise _fail(exc) from exc
    return schemas.VerifyResponse(
        status=[int(v) for v in rounded],
        objective=objective,
        is_tree=is_tree,
        method=req.method,
        iterations=relaxed.iterations,
        converged=relaxed.converged,
        relaxed_status=[float(v) for v in relaxed.status],
    )


@app.post("/check-identifiability", response_model=schemas.CheckIdentifiabilityResponse)
def check_identifiability_endpoint(
    req: schemas.CheckIdentifiabilityRequest,
) -> schemas.CheckIdentifiabilityResponse:
    try:
        feeder = parse_feeder_text(req.feeder_text)
        configs = req.configs or enumerate_tree_statuses(feeder)
        probed = req.probed or candidate_leaf_buses(feeder, configs)
        distinct = check_distinct_resistances(feeder)
        confusable = check_verifiable(feeder, configs, probed)
    except (GridProbeError, ValueError) as exc:
        raise _fail(exc) from exc
    pairs = [(i, j) for i in range(len(configs)) for j in range(i + 1, len(configs))
             if confusable[i, j]]
    return schemas.CheckIdentifiabilityResponse(
        verifiable=not pairs,
        distinct_resistances=distinct,
        n_configs=len(configs),
        probed=list(probed),
        confusable_pairs=pairs,
    )


@app.post("/bench", response_model=schemas.BenchResponse)
def bench_endpoint(req: schemas.BenchRequest) -> schemas.BenchResponse:
    try:
        feeder = parse_feeder_text(req.feeder_text)
        scenario = Scenario.from_dict(req.scenario)
        if req.task not in ("identify", "verify", "both"):
            raise ValueError(f"unknown task {req.task!r}")
        reports: list[MetricsReport] = []
        if req.task in ("identify", "both"):
            reports.append(run_identification(scenario, feeder=feeder))
        if req.task in ("verify", "both"):
            reports.append(run_verification(scenario, feeder=feeder))
    except (GridProbeError, ValueError) as exc:
        raise _fail(exc) from exc
    return schemas.BenchResponse(reports=[
        schemas.TaskReport(
            task=r.task,
            aggregates=r.aggregates(),
            records=[schemas.RunRow(run=rec.run, rmse=_clean(rec.rmse),
                                    line_errors=rec.line_errors, failed=rec.failed,
                                    detail=rec.detail, oracle_match=rec.oracle_match)
                     for rec in r.records],
        )
        for r in reports
    ])
