"""Probing plans, measured voltage-deviation synthesis and BLUE weighting."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .feeder import Feeder, ac_voltage, build_sensitivity, power_factor_tangent, reduced_laplacian

DESIGNS = ("diagonal", "paired", "custom")


@dataclass(frozen=True)
class ProbingPlan:
    """Which buses perturb their injection, by how much, and when.

    ``delta`` holds one probing interval per column: column t is the change
    of injection applied at time t relative to time t-1.
    """

    buses: tuple[int, ...]
    delta: np.ndarray
    design: str = "custom"

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}")
        d = np.asarray(self.delta, dtype=float)
        if d.ndim != 2 or d.shape[0] != len(self.buses):
            raise ValueError("delta must have one row per probed bus")
        object.__setattr__(self, "delta", d)

    @property
    def n_probes(self) -> int:
        return len(self.buses)

    @property
    def n_intervals(self) -> int:
        return self.delta.shape[1]


def make_plan(buses, deltas, design: str = "diagonal", repeats: int = 1) -> ProbingPlan:
    """Build a full-row-rank probing plan.

    ``diagonal`` probes one bus per interval; ``paired`` has every bus drop
    its injection and then restore it, giving a [+1, -1] column pair per bus.
    ``repeats`` tiles the base pattern to lengthen the campaign.
    """
    buses = tuple(int(b) for b in buses)
    if len(set(buses)) != len(buses) or not buses:
        raise ValueError("probed buses must be a non-empty set without repeats")
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (len(buses),)).copy()
    if (deltas == 0).any():
        raise ValueError("probing magnitudes must be nonzero")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if design == "diagonal":
        base = np.diag(deltas)
    elif design == "paired":
        base = np.kron(np.diag(deltas), np.array([[1.0, -1.0]]))
    else:
        raise ValueError(f"make_plan cannot synthesize design {design!r}")
    return ProbingPlan(buses=buses, delta=np.tile(base, (1, repeats)), design=design)


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement accuracy and load-variation model for the simulator.

    ``meas_rel_accuracy`` is the relative 3-sigma voltage accuracy (0.01
    means 1%). Active loads vary i.i.d. per interval with standard deviation
    ``load_sigma_rel`` times the nominal value; reactive load follows at a
    constant power factor. ``gamma`` is the assumed grid-wide
    reactance-to-resistance ratio used only for BLUE weighting.
    """

    meas_rel_accuracy: float = 0.0
    load_sigma_rel: float = 0.0
    gamma: float = 0.0
    power_factor: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if min(self.meas_rel_accuracy, self.load_sigma_rel, self.gamma) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")


@dataclass
class ProbingDataset:
    """Voltage-deviation measurements plus everything needed to fit them."""

    v_tilde: np.ndarray            # N x T deviations, all buses metered
    delta: np.ndarray              # C x T applied perturbations
    buses: tuple[int, ...]         # probed buses (1-based bus ids)
    W: np.ndarray                  # N x N symmetric PD residual weighting
    truth_theta: np.ndarray | None = None
    truth_status: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_loads(self) -> int:
        return self.v_tilde.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.v_tilde.shape[1]

    def selector(self) -> np.ndarray:
        """N x C matrix of canonical columns for the probed buses."""
        out = np.zeros((self.n_loads, len(self.buses)))
        for j, b in enumerate(self.buses):
            out[b - 1, j] = 1.0
        return out

    def target(self) -> np.ndarray:
        """Injection-domain fit target: the probed perturbations scattered to all buses."""
        return self.selector() @ self.delta


def weight_from_covariances(sigma_p, sigma_q, sigma_pq, gamma: float) -> tuple[np.ndarray, bool]:
    """Invert the aggregate load-variation covariance; identity on failure.

    The aggregate is ``sigma_p + gamma^2 sigma_q + gamma (sigma_pq + sigma_pq^T)``.
    Returns ``(W, fallback)`` where ``fallback`` marks a singular aggregate.
    """
    sigma_p = np.asarray(sigma_p, dtype=float)
    sigma = (sigma_p + gamma ** 2 * np.asarray(sigma_q, dtype=float)
             + gamma * (np.asarray(sigma_pq, dtype=float) + np.asarray(sigma_pq, dtype=float).T))
    n = sigma.shape[0]
    try:
        c, low = sla.cho_factor(sigma)
        return sla.cho_solve((c, low), np.eye(n)), False
    except (np.linalg.LinAlgError, ValueError):
        warnings.warn("load covariance is singular; falling back to identity weighting")
        return np.eye(n), True


def blue_weight(noise: NoiseConfig, f: Feeder) -> tuple[np.ndarray, bool]:
    """Best-linear-unbiased weighting for the i.i.d. load-variation model.

    Interval-to-interval load changes are differences of two independent
    draws, hence the factor 2 in the per-bus variances.
    """
    tanphi = power_factor_tangent(noise.power_factor)
    var_p = 2.0 * (noise.load_sigma_rel * f.p_load[1:]) ** 2
    sigma_p = np.diag(var_p)
    return weight_from_covariances(sigma_p, tanphi ** 2 * sigma_p, tanphi * sigma_p,
                                   noise.gamma)


def simulate(f: Feeder, plan: ProbingPlan, noise: NoiseConfig,
             model: str = "linear", weighting: str = "identity",
             base_injection=None) -> ProbingDataset:
    """Synthesize the voltage-deviation matrix seen by the operator.

    Per interval the loads are redrawn, the probed buses apply the next
    column of the plan on top of their previous injection, voltages are
    solved with the chosen grid model, and every reading is corrupted by
    the configured metering noise before differencing.

    ``base_injection`` is the standing inverter output at the probed buses
    present in every interval (e.g. solar production before a probing drop);
    it shifts the operating point but cancels out of the deviations.
    """
    if model not in ("linear", "ac"):
        raise ValueError(f"unknown grid model {model!r}")
    if weighting not in ("identity", "blue"):
        raise ValueError(f"unknown weighting {weighting!r}")
    n = f.n_loads
    for b in plan.buses:
        if not 1 <= b <= n:
            raise ValueError(f"probed bus {b} does not exist")
    sens = build_sensitivity(f) if model == "linear" else None
    T = plan.n_intervals
    tanphi = power_factor_tangent(noise.power_factor)
    p_nom = f.p_load[1:]
    cum = np.cumsum(plan.delta, axis=1)
    bus_rows = np.array([b - 1 for b in plan.buses])
    standing = np.zeros(n)
    if base_injection is not None:
        standing[bus_rows] = np.broadcast_to(
            np.asarray(base_injection, dtype=float), (len(plan.buses),)
        )
    streams = np.random.SeedSequence(noise.seed).spawn(T + 1)

    readings = np.empty((n, T + 1))
    for t in range(T + 1):
        rng = np.random.default_rng(streams[t])
        p_l = p_nom * (1.0 + noise.load_sigma_rel * rng.standard_normal(n))
        q_l = tanphi * p_l
        p_inj = standing - p_l
        if t > 0:
            p_inj[bus_rows] += cum[:, t - 1]
        if model == "linear":
            v = sens.R @ p_inj + sens.X @ (-q_l) + 1.0
        else:
            v = ac_voltage(f, p_inj, -q_l)
        if noise.meas_rel_accuracy > 0:
            v = v + rng.standard_normal(n) * (noise.meas_rel_accuracy * np.abs(v) / 3.0)
        readings[:, t] = v

    if weighting == "blue":
        W, fallback = blue_weight(noise, f)
    else:
        W, fallback = np.eye(n), False
    return ProbingDataset(
        v_tilde=np.diff(readings, axis=1),
        delta=plan.delta.copy(),
        buses=plan.buses,
        W=W,
        truth_theta=reduced_laplacian(f),
        truth_status=np.array(f.status, dtype=np.int8),
        meta={
            "model": model,
            "seed": noise.seed,
            "weighting": weighting,
            "weighting_fallback": fallback,
            "design": plan.design,
        },
    )


def save_dataset(ds: ProbingDataset, path) -> None:
    """Persist a dataset as a compressed array bundle with a JSON manifest."""
    manifest = dict(ds.meta)
    manifest.update({"buses": list(ds.buses), "n_loads": ds.n_loads,
                     "n_intervals": ds.n_intervals})
    arrays = {
        "v_tilde": ds.v_tilde,
        "delta": ds.delta,
        "W": ds.W,
        "manifest": np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8),
    }
    if ds.truth_theta is not None:
        arrays["truth_theta"] = ds.truth_theta
    if ds.truth_status is not None:
        arrays["truth_status"] = ds.truth_status
    np.savez_compressed(path, **arrays)


def load_dataset(path) -> ProbingDataset:
    with np.load(path) as data:
        manifest = json.loads(bytes(data["manifest"]).decode())
        buses = tuple(int(b) for b in manifest.pop("buses"))
        manifest.pop("n_loads", None)
        manifest.pop("n_intervals", None)
        return ProbingDataset(
            v_tilde=data["v_tilde"],
            delta=data["delta"],
            buses=buses,
            W=data["W"],
            truth_theta=data["truth_theta"] if "truth_theta" in data else None,
            truth_status=data["truth_status"] if "truth_status" in data else None,
            meta=manifest,
        )
