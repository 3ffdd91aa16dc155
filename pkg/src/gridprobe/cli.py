"""Command-line front end; a thin client of the HTTP service.

Every subcommand assembles a request, posts it to the service and renders
the response. By default the app is driven in-process; pass ``--server`` to
talk to a running instance instead (start one with ``gridprobe serve``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import MetricsReport, RunRecord, Scenario, export_report
from .probing import ProbingDataset, load_dataset, save_dataset


class ServiceClient:
    def __init__(self, server: str | None = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise SystemExit(f"error: {detail}")
        return response.json()

    def get(self, path: str) -> dict:
        response = self._client.get(path)
        response.raise_for_status()
        return response.json()


def _read_feeder(path: str) -> str:
    return Path(path).read_text()


def _parse_buses(spec: str) -> list[int] | None:
    if spec in ("candidate-leaves", ""):
        return None
    return [int(tok) for tok in spec.replace(",", " ").split()]


def _dataset_from_wire(payload: dict) -> ProbingDataset:
    return ProbingDataset(
        v_tilde=np.asarray(payload["v_tilde"], dtype=float),
        delta=np.asarray(payload["delta"], dtype=float),
        buses=tuple(payload["buses"]),
        W=np.asarray(payload["w"], dtype=float),
        truth_theta=None if payload.get("truth_theta") is None
        else np.asarray(payload["truth_theta"], dtype=float),
        truth_status=None if payload.get("truth_status") is None
        else np.asarray(payload["truth_status"], dtype=np.int8),
        meta=payload.get("meta", {}),
    )


def _dataset_to_wire(ds: ProbingDataset) -> dict:
    return {
        "v_tilde": ds.v_tilde.tolist(),
        "delta": ds.delta.tolist(),
        "buses": list(ds.buses),
        "w": ds.W.tolist(),
        "truth_theta": None if ds.truth_theta is None else ds.truth_theta.tolist(),
        "truth_status": None if ds.truth_status is None else [int(v) for v in ds.truth_status],
        "meta": ds.meta,
    }


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_simulate(args) -> int:
    client = ServiceClient(args.server)
    feeder_text = _read_feeder(args.feeder)
    buses = _parse_buses(args.buses)
    if buses is None:
        info = client.post("/check-identifiability", {"feeder_text": feeder_text})
        buses = info["probed"]
    if args.delta == "rated":
        deltas = None
    else:
        deltas = [float(tok) for tok in args.delta.replace(",", " ").split()]
        if len(deltas) == 1:
            deltas = deltas * len(buses)
    if deltas is None:
        # rated probing: the service reads magnitudes off the feeder loads
        from .feeder_io import parse_feeder_text

        feeder = parse_feeder_text(feeder_text)
        deltas = [float(feeder.p_load[b]) for b in buses]
    payload = {
        "feeder_text": feeder_text,
        "buses": buses,
        "deltas": deltas,
        "design": args.design,
        "repeats": args.T,
        "model": args.model,
        "weighting": args.weighting,
        "standing_generation": args.standing_generation,
        "noise": {
            "meas_rel_accuracy": args.noise,
            "load_sigma_rel": args.load_sigma,
            "gamma": args.gamma,
            "seed": args.seed,
        },
    }
    result = client.post("/simulate", payload)
    ds = _dataset_from_wire(result["dataset"])
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n_loads} buses x {ds.n_intervals} intervals, "
          f"probed {list(ds.buses)}")
    return 0


def cmd_identify(args) -> int:
    client = ServiceClient(args.server)
    ds = load_dataset(args.data)
    payload = {
        "dataset": _dataset_to_wire(ds),
        "lam": getattr(args, "lambda"),
        "mu": args.mu,
        "rho": args.rho,
        "max_iter": args.max_iter,
        "tol_scale": args.tol_scale,
        "adaptive_rho": args.adaptive_rho,
    }
    result = client.post("/identify", payload)
    print(f"converged={result['converged']} iterations={result['iterations']} "
          f"primal={result['primal_residual']:.3e} dual={result['dual_residual']:.3e}")
    print("recovered lines (from, to, resistance):")
    for u, v, r in result["edges"]:
        print(f"  {u:>3} -- {v:<3}  r = {r:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "identify.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
        np.savetxt(out / "theta_hat.csv", np.asarray(result["theta"]), delimiter=",")
        print(f"wrote {out / 'identify.json'} and {out / 'theta_hat.csv'}")
    return 0


def cmd_verify(args) -> int:
    client = ServiceClient(args.server)
    ds = load_dataset(args.data)
    payload = {
        "feeder_text": _read_feeder(args.feeder),
        "dataset": _dataset_to_wire(ds),
        "method": args.method,
        "mu": args.mu,
        "nu": args.nu,
        "max_iter": args.max_iter,
        "rounding": args.rounding,
    }
    result = client.post("/verify", payload)
    print(f"method={result['method']} objective={result['objective']:.6g} "
          f"is_tree={result['is_tree']}")
    print("energized lines:", " ".join(str(v) for v in result["status"]))
    if result.get("table"):
        print("config table (id, objective):")
        for row in result["table"]:
            print(f"  {row['config_id']:>4}  {row['objective']:.6g}")
        if result.get("ties"):
            print("ties between configs:", result["ties"])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
        if result.get("table"):
            rows = ["config_id,objective,is_tree,status"]
            for row in result["table"]:
                rows.append(f"{row['config_id']},{row['objective']!r},1,"
                            f"{''.join(str(v) for v in row['status'])}")
            (out / "verify_configs.csv").write_text("\n".join(rows) + "\n")
        print(f"wrote {out / 'verify.json'}")
    return 0


def cmd_check_identifiability(args) -> int:
    client = ServiceClient(args.server)
    payload = {"feeder_text": _read_feeder(args.feeder)}
    buses = _parse_buses(args.buses)
    if buses is not None:
        payload["probed"] = buses
    result = client.post("/check-identifiability", payload)
    print(f"configurations: {result['n_configs']}")
    print(f"probed buses: {result['probed']}")
    print(f"distinct resistances: {result['distinct_resistances']}")
    print(f"verifiable: {result['verifiable']}")
    if result["confusable_pairs"]:
        print("confusable configuration pairs:", result["confusable_pairs"])
    if args.out:
        Path(args.out).write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_bench(args) -> int:
    client = ServiceClient(args.server)
    scenario = Scenario.from_file(args.scenario).to_dict()
    feeder_path = args.feeder or scenario.get("feeder")
    if not feeder_path:
        raise SystemExit("error: no feeder given (scenario.feeder or --feeder)")
    overrides = {
        "seed": args.seed, "runs": args.runs, "repeats": args.T,
        "meas_rel_accuracy": args.noise, "lam": getattr(args, "lambda"),
        "nu": args.nu, "rho": args.rho, "workers": args.workers,
    }
    for key, value in overrides.items():
        if value is not None:
            scenario[key] = value
    if args.mu is not None:
        if args.task in ("identify", "both"):
            scenario["mu_identify"] = args.mu
        if args.task in ("verify", "both"):
            scenario["mu_verify"] = args.mu
    payload = {
        "feeder_text": _read_feeder(feeder_path),
        "task": args.task,
        "scenario": scenario,
    }
    result = client.post("/bench", payload)
    for report in result["reports"]:
        agg = report["aggregates"]
        print(f"[{report['task']}] runs={agg['runs']} failures={agg['failures']} "
              f"mean_rmse={agg['mean_rmse']:.4g} mean_line_errors={agg['mean_line_errors']:.4g}")
        if args.out:
            records = [RunRecord(**row) for row in report["records"]]
            metrics = MetricsReport(task=report["task"], scenario=scenario, records=records)
            paths = export_report(metrics, args.out)
            print(f"  wrote {paths['runs']} and {paths['summary']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridprobe",
        description="Probe radial feeders with smart inverters; identify topology "
                    "or verify line statuses from voltage deviations.",
    )
    parser.add_argument("--server", default=None,
                        help="URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("simulate", help="synthesize probing data for a feeder")
    p.add_argument("--feeder", required=True)
    p.add_argument("--buses", default="candidate-leaves",
                   help="comma-separated bus ids or 'candidate-leaves'")
    p.add_argument("--delta", default="rated",
                   help="probing magnitudes: 'rated' or comma-separated values")
    p.add_argument("--design", default="paired", choices=["diagonal", "paired"])
    p.add_argument("--T", type=int, default=1, help="campaign repetitions")
    p.add_argument("--model", default="ac", choices=["linear", "ac"])
    p.add_argument("--noise", type=float, default=0.0001,
                   help="relative 3-sigma voltage accuracy")
    p.add_argument("--load-sigma", type=float, default=0.067)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--weighting", default="identity", choices=["identity", "blue"])
    p.add_argument("--standing-generation", action="store_true", default=True)
    p.add_argument("--no-standing-generation", dest="standing_generation",
                   action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset (.npz)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("identify", help="recover topology and resistances from data")
    p.add_argument("--data", required=True, help="dataset .npz from simulate")
    p.add_argument("--lambda", type=float, default=5e-3)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--tol-scale", type=float, default=1e-7)
    p.add_argument("--adaptive-rho", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_identify)

    p = sub.add_parser("verify", help="detect energized lines from data")
    p.add_argument("--feeder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="pgd", choices=["pgd", "exhaustive"])
    p.add_argument("--mu", type=float, default=2e-8)
    p.add_argument("--nu", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--rounding", default="top_n", choices=["top_n", "mst"])
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("check-identifiability",
                       help="report which configurations a probing placement can tell apart")
    p.add_argument("--feeder", required=True)
    p.add_argument("--buses", default="candidate-leaves")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_check_identifiability)

    p = sub.add_parser("bench", help="run a Monte-Carlo scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--task", default="both", choices=["identify", "verify", "both"])
    p.add_argument("--feeder", default=None, help="override the scenario feeder file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--lambda", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
