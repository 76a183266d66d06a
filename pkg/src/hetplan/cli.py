"""Command-line entry point: plan, simulate, reschedule, sweep, gen-trace.

Exit codes: 0 ok, 2 input/validation error, 3 infeasible.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io, report
from .core import validate_cluster
from .errors import InsufficientMemory, InvalidPlan, NoSurvivingPhasePair, PlanningError
from .fixtures import generate_trace, trace_from_profile
from .parallel import Phase
from .search import TabuParams, lightweight_reschedule, tabu_search
from .simulate import attainment_at_scale, simulate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


def _parse_sweep(text: str) -> list[float]:
    """a:b:step inclusive sweep of SLO scales."""
    a, b, step = (float(v) for v in text.split(":"))
    if step <= 0 or b < a:
        raise ValueError(f"bad sweep spec {text!r}")
    out = []
    v = a
    while v <= b + 1e-12:
        out.append(round(v, 12))
        v += step
    return out


def _fail(msg, code=EXIT_INPUT):
    print(msg, file=sys.stderr)
    return code


def _load_cluster_checked(path):
    cluster = io.load_cluster(path)
    violations = validate_cluster(cluster)
    if violations:
        print(
            json.dumps(
                {"violations": [{"code": v.code, "detail": list(v.detail)} for v in violations]},
                indent=2,
                sort_keys=True,
            )
        )
        raise SystemExit(EXIT_INPUT)
    return cluster


def _tabu_from_args(cfg, args) -> TabuParams:
    t = cfg["tabu"]
    return TabuParams(
        n_step=args.steps if args.steps is not None else t.n_step,
        n_nghb=args.neighbors if args.neighbors is not None else t.n_nghb,
        n_mem=args.tabu_mem if args.tabu_mem is not None else t.n_mem,
        rng_seed=args.seed if args.seed is not None else t.rng_seed,
    )


def _workload_from_args(args):
    if args.profile:
        return io.load_profile(args.profile)
    trace = io.load_trace(args.trace)
    from .core import profile_from_trace

    end = trace.requests[-1].arrival_time + 1e-9
    return profile_from_trace(trace, (0.0, end))


def cmd_plan(args) -> int:
    cluster = _load_cluster_checked(args.cluster)
    model = io.load_model(args.model)
    workload = _workload_from_args(args)
    slo = io.load_slo(args.slo)
    cfg = io.load_planner_config(args.config)
    if args.kv_bits is not None:
        from .costs import KvPrecision

        cfg["precision"] = KvPrecision(bits=args.kv_bits)
    tp = _tabu_from_args(cfg, args)
    mode = args.mode or cfg["mode"]

    result = tabu_search(
        cluster, model, workload, slo,
        prec=cfg["precision"], params=cfg["cost"], tp=tp, mode=mode,
    )

    # final plan re-scored with the simulator on a workload-shaped trace
    sim_trace = trace_from_profile(workload, n_requests=args.sim_requests, seed=tp.rng_seed)
    sim = simulate(
        result.plan, sim_trace, slo, cfg["cost"],
        seed=tp.rng_seed, model=model, cluster=cluster,
    )
    result.simulated_score = sim.attainment_e2e

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    provenance = {
        "seed": tp.rng_seed,
        "mode": mode,
        "best_score": result.best_score,
        "simulated_attainment_e2e": result.simulated_score,
        "candidates_scored": result.candidates_scored,
        "lower_level_evals": result.lower_level_evals,
        "n_prefill": len(result.plan.prefills),
        "n_decode": len(result.plan.decodes),
        "gpu_hourly_price": sum(
            cluster.gpu(g).gpu_type.price
            for r in result.plan.replicas
            for g in r.group.gpu_ids
        ),
    }
    io.save_plan(result.plan, outdir / "plan.json", provenance)
    report.write_convergence_csv(result.score_trace, outdir / "convergence.csv")
    report.plot_convergence(result.score_trace, outdir / "convergence.png")
    print(f"plan written to {outdir / 'plan.json'} "
          f"(score={result.best_score:.4f}, simulated={result.simulated_score:.4f})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cluster = _load_cluster_checked(args.cluster)
    model = io.load_model(args.model)
    plan = io.load_plan(args.plan)
    slo = io.load_slo(args.slo)
    cfg = io.load_planner_config(args.config)
    trace = io.load_trace(args.trace)
    if len(trace) == 0:
        return _fail("trace is empty")
    try:
        plan.validate()
    except InvalidPlan as e:
        return _fail(f"invalid plan: {e}")

    seed = args.seed if args.seed is not None else 0
    result = simulate(plan, trace, slo, cfg["cost"], seed=seed, model=model, cluster=cluster)
    scales = _parse_sweep(args.slo_scale_sweep)
    rows = attainment_at_scale(result, slo, scales)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    metrics = {
        "attainment_ttft": result.attainment_ttft,
        "attainment_tpot": result.attainment_tpot,
        "attainment_e2e": result.attainment_e2e,
        "throughput_rps": result.throughput_rps,
        "throughput_tps": result.throughput_tps,
        "n_arrived": result.n_arrived,
        "n_completed": result.n_completed,
        "n_in_flight": result.n_in_flight,
        "seed": seed,
    }
    (outdir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    report.write_requests_csv(result, outdir / "requests.csv")
    report.write_curve_csv(rows, outdir / "attainment_curve.csv")
    report.plot_attainment_curve(rows, outdir / "attainment_curve.png")
    print(f"metrics written to {outdir / 'metrics.json'} "
          f"(attainment_e2e={result.attainment_e2e:.4f})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    # attainment-vs-scale curve only; shares the simulate machinery
    return cmd_simulate(args)


def cmd_reschedule(args) -> int:
    cluster = _load_cluster_checked(args.cluster)
    model = io.load_model(args.model)
    plan = io.load_plan(args.plan)
    slo = io.load_slo(args.slo)
    cfg = io.load_planner_config(args.config)
    event = json.loads(Path(args.event).read_text())
    tp = _tabu_from_args(cfg, args)

    removed: set[int] = set()
    if event["type"] == "gpus_offline":
        removed = set(event["gpu_ids"])
        workload = _workload_from_args(args)
    elif event["type"] == "workload_shift":
        from .core import WorkloadProfile

        p = event["profile"]
        workload = WorkloadProfile(
            arrival_rate=p["arrival_rate"],
            mean_input_len=p["mean_input_len"],
            mean_output_len=p["mean_output_len"],
        )
    else:
        return _fail(f"unknown event type {event['type']!r}")

    result = lightweight_reschedule(
        plan, cluster, model, workload, slo,
        prec=cfg["precision"], params=cfg["cost"], tp=tp, removed_gpu_ids=removed,
    )

    old_by_ids = {tuple(sorted(r.group.gpu_ids)): r for r in plan.replicas}
    new_by_ids = {tuple(sorted(r.group.gpu_ids)): r for r in result.plan.replicas}
    flips = []
    for ids, new_r in new_by_ids.items():
        old_r = old_by_ids.get(ids)
        if old_r and old_r.group.phase is not new_r.group.phase:
            flips.append({
                "gpu_ids": list(ids),
                "from": old_r.group.phase.value,
                "to": new_r.group.phase.value,
            })
    removed_groups = [
        list(ids) for ids in old_by_ids if ids not in new_by_ids
    ]
    diff = {
        "groups_removed": removed_groups,
        "phase_flips": flips,
        "membership_changes": 0,  # lightweight rescheduling never repacks groups
        "candidates_scored": result.candidates_scored,
        "lower_level_evals": result.lower_level_evals,
        "score": result.best_score,
    }

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    provenance = {
        "seed": tp.rng_seed,
        "mode": "lightweight",
        "best_score": result.best_score,
        "candidates_scored": result.candidates_scored,
        "lower_level_evals": result.lower_level_evals,
    }
    io.save_plan(result.plan, outdir / "plan.json", provenance)
    (outdir / "diff.json").write_text(json.dumps(diff, indent=2, sort_keys=True) + "\n")
    print(f"rescheduled plan written to {outdir / 'plan.json'} "
          f"({len(flips)} phase flips, {len(removed_groups)} groups removed)")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    trace = generate_trace(
        rate=args.rate,
        mean_input_len=args.mean_input,
        mean_output_len=args.mean_output,
        n_requests=args.n_requests,
        seed=args.seed if args.seed is not None else 0,
    )
    io.save_trace(trace, args.out)
    print(f"trace with {len(trace)} requests written to {args.out}")
    return EXIT_OK


def _add_common_plan_args(p):
    p.add_argument("--cluster", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--slo", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--outdir", default="out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetplan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="derive a deployment plan for a cluster and workload")
    _add_common_plan_args(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--trace", help="request trace (JSON-lines)")
    g.add_argument("--profile", help="workload profile JSON")
    p.add_argument("--mode", choices=["analytic", "simulated"], default=None)
    p.add_argument("--kv-bits", type=int, choices=[16, 8, 4, 2], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--neighbors", type=int, default=None)
    p.add_argument("--tabu-mem", type=int, default=None)
    p.add_argument("--sim-requests", type=int, default=300)
    p.set_defaults(func=cmd_plan)

    for name, help_ in (
        ("simulate", "simulate a plan over a trace"),
        ("sweep", "attainment-vs-SLO-scale sweep for a plan over a trace"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common_plan_args(p)
        p.add_argument("--plan", required=True)
        p.add_argument("--trace", required=True)
        p.add_argument("--slo-scale-sweep", default="0.5:3.0:0.25")
        p.set_defaults(func=cmd_simulate if name == "simulate" else cmd_sweep)

    p = sub.add_parser("reschedule", help="lightweight phase-flip rescheduling")
    _add_common_plan_args(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--event", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--trace")
    g.add_argument("--profile")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--neighbors", type=int, default=None)
    p.add_argument("--tabu-mem", type=int, default=None)
    p.set_defaults(func=cmd_reschedule)

    p = sub.add_parser("gen-trace", help="generate a synthetic Poisson trace")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--mean-input", type=float, required=True)
    p.add_argument("--mean-output", type=float, required=True)
    p.add_argument("--n-requests", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except (NoSurvivingPhasePair, InsufficientMemory) as e:
        return _fail(str(e), EXIT_INFEASIBLE)
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError, PlanningError) as e:
        return _fail(f"{type(e).__name__}: {e}", EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
