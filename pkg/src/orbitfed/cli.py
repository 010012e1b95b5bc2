"""Command-line entry point: optimize, simulate, analyze, sweep, summarize.

Every run directory gets a manifest with the fully resolved configuration,
and all outputs are deterministic functions of (scenario, plan, seeds): no
timestamps, sorted JSON keys, fixed float formatting via repr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__, cost
from .analysis import sample_variance, verify_bound_empirically
from .fl import ModelLayout, TrainConfig
from .optimizer import (
    DecisionVector,
    InfeasibleError,
    check_feasibility,
    grid_search_cluster,
    optimize,
    optimize_pinned_alpha,
)
from .scenario import (
    ScenarioError,
    apply_offload,
    prepare_data,
    satellite_pool,
    scenario_to_dict,
    validate_scenario,
)
from .sim import SimError, run_experiment

NOT_REACHED = "not reached"
SWEEP_SERIES = (
    ("alpha_0.0", "terrestrial_only", None),
    ("alpha_0.3", "fixed_ratio", 0.3),
    ("alpha_0.4", "fixed_ratio", 0.4),
    ("alpha_0.8", "fixed_ratio", 0.8),
    ("optimized", "optimized", None),
)


@dataclass(frozen=True)
class ExperimentPlan:
    scenario_path: str
    mode: str
    baseline: str = "optimized"
    alpha_fixed: float = None
    algorithm: str = "fedavg"
    prox_mu: float = 0.0
    rounds: int = 20
    seeds: tuple = (0,)
    target_acc: float = None
    out_dir: str = "orbitfed_run"
    single_step: bool = False
    persistent_battery: bool = False
    grid_oracle: bool = False


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# deterministic writers


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_metrics(path: Path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "clock_s", "accuracy", "loss", "tau_round_s"])
        for m in metrics:
            w.writerow([_fmt(m[k]) for k in
                        ("round", "clock_s", "accuracy", "loss", "tau_round_s")])


def _write_timeline(path: Path, events):
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# plan resolution


def _pinned_alpha(scenario, baseline: str, alpha_fixed):
    if baseline == "terrestrial_only":
        return {p.id: 0.0 for p in scenario.clients}
    if baseline == "full_offload":
        alpha = {p.id: p.max_offload_fraction for p in scenario.clients}
        for c in scenario.clusters:
            members = scenario.cluster_clients(c.id)
            total = sum(alpha[p.id] * p.size for p in members)
            if total > c.max_offload_samples > 0:
                scale = c.max_offload_samples / total
                for p in members:
                    alpha[p.id] *= scale
        return alpha
    if baseline == "fixed_ratio":
        if alpha_fixed is None:
            raise CliError("fixed_ratio baseline needs --alpha-fixed")
        cap = min(p.max_offload_fraction for p in scenario.clients)
        if not 0.0 <= alpha_fixed <= cap + 1e-12:
            raise CliError(
                f"--alpha-fixed {alpha_fixed} outside [0, {cap}] allowed by the scenario")
        return {p.id: float(alpha_fixed) for p in scenario.clients}
    raise CliError(f"unknown baseline {baseline!r}")


def _resolve_decision(scenario, baseline: str, alpha_fixed):
    """Decision vector for a series; baselines keep alpha pinned but still get
    frequency and bandwidth optimized."""
    if baseline == "optimized":
        res = optimize(scenario)
        return res.decision, {
            "trace": [list(t) for t in res.trace],
            "iterations": res.iterations,
            "feasible": res.report.ok,
        }
    alpha = _pinned_alpha(scenario, baseline, alpha_fixed)
    dec = optimize_pinned_alpha(scenario, alpha)
    report = check_feasibility(scenario, dec)
    return dec, {"trace": None, "iterations": 0, "feasible": report.ok}


def _resolve_layout(scenario, test_set) -> ModelLayout:
    cfg = scenario.data_config or {}
    m = cfg.get("model", {})
    kind = m.get("kind", "mlp")
    dim = test_set.feature_dim
    classes = int(cfg.get("classes", int(test_set.labels.max()) + 1))
    if kind == "logistic":
        layout = ModelLayout("logistic", (dim, classes))
    elif kind == "mlp":
        layout = ModelLayout("mlp", (dim, int(m.get("hidden", 32)), classes))
    else:
        raise CliError(f"unknown model kind {kind!r}")
    if layout.param_count != scenario.footprint.param_count:
        raise CliError(
            f"model.param_count in the scenario is {scenario.footprint.param_count} "
            f"but the {kind} layout has {layout.param_count}; align them"
        )
    return layout


def _train_config(train_raw: dict, plan: ExperimentPlan, seed: int) -> TrainConfig:
    mu = plan.prox_mu if plan.algorithm == "fedprox" else 0.0
    return TrainConfig(
        eta0=float(train_raw.get("eta0", 0.1)),
        lr_schedule=str(train_raw.get("lr_schedule", "inv")),
        momentum=float(train_raw.get("momentum", 0.9)),
        prox_mu=mu,
        batch_size=int(train_raw.get("batch_size", 32)),
        sat_batch_size=train_raw.get("sat_batch_size"),
        single_step=plan.single_step,
        seed=seed,
    )


def _workers(n_legs: int) -> int:
    env = os.environ.get("ORBITFED_THREADS", "").strip()
    if env:
        return max(1, min(int(env), n_legs))
    return max(1, min(4, os.cpu_count() or 1, n_legs))


def _first_crossing(metrics, target):
    for m in metrics:
        acc = m["accuracy"]
        if not math.isnan(acc) and acc >= target:
            return m["round"], m["clock_s"]
    return None, None


# ---------------------------------------------------------------------------
# mode implementations


def _prepare(raw: dict, seed: int):
    spec = dict(raw)
    spec["seed"] = seed
    scenario = validate_scenario(spec)
    if scenario.data_config is None:
        return scenario, None
    return prepare_data(scenario)


def _simulate_leg(raw, plan, decision, seed, leg_dir: Path, train_raw):
    scenario, test = _prepare(raw, seed)
    layout = _resolve_layout(scenario, test) if test is not None else None
    if layout is not None:
        scenario = apply_offload(scenario, decision.alpha)
    cfg = _train_config(train_raw, plan, seed)
    result = run_experiment(
        scenario, decision, plan.rounds, config=cfg, layout=layout,
        test_set=test, persistent_battery=plan.persistent_battery,
    )
    leg_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics(leg_dir / "metrics.csv", result.metrics)
    _write_timeline(leg_dir / "timeline.jsonl", result.timeline)
    rnd, clock = (None, None)
    if plan.target_acc is not None:
        rnd, clock = _first_crossing(result.metrics, plan.target_acc)
    return {
        "seed": seed,
        "rounds": plan.rounds,
        "final_accuracy": None if math.isnan(result.final_accuracy) else result.final_accuracy,
        "target_round": rnd,
        "target_clock_s": clock,
    }


def _run_series(raw, plan, series_name, baseline, alpha_fixed, out: Path, train_raw):
    base_scenario, _ = _prepare(raw, plan.seeds[0])
    decision, meta = _resolve_decision(base_scenario, baseline, alpha_fixed)
    series_dir = out / series_name
    series_dir.mkdir(parents=True, exist_ok=True)
    breakdown = cost.round_latency(base_scenario, decision)
    _write_json(series_dir / "decision.json", {
        "baseline": baseline,
        "alpha_fixed": alpha_fixed,
        "tau_round_s": breakdown.tau_round_s,
        "decision": decision.as_dict(),
        **meta,
    })
    legs = []
    for seed in plan.seeds:
        legs.append(_simulate_leg(
            raw, plan, decision, seed, series_dir / f"seed{seed}", train_raw))
    rows = [{"series": series_name, **leg} for leg in legs]
    return rows


def _series_summary(rows, target_acc):
    per_series = {}
    for row in rows:
        s = per_series.setdefault(row["series"], {"seeds": 0, "reached": 0, "clocks": []})
        s["seeds"] += 1
        if row["target_clock_s"] is not None:
            s["reached"] += 1
            s["clocks"].append(row["target_clock_s"])
    out = {}
    for name in sorted(per_series):
        s = per_series[name]
        out[name] = {
            "seeds": s["seeds"],
            "reached": s["reached"],
            "mean_clock_s": (sum(s["clocks"]) / len(s["clocks"])) if s["clocks"] else NOT_REACHED,
        }
    return {"target_accuracy": target_acc, "rows": rows, "per_series": out}


def _mode_optimize(raw, plan, out: Path):
    scenario, _ = _prepare(raw, plan.seeds[0])
    decision, meta = _resolve_decision(scenario, plan.baseline, plan.alpha_fixed)
    breakdown = cost.round_latency(scenario, decision)
    report = check_feasibility(scenario, decision)
    obj = {
        "baseline": plan.baseline,
        "tau_round_s": breakdown.tau_round_s,
        "decision": decision.as_dict(),
        "feasibility": report.as_dict(),
        "clusters": breakdown.as_dict()["clusters"],
        **meta,
    }
    if plan.grid_oracle:
        tau_grid, grid_dec = grid_search_cluster(scenario)
        obj["grid"] = {
            "tau_round_s": tau_grid,
            "decision": grid_dec.as_dict(),
            "gap_rel": (breakdown.tau_round_s - tau_grid) / tau_grid,
        }
    _write_json(out / "decision.json", obj)
    print(f"tau_round = {breakdown.tau_round_s:.6f} s  feasible = {report.ok}")
    print(f"wrote {out / 'decision.json'}")


def _mode_simulate(raw, plan, out: Path, train_raw):
    name = {
        "terrestrial_only": "alpha_0.0",
        "full_offload": "alpha_max",
        "fixed_ratio": f"alpha_{plan.alpha_fixed:g}" if plan.alpha_fixed is not None else "alpha_fixed",
        "optimized": "optimized",
    }[plan.baseline]
    rows = _run_series(raw, plan, name, plan.baseline, plan.alpha_fixed, out, train_raw)
    _write_json(out / "summary.json", _series_summary(rows, plan.target_acc))
    print(f"wrote {out / 'summary.json'} ({len(rows)} legs)")


def _mode_sweep(raw, plan, out: Path, train_raw):
    jobs = [(name, baseline, af) for name, baseline, af in SWEEP_SERIES]
    workers = _workers(len(jobs))
    rows = []
    if workers == 1:
        for name, baseline, af in jobs:
            rows.extend(_run_series(raw, plan, name, baseline, af, out, train_raw))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_series, raw, plan, name, baseline, af, out, train_raw)
                for name, baseline, af in jobs
            ]
            for fut in futures:
                rows.extend(fut.result())
    rows.sort(key=lambda r: (r["series"], r["seed"]))
    _write_json(out / "summary.json", _series_summary(rows, plan.target_acc))
    print(f"wrote {out / 'summary.json'} ({len(rows)} legs)")


def _mode_analyze(raw, plan, out: Path, train_raw):
    scenario, test = _prepare(raw, plan.seeds[0])
    if test is None:
        raise CliError("analyze mode needs a data section in the scenario")
    decision, _ = _resolve_decision(scenario, plan.baseline, plan.alpha_fixed)
    offloaded = apply_offload(scenario, decision.alpha)
    layout = _resolve_layout(offloaded, test)
    lam = int(train_raw["batch_size"]) if plan.single_step and "batch_size" in train_raw else None
    report = verify_bound_empirically(
        offloaded, layout, rounds=plan.rounds, seeds=len(plan.seeds),
        eta0=float(train_raw.get("eta0", 0.1)),
        lr_schedule=str(train_raw.get("lr_schedule", "inv")),
        lambda_client=lam, lambda_sat=lam,
    )
    v_client = {}
    for p in offloaded.clients:
        retained = p.dataset.retained
        v_client[str(p.id)] = sample_variance(retained) if len(retained) >= 2 else 0.0
    v_sat = {}
    for c in offloaded.clusters:
        pool = satellite_pool(offloaded, c.id)
        v_sat[str(c.id)] = sample_variance(pool) if len(pool) >= 2 else 0.0
    report["v_client"] = v_client
    report["v_sat"] = v_sat
    report["decision"] = decision.as_dict()
    _write_json(out / "bounds.json", report)
    print(f"bound = {report['bound_mean']:.6g}  measured = {report['lhs_mean']:.6g}  "
          f"holds = {report['holds_all']}")
    print(f"wrote {out / 'bounds.json'}")


def _mode_summarize(plan, out: Path):
    if plan.target_acc is None:
        raise CliError("summarize needs --target-acc")
    rows = []
    for path in sorted(out.rglob("metrics.csv")):
        with open(path) as fh:
            reader = csv.DictReader(fh)
            metrics = [
                {
                    "round": int(r["round"]),
                    "clock_s": float(r["clock_s"]),
                    "accuracy": float(r["accuracy"]) if r["accuracy"] else math.nan,
                }
                for r in reader
            ]
        rnd, clock = _first_crossing(metrics, plan.target_acc)
        rows.append({
            "series": str(path.parent.relative_to(out)),
            "target_round": rnd,
            "target_clock_s": clock if clock is not None else NOT_REACHED,
        })
    if not rows:
        raise CliError(f"no metrics.csv found under {out}")
    width = max(len(r["series"]) for r in rows)
    print(f"{'series':<{width}}  time_to_{plan.target_acc:g}")
    for r in rows:
        val = r["target_clock_s"]
        shown = f"{val:.3f} s" if isinstance(val, float) else val
        print(f"{r['series']:<{width}}  {shown}")
    _write_json(out / "summary.json", {"target_accuracy": plan.target_acc, "rows": rows})
    return 0


# ---------------------------------------------------------------------------


def run(plan: ExperimentPlan) -> int:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if plan.mode == "summarize":
        return _mode_summarize(plan, out)

    if not plan.scenario_path:
        raise CliError(f"mode {plan.mode} needs --scenario")
    with open(plan.scenario_path) as fh:
        raw = json.load(fh)
    scenario = validate_scenario(raw)
    train_raw = raw.get("train", {})
    _write_json(out / "manifest.json", {
        "version": __version__,
        "plan": {**asdict(plan), "seeds": list(plan.seeds)},
        "scenario": scenario_to_dict(scenario),
    })

    if plan.mode == "optimize":
        _mode_optimize(raw, plan, out)
    elif plan.mode == "simulate":
        _mode_simulate(raw, plan, out, train_raw)
    elif plan.mode == "sweep":
        _mode_sweep(raw, plan, out, train_raw)
    elif plan.mode == "analyze":
        _mode_analyze(raw, plan, out, train_raw)
    else:
        raise CliError(f"unknown mode {plan.mode!r}")
    return 0


def _parse_seeds(text: str):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part and not part.startswith("-"):
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise CliError(f"no seeds in {text!r}")
    return tuple(seeds)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="orbitfed",
        description="Optimize and simulate satellite-assisted federated training.",
    )
    p.add_argument("--scenario", default=None, help="scenario JSON file")
    p.add_argument("--mode", required=True,
                   choices=["optimize", "simulate", "analyze", "sweep", "summarize"])
    p.add_argument("--baseline", default="optimized",
                   choices=["optimized", "terrestrial_only", "full_offload", "fixed_ratio"])
    p.add_argument("--alpha-fixed", type=float, default=None,
                   help="offload ratio for the fixed_ratio baseline")
    p.add_argument("--algorithm", default="fedavg", choices=["fedavg", "fedprox"])
    p.add_argument("--prox-mu", type=float, default=0.0,
                   help="proximal coefficient for fedprox")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--seeds", default="0",
                   help="comma list and/or ranges, e.g. 0,1,2 or 0-9")
    p.add_argument("--target-acc", type=float, default=None)
    p.add_argument("--out", default="orbitfed_run", help="output directory")
    p.add_argument("--single-step", action="store_true",
                   help="one SGD step per round (analysis mode of the protocol)")
    p.add_argument("--persistent-battery", action="store_true",
                   help="carry one satellite battery per cluster across rounds")
    p.add_argument("--grid-oracle", action="store_true",
                   help="also run the exhaustive grid comparator (small instances)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = ExperimentPlan(
            scenario_path=args.scenario,
            mode=args.mode,
            baseline=args.baseline,
            alpha_fixed=args.alpha_fixed,
            algorithm=args.algorithm,
            prox_mu=args.prox_mu,
            rounds=args.rounds,
            seeds=_parse_seeds(args.seeds),
            target_acc=args.target_acc,
            out_dir=args.out,
            single_step=args.single_step,
            persistent_battery=args.persistent_battery,
            grid_oracle=args.grid_oracle,
        )
        return run(plan)
    except (ScenarioError, InfeasibleError, SimError, CliError, ValueError, OSError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ScenarioError):
            report["details"] = exc.errors
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
