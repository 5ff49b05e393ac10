"""Command-line entry point.

Subcommands: ``tune`` calibrates a temperature ladder and weight table and
saves them as a reusable artifact; ``sample`` produces one estimate plus a
reloadable run archive; ``se`` recomputes standard errors from such an
archive; ``bench`` runs a replication study writing a CSV of per-run rows
and a JSON summary; ``validate`` exercises the finite-state oracle suite.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, ScenarioConfig
from .error_estimation import estimate_se
from .exceptions import ModmcError
from .kernels import HmcSettings
from .models import Ladder, WeightTable
from .sampler import HmcKernel, ModularEstimate, ModularRunSpec, run_modular_mcmc
from .scenarios import Scenario, gaussian_mixture_scenario, sparse_regression_scenario
from .stationary import StochasticMatrix, write_csv
from .tempering import StRunSpec, load_tuning, run_modular_st, tune_ladder_and_weights


def replication_seed(master_seed: int, replication: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(99, int(replication)))
    return int(ss.generate_state(1)[0])


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    if cfg.kind == "gaussian-mixture":
        return gaussian_mixture_scenario(d=cfg.d, rho=cfg.rho, seed=cfg.seed)
    if cfg.kind == "sparse-regression":
        return sparse_regression_scenario(seed=cfg.seed)
    spec = importlib.util.spec_from_file_location("modmc_custom_scenario", cfg.module)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    scenario = module.build(cfg.seed)
    if not isinstance(scenario, Scenario):
        raise ModmcError(f"custom module {cfg.module} did not return a Scenario")
    return scenario


def _resolved_hmc(scenario: Scenario, config: RunConfig):
    sampler = config.sampler
    eps = sampler.eps if sampler.eps is not None else scenario.eps
    eps0 = sampler.eps0 if sampler.eps0 is not None else scenario.eps0
    n_leap = sampler.n_leapfrog if sampler.n_leapfrog is not None else scenario.n_leapfrog
    return eps, eps0, n_leap


def run_tuning(scenario: Scenario, config: RunConfig):
    eps, eps0, n_leap = _resolved_hmc(scenario, config)
    return tune_ladder_and_weights(
        scenario.model,
        scenario.base,
        scenario.partition,
        scenario.initial_points,
        eps=eps,
        eps0=eps0,
        n_leapfrog=n_leap,
        seed=config.seed,
        n_pilot=config.tuning.n_pilot,
        pilot_burn_in=config.tuning.pilot_burn_in,
        max_rounds=config.tuning.max_rounds,
        beta1=config.tuning.beta1,
        modes=scenario.modes,
        max_workers=config.threads,
    )


def run_single(
    scenario: Scenario,
    config: RunConfig,
    seed: int,
    ladder: Ladder | None,
    weights: WeightTable | None,
    store_states: bool = False,
) -> tuple[ModularEstimate, float]:
    eps, eps0, n_leap = _resolved_hmc(scenario, config)
    start = time.perf_counter()
    if config.sampler.algorithm == "modular-st":
        spec = StRunSpec(
            model=scenario.model,
            base=scenario.base,
            partition=scenario.partition,
            ladder=ladder,
            weights=weights,
            n_steps=config.sampler.n_steps,
            initial_points=scenario.initial_points,
            h=scenario.h,
            eps=eps,
            eps0=eps0,
            n_leapfrog=n_leap,
            seed=seed,
            burn_in=config.sampler.burn_in,
            snapshot_stride=config.sampler.snapshot_stride,
            store_states=store_states,
            max_workers=config.threads,
        )
        estimate = run_modular_st(spec)
    else:
        spec = ModularRunSpec(
            model=scenario.model,
            partition=scenario.partition,
            kernel=HmcKernel(HmcSettings(step_size=eps, n_leapfrog=n_leap)),
            n_steps=config.sampler.n_steps,
            initial_points=scenario.initial_points,
            h=scenario.h,
            seed=seed,
            burn_in=config.sampler.burn_in,
            snapshot_stride=config.sampler.snapshot_stride,
            store_states=store_states,
            max_workers=config.threads,
        )
        estimate = run_modular_mcmc(spec)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return estimate, wall_ms


def estimate_report(estimate: ModularEstimate, wall_ms: float, config: RunConfig, seed: int) -> dict:
    diags = estimate.diagnostics.values()
    report = {
        "scenario": config.scenario.__dict__ | {},
        "algorithm": config.sampler.algorithm,
        "seed": seed,
        "wall_ms": wall_ms,
        "n_temp_levels": estimate.n_levels,
        "pi_h": estimate.pi_h.tolist(),
        "compartment_probs": estimate.compartment_probs.tolist(),
        "compartment_means": estimate.compartment_means.tolist(),
        "p_hat": estimate.p_hat.tolist(),
        "q_hat": estimate.q_hat.entries.tolist(),
        "q_labels": list(estimate.q_hat.labels or ()),
        "divergences": int(sum(d.divergences for d in diags)),
        "leapfrog_steps": int(sum(d.leapfrog_steps for d in estimate.diagnostics.values())),
        "diagnostics": estimate.diagnostics_dict(),
    }
    if estimate.ladder is not None:
        report["betas"] = estimate.ladder.betas.tolist()
    return report


def save_estimate(estimate: ModularEstimate, path) -> None:
    """Archive the run: everything SE recomputation needs, one npz file."""
    payload = {
        "q_entries": estimate.q_hat.entries,
        "q_labels": np.array(estimate.q_hat.labels or (), dtype=object),
        "p_hat": estimate.p_hat,
        "compartment_probs": estimate.compartment_probs,
        "compartment_means": estimate.compartment_means,
        "pi_h": estimate.pi_h,
        "level": np.array(estimate.level),
        "n_levels": np.array(estimate.n_levels),
        "n_compartments": np.array(estimate.n_compartments),
        "log_w": estimate.weights.log_w,
        "seed": np.array(estimate.seed),
        "stride": np.array(estimate.snapshot_stride),
        "trace_cells": np.array(sorted(estimate.h_traces), dtype=int),
        "counter_cells": np.array(sorted(estimate.counters), dtype=int),
    }
    if estimate.ladder is not None:
        payload["betas"] = estimate.ladder.betas
    for cell, trace in estimate.h_traces.items():
        payload[f"trace_{cell}"] = trace
    for cell, data in estimate.counters.items():
        payload[f"snap_{cell}"] = data.snapshots
        payload[f"counts_{cell}"] = data.counts
        payload[f"dests_{cell}"] = np.array(data.dest_cells, dtype=int)
        payload[f"steps_{cell}"] = np.array(data.steps)
    np.savez_compressed(path, **payload)


def load_estimate(path) -> ModularEstimate:
    from .sampler import CellCounterData

    with np.load(path, allow_pickle=True) as archive:
        stride = int(archive["stride"])
        counters = {}
        for cell in archive["counter_cells"].tolist():
            counters[cell] = CellCounterData(
                source_cell=cell,
                dest_cells=tuple(archive[f"dests_{cell}"].tolist()),
                counts=archive[f"counts_{cell}"],
                snapshots=archive[f"snap_{cell}"],
                steps=int(archive[f"steps_{cell}"]),
                snapshot_stride=stride,
            )
        ladder = Ladder(archive["betas"]) if "betas" in archive else None
        return ModularEstimate(
            q_hat=StochasticMatrix(
                entries=archive["q_entries"],
                labels=tuple(str(s) for s in archive["q_labels"].tolist()) or None,
            ),
            p_hat=archive["p_hat"],
            compartment_probs=archive["compartment_probs"],
            compartment_means=archive["compartment_means"],
            pi_h=archive["pi_h"],
            level=int(archive["level"]),
            n_levels=int(archive["n_levels"]),
            n_compartments=int(archive["n_compartments"]),
            weights=WeightTable(archive["log_w"]),
            h_traces={c: archive[f"trace_{c}"] for c in archive["trace_cells"].tolist()},
            counters=counters,
            diagnostics={},
            seed=int(archive["seed"]),
            snapshot_stride=stride,
            ladder=ladder,
        )


CSV_FIXED_COLUMNS = [
    "scenario",
    "d",
    "rho",
    "replication",
    "seed",
    "pi_hat_h",
    "se",
]
CSV_TAIL_COLUMNS = ["n_temp_levels", "divergences", "wall_ms", "leapfrog_steps"]


def csv_header(n_compartments: int) -> str:
    probs = [f"pi_A{i + 1}" for i in range(n_compartments)]
    return ",".join(CSV_FIXED_COLUMNS + probs + CSV_TAIL_COLUMNS)


def csv_row(
    config: RunConfig,
    replication: int,
    seed: int,
    estimate: ModularEstimate,
    se_value: float,
    wall_ms: float,
) -> str:
    diags = estimate.diagnostics.values()
    cells = [
        config.scenario.kind,
        str(config.scenario.d if config.scenario.d is not None else ""),
        repr(config.scenario.rho) if config.scenario.rho is not None else "",
        str(replication),
        str(seed),
        repr(float(estimate.pi_h[0])),
        repr(float(se_value)),
    ]
    cells += [repr(float(p)) for p in estimate.compartment_probs]
    cells += [
        str(estimate.n_levels),
        str(sum(d.divergences for d in diags)),
        repr(float(wall_ms)),
        str(sum(d.leapfrog_steps for d in estimate.diagnostics.values())),
    ]
    return ",".join(cells)


def _prepare_ladder(scenario, config, out_dir: Path, artifact_override=None):
    """Load or compute the ladder and weights for a tempered run."""
    if config.sampler.algorithm != "modular-st":
        return None, None, None
    artifact = artifact_override or config.tuning.artifact
    if artifact:
        ladder, weights, _ = load_tuning(artifact)
        return ladder, weights, None
    report = run_tuning(scenario, config)
    path = out_dir / "tuning.json"
    report.save(path)
    return report.ladder, report.weights, report


def cmd_tune(config: RunConfig, out_dir: Path) -> int:
    scenario = build_scenario(config.scenario)
    report = run_tuning(scenario, config)
    path = out_dir / "tuning.json"
    report.save(path)
    print(
        f"tuned ladder: {len(report.ladder)} levels in {report.rounds} rounds -> {path}"
    )
    return 0


def cmd_sample(config: RunConfig, out_dir: Path, args) -> int:
    scenario = build_scenario(config.scenario)
    ladder, weights, _ = _prepare_ladder(scenario, config, out_dir, args.tuning)
    seed = replication_seed(config.seed, 0)
    estimate, wall_ms = run_single(
        scenario, config, seed, ladder, weights, store_states=args.dump_states
    )
    report = estimate_report(estimate, wall_ms, config, seed)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    save_estimate(estimate, out_dir / "run.npz")
    write_csv(estimate.q_hat, str(out_dir / "q_hat.csv"))
    if args.dump_states:
        for cell, states in estimate.states.items():
            np.savetxt(out_dir / f"states_cell_{cell}.csv", states, delimiter=",")
    print(
        f"pi_h = {estimate.pi_h.tolist()}  compartment probs = "
        f"{estimate.compartment_probs.tolist()}  ({wall_ms:.0f} ms) -> {out_dir}"
    )
    return 0


def cmd_se(config: RunConfig, out_dir: Path, args) -> int:
    run_path = Path(args.run)
    if run_path.is_dir():
        run_path = run_path / "run.npz"
    estimate = load_estimate(run_path)
    report = estimate_se(
        estimate,
        s=config.se.block_size,
        n_replicates=config.se.replicates,
        seed=config.seed if args.seed is not None else None,
    )
    (out_dir / "se.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(
        f"se(pi_h) = {report.se_pi_h.tolist()}  "
        f"se(compartment probs) = {report.se_compartment_probs.tolist()} -> {out_dir / 'se.json'}"
    )
    return 0


def cmd_bench(config: RunConfig, out_dir: Path) -> int:
    scenario = build_scenario(config.scenario)
    ladder, weights, _ = _prepare_ladder(scenario, config, out_dir)
    rows = []
    failures = []
    reports = []
    n_comp = scenario.partition.n_compartments
    for rep in range(config.replications):
        seed = replication_seed(config.seed, rep)
        try:
            estimate, wall_ms = run_single(scenario, config, seed, ladder, weights)
            se_report = estimate_se(
                estimate, s=config.se.block_size, n_replicates=config.se.replicates
            )
            rows.append(csv_row(config, rep, seed, estimate, se_report.se_pi_h[0], wall_ms))
            reports.append(
                {
                    "replication": rep,
                    "seed": seed,
                    "pi_h": estimate.pi_h.tolist(),
                    "compartment_probs": estimate.compartment_probs.tolist(),
                    "se_pi_h": se_report.se_pi_h.tolist(),
                    "se_compartment_probs": se_report.se_compartment_probs.tolist(),
                    "n_temp_levels": estimate.n_levels,
                    "wall_ms": wall_ms,
                }
            )
            print(
                f"replication {rep}: pi_h={estimate.pi_h[0]:.4f} "
                f"se={se_report.se_pi_h[0]:.4f} probs={np.round(estimate.compartment_probs, 4).tolist()}"
            )
        except ModmcError as exc:
            failures.append({"replication": rep, "seed": seed, "error": str(exc)})
            print(f"replication {rep} failed: {exc}", file=sys.stderr)
    csv_path = out_dir / "replications.csv"
    with open(csv_path, "w") as fh:
        fh.write(csv_header(n_comp) + "\n")
        for row in rows:
            fh.write(row + "\n")
    pi_values = np.array([r["pi_h"][0] for r in reports]) if reports else np.array([])
    prob_values = (
        np.array([r["compartment_probs"] for r in reports]) if reports else np.zeros((0, n_comp))
    )
    summary = {
        "replications": config.replications,
        "completed": len(reports),
        "mean_pi_hat_h": float(pi_values.mean()) if pi_values.size else None,
        "sd_pi_hat_h": float(pi_values.std(ddof=1)) if pi_values.size > 1 else None,
        "mean_compartment_probs": prob_values.mean(axis=0).tolist() if reports else None,
        "sd_compartment_probs": (
            prob_values.std(axis=0, ddof=1).tolist() if len(reports) > 1 else None
        ),
        "rows": reports,
        "failures": failures,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"wrote {csv_path} and summary.json ({len(rows)} rows, {len(failures)} failures)")
    return 0 if rows else 1


def cmd_validate(args) -> int:
    from .validate import run_validation_suite

    return run_validation_suite(quick=not args.full)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modmc",
        description="Compartment-constrained parallel MCMC with eigenvector recombination",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes")
        p.add_argument("--out", default=None, help="output directory")

    p_tune = sub.add_parser("tune", help="calibrate the temperature ladder and weights")
    add_common(p_tune)

    p_sample = sub.add_parser("sample", help="run one estimate")
    add_common(p_sample)
    p_sample.add_argument("--tuning", default=None, help="reuse a saved tuning artifact")
    p_sample.add_argument(
        "--dump-states", action="store_true", help="also write per-chain state traces"
    )

    p_se = sub.add_parser("se", help="recompute standard errors from a saved run")
    add_common(p_se)
    p_se.add_argument("--run", required=True, help="run archive (.npz) or its directory")

    p_bench = sub.add_parser("bench", help="replication study")
    add_common(p_bench)

    p_val = sub.add_parser("validate", help="run the finite-state oracle suite")
    p_val.add_argument("--full", action="store_true", help="acceptance-scale runs")

    args = parser.parse_args(argv)

    if args.command == "validate":
        return cmd_validate(args)

    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = RunConfig.from_dict(config.to_dict() | {"seed": args.seed})
    if args.threads is not None:
        config = RunConfig.from_dict(config.to_dict() | {"threads": args.threads})
    out_dir = Path(args.out or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "tune":
        return cmd_tune(config, out_dir)
    if args.command == "sample":
        return cmd_sample(config, out_dir, args)
    if args.command == "se":
        return cmd_se(config, out_dir, args)
    if args.command == "bench":
        return cmd_bench(config, out_dir)
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
