"""Experiment harness: multi-seed runs, ablation modes, held-out evaluation,
and metric export.

A run directory looks like:

    <out>/config.json              exact config used
    <out>/seed_<k>/metrics.jsonl   event log (deterministic, byte-stable)
    <out>/seed_<k>/checkpoint_final.npz
    <out>/eval_report.json         held-out suite results across seeds
    <out>/learning_curve.csv       written by export_metrics
    <out>/roughness_stages.csv     written by export_metrics
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import morphology as morphlib
from . import nets
from .config import ConfigError, ExperimentConfig
from .engine import Engine, EnvRecord, read_metrics, resolve_strategy
from .sim2d import generate_terrain
from .sim2d.terrain import EnvParams, param_bounds


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# held-out evaluation suite
# ---------------------------------------------------------------------------

def sample_eval_suite(cfg: ExperimentConfig):
    """Held-out environments drawn uniformly from the parameter bounds with a
    dedicated seed, disjoint from anything training can visit (checked later
    by exact intersection)."""
    lo, hi = param_bounds(cfg.env_kind, cfg.terrain)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.eval.seed, 0xE7A1]))
    suite = []
    for i in range(cfg.eval.n_envs):
        vec = rng.uniform(lo, hi)
        params = EnvParams.from_vector(cfg.env_kind, vec)
        seed = int(np.random.SeedSequence([cfg.eval.seed, 0x7E55, i]).generate_state(1)[0])
        suite.append((params, seed))
    return suite


def evaluate_on_suite(engine: Engine, suite):
    """Deterministic full-horizon return of the engine's current agent on each
    held-out environment."""
    horizon = engine.cfg.sim.episode_horizon
    results = []
    for params, seed in suite:
        field = generate_terrain(params, seed, engine.cfg.terrain)
        env = EnvRecord(params, seed, field, np.zeros_like(engine.env.theta_norm))
        results.append(engine.eval_episode_return(engine.morph, env, horizon))
    return results


# ---------------------------------------------------------------------------
# single-seed run
# ---------------------------------------------------------------------------

def checkpoint_loader_for(cfg: ExperimentConfig):
    """Loader for the fixed_*_final ablations: pulls the final design or
    terrain parameters out of a prior run's checkpoint."""
    path = cfg.ablation.source_checkpoint
    if path is None:
        return None
    arrays, meta = nets.load_checkpoint(path)

    def load(key):
        if key == "morphology":
            return morphlib.from_dict(meta["morphology"])
        if key == "theta":
            return np.asarray(meta["theta"])
        raise KeyError(key)

    return load


def run_single(cfg: ExperimentConfig, seed, run_dir):
    """Train one seed, checkpoint, and evaluate on the held-out suite."""
    os.makedirs(run_dir, exist_ok=True)
    strategy = resolve_strategy(cfg, checkpoint_loader_for(cfg))
    engine = Engine(cfg, seed, metrics_path=os.path.join(run_dir, "metrics.jsonl"),
                    strategy=strategy)
    engine.set_checkpoint_dir(run_dir)
    engine.train()
    engine.save_checkpoint(os.path.join(run_dir, "checkpoint_final.npz"))

    suite = sample_eval_suite(cfg)
    per_env = evaluate_on_suite(engine, suite)
    record = {
        "seed": int(seed),
        "per_env_return": [float(v) for v in per_env],
        "mean_return": float(np.mean(per_env)),
        "final_node_count": len(engine.morph),
        "morph_changes": engine.morph_changes,
        "env_changes": engine.env_changes,
        "coevo_steps": engine.coevo_steps,
        "training_thetas": [list(t[1:]) for t in engine.training_thetas],
    }
    with open(os.path.join(run_dir, "eval.json"), "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
    return record


def _run_single_entry(args):
    cfg_doc, seed, run_dir = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    return run_single(cfg, seed, run_dir)


# ---------------------------------------------------------------------------
# experiments and ablations
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig):
    """Run every seed, aggregate the held-out evaluation, write the report.

    Returns the output directory.
    """
    problems = cfg.validate()
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
    out = cfg.output_root()
    os.makedirs(out, exist_ok=True)
    cfg.to_json(os.path.join(out, "config.json"))

    jobs = [(cfg.to_dict(), seed, os.path.join(out, f"seed_{seed}")) for seed in cfg.seeds]
    records = []
    failures = []
    if cfg.max_workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.max_workers) as pool:
            futures = [pool.submit(_run_single_entry, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    records.append(fut.result())
                except Exception as exc:
                    failures.append({"seed": job[1], "error": f"{type(exc).__name__}: {exc}"})
    else:
        for job in jobs:
            try:
                records.append(_run_single_entry(job))
            except Exception as exc:  # partial seed failure: record and continue
                failures.append({"seed": job[1], "error": f"{type(exc).__name__}: {exc}"})

    suite = sample_eval_suite(cfg)
    suite_thetas = [[float(v) for v in params.vector()] for params, _ in suite]
    train_thetas = set()
    for rec in records:
        for t in rec["training_thetas"]:
            train_thetas.add(tuple(t))
    overlap = [t for t in suite_thetas if tuple(t) in train_thetas]

    all_values = [v for rec in records for v in rec["per_env_return"]]
    seed_means = [rec["mean_return"] for rec in records]
    report = {
        "env_kind": cfg.env_kind,
        "mode": cfg.ablation.mode,
        "budget": cfg.coevo.budget,
        "suite_thetas": suite_thetas,
        "held_out_overlap": overlap,
        "per_seed": [{k: rec[k] for k in
                      ("seed", "per_env_return", "mean_return", "final_node_count",
                       "morph_changes", "env_changes", "coevo_steps")}
                     for rec in records],
        "failures": failures,
        "summary": {
            "mean_return": float(np.mean(all_values)) if all_values else None,
            "std_return": float(np.std(all_values)) if all_values else None,
            "seed_mean_returns": seed_means,
        },
    }
    with open(os.path.join(out, "eval_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    return out


def run_ablation(mode, base_cfg: ExperimentConfig, source_checkpoint=None):
    """Run one ablation mode in its own subdirectory of the base output dir."""
    doc = base_cfg.to_dict()
    cfg = ExperimentConfig.from_dict(doc)
    cfg.ablation.mode = mode
    if source_checkpoint is not None:
        cfg.ablation.source_checkpoint = source_checkpoint
    cfg.output_dir = os.path.join(base_cfg.output_root(), mode)
    out = run_experiment(cfg)
    with open(os.path.join(out, "eval_report.json")) as fh:
        report = json.load(fh)
    report_path = os.path.join(out, "ablation_report.json")
    with open(report_path, "w") as fh:
        json.dump({"mode": mode, "summary": report["summary"],
                   "per_seed": report["per_seed"]}, fh, sort_keys=True, indent=2)
    return out


# ---------------------------------------------------------------------------
# checkpoint evaluation
# ---------------------------------------------------------------------------

def evaluate_checkpoint(checkpoint_path, cfg: ExperimentConfig = None, out_path=None):
    """Evaluate a saved agent on the held-out suite of its config."""
    arrays, meta = nets.load_checkpoint(checkpoint_path)
    if cfg is None:
        sibling = os.path.join(os.path.dirname(checkpoint_path), "..", "config.json")
        if os.path.exists(sibling):
            cfg = ExperimentConfig.from_json(sibling)
        else:
            cfg = ExperimentConfig.default(meta["env_kind"])
    engine = Engine(cfg, seed=meta.get("seed", 0))
    engine.load_policy_arrays(arrays)
    engine.morph = morphlib.from_dict(meta["morphology"])
    suite = sample_eval_suite(cfg)
    per_env = evaluate_on_suite(engine, suite)
    report = {
        "checkpoint": os.path.basename(checkpoint_path),
        "env_kind": cfg.env_kind,
        "per_env_return": [float(v) for v in per_env],
        "mean_return": float(np.mean(per_env)),
        "node_count": len(engine.morph),
    }
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
    return report


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _seed_dirs(run_dir):
    return sorted(d for d in os.listdir(run_dir)
                  if d.startswith("seed_") and os.path.isdir(os.path.join(run_dir, d)))


def export_metrics(run_dir):
    """Write learning_curve.csv and roughness_stages.csv from the JSONL logs."""
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise HarnessError(f"{run_dir}: no config.json; not a run directory")
    cfg = ExperimentConfig.from_json(cfg_path)
    budget = cfg.coevo.budget

    per_seed_curves = {}
    per_seed_rough = {}
    for d in _seed_dirs(run_dir):
        path = os.path.join(run_dir, d, "metrics.jsonl")
        if not os.path.exists(path):
            continue
        curve = {}
        rough = []
        for rec in read_metrics(path):
            if rec["event"] == "ppo_update" and rec.get("policy") == "control" \
                    and rec.get("mean_return") is not None:
                curve[rec["step"]] = rec["mean_return"]
            if rec["event"] == "sew_eval":
                rough.append((rec["step"], rec["roughness"]))
        per_seed_curves[d] = curve
        per_seed_rough[d] = rough

    curve_path = os.path.join(run_dir, "learning_curve.csv")
    steps = sorted({s for c in per_seed_curves.values() for s in c})
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_return", "std_return", "n_seeds"])
        for s in steps:
            vals = [c[s] for c in per_seed_curves.values() if s in c]
            w.writerow([s, f"{np.mean(vals):.6f}", f"{np.std(vals):.6f}", len(vals)])

    stage_path = os.path.join(run_dir, "roughness_stages.csv")
    n_stages = 10
    with open(stage_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "step_lo", "step_hi", "mean_roughness", "std_roughness", "n"])
        if budget > 0:
            edges = [budget * i // n_stages for i in range(n_stages + 1)]
            for k in range(n_stages):
                vals = [r for rough in per_seed_rough.values()
                        for (s, r) in rough if edges[k] <= s < edges[k + 1] or
                        (k == n_stages - 1 and s == budget)]
                if vals:
                    w.writerow([k, edges[k], edges[k + 1],
                                f"{np.mean(vals):.6f}", f"{np.std(vals):.6f}", len(vals)])
                else:
                    w.writerow([k, edges[k], edges[k + 1], "", "", 0])
    return curve_path, stage_path


def stage_roughness_by_seed(run_dir, n_stages=10):
    """Per-seed stage-mean roughness (helper for the curriculum-trend check)."""
    cfg = ExperimentConfig.from_json(os.path.join(run_dir, "config.json"))
    budget = cfg.coevo.budget
    edges = [budget * i // n_stages for i in range(n_stages + 1)]
    out = {}
    for d in _seed_dirs(run_dir):
        rough = [(rec["step"], rec["roughness"])
                 for rec in read_metrics(os.path.join(run_dir, d, "metrics.jsonl"))
                 if rec["event"] == "sew_eval"]
        means = []
        for k in range(n_stages):
            vals = [r for (s, r) in rough
                    if edges[k] <= s < edges[k + 1] or (k == n_stages - 1 and s == budget)]
            means.append(float(np.mean(vals)) if vals else np.nan)
        out[d] = means
    return out
