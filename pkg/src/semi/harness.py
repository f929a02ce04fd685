"""Experiment workflows built on the trainer: single runs, seed sweeps,
plot-data export, trajectory replay, and the gradient-check suite.

Every workflow works purely through files in run directories, so each
directory (config.txt, metrics.jsonl, checkpoints, summary.json, and
optionally trajectories.jsonl) is a self-contained record of its run.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .alignment import (
    AlignmentConfig,
    EncoderBank,
    MultiObs,
    NegativePool,
    alignment_loss_graph,
    perceptual_incongruity_batch,
)
from .checkpoint import load_checkpoint
from .config import RunConfig, build, describe, make_config
from .envs import make_env
from .metrics import read_jsonl, write_json
from .net import value_and_grad
from .policy import ActionSpace, PolicyNet, TargetPolicy, action_incongruity_batch
from .ppo import PpoConfig, ppo_loss_graph
from .rewards import ForwardModel, RndPair, encode_actions, forward_model_loss_graph, rnd_loss_graph
from .trainer import Trainer

GRADCHECK_EPS = 1e-5
GRADCHECK_TOL = 1e-4
REPLAY_TOL = 1e-9


# -- single run ----------------------------------------------------------


def run(cfg: RunConfig, out_dir=None) -> dict:
    """Execute one training run into ``out_dir`` (default: cfg.out).

    The directory receives a canonical config echo before training
    starts, then metrics, checkpoints, and a summary as the run
    progresses. Returns the summary dict.
    """
    out_dir = Path(out_dir if out_dir is not None else cfg.out or "")
    if str(out_dir) in ("", "."):
        raise ValueError("an output directory is required (set 'out')")
    cfg = replace(cfg, out=str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(describe(cfg), encoding="utf-8")
    train_cfg, reward_spec, ppo_cfg, align_cfg = build(cfg)
    trainer = Trainer(train_cfg, reward_spec, ppo_cfg, align_cfg, out_dir=out_dir)
    return trainer.run()


# -- seed sweep ----------------------------------------------------------


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def sweep(cfg: RunConfig, seeds, out_dir) -> dict:
    """Run ``cfg`` once per seed under ``out_dir`` and aggregate curves.

    Each seed trains into ``<out_dir>/seed_<s>``. A failing seed is
    reported as a warning and skipped; aggregation proceeds over the
    survivors. Writes ``aggregate.csv`` (one row per metric and step,
    with per-seed columns and their median) and ``aggregate_summary.json``
    (median and quartiles of each numeric summary field).
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries: dict[int, dict] = {}
    failures: dict[int, str] = {}
    for seed in seeds:
        sub = out_dir / f"seed_{seed}"
        try:
            summaries[seed] = run(replace(cfg, seed=seed), sub)
        except Exception as exc:  # noqa: BLE001 - a bad seed must not kill the sweep
            failures[seed] = f"{type(exc).__name__}: {exc}"
            print(f"warning: seed {seed} failed: {failures[seed]}", file=sys.stderr)
    survivors = [s for s in seeds if s in summaries]
    if not survivors:
        raise RuntimeError("all seeds failed; nothing to aggregate")

    curves = {s: read_jsonl(out_dir / f"seed_{s}" / "metrics.jsonl") for s in survivors}
    first = curves[survivors[0]]
    metric_names = [
        k for k in first[0]
        if k not in ("step", "phase") and _is_number(first[0][k])
    ]
    rows = min(len(curves[s]) for s in survivors)
    csv_path = out_dir / "aggregate.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "step"] + [f"seed_{s}" for s in survivors] + ["median"])
        for metric in metric_names:
            for i in range(rows):
                values = [curves[s][i].get(metric) for s in survivors]
                present = [v for v in values if _is_number(v)]
                writer.writerow(
                    [metric, first[i]["step"]]
                    + [v if _is_number(v) else "" for v in values]
                    + [float(np.median(present)) if present else ""]
                )

    agg: dict[str, dict] = {}
    for key in summaries[survivors[0]]:
        per_seed = {str(s): summaries[s].get(key) for s in survivors}
        values = [v for v in per_seed.values() if _is_number(v)]
        if not values and not all(v is None for v in per_seed.values()):
            continue  # non-numeric field (env name etc.)
        agg[key] = {
            "per_seed": per_seed,
            "median": float(np.median(values)) if values else None,
            "quartiles": (
                [float(q) for q in np.percentile(values, [25, 75])] if values else None
            ),
        }
    summary_path = out_dir / "aggregate_summary.json"
    write_json(summary_path, {
        "seeds": seeds,
        "survivors": survivors,
        "failures": {str(s): msg for s, msg in failures.items()},
        "metrics": agg,
    })
    return {
        "aggregate_csv": str(csv_path),
        "aggregate_summary": str(summary_path),
        "summaries": summaries,
        "failures": failures,
    }


# -- plot-data export ----------------------------------------------------


def export_plotdata(run_dirs, metric: str, out_path) -> str:
    """Collect one metric across runs into a step-aligned CSV.

    Columns are the step grid (union over runs, sorted), one column per
    run (directory basename), and the per-step median over the runs that
    recorded that step; cells for steps a run never reached stay empty.
    An unknown metric raises ValueError listing what is available.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ValueError("export needs at least one run directory")
    series: list[tuple[str, dict]] = []
    names_seen: set[str] = set()
    for d in run_dirs:
        records = read_jsonl(d / "metrics.jsonl")
        if not records:
            raise ValueError(f"no metrics records in {d}")
        available = sorted(k for k in records[0] if k != "step")
        if metric not in records[0]:
            raise ValueError(
                f"unknown metric {metric!r} in {d}; available: " + ", ".join(available)
            )
        name = d.name
        suffix = 2
        while name in names_seen:
            name = f"{d.name}_{suffix}"
            suffix += 1
        names_seen.add(name)
        series.append((name, {r["step"]: r[metric] for r in records}))

    grid = sorted({step for _, by_step in series for step in by_step})
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [name for name, _ in series] + ["median"])
        for step in grid:
            values = [by_step.get(step) for _, by_step in series]
            present = [v for v in values if _is_number(v)]
            writer.writerow(
                [step]
                + [v if _is_number(v) else "" for v in values]
                + [float(np.median(present)) if present else ""]
            )
    return str(out_path)


# -- trajectory replay ---------------------------------------------------


def replay(run_dir, tol: float = REPLAY_TOL) -> dict:
    """Recompute the incongruity rewards of a dumped run and compare.

    Walks trajectories.jsonl in recorded order, reloading the phase-start
    checkpoint at each phase boundary and rebuilding the negative pool
    from the dumped observations, so every reward is recomputed against
    exactly the training-time state. Action incongruity is checked only
    for runs that scored the post-step observation (the default); the
    pre-step variant would need observations the dump does not carry.
    """
    run_dir = Path(run_dir)
    traj_path = run_dir / "trajectories.jsonl"
    if not traj_path.exists():
        raise ValueError(f"{run_dir} has no trajectories.jsonl (run with dump_trajectories)")
    cfg = make_config(file_text=(run_dir / "config.txt").read_text(encoding="utf-8"))
    train_cfg, reward_spec, _, align_cfg = build(cfg)
    env = make_env(cfg.env, seed=cfg.seed)
    widths = env.spec.modality_widths

    rng = np.random.default_rng(0)  # placeholder init; checkpoints overwrite
    bank = EncoderBank(widths, align_cfg, rng)
    pool = NegativePool(align_cfg.pool_size, align_cfg.pool_warmup) if reward_spec.has("semi_p") else None
    target = None
    if reward_spec.has("semi_a"):
        policy = PolicyNet(align_cfg.feature_dim, env.spec.action_space, rng=rng)
        target = TargetPolicy(policy, train_cfg.copy_period)
    check_ra = target is not None and train_cfg.ra_timestep == "next"

    state = {"max_p": 0.0, "max_a": 0.0, "steps": 0}

    def flush(group):
        streams = [
            np.stack([np.asarray(rec["obs"][m], dtype=np.float64) for rec in group])
            for m in range(len(widths))
        ]
        feats = bank.encode_batch(streams)
        if pool is not None:
            r_p = perceptual_incongruity_batch(bank, feats, pool, align_cfg)
            for i, rec in enumerate(group):
                got = 0.0 if r_p is None else float(r_p[i])
                state["max_p"] = max(state["max_p"], abs(got - rec["r_p"]))
        if check_ra:
            r_a = action_incongruity_batch(target, feats)
            for i, rec in enumerate(group):
                state["max_a"] = max(state["max_a"], abs(float(r_a[i]) - rec["r_a"]))
        if pool is not None:
            for rec in group:
                pool.push(MultiObs(tuple(rec["obs"])))
        state["steps"] += len(group)

    current_phase = None
    group: list[dict] = []
    with open(traj_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["phase"] != current_phase:
                if group:
                    flush(group)
                    group = []
                current_phase = rec["phase"]
                sections, _ = load_checkpoint(
                    str(run_dir / "checkpoints" / f"phase_{current_phase:04d}"))
                bank.params = sections["encoders"]
                bank.version += 1
                if target is not None:
                    target.net.params = sections["target"]
            elif group and rec["t"] != group[0]["t"]:
                flush(group)
                group = []
            group.append(rec)
    if group:
        flush(group)

    ok = state["max_p"] <= tol and state["max_a"] <= tol
    return {
        "steps": state["steps"],
        "max_err_p": state["max_p"],
        "max_err_a": state["max_a"],
        "ra_checked": check_ra,
        "tolerance": tol,
        "ok": ok,
    }


# -- gradient-check suite ------------------------------------------------


def _jitter(params, rng, scale: float = 0.1):
    """Shift every parameter off its init so no coordinate sits at a kink."""
    flat = params.flatten()
    params.unflatten(flat + rng.normal(0.0, scale, size=flat.shape))
    return params


def _case_alignment(rng):
    cfg = AlignmentConfig(feature_dim=5, encoder_hidden=(8,))
    bank = EncoderBank((6, 4), cfg, rng)
    _jitter(bank.params, rng)
    streams = [rng.normal(size=(3, 6)), rng.normal(size=(3, 4))]

    def loss_fn(ps, nodes):
        bank.params = ps
        return alignment_loss_graph(bank, streams, cfg, nodes)

    return loss_fn, bank.params


def _ppo_case(kind, rng):
    space = ActionSpace(kind, 4)
    policy = PolicyNet(5, space, hidden=(8, 8), rng=rng)
    _jitter(policy.params, rng)
    batch = 6
    z_masked = rng.normal(size=(batch, 5))
    z_full = rng.normal(size=(batch, 5))
    if kind == "discrete":
        actions = rng.integers(space.n, size=batch)
    else:
        actions = rng.normal(size=(batch, space.n))
    log_probs_old = rng.normal(scale=0.3, size=batch)
    advantages = rng.normal(size=batch)
    returns = rng.normal(size=batch)
    cfg = PpoConfig(steps_per_phase=batch, num_envs=1, minibatches=1)

    def loss_fn(ps, nodes):
        bound = PolicyNet(5, space, hidden=(8, 8), params=ps)
        loss, _ = ppo_loss_graph(bound, z_masked, z_full, actions, log_probs_old,
                                 advantages, returns, cfg, nodes)
        return loss

    return loss_fn, policy.params


def _case_ppo_discrete(rng):
    return _ppo_case("discrete", rng)


def _case_ppo_continuous(rng):
    return _ppo_case("continuous", rng)


def _case_curiosity(rng):
    model = ForwardModel(5, 3, rng, hidden=(8,))
    _jitter(model.params, rng)
    z = rng.normal(size=(4, 5))
    a_enc = encode_actions(rng.integers(3, size=4), "discrete", 3)
    z_next = rng.normal(size=(4, 5))

    def loss_fn(ps, nodes):
        model.params = ps
        return forward_model_loss_graph(model, z, a_enc, z_next, nodes)

    return loss_fn, model.params


def _case_rnd(rng):
    pair = RndPair(6, rng, embed_dim=5, hidden=(8,))
    _jitter(pair.predictor_params, rng)
    x = rng.normal(size=(4, 6))

    def loss_fn(ps, nodes):
        pair.predictor_params = ps
        return rnd_loss_graph(pair, x, nodes)

    return loss_fn, pair.predictor_params


LOSS_CASES = {
    "alignment_contrastive": _case_alignment,
    "ppo_discrete": _case_ppo_discrete,
    "ppo_continuous": _case_ppo_continuous,
    "curiosity_forward": _case_curiosity,
    "rnd_predictor": _case_rnd,
}


def _grad_check_named(loss_fn, params, eps: float):
    """Like the plain gradient check, but also names the worst coordinate."""
    _, grads = value_and_grad(loss_fn, params)
    analytic = grads.flatten()
    flat = params.flatten()
    numeric = np.zeros_like(flat)

    def eval_at(vec):
        probe = params.copy()
        probe.unflatten(vec)
        nodes: dict[str, ad.Node] = {}
        return float(loss_fn(probe, nodes).value)

    for i in range(flat.size):
        v_plus = flat.copy()
        v_plus[i] += eps
        v_minus = flat.copy()
        v_minus[i] -= eps
        numeric[i] = (eval_at(v_plus) - eval_at(v_minus)) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return 0.0, "<no parameters>"
    worst = int(np.argmax(rel))
    offset = 0
    label = "?"
    for name, arr in params.items():
        if worst < offset + arr.size:
            label = f"{name}[{worst - offset}]"
            break
        offset += arr.size
    return float(rel[worst]), label


def gradcheck_suite(eps: float = GRADCHECK_EPS, tol: float = GRADCHECK_TOL,
                    seed: int = 0, cases_per_loss: int = 3) -> dict:
    """Finite-difference check of every registered loss graph.

    Each loss runs on ``cases_per_loss`` randomized micro-cases with
    jittered parameters; the report carries the worst relative error per
    loss and the parameter coordinate it occurred at.
    """
    report = []
    for index, (name, builder) in enumerate(LOSS_CASES.items()):
        worst_err = 0.0
        worst_label = "<none>"
        total = 0
        for case in range(cases_per_loss):
            rng = np.random.default_rng([seed, index, case])
            loss_fn, params = builder(rng)
            err, label = _grad_check_named(loss_fn, params, eps)
            total += params.size()
            if err >= worst_err:
                worst_err = err
                worst_label = label
        report.append({
            "loss": name,
            "max_rel_err": worst_err,
            "worst_param": worst_label,
            "coords_checked": total,
            "ok": worst_err < tol,
        })
    return {"cases": report, "eps": eps, "tolerance": tol,
            "ok": all(row["ok"] for row in report)}
