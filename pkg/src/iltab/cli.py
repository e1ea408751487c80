"""Command-line interface.

Exit codes: 0 success, 2 validation failure, 3 solver error,
4 bound-verification failure.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict

import click
import numpy as np

from iltab import envs, harness, solvers
from iltab.dependence import (OptimizeConfig, SeparableKernel, brute_force_dependence,
                              max_tv_gap, optimize_dependence)
from iltab.errors import (DimensionMismatch, ExplorationViolation, IltabError, InvalidPartition,
                          NonFinite, NotADistribution, Periodic, ReducibleChain, SolverError,
                          TooLarge, ValidationFailure, ZeroCellMass)
from iltab.inac import InacConfig, inac_run
from iltab.iql import IqlConfig, iql_run
from iltab.mdp import (FactoredMdp, FactoredPolicy, joint_policy_of, load_mdp, save_mdp,
                       validate)
from iltab.records import write_run_csv

VALIDATION_ERRORS = (ValidationFailure, NotADistribution, DimensionMismatch, InvalidPartition)
SOLVER_ERRORS = (SolverError, ReducibleChain, Periodic, ZeroCellMass, TooLarge,
                 ExplorationViolation, NonFinite)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load(path: str) -> FactoredMdp:
    try:
        return load_mdp(path)
    except VALIDATION_ERRORS as e:
        _fail(2, str(e))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        _fail(2, f"cannot read MDP file {path}: {e}")


def _resolve_env(mdp_path: str | None, synthetic: str | None, gamma: float):
    """(mdp, start_dist) from either an MDP file or a synthetic grouping tag."""
    if (mdp_path is None) == (synthetic is None):
        _fail(2, "give exactly one of --mdp or --synthetic")
    if mdp_path is not None:
        return _load(mdp_path), None
    base = envs.synthetic3(gamma=gamma)
    start = envs.synthetic3_start_dist(base)
    if synthetic == "none":
        return base, start
    if synthetic not in envs.OPTION_GROUPINGS:
        _fail(2, f"unknown grouping {synthetic!r}; use 12, 23, 13, or none")
    g = envs.OPTION_GROUPINGS[synthetic]
    grouped = envs.grouped_view(base, g)
    state_perm, _ = envs.grouping_permutations(base, g)
    inv = np.empty_like(state_perm)
    inv[state_perm] = np.arange(len(state_perm))
    return grouped, start[state_perm]


@click.group()
@click.option("--seed", type=int, default=0, help="root 64-bit seed")
@click.option("--threads", type=int, default=1, help="parallel runs")
@click.option("--out-dir", type=click.Path(), default=".", help="output directory")
@click.pass_context
def main(ctx, seed, threads, out_dir):
    ctx.obj = {"seed": seed, "threads": threads, "out_dir": out_dir}


@main.command("validate")
@click.argument("mdp_file", type=click.Path(exists=True))
def cmd_validate(mdp_file):
    """Check an MDP file against every structural invariant."""
    try:
        with open(mdp_file, "r", encoding="utf-8") as f:
            obj = json.load(f)
        mdp = FactoredMdp(n=int(obj["n"]), local_state_sizes=tuple(obj["local_state_sizes"]),
                          local_action_sizes=tuple(obj["local_action_sizes"]),
                          transition=np.array(obj["transition"], dtype=float),
                          rewards=tuple(np.array(r, dtype=float) for r in obj["rewards"]),
                          gamma=float(obj["gamma"]))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        _fail(2, f"cannot parse {mdp_file}: {e}")
    report = validate(mdp)
    for line in report:
        click.echo(line)
    if report:
        sys.exit(2)
    click.echo("ok")


@main.command("solve")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), required=True)
@click.option("--tol", type=float, default=1e-10)
@click.option("--out", "out_file", type=click.Path(), default=None)
def cmd_solve(mdp_file, tol, out_file):
    """Optimal Q-function and greedy policy by value iteration."""
    mdp = _load(mdp_file)
    try:
        q = solvers.value_iteration(mdp, tol)
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    pi = solvers.greedy_policy(q)
    payload = {"q": q.tolist(), "greedy": pi.table.argmax(axis=1).tolist()}
    text = json.dumps(payload)
    if out_file:
        with open(out_file, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    else:
        click.echo(text)


@main.command("deplevel")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=str, default=None,
              help="synthetic grouping: 12, 23, 13, or none")
@click.option("--gamma", type=float, default=0.99)
@click.option("--grouping", type=str, default=None, help="group agents of an MDP file, e.g. 01,2")
@click.option("--brute-resolution", type=int, default=None,
              help="also run the grid oracle at this resolution")
@click.option("--kernel-out", type=click.Path(), default=None)
@click.pass_context
def cmd_deplevel(ctx, mdp_file, synthetic, gamma, grouping, brute_resolution, kernel_out):
    """Dependence-level estimate (upper bound plus achieving kernel)."""
    mdp, _ = _resolve_env(mdp_file, synthetic, gamma)
    if grouping:
        groups = tuple(tuple(int(c) for c in part) for part in grouping.split(","))
        try:
            mdp = envs.grouped_view(mdp, envs.Grouping(groups))
        except InvalidPartition as e:
            _fail(2, str(e))
    est = optimize_dependence(mdp, OptimizeConfig(seed=ctx.obj["seed"]))
    certified_lower = None
    if brute_resolution:
        try:
            certified_lower, _upper = brute_force_dependence(mdp, brute_resolution)
        except TooLarge as e:
            _fail(3, str(e))
    click.echo(json.dumps({"value": est.value, "certified_lower": certified_lower,
                           "method": est.method}))
    if kernel_out:
        with open(kernel_out, "w", encoding="utf-8", newline="\n") as f:
            json.dump([m.tolist() for m in est.kernel.matrices], f)
            f.write("\n")


@main.command("env")
@click.argument("name", type=click.Choice(["synthetic3"]))
@click.option("--grouping", type=click.Choice(["12", "23", "13", "none"]), default="none")
@click.option("--gamma", type=float, default=0.99)
@click.option("--out", "out_file", type=click.Path(), required=True)
def cmd_env(name, grouping, gamma, out_file):
    """Write the (optionally grouped) synthetic MDP to a JSON file."""
    mdp, _ = _resolve_env(None, grouping, gamma)
    save_mdp(mdp, out_file)
    click.echo(out_file)


@main.command("iql")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=str, default=None)
@click.option("--gamma", type=float, default=0.99)
@click.option("--k", "k_steps", type=int, default=3000)
@click.option("--alpha", type=float, default=None)
@click.option("--k0", type=float, default=None)
@click.option("--eval-stride", type=int, default=0)
@click.option("--out", "out_file", type=click.Path(), required=True)
@click.pass_context
def cmd_iql(ctx, mdp_file, synthetic, gamma, k_steps, alpha, k0, eval_stride, out_file):
    """One independent Q-learning run; metrics to CSV."""
    mdp, start = _resolve_env(mdp_file, synthetic, gamma)
    cfg = IqlConfig(K=k_steps, alpha=alpha, k0=k0, seed=ctx.obj["seed"],
                    eval_stride=eval_stride, start_dist=start)
    try:
        result = iql_run(mdp, cfg)
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    write_run_csv(out_file, [result.record])
    click.echo(out_file)


@main.command("inac")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=str, default=None)
@click.option("--gamma", type=float, default=0.99)
@click.option("--t", "t_outer", type=int, default=30)
@click.option("--k", "k_inner", type=int, default=100)
@click.option("--alpha", type=float, default=0.05)
@click.option("--k0", type=float, default=0.2)
@click.option("--eta-mode", type=click.Choice(["policy-space-schedule", "theorem-schedule",
                                               "constant"]), default="policy-space-schedule")
@click.option("--eta0", type=float, default=None)
@click.option("--eta-growth", type=click.Choice(["theorem", "plain"]), default="theorem")
@click.option("--epsilon", type=float, default=0.0)
@click.option("--epsilon-decay", is_flag=True, default=False)
@click.option("--out", "out_file", type=click.Path(), required=True)
@click.pass_context
def cmd_inac(ctx, mdp_file, synthetic, gamma, t_outer, k_inner, alpha, k0, eta_mode, eta0,
             eta_growth, epsilon, epsilon_decay, out_file):
    """One independent natural actor-critic run; metrics to CSV."""
    mdp, start = _resolve_env(mdp_file, synthetic, gamma)
    cfg = InacConfig(T=t_outer, K=k_inner, alpha=alpha, k0=k0, seed=ctx.obj["seed"],
                     eta_mode=eta_mode, eta0=eta0, eta_growth=eta_growth,
                     epsilon_explore=epsilon, epsilon_decay=epsilon_decay,
                     start_dist=start, eval_metrics=True)
    try:
        result = inac_run(mdp, cfg)
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    write_run_csv(out_file, [result.record])
    click.echo(out_file)


@main.command("experiment")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None,
              help="JSON config; flags override its fields")
@click.option("--algorithm", type=click.Choice(["iql", "inac"]), default=None)
@click.option("--synthetic", type=str, default=None)
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--gamma", type=float, default=0.99)
@click.option("--runs", type=int, default=None)
@click.option("--train-steps", type=int, default=None)
@click.option("--label", type=str, default=None)
@click.option("--no-plot", is_flag=True, default=False)
@click.pass_context
def cmd_experiment(ctx, config_file, algorithm, synthetic, mdp_file, gamma, runs, train_steps,
                   label, no_plot):
    """Multi-seed training/testing with CSV and PNG outputs."""
    conf = {}
    if config_file:
        with open(config_file, "r", encoding="utf-8") as f:
            conf = json.load(f)
    env_conf = conf.get("env", {})
    synthetic = synthetic or env_conf.get("synthetic")
    mdp_file = mdp_file or env_conf.get("file")
    gamma = env_conf.get("gamma", gamma)
    algorithm = algorithm or conf.get("algorithm")
    if algorithm not in ("iql", "inac"):
        _fail(2, "algorithm must be iql or inac")
    mdp, start = _resolve_env(mdp_file, synthetic, gamma)
    iql_conf = conf.get("iql", {})
    inac_conf = conf.get("inac", {})
    cfg = harness.ExperimentConfig(
        algorithm=algorithm,
        mdp=mdp,
        runs=runs if runs is not None else int(conf.get("runs", 20)),
        train_steps=train_steps if train_steps is not None else int(conf.get("train_steps", 3000)),
        iql=IqlConfig(K=1, alpha=iql_conf.get("alpha", 0.05), k0=iql_conf.get("k0", 0.2),
                      eval_stride=int(iql_conf.get("eval_stride", 300))),
        inac=InacConfig(T=int(inac_conf.get("T", 30)), K=int(inac_conf.get("K", 100)),
                        alpha=inac_conf.get("alpha", 0.05), k0=inac_conf.get("k0", 0.2),
                        eta_mode=inac_conf.get("eta_mode", "policy-space-schedule"),
                        eta0=inac_conf.get("eta0"), eta_growth=inac_conf.get("eta_growth", "theorem"),
                        epsilon_explore=float(inac_conf.get("epsilon", 0.1)),
                        epsilon_decay=bool(inac_conf.get("epsilon_decay", True))),
        start_dist=start,
        seed=ctx.obj["seed"] if ctx.obj["seed"] else int(conf.get("seed", 0)),
        test_episode_len=int(conf.get("test_episode_len", 1000)),
        test_episodes=int(conf.get("test_episodes", 1)),
        out_dir=ctx.obj["out_dir"],
        label=label or conf.get("label", f"{algorithm}_{synthetic or 'mdp'}"),
        make_plot=not no_plot and conf.get("make_plot", True),
        threads=ctx.obj["threads"],
    )
    try:
        out = harness.run_experiment(cfg)
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    click.echo(json.dumps({"run_csv": out["run_csv"], "aggregate_csv": out["aggregate_csv"],
                           "plot": out["plot"]}))


@main.command("verify-bounds")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=str, default=None)
@click.option("--gamma", type=float, default=0.99)
@click.pass_context
def cmd_verify_bounds(ctx, mdp_file, synthetic, gamma):
    """Evaluate the separable-approximation inequalities; exit 4 on any
    violation."""
    mdp, start = _resolve_env(mdp_file, synthetic, gamma)
    try:
        est = optimize_dependence(mdp, OptimizeConfig(starts=1, passes=2,
                                                      iters_per_coordinate=200,
                                                      seed=ctx.obj["seed"]))
        report = harness.verify_bounds(mdp, est.kernel, start_dist=start, seed=ctx.obj["seed"])
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    click.echo(f"dependence upper bound: {report.dependence_upper!r}")
    for c in report.checks:
        status = "pass" if c.passed else "FAIL"
        click.echo(f"{status} {c.name}: lhs={c.lhs!r} rhs={c.rhs!r}")
    if not report.all_passed:
        sys.exit(4)


@main.command("mixing")
@click.option("--mdp", "mdp_file", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=str, default=None)
@click.option("--gamma", type=float, default=0.99)
@click.option("--horizon", type=int, default=64)
@click.option("--out", "out_file", type=click.Path(), required=True)
def cmd_mixing(mdp_file, synthetic, gamma, horizon, out_file):
    """Mixing diagnostics of the uniform-policy chain; decay curve to CSV."""
    mdp, start = _resolve_env(mdp_file, synthetic, gamma)
    fp = FactoredPolicy.uniform(mdp.local_state_sizes, mdp.local_action_sizes)
    pi = joint_policy_of(fp, mdp.local_state_sizes, mdp.local_action_sizes)
    try:
        prof = solvers.mixing_profile(mdp, pi, horizon, start_dist=start)
    except SOLVER_ERRORS as e:
        _fail(3, str(e))
    with open(out_file, "w", encoding="utf-8", newline="\n") as f:
        f.write("k,gap\n")
        for k, gap in prof.decay_curve:
            f.write(f"{k},{gap!r}\n")
    click.echo(json.dumps({"M1_hat": prof.M1_hat, "M2_hat": prof.M2_hat,
                           "sigma": prof.sigma, "sigma_prime": prof.sigma_prime}))


if __name__ == "__main__":
    main()
