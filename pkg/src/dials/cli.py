"""Command-line interface.

    dials run --env warehouse --grid 2 --mode dials --F 20000 \
              --steps 200000 --seed 1 --workers 4 --out runs/w2
    dials oracle verify --model toy.yaml --check lemma1 --seed 0
    dials oracle make-toy --kind coupled --seed 3 --out toy.yaml
    dials bench scaling --env warehouse --grids 2,5 --out bench/

The environment variable DIALS_WORKERS overrides --workers.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__


def _add_run_parser(sub):
    p = sub.add_parser("run", help="train agents with DIALS or baselines")
    p.add_argument("--env", choices=("warehouse", "traffic"), required=True)
    p.add_argument("--grid", type=int, default=2, help="agents per side")
    p.add_argument("--mode", choices=("dials", "gs", "untrained"), default="dials")
    p.add_argument("--F", type=int, default=20_000,
                   help="influence-predictor retraining period (per-agent steps)")
    p.add_argument("--steps", type=int, default=200_000, help="total per-agent steps")
    p.add_argument("--eval-every", type=int, default=10_000)
    p.add_argument("--eval-episodes", type=int, default=10)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--dataset-size", type=int, default=10_000,
                   help="samples collected per retraining round")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def _cmd_run(args) -> int:
    from .run import RunConfig, run
    cfg = RunConfig(
        env=args.env, grid_side=args.grid, mode=args.mode, F=args.F,
        total_steps=args.steps, eval_every=args.eval_every,
        eval_episodes=args.eval_episodes, seed=args.seed,
        worker_count=args.workers, out_dir=args.out, horizon=args.horizon,
        aip_dataset_size=args.dataset_size,
    )
    metrics = run(cfg)
    last = [r for r in metrics.eval_rows()
            if r["global_step"] == max(x["global_step"] for x in metrics.eval_rows())]
    mean = sum(r["eval_return"] for r in last) / max(1, len(last))
    print(f"run complete: {metrics.rounds_run} rounds, "
          f"final mean return {mean:.4f}, outputs in {args.out}")
    return 0


def _add_oracle_parser(sub):
    p = sub.add_parser("oracle", help="exact verification on tabular toys")
    osub = p.add_subparsers(dest="oracle_cmd", required=True)

    v = osub.add_parser("verify", help="run one check on a model file")
    v.add_argument("--model", required=True, help="model file (YAML)")
    v.add_argument("--check", required=True,
                   choices=("lemma1", "lemma2", "lemma_a3", "thm2", "cor1"))
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--agent", type=int, default=0)
    v.add_argument("--out", default=None, help="write the JSON report here")

    m = osub.add_parser("make-toy", help="generate a random model file")
    m.add_argument("--kind", choices=("coupled", "independent", "deterministic"),
                   default="coupled")
    m.add_argument("--seed", type=int, required=True)
    m.add_argument("--horizon", type=int, default=3)
    m.add_argument("--out", required=True)


def _cmd_oracle_verify(args) -> int:
    from .oracle import (
        compute_exact_influence,
        load_model,
        verify_corollary1,
        verify_lemma1,
        verify_lemma2,
        verify_lemma_a3,
        verify_theorem2,
    )
    from .oracle.influence import random_influence_like
    from .oracle.policies import random_joint_policy

    model = load_model(args.model)
    agent = args.agent
    if args.check == "lemma1":
        pol = random_joint_policy(model, seed=args.seed)
        report = verify_lemma1(model, pol, agent)
    elif args.check == "cor1":
        policies = [random_joint_policy(model, seed=args.seed + k)
                    for k in range(20)]
        report = verify_corollary1(model, policies, agent,
                                   require_independent=False)
    else:
        pol = random_joint_policy(model, seed=args.seed)
        i1 = compute_exact_influence(model, pol, agent)
        i2 = random_influence_like(i1, seed=args.seed + 1)
        if args.check == "lemma2":
            report = verify_lemma2(model, i1, i2, agent, seed=args.seed)
        elif args.check == "lemma_a3":
            report = verify_lemma_a3(model, i1, i2, agent)
        else:
            report = verify_theorem2(model, i1, i2, agent, seed=args.seed)
    doc = {"check": args.check, "model": args.model, "seed": args.seed,
           "report": report.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0 if report.holds else 1


def _cmd_oracle_make_toy(args) -> int:
    from .oracle import independent_toy, random_toy, save_model
    if args.kind == "independent":
        model = independent_toy(args.seed, horizon=args.horizon)
    elif args.kind == "deterministic":
        model = random_toy(args.seed, horizon=args.horizon, coupled=False,
                           deterministic=True)
    else:
        model = random_toy(args.seed, horizon=args.horizon, coupled=True)
    save_model(model, args.out)
    print(f"wrote {args.kind} toy ({model.n_states} states, horizon "
          f"{model.horizon}) to {args.out}")
    return 0


def _add_bench_parser(sub):
    p = sub.add_parser("bench", help="benchmarks")
    bsub = p.add_subparsers(dest="bench_cmd", required=True)
    s = bsub.add_parser("scaling", help="per-step time of IALS vs GS across grids")
    s.add_argument("--env", choices=("warehouse", "traffic"), required=True)
    s.add_argument("--grids", default="2,5",
                   help="comma-separated grid sides, e.g. 2,5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ials-steps", type=int, default=2000)
    s.add_argument("--gs-steps", type=int, default=400)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out", required=True)


def _cmd_bench_scaling(args) -> int:
    from .bench import scaling_benchmark
    grids = [int(g) for g in args.grids.split(",") if g]
    results = scaling_benchmark(args.env, grids, seed=args.seed,
                                out_dir=args.out, ials_steps=args.ials_steps,
                                gs_steps=args.gs_steps, repeats=args.repeats)
    for r in results:
        print(f"grid {r.grid_side}: IALS {r.ials_step_s * 1e6:.1f} us/agent-step, "
              f"GS {r.gs_step_s * 1e6:.1f} us/joint-step")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dials",
        description="Distributed influence-augmented local simulators")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    _add_run_parser(sub)
    _add_oracle_parser(sub)
    _add_bench_parser(sub)
    args = parser.parse_args(argv)
    if args.cmd == "run":
        return _cmd_run(args)
    if args.cmd == "oracle":
        if args.oracle_cmd == "verify":
            return _cmd_oracle_verify(args)
        return _cmd_oracle_make_toy(args)
    if args.cmd == "bench":
        return _cmd_bench_scaling(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
