"""Command-line surface: gen-data, train, compose, eval, stats.

Exit codes are a stable contract: 0 success, 2 configuration or input
error, 3 runtime numeric failure. Every command is deterministic given its
flags and seeds. The eval and stats commands render PNG figures next to
their delimited outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .envs import (
    TIERS,
    check_coherence,
    generate_dataset,
    load_dataset,
    make_env,
    normalized_return,
    save_dataset,
)
from .errors import ModdiffError, NumericFailureError
from .evaluation import EvalReport, PolicyAgent, evaluate_checkpoint, evaluate_manifest
from .guidance import DoubleQ, IqlGuidance
from .pipelines import (
    compose_from_paths,
    config_from_dict,
    run_training,
)
from .plots import plot_learning_curves, plot_variance_profile
from .stats import curve_metrics, levene_test, mann_whitney_u, reduction_pct, variance_stats

MISSING = "---"


def _cmd_gen_data(args) -> int:
    env = make_env(args.env)
    ds = generate_dataset(env, args.tier, args.n, args.seed)
    if not check_coherence(ds):
        raise ModdiffError("generated dataset failed its coherence check")
    save_dataset(ds, args.out)
    per_episode = ds.rewards.reshape(-1, env.horizon).sum(axis=1)
    print(f"wrote {args.out}: {len(ds)} transitions "
          f"({len(per_episode)} episodes, env={args.env}, tier={args.tier})")
    print(f"behavior return: raw mean {per_episode.mean():.3f}, "
          f"normalized mean {float(normalized_return(env, per_episode.mean())):.1f}")
    return 0


def _cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    dataset_path = raw.pop("dataset", None)
    out_dir = raw.pop("out_dir", None)
    if dataset_path is None or out_dir is None:
        raise ModdiffError("config file must provide 'dataset' and 'out_dir' keys")
    config = config_from_dict(raw)
    dataset = load_dataset(dataset_path)
    result = run_training(config, dataset, out_dir)
    print(f"run complete: {len(result.checkpoint_steps)} checkpoint pairs in {result.out_dir}")
    print(f"manifest: {result.manifest_path}")
    return 0


def _cmd_compose(args) -> int:
    agent = compose_from_paths(args.guidance, args.policy, args.lam)
    manifest = {
        "type": "hybrid",
        "guidance": str(Path(args.guidance).resolve()),
        "policy": str(Path(args.policy).resolve()),
        "lambda": args.lam,
        "state_dim": agent.policy.state_dim,
        "action_dim": agent.policy.action_dim,
    }
    Path(args.out).write_text(json.dumps(manifest, indent=2))
    print(f"wrote hybrid manifest {args.out}")
    return 0


def _load_agent_report(args) -> EvalReport:
    path = Path(args.agent)
    if path.suffix == ".ckpt":
        policy = load_checkpoint(path)
        if isinstance(policy, (DoubleQ, IqlGuidance)):
            raise ModdiffError("a guidance checkpoint alone cannot act; pass a policy or manifest")
        env = make_env(args.env)
        agent = PolicyAgent(policy)
        returns = evaluate_checkpoint(agent, env, args.episodes, args.seed)
        report = EvalReport(env_name=args.env, episodes=args.episodes, eval_seed=args.seed)
        from .evaluation import _record

        report.records.append(_record(policy.training_steps, returns))
        return report

    data = json.loads(path.read_text())
    if data.get("type") == "hybrid":
        from .pipelines import compose_from_paths as _compose

        agent = _compose(data["guidance"], data["policy"], data["lambda"])
        env = make_env(args.env)
        returns = evaluate_checkpoint(agent, env, args.episodes, args.seed)
        report = EvalReport(env_name=args.env, episodes=args.episodes, eval_seed=args.seed)
        from .evaluation import _record

        report.records.append(_record(0, returns))
        return report
    return evaluate_manifest(path, n_episodes=args.episodes, eval_seed=args.seed,
                             inference=args.inference, lam=args.lam)


def _cmd_eval(args) -> int:
    report = _load_agent_report(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    figure = out.with_suffix(".png")
    plot_learning_curves([(out.stem, report)], figure)
    means = report.means()
    print(f"wrote {out} ({len(report.records)} checkpoints, {report.episodes} episodes each)")
    print(f"final checkpoint: mean normalized return {means[-1]:.2f}")
    print(f"figure: {figure}")
    return 0


def _guard(fn, *args):
    try:
        return fn(*args)
    except ModdiffError:
        return None


def _fmt(value, digits=6):
    if value is None:
        return MISSING
    return f"{value:.{digits}g}"


def _stats_from_reports(test: EvalReport, baseline: EvalReport):
    rows = []
    gains = _guard(curve_metrics, test.means(), baseline.means())
    peak_gain, auc_gain, early_gain = gains if gains else (None, None, None)
    rows.append(("peak_return", float(test.means().max()), float(baseline.means().max()), peak_gain))
    rows.append(("auc", None, None, auc_gain))
    rows.append(("early_mean", None, None, early_gain))

    final_t = test.records[-1].returns
    final_b = baseline.records[-1].returns
    mw = _guard(mann_whitney_u, final_t, final_b)
    rows.append(("final_mann_whitney_U", mw[0] if mw else None, None, None))
    rows.append(("final_mann_whitney_p", mw[1] if mw else None, None, None))
    lev = _guard(levene_test, [final_t, final_b])
    rows.append(("final_levene_F", lev[0] if lev else None, None, None))
    rows.append(("final_levene_p", lev[1] if lev else None, None, None))

    vs_t = _guard(variance_stats, test.variances())
    vs_b = _guard(variance_stats, baseline.variances())
    for name in ("median_var", "iqr", "max_var", "cv"):
        tv = getattr(vs_t, name) if vs_t else None
        bv = getattr(vs_b, name) if vs_b else None
        red = _guard(reduction_pct, tv, bv) if tv is not None and bv is not None else None
        rows.append((name, tv, bv, red))
    return rows


def _stats_from_fixture(path):
    data = json.loads(Path(path).read_text())
    test = data.get("test", {})
    baseline = data.get("baseline", {})
    rows = []
    for name in sorted(set(test) | set(baseline)):
        tv, bv = test.get(name), baseline.get(name)
        red = _guard(reduction_pct, tv, bv) if tv is not None and bv is not None else None
        rows.append((name, tv, bv, red))
    return rows


def _cmd_stats(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.fixture:
        rows = _stats_from_fixture(args.fixture)
        reports = []
    else:
        if not args.reports or len(args.reports) not in (1, 2):
            raise ModdiffError("pass one or two report files (test [baseline]) or --fixture")
        loaded = [EvalReport.load(p) for p in args.reports]
        if len(loaded) == 1:
            test = loaded[0]
            vs = _guard(variance_stats, test.variances())
            rows = [("final_mean", float(test.means()[-1]), None, None)]
            for name in ("median_var", "iqr", "max_var", "cv"):
                rows.append((name, getattr(vs, name) if vs else None, None, None))
            reports = [("test", test)]
        else:
            test, baseline = loaded
            rows = _stats_from_reports(test, baseline)
            reports = [("test", test), ("baseline", baseline)]

    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "test", "baseline", "gain_or_reduction_pct"])
        for name, tv, bv, comp in rows:
            writer.writerow([name, _fmt(tv), _fmt(bv), _fmt(comp)])

    summary_path = out_dir / "summary.txt"
    with open(summary_path, "w") as fh:
        width = max(len(r[0]) for r in rows)
        fh.write(f"{'metric'.ljust(width)}  {'test':>12}  {'baseline':>12}  {'gain/red %':>12}\n")
        for name, tv, bv, comp in rows:
            fh.write(f"{name.ljust(width)}  {_fmt(tv):>12}  {_fmt(bv):>12}  {_fmt(comp):>12}\n")

    figures = []
    if reports:
        curves = out_dir / "curves.png"
        plot_learning_curves(reports, curves)
        figures.append(curves)
        variances = out_dir / "variances.png"
        plot_variance_profile(reports, variances)
        figures.append(variances)

    print(f"wrote {csv_path} and {summary_path}")
    for fig in figures:
        print(f"figure: {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moddiff",
        description="Modular diffusion policies for offline RL: train, compose, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an offline dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--tier", required=True, choices=TIERS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="run a training regimen from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("compose", help="pair a guidance and a policy checkpoint")
    p.add_argument("--guidance", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_compose)

    p = sub.add_parser("eval", help="evaluate a run manifest, hybrid manifest, or checkpoint")
    p.add_argument("--agent", required=True)
    p.add_argument("--env", default="point2d")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--inference", choices=("same", "different", "none"), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("stats", help="comparison table, summary, and figures from reports")
    p.add_argument("--reports", nargs="*", default=None)
    p.add_argument("--fixture", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericFailureError as exc:
        step = f" at step {exc.step}" if exc.step is not None else ""
        print(f"numeric failure{step}: {exc}", file=sys.stderr)
        return 3
    except ModdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
