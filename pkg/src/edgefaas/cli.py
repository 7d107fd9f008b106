"""Command-line front end: per-app policy cost analysis, snapshot and dynamic
experiment sweeps, and topology utilities. Every run writes plot-ready CSV
plus a manifest.json recording the resolved parameters, so outputs are
reproducible byte-for-byte."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .errors import ConfigError, ConnectivityError, InfeasibleError, ParseError
from .policy import PolicyParams, evaluate_policies
from .sim import MS_PER_HOUR, DynamicConfig, SnapshotConfig, run_dynamic, run_snapshot
from .topology import CLOUD_ID, compute_cost_matrix, generate_topology, load_topology, save_topology
from .traces import parse_trace


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Fraction):
        return repr(float(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(out_dir: Path, subcommand: str, args: argparse.Namespace, resolved: dict) -> None:
    manifest = {
        "tool": "edgefaas",
        "version": __version__,
        "subcommand": subcommand,
        "seed": getattr(args, "seed", None),
        "inputs": sorted(
            str(v) for v in (getattr(args, "topology", None), getattr(args, "trace", None),
                             getattr(args, "params", None)) if v
        ),
        "out": str(out_dir),
        "parameters": resolved,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_policy_params(path: str | None) -> PolicyParams:
    if path is None:
        return PolicyParams.default()
    mapping = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return PolicyParams.from_mapping(mapping)


def _resolve_topology(args: argparse.Namespace):
    if args.topology:
        topo = load_topology(Path(args.topology).read_text())
    elif args.gen:
        try:
            seed, brokers, far, near = (int(v) for v in args.gen.split(","))
        except ValueError:
            raise ConfigError("--gen expects 'seed,brokers,far,near'") from None
        topo = generate_topology(seed, brokers, far, near)
    else:
        raise ConfigError("provide --topology FILE or --gen seed,brokers,far,near")
    return topo


def _fraction_list(text: str) -> list[Fraction]:
    try:
        return [Fraction(tok) for tok in text.split(",") if tok.strip()]
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad numeric list {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad numeric list {text!r}") from None


def _params_as_strings(p: PolicyParams) -> dict:
    return {name: str(getattr(p, name)) for name in PolicyParams.__dataclass_fields__}


def cmd_policy_analyze(args: argparse.Namespace) -> int:
    params = _load_policy_params(args.params)
    traces = parse_trace(Path(args.trace).read_text(), args.dataset_format)
    if not traces.per_app:
        raise ConfigError("trace file contains no invocations")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    ratio_rows = []
    for app in sorted(traces.per_app):
        result = evaluate_policies(traces.per_app[app], params, args.lookahead)
        rows.append(
            (app, float(result.cost_lambda_only), float(result.cost_mu_only),
             float(result.cost_hybrid), float(result.cost_optimal), result.n_migrations)
        )
        hybrid = float(result.cost_hybrid)
        lam_ratio = float(result.cost_lambda_only) / hybrid if hybrid else float("inf")
        mu_ratio = float(result.cost_mu_only) / hybrid if hybrid else float("inf")
        ratio_rows.append((app, lam_ratio, mu_ratio))

    _write_csv(
        out_dir / "policy.csv",
        ["app", "cost_lambda", "cost_mu", "cost_hybrid", "cost_optimal", "migrations"],
        rows,
    )
    _write_csv(
        out_dir / "policy_ratios.csv",
        ["app", "lambda_over_hybrid", "mu_over_hybrid"],
        ratio_rows,
    )
    _write_manifest(
        out_dir, "policy-analyze", args,
        {
            "dataset_format": args.dataset_format,
            "lookahead": args.lookahead,
            "policy": _params_as_strings(params),
            "read_share": traces.read_share(),
        },
    )
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    topo = _resolve_topology(args)
    alphas = _fraction_list(args.alpha)
    betas = _fraction_list(args.beta)
    mu_means = _float_list(args.mu_apps)
    lambda_means = _float_list(args.apps)
    if not (alphas and betas and mu_means and lambda_means):
        raise ConfigError("sweep lists must be non-empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rep_rows = []
    summary_rows = []
    for lam_mean in lambda_means:
        for mu_mean in mu_means:
            for alpha in alphas:
                for beta in betas:
                    metrics = run_snapshot(
                        SnapshotConfig(
                            topology=topo,
                            mean_lambda_apps=lam_mean,
                            mean_mu_apps=mu_mean,
                            alpha=alpha,
                            beta=beta,
                            replications=args.replications,
                            seed=args.seed,
                        )
                    )
                    key = (float(alpha), float(beta), mu_mean, lam_mean)
                    for row in metrics.samples:
                        rep_rows.append(
                            key + (row.replication, row.n_lambda, row.n_mu,
                                   row.lambda_unit_cost, row.mu_cloud_fraction)
                        )
                    lam = metrics.lambda_unit_cost
                    cloud = metrics.mu_cloud_fraction
                    summary_rows.append(
                        key + (args.replications, metrics.failures)
                        + ((lam.mean, lam.ci95, lam.n) if lam else (None, None, 0))
                        + ((cloud.mean, cloud.ci95, cloud.n) if cloud else (None, None, 0))
                    )

    _write_csv(
        out_dir / "snapshot_replications.csv",
        ["alpha", "beta", "mu_apps_mean", "lambda_apps_mean", "replication",
         "n_lambda", "n_mu", "lambda_unit_cost", "mu_cloud_fraction"],
        rep_rows,
    )
    _write_csv(
        out_dir / "snapshot_summary.csv",
        ["alpha", "beta", "mu_apps_mean", "lambda_apps_mean", "replications", "failures",
         "lambda_unit_cost_mean", "lambda_unit_cost_ci95", "lambda_unit_cost_n",
         "mu_cloud_fraction_mean", "mu_cloud_fraction_ci95", "mu_cloud_fraction_n"],
        summary_rows,
    )
    _write_manifest(
        out_dir, "snapshot", args,
        {
            "alpha": [str(a) for a in alphas],
            "beta": [str(b) for b in betas],
            "mu_apps": mu_means,
            "apps": lambda_means,
            "replications": args.replications,
            "gen": args.gen,
        },
    )
    return 0


def cmd_dynamic(args: argparse.Namespace) -> int:
    topo = _resolve_topology(args)
    params = _load_policy_params(args.params)
    traces = parse_trace(Path(args.trace).read_text(), args.dataset_format)
    if not traces.per_app:
        raise ConfigError("trace file contains no invocations")
    epochs = _float_list(args.epoch_mins)
    app_means = _float_list(args.apps)
    if not (epochs and app_means):
        raise ConfigError("sweep lists must be non-empty")
    alpha = Fraction(args.alpha) if args.alpha else Fraction(1, 2)
    beta = Fraction(args.beta) if args.beta else Fraction(1, 2)
    sim_time_ms = int(round(args.sim_hours * MS_PER_HOUR))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    epoch_rows = []
    summary_rows = []
    for mean_apps in app_means:
        for epoch_mins in epochs:
            metrics = run_dynamic(
                DynamicConfig(
                    topology=topo,
                    mean_apps=mean_apps,
                    epoch_ms=int(round(epoch_mins * 60_000)),
                    sim_time_ms=sim_time_ms,
                    traces=traces,
                    policy=params,
                    alpha=alpha,
                    beta=beta,
                    replications=args.replications,
                    seed=args.seed,
                    lookahead=args.lookahead,
                    pattern=args.pattern,
                )
            )
            key = (epoch_mins, mean_apps)
            for row in metrics.samples:
                epoch_rows.append(
                    key + (row.replication, row.interval, row.n_lambda, row.n_mu,
                           row.lambda_unit_cost, row.mu_unit_cost, row.migrations)
                )
            lam, mu, mig = metrics.lambda_unit_cost, metrics.mu_unit_cost, metrics.migrations_per_hour
            summary_rows.append(
                key + (args.replications,)
                + ((lam.mean, lam.ci95, lam.n) if lam else (None, None, 0))
                + ((mu.mean, mu.ci95, mu.n) if mu else (None, None, 0))
                + ((mig.mean, mig.ci95, mig.n) if mig else (None, None, 0))
            )

    _write_csv(
        out_dir / "dynamic_epochs.csv",
        ["epoch_mins", "mean_apps", "replication", "interval", "n_lambda", "n_mu",
         "lambda_unit_cost", "mu_unit_cost", "migrations"],
        epoch_rows,
    )
    _write_csv(
        out_dir / "dynamic_summary.csv",
        ["epoch_mins", "mean_apps", "replications",
         "lambda_unit_cost_mean", "lambda_unit_cost_ci95", "lambda_unit_cost_n",
         "mu_unit_cost_mean", "mu_unit_cost_ci95", "mu_unit_cost_n",
         "migrations_per_hour_mean", "migrations_per_hour_ci95", "migrations_per_hour_n"],
        summary_rows,
    )
    _write_manifest(
        out_dir, "dynamic", args,
        {
            "epoch_mins": epochs,
            "apps": app_means,
            "sim_hours": args.sim_hours,
            "alpha": str(alpha),
            "beta": str(beta),
            "replications": args.replications,
            "lookahead": args.lookahead,
            "pattern": args.pattern,
            "dataset_format": args.dataset_format,
            "policy": _params_as_strings(params),
            "gen": args.gen,
        },
    )
    return 0


def cmd_topology(args: argparse.Namespace) -> int:
    if args.action == "gen":
        topo = generate_topology(args.seed, args.brokers, args.far, args.near)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "topology.txt").write_text(save_topology(topo))
        _write_manifest(
            out_dir, "topology-gen", args,
            {"brokers": args.brokers, "far": args.far, "near": args.near},
        )
        return 0

    topo = load_topology(Path(args.topology).read_text())
    cost = compute_cost_matrix(topo)
    print(f"brokers: {len(topo.brokers)}  edge nodes: {len(topo.edge_nodes)}  "
          f"devices: {len(topo.device_nodes)}  links: {len(topo.edges)}")
    header = "broker " + " ".join(f"n{j:>3}" for j in cost.edge_ids) + "  cloud"
    print(header)
    for i in cost.broker_ids:
        cells = " ".join(f"{str(cost.hops[(i, j)]):>4}" for j in cost.edge_ids)
        print(f"{i:>6} {cells}  {cost.cloud_cost:>5}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = [(i, j, float(cost.cost(i, j))) for i in cost.broker_ids
                for j in cost.edge_ids + (CLOUD_ID,)]
        _write_csv(out_dir / "cost_matrix.csv", ["broker", "node", "cost"], rows)
        _write_manifest(out_dir, "topology-inspect", args, {})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgefaas",
        description="Allocation engine and simulator for edge FaaS with "
                    "stateless/stateful operation modes.",
    )
    parser.add_argument("--version", action="version", version=f"edgefaas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("policy-analyze", help="per-app cost of the four mode policies")
    pa.add_argument("--trace", required=True, help="invocation trace CSV")
    pa.add_argument("--dataset-format", default="canonical", choices=["canonical", "azure2020"])
    pa.add_argument("--params", help="policy parameter file (key=value lines)")
    pa.add_argument("--lookahead", type=int, default=50)
    pa.add_argument("--out", required=True, help="output directory")
    pa.set_defaults(func=cmd_policy_analyze)

    sn = sub.add_parser("snapshot", help="Monte-Carlo snapshot sweep")
    sn.add_argument("--topology", help="topology file")
    sn.add_argument("--gen", help="generate topology: seed,brokers,far,near")
    sn.add_argument("--alpha", required=True, help="comma list, fractions allowed (e.g. 0,2/8,4/8)")
    sn.add_argument("--beta", required=True, help="comma list in (0,1)")
    sn.add_argument("--mu-apps", required=True, help="comma list of Poisson means")
    sn.add_argument("--apps", default="50", help="comma list of lambda-app Poisson means")
    sn.add_argument("--replications", type=int, default=500)
    sn.add_argument("--seed", type=int, default=1)
    sn.add_argument("--out", required=True)
    sn.set_defaults(func=cmd_snapshot)

    dy = sub.add_parser("dynamic", help="trace-driven dynamic sweep")
    dy.add_argument("--topology", help="topology file")
    dy.add_argument("--gen", help="generate topology: seed,brokers,far,near")
    dy.add_argument("--trace", required=True)
    dy.add_argument("--dataset-format", default="canonical", choices=["canonical", "azure2020"])
    dy.add_argument("--apps", required=True, help="comma list of Poisson means for E[|A|]")
    dy.add_argument("--epoch-mins", required=True, help="comma list of epoch durations (minutes)")
    dy.add_argument("--sim-hours", type=float, default=24.0)
    dy.add_argument("--alpha", default="1/2")
    dy.add_argument("--beta", default="1/2")
    dy.add_argument("--replications", type=int, default=200)
    dy.add_argument("--seed", type=int, default=1)
    dy.add_argument("--params", help="policy parameter file")
    dy.add_argument("--lookahead", type=int, default=50)
    dy.add_argument("--pattern", default="dp", choices=["dp", "heuristic"],
                    help="mode-pattern source per app")
    dy.add_argument("--out", required=True)
    dy.set_defaults(func=cmd_dynamic)

    tp = sub.add_parser("topology", help="generate or inspect topology files")
    tp_sub = tp.add_subparsers(dest="action", required=True)
    tg = tp_sub.add_parser("gen")
    tg.add_argument("--seed", type=int, required=True)
    tg.add_argument("--brokers", type=int, required=True)
    tg.add_argument("--far", type=int, required=True)
    tg.add_argument("--near", type=int, required=True)
    tg.add_argument("--out", required=True)
    tg.set_defaults(func=cmd_topology, action="gen")
    ti = tp_sub.add_parser("inspect")
    ti.add_argument("--topology", required=True)
    ti.add_argument("--out")
    ti.set_defaults(func=cmd_topology, action="inspect")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ConnectivityError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
