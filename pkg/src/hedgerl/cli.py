"""Command-line workflows: simulate, train, evaluate, ingest, heatmap, calibrate.

Every subcommand is a pure function of (config file, input files, master
seed): reruns produce byte-identical outputs.  Reports embed the resolved
configuration and the package version; floats are serialized via repr so
they round-trip exactly.

Exit codes: 0 success, 2 config/validation error, 3 IO error, 4 numeric /
convergence error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .agent import (
    TrainConfig,
    SimulatedEnvFactory,
    load_bundle,
    save_bundle,
    train,
)
from .analytics import IVConvergenceError, NoArbitrageBoundsError
from .chains import (
    ChainFormatError,
    ChainSchemaError,
    CHAIN_COLUMNS,
    UnderlierHistory,
    compute_features,
    episodes_to_env,
    filter_universe,
    load_chain_csv,
)
from .env import CostModel
from .evaluation import (
    calibration_bins,
    collect_step_samples,
    compare_strategies,
    epistemic_heatmap,
    evaluate_policy,
    realized_variance_heatmap,
    run_policy,
    uncertainty_heatmap,
)
from .market import GbmParams, episode_seed, generate_episodes, HedgeEpisode
from .policies import ActorPolicy, BsDeltaPolicy, NoHedgePolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# purpose indices for deriving independent seed streams from the master seed
SEED_SIMULATE = 0
SEED_TRAIN_EPISODES = 1
SEED_TRAINER = 2
SEED_EVAL_EPISODES = 3
SEED_MC = 4

EPISODE_STORE_VERSION = 1


@dataclass
class RunConfig:
    """Resolved experiment configuration (defaults are the desk-scale setup)."""

    seed: int = 7
    out_dir: str = "out"
    drift: float = 0.05
    vol: float = 0.2
    initial_price: float = 100.0
    maturity_days: int = 30
    steps_per_day: int = 1
    cost_rate: float = 0.01
    risk_lambda: float = 1.0
    normalize_rewards: bool = True
    eval_episodes: int = 5000
    simulate_episodes: int = 100
    train: TrainConfig = field(default_factory=TrainConfig)

    def gbm(self) -> GbmParams:
        return GbmParams(drift=self.drift, vol=self.vol, initial_price=self.initial_price)

    def cost(self) -> CostModel:
        return CostModel(rate=self.cost_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["hidden"] = list(self.train.hidden)
        d.pop("out_dir")  # where outputs land is not part of the experiment
        return d


def _config_from_dict(data: dict) -> tuple[RunConfig, list[str]]:
    errors: list[str] = []
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    for name in sorted(unknown):
        errors.append(f"unknown config key: {name}")
    train_data = dict(data.get("train", {}))
    train_known = {f.name for f in fields(TrainConfig)} | {"variant"}
    for name in sorted(set(train_data) - train_known):
        errors.append(f"unknown train config key: {name}")
    train_data.pop("variant", None)
    if "hidden" in train_data:
        train_data["hidden"] = tuple(train_data["hidden"])
    cfg_kwargs = {k: v for k, v in data.items() if k in known and k != "train"}
    try:
        train_cfg = TrainConfig(**{k: v for k, v in train_data.items() if k in train_known})
    except (TypeError, ValueError) as exc:
        errors.append(f"train config: {exc}")
        train_cfg = TrainConfig()
    try:
        cfg = RunConfig(train=train_cfg, **cfg_kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"config: {exc}")
        cfg = RunConfig(train=train_cfg)
    return cfg, errors


def _validate_config(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.vol < 0:
        errors.append(f"vol must be >= 0, got {cfg.vol}")
    if cfg.initial_price <= 0:
        errors.append(f"initial_price must be positive, got {cfg.initial_price}")
    if not 1 <= cfg.maturity_days <= 365:
        errors.append(f"maturity_days must be in [1, 365], got {cfg.maturity_days}")
    if cfg.steps_per_day < 1:
        errors.append(f"steps_per_day must be >= 1, got {cfg.steps_per_day}")
    if cfg.cost_rate < 0:
        errors.append(f"cost_rate must be >= 0, got {cfg.cost_rate}")
    if cfg.risk_lambda < 0:
        errors.append(f"risk_lambda must be >= 0, got {cfg.risk_lambda}")
    if cfg.eval_episodes < 2:
        errors.append(f"eval_episodes must be >= 2, got {cfg.eval_episodes}")
    if cfg.simulate_episodes < 0:
        errors.append(f"simulate_episodes must be >= 0, got {cfg.simulate_episodes}")
    return errors


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, cfg: RunConfig, command: str, outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    _write_json(out_dir / "manifest.json", manifest)


def _eval_episodes(cfg: RunConfig) -> list[HedgeEpisode]:
    return generate_episodes(
        cfg.gbm(),
        cfg.maturity_days,
        cfg.steps_per_day,
        cfg.eval_episodes,
        episode_seed(cfg.seed, SEED_EVAL_EPISODES),
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = episode_seed(cfg.seed, SEED_SIMULATE)
    episodes = generate_episodes(
        cfg.gbm(), cfg.maturity_days, cfg.steps_per_day, cfg.simulate_episodes, master
    )
    outputs = []
    if args.split:
        for i, ep in enumerate(episodes):
            name = f"episode_{i:05d}.csv"
            with open(out_dir / name, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "time_years", "stock", "option"])
                for t in range(ep.n_nodes):
                    writer.writerow(
                        [t, _fmt(ep.path.times[t]), _fmt(ep.path.prices[t]), _fmt(ep.option_prices[t])]
                    )
            outputs.append(name)
    else:
        name = "episodes.csv"
        with open(out_dir / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode_id", "step", "time_years", "stock", "option"])
            for i, ep in enumerate(episodes):
                for t in range(ep.n_nodes):
                    writer.writerow(
                        [i, t, _fmt(ep.path.times[t]), _fmt(ep.path.prices[t]), _fmt(ep.option_prices[t])]
                    )
        outputs.append(name)
    _write_manifest(
        out_dir,
        cfg,
        "simulate",
        outputs,
        {"seeds": [ep.path.seed for ep in episodes]},
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = cfg.train
    if args.variant == "ddpg":
        train_cfg = TrainConfig(
            **{**asdict(train_cfg), "hidden": train_cfg.hidden, "uncertainty": False, "dropout": 0.0}
        )
    factory = SimulatedEnvFactory(
        gbm=cfg.gbm(),
        maturity_days=cfg.maturity_days,
        steps_per_day=cfg.steps_per_day,
        cost=cfg.cost(),
        risk_lambda=cfg.risk_lambda,
        normalize_rewards=cfg.normalize_rewards,
        master_seed=episode_seed(cfg.seed, SEED_TRAIN_EPISODES),
    )
    result = train(factory, train_cfg, episode_seed(cfg.seed, SEED_TRAINER))
    save_bundle(out_dir, result, extra={"resolved_config": cfg.to_dict(), "version": __version__})
    _write_manifest(
        out_dir,
        cfg,
        "train",
        [
            "actor.json",
            "critic.json",
            "target_actor.json",
            "target_critic.json",
            "train_config.json",
            "train_log.csv",
        ],
        {"variant": train_cfg.variant},
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _strategies_from_args(args: argparse.Namespace) -> list[tuple[str, object]]:
    strategies: list[tuple[str, object]] = [("delta", BsDeltaPolicy())]
    for spec_str in args.baseline or []:
        if spec_str == "delta":
            continue
        if spec_str == "no-hedge":
            strategies.append(("no-hedge", NoHedgePolicy()))
        else:
            raise ValueError(f"unknown baseline {spec_str!r} (choose delta or no-hedge)")
    for item in args.checkpoint or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).name, item
        actor, _, _ = load_bundle(path)
        strategies.append((name, ActorPolicy(actor)))
    return strategies


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strategies = _strategies_from_args(args)
    episodes = _eval_episodes(cfg)
    cost = cfg.cost()
    table = compare_strategies(
        strategies, episodes, cost, normalize=cfg.normalize_rewards, per_step=args.per_step
    )
    outputs = ["strategy_table.csv", "pnl_report.json", "histogram.csv"]
    with open(out_dir / "strategy_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "mean", "variance", "gain_vs_delta", "n"])
        for row in table.rows:
            writer.writerow([row.name, _fmt(row.mean), _fmt(row.variance), _fmt(row.gain_vs_delta), row.n])

    reports = {}
    for name, policy in strategies:
        report = evaluate_policy(policy, episodes, cost, normalize=cfg.normalize_rewards)
        reports[name] = report.to_dict()
    _write_json(
        out_dir / "pnl_report.json",
        {"version": __version__, "config": cfg.to_dict(), "reports": reports},
    )
    with open(out_dir / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "bin_lo", "bin_hi", "count"])
        for name in reports:
            edges = reports[name]["histogram_edges"]
            counts = reports[name]["histogram_counts"]
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([name, _fmt(lo), _fmt(hi), c])

    if args.dump_trajectories:
        for name, policy in strategies:
            rollouts = run_policy(episodes, policy, cost)
            fname = f"trajectories_{name}.csv"
            outputs.append(fname)
            with open(out_dir / fname, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["episode_id", "step", "stock", "option", "position", "reward", "cum_pnl"])
                for i, ep in enumerate(rollouts.episodes):
                    rewards = rollouts.rewards[i]
                    positions = rollouts.positions[i]
                    cum = 0.0
                    for t in range(len(rewards)):
                        cum += rewards[t]
                        writer.writerow(
                            [
                                i,
                                t,
                                _fmt(ep.path.prices[t]),
                                _fmt(ep.option_prices[t]),
                                _fmt(positions[t]),
                                _fmt(rewards[t]),
                                _fmt(cum),
                            ]
                        )
    _write_manifest(out_dir, cfg, "evaluate", outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def episodes_to_store(episodes: list[HedgeEpisode]) -> dict:
    records = []
    for ep in episodes:
        rec = {
            "times": ep.path.times.tolist(),
            "taus": ep.taus.tolist(),
            "prices": ep.path.prices.tolist(),
            "option_prices": ep.option_prices.tolist(),
            "strike": float(ep.spec.strike),
            "premium": float(ep.premium),
            "steps_per_day": ep.steps_per_day,
            "sigma": ep.sigma,
            "features": None,
        }
        if ep.features is not None:
            rec["features"] = {
                "sigma_impl": ep.features.sigma_impl.tolist(),
                "sigma_20": ep.features.sigma_20.tolist(),
                "sigma_30": ep.features.sigma_30.tolist(),
                "gamma": ep.features.gamma.tolist(),
                "theta": ep.features.theta.tolist(),
                "vega": ep.features.vega.tolist(),
            }
        records.append(rec)
    return {"format_version": EPISODE_STORE_VERSION, "episodes": records}


def store_to_episodes(store: dict) -> list[HedgeEpisode]:
    from .analytics import OptionSpec
    from .market import EpisodeFeatures, PricePath

    if store.get("format_version") != EPISODE_STORE_VERSION:
        raise ValueError(f"unsupported episode store version {store.get('format_version')!r}")
    episodes = []
    for rec in store["episodes"]:
        features = None
        if rec.get("features"):
            features = EpisodeFeatures(
                **{k: np.array(v, dtype=float) for k, v in rec["features"].items()}
            )
        taus = np.array(rec["taus"], dtype=float)
        episodes.append(
            HedgeEpisode(
                path=PricePath(
                    times=np.array(rec["times"], dtype=float),
                    prices=np.array(rec["prices"], dtype=float),
                    seed=0,
                ),
                spec=OptionSpec(strike=rec["strike"], time_to_maturity=float(taus[0])),
                option_prices=np.array(rec["option_prices"], dtype=float),
                steps_per_day=int(rec["steps_per_day"]),
                premium=float(rec["premium"]),
                taus=taus,
                sigma=rec.get("sigma"),
                features=features,
            )
        )
    return episodes


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = load_chain_csv(args.chain)

    if args.underlier:
        closes: dict = {}
        with open(args.underlier, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"date", "close"} <= set(reader.fieldnames):
                raise ChainSchemaError(f"{args.underlier} must have columns date,close")
            from datetime import date as _date

            for raw in reader:
                closes[_date.fromisoformat(raw["date"])] = float(raw["close"])
    else:
        closes = {}
        for row in result.rows:
            closes.setdefault(row.quote_date, row.underlying_close)
    dates = sorted(closes)
    history = UnderlierHistory(dates=dates, closes=np.array([closes[d] for d in dates]))

    chain_episodes = filter_universe(result.rows)
    featured = [compute_features(ep, history) for ep in chain_episodes]
    env_episodes = episodes_to_env(featured, include_gapped=args.include_gapped)

    with open(out_dir / "rejects.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CHAIN_COLUMNS + ["reject_reason"])
        writer.writeheader()
        for rej in result.rejects:
            row = {k: rej.raw.get(k, "") for k in CHAIN_COLUMNS}
            row["reject_reason"] = rej.reason
            writer.writerow(row)

    with open(out_dir / "features.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "expiry", "strike", "quote_date", "tau", "moneyness", "sigma_impl",
                "vega", "theta", "gamma", "sigma_20", "sigma_30", "flag",
            ]
        )
        for fe in featured:
            ep = fe.episode
            for i, d in enumerate(ep.dates):
                f = fe.features[i]
                flag = fe.flags[i] or ""
                if f is None:
                    writer.writerow(
                        [ep.expiry.isoformat(), _fmt(ep.strike), d.isoformat()]
                        + [""] * 8 + [flag]
                    )
                else:
                    writer.writerow(
                        [
                            ep.expiry.isoformat(), _fmt(ep.strike), d.isoformat(),
                            _fmt(f.tau), _fmt(f.moneyness), _fmt(f.sigma_impl),
                            _fmt(f.vega), _fmt(f.theta), _fmt(f.gamma),
                            _fmt(f.sigma_20), _fmt(f.sigma_30), flag,
                        ]
                    )

    _write_json(out_dir / "episodes.json", episodes_to_store(env_episodes))
    _write_manifest(
        out_dir,
        cfg,
        "ingest",
        ["rejects.csv", "features.csv", "episodes.json"],
        {
            "rows_parsed": len(result.rows),
            "rows_rejected": len(result.rejects),
            "contracts_kept": len(chain_episodes),
            "episodes_env_ready": len(env_episodes),
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# heatmap / calibrate
# ---------------------------------------------------------------------------

def _write_heatmap_csv(path: Path, grid, missing_as_empty: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["moneyness", "tau_days", "value", "count"])
        for i, td in enumerate(grid.tau_days):
            for j, m in enumerate(grid.moneyness):
                value = grid.values[i, j]
                count = 1 if grid.counts is None else int(grid.counts[i, j])
                if np.isnan(value):
                    writer.writerow([_fmt(m), _fmt(td), "", count])
                else:
                    writer.writerow([_fmt(m), _fmt(td), _fmt(value), count])


def cmd_heatmap(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    actor, critic, _ = load_bundle(args.checkpoint)
    policy = ActorPolicy(actor)
    moneyness = np.round(np.arange(0.8, 1.2 + 1e-9, 0.01), 10)
    tau_days = np.arange(1.0, float(cfg.maturity_days) + 1e-9, 1.0)

    model = uncertainty_heatmap(policy, moneyness, tau_days, vol=cfg.vol)
    _write_heatmap_csv(out_dir / "heatmap_model.csv", model)

    epistemic = epistemic_heatmap(
        critic,
        policy,
        moneyness,
        tau_days,
        vol=cfg.vol,
        passes=cfg.train.mc_passes,
        seed=episode_seed(cfg.seed, SEED_MC),
    )
    _write_heatmap_csv(out_dir / "heatmap_epistemic.csv", epistemic)

    episodes = _eval_episodes(cfg)
    step = 0.01
    m_edges = np.concatenate([moneyness - step / 2, [moneyness[-1] + step / 2]])
    t_edges = np.concatenate([tau_days - 0.5, [tau_days[-1] + 0.5]])
    realized = realized_variance_heatmap(episodes, policy, cfg.cost(), m_edges, t_edges)
    _write_heatmap_csv(out_dir / "heatmap_realized.csv", realized)

    _write_manifest(
        out_dir,
        cfg,
        "heatmap",
        ["heatmap_model.csv", "heatmap_epistemic.csv", "heatmap_realized.csv"],
    )
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    actor, _, _ = load_bundle(args.checkpoint)
    policy = ActorPolicy(actor)
    episodes = _eval_episodes(cfg)
    sigma2, rewards = collect_step_samples(
        policy, episodes, cfg.cost(), normalize=cfg.normalize_rewards
    )
    report = calibration_bins(sigma2, rewards, k=args.bins)
    with open(out_dir / "calibration.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "lo", "hi", "n", "mean_sigma2", "realized_var"])
        for i, b in enumerate(report.bins):
            writer.writerow([i, _fmt(b.lo), _fmt(b.hi), b.n, _fmt(b.mean_sigma2), _fmt(b.realized_var)])
    _write_manifest(
        out_dir,
        cfg,
        "calibrate",
        ["calibration.csv"],
        {
            "spearman_rho": report.spearman_rho,
            "n_samples": report.n_samples,
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hedgerl",
        description="Deep-hedging experiments: simulation, training, evaluation, ingestion.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated episodes as CSV")
    p.add_argument("--split", action="store_true", help="one file per episode")

    p = sub.add_parser("train", help="train an agent and write a checkpoint bundle")
    p.add_argument(
        "--variant",
        choices=["ddpg", "ddpg-uncertainty"],
        default="ddpg-uncertainty",
        help="plain DDPG (sigma^2 frozen at 1, no dropout) or the uncertainty-aware variant",
    )

    p = sub.add_parser("evaluate", help="compare strategies and write reports")
    p.add_argument("--checkpoint", action="append", help="NAME=BUNDLE_DIR (repeatable)")
    p.add_argument("--baseline", action="append", help="delta or no-hedge (repeatable)")
    p.add_argument("--per-step", action="store_true", dest="per_step",
                   help="statistics over per-step rewards instead of episode totals")
    p.add_argument("--dump-trajectories", action="store_true", dest="dump_trajectories")

    p = sub.add_parser("ingest", help="parse an option-chain CSV into features and episodes")
    p.add_argument("chain", help="chain CSV path")
    p.add_argument("--underlier", help="optional underlier history CSV (date,close)")
    p.add_argument("--include-gapped", action="store_true", dest="include_gapped")

    p = sub.add_parser("heatmap", help="model/epistemic/realized uncertainty heatmaps")
    p.add_argument("--checkpoint", required=True, help="bundle directory")

    p = sub.add_parser("calibrate", help="binned uncertainty calibration report")
    p.add_argument("--checkpoint", required=True, help="bundle directory")
    p.add_argument("--bins", type=int, default=7)

    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ingest": cmd_ingest,
    "heatmap": cmd_heatmap,
    "calibrate": cmd_calibrate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_IO
        except json.JSONDecodeError as exc:
            print(f"config {args.config} is not valid JSON: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    cfg, errors = _config_from_dict(data)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    errors.extend(_validate_config(cfg))
    if errors:
        for message in errors:
            print(f"config error: {message}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return COMMANDS[args.command](cfg, args)
    except (NoArbitrageBoundsError, IVConvergenceError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ChainSchemaError, ChainFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
