"""Command-line entry point: gen-site, ingest, train, eval, sweep.

Every command accepts --config (JSON), auto-generated per-field flags that
override any config value, and --seed / --threads.  Identical invocations are
bit-reproducible, for any --threads setting.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields

import numpy as np

from . import baselines, evaluate, nnet, policy as policy_mod, sites
from .config import RunConfig, SECTIONS, load_config
from .env import EnvConfig
from .errors import NumericalError, ValidationError
from .evaluate import SWEEP_FIELDS
from .grid import RngStream
from .policy import CompassPolicy, ExploreParams, LossWeights

EVAL_POLICIES = (
    "loracompass",
    "spiral",
    "ranging",
    "simplex",
    "rm",
    "greedy",
    "eps_greedy",
    "sampling",
)

SWEEP_NAMES = (
    "distance",
    "proximity",
    "tau",
    "map_size",
    "beta",
    "alpha",
    "omega1",
    "agents",
    "explore",
)

EVAL_CSV_FIELDS = ["site", "policy", "rep", "success_rate", "efficiency", "median_steps"]


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    parser.add_argument("--threads", type=int, default=None, help="parallel rollout workers (default 1)")
    defaults = RunConfig()
    for section in SECTIONS:
        obj = getattr(defaults, section)
        for f in fields(obj):
            flag = "--%s-%s" % (section, f.name.replace("_", "-"))
            dest = "cfg__%s__%s" % (section, f.name)
            parser.add_argument(
                flag,
                dest=dest,
                default=None,
                metavar="V",
                help="%s.%s (default %r)" % (section, f.name, getattr(obj, f.name)),
            )


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for key, value in vars(args).items():
        if key.startswith("cfg__") and value is not None:
            _, section, name = key.split("__", 2)
            overrides[section + "." + name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    cfg = load_config(args.config, overrides=overrides)
    cfg._explicit = set(overrides)
    return cfg


def _explore_params(cfg: RunConfig, reference) -> ExploreParams:
    ref = cfg.explore.reference_rssi
    if ref is None:
        ref = reference
    if ref is None:
        raise ValidationError(
            "no reference RSSI available; set explore.reference_rssi or provide "
            "a checkpoint/--train-site that carries one"
        )
    return ExploreParams(float(ref), beta=cfg.explore.beta, alpha=cfg.explore.alpha)


# -- commands ---------------------------------------------------------------------


def cmd_gen_site(args):
    cfg = _config_from_args(args)
    tag = (args.tag[0], args.tag[1])
    site = sites.generate_site(cfg.sitegen, tag=tag)
    sites.save_site(site, args.out)
    print("site: %s" % args.out)
    print("tag cell: (%d, %d)" % site.tag)
    print("tag reference RSSI: %.3f dBm" % site.tag_reference_rssi)
    return 0


def cmd_ingest(args):
    cfg = _config_from_args(args)
    rows = []
    with open(args.samples, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["i", "j", "rssi"]:
            raise ValidationError("ingest CSV must have header i,j,rssi")
        for row in reader:
            rows.append((row["i"], row["j"], row["rssi"]))
    site = sites.ingest_samples(
        rows, tag=(args.tag[0], args.tag[1]), extent=args.extent,
        grid_size_m=cfg.sitegen.grid_size_m,
    )
    sites.save_site(site, args.out)
    print("site: %s (%d cells, extent %d)" % (args.out, site.side ** 2, site.extent))
    print("tag reference RSSI: %.3f dBm" % site.tag_reference_rssi)
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    site = sites.load_site(args.site)
    ep = _explore_params(cfg, site.tag_reference_rssi)
    params = nnet.load_checkpoint(args.resume) if args.resume else None
    if params is not None and params.m != cfg.net.m and "net.m" in cfg._explicit:
        raise ValidationError(
            "checkpoint has m=%d but net.m=%d was requested" % (params.m, cfg.net.m)
        )
    log_path = args.log if args.log else args.out + ".log.csv"
    params, rows = policy_mod.train(
        site,
        cfg.env,
        LossWeights(cfg.loss.omega1, cfg.loss.omega2),
        ep,
        epochs=cfg.net.epochs,
        batch_episodes=cfg.net.batch_episodes,
        stream=RngStream(cfg.seed),
        params=params,
        m=cfg.net.m if params is None else params.m,
        channels=tuple(cfg.net.channels),
        hidden=cfg.net.hidden,
        lr=cfg.net.lr,
        threads=cfg.threads,
        log_path=log_path,
        progress=lambda row: print(
            "epoch %(epoch)d  success %(success_rate).3f  steps %(mean_steps).1f  "
            "pg %(loss_pg).4f  pd %(loss_pd).5f  sl %(loss_sl).4f" % row
        ),
    )
    nnet.save_checkpoint(params, args.out)
    print("checkpoint: %s (updates: %d)" % (args.out, params.t))
    print("training log: %s" % log_path)
    return 0


def _build_policy(name, cfg, ckpt, eval_site, train_site):
    """Instantiate one of the comparison searchers for an evaluation site."""
    if name in ("loracompass", "greedy", "eps_greedy", "sampling"):
        if ckpt is None:
            raise ValidationError("policy %r needs --checkpoint" % name)
        ref = ckpt.extra.get("reference_rssi")
        ep = _explore_params(cfg, ref)
        mode = "ucb" if name == "loracompass" else name
        return CompassPolicy(ckpt, ep, mode=mode, eps=cfg.eval.eps)
    if name == "spiral":
        ref = cfg.explore.reference_rssi
        if ref is None and train_site is not None:
            ref = train_site.tag_reference_rssi
        if ref is None and ckpt is not None:
            ref = ckpt.extra.get("reference_rssi")
        if ref is None:
            raise ValidationError(
                "spiral needs a stop reference; pass --train-site or set "
                "explore.reference_rssi"
            )
        return baselines.SpiralSearcher(stop_rssi=float(ref))
    if name == "ranging":
        if train_site is None:
            raise ValidationError("ranging needs --train-site to fit its model")
        model = baselines.fit_ranging_model(train_site)
        return baselines.RangingSearcher(model, eval_site)
    if name == "simplex":
        return baselines.SimplexSearcher()
    if name == "rm":
        return baselines.robbins_monro_searcher(cfg.eval.rm_a0)
    raise ValidationError("unknown policy %r" % name)


def cmd_eval(args):
    cfg = _config_from_args(args)
    ckpt = nnet.load_checkpoint(args.checkpoint) if args.checkpoint else None
    if ckpt is not None and "net.m" in cfg._explicit and ckpt.m != cfg.net.m:
        raise ValidationError(
            "checkpoint has m=%d but net.m=%d was requested" % (ckpt.m, cfg.net.m)
        )
    train_site = sites.load_site(args.train_site) if args.train_site else None
    stream = RngStream(cfg.seed)
    rows = []
    for site_path in args.sites:
        site = sites.load_site(site_path)
        pol = _build_policy(args.policy, cfg, ckpt, site, train_site)
        for rep in range(cfg.eval.reps):
            records = evaluate.run_episodes(
                site,
                cfg.env,
                pol,
                cfg.eval.episodes,
                stream.child("eval"),
                offset=rep * cfg.eval.episodes,
                threads=cfg.threads,
            )
            rows.append(
                {
                    "site": site_path,
                    "policy": args.policy,
                    "rep": rep,
                    "success_rate": evaluate.success_rate(
                        records, cfg.env.proximity_d_m, site.grid_size_m
                    ),
                    "efficiency": evaluate.efficiency(
                        records, cfg.env.convergence_q, cfg.env.proximity_d_m, site.grid_size_m
                    ),
                    "median_steps": evaluate.median_steps(
                        records, cfg.env.convergence_q, cfg.env.proximity_d_m, site.grid_size_m
                    ),
                }
            )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=EVAL_CSV_FIELDS)
            w.writeheader()
            for row in rows:
                w.writerow(row)
    for site_path in args.sites:
        sub = [r for r in rows if r["site"] == site_path]
        sr = np.array([r["success_rate"] for r in sub])
        eff = np.array([r["efficiency"] for r in sub])
        print(
            "%s  %s  success %.3f +/- %.3f  efficiency %.3f +/- %.3f"
            % (site_path, args.policy, sr.mean(), sr.std(), eff.mean(), eff.std())
        )
    return 0


def _sweep_points(args, cfg, site, ckpt, train_site):
    """Build (values, point_factory) for the named sweep."""
    name = args.sweep
    base_env = cfg.env

    def compass(params=None, beta=None, alpha=None, mode="ucb"):
        p = params if params is not None else ckpt
        if p is None:
            raise ValidationError("sweep %r needs --checkpoint" % name)
        ep = _explore_params(cfg, p.extra.get("reference_rssi"))
        if beta is not None:
            ep.beta = beta
        if alpha is not None:
            ep.alpha = alpha
        return CompassPolicy(p, ep, mode=mode, eps=cfg.eval.eps)

    def env_with(**kw):
        d = dict(
            max_steps=base_env.max_steps,
            tau=base_env.tau,
            proximity_d_m=base_env.proximity_d_m,
            convergence_q=base_env.convergence_q,
            initial_distance_min_m=base_env.initial_distance_min_m,
            initial_distance_max_m=base_env.initial_distance_max_m,
        )
        d.update(kw)
        return EnvConfig(**d)

    def trained(m=None, omega1=None):
        ref = site.tag_reference_rssi
        ep = ExploreParams(ref, beta=cfg.explore.beta, alpha=cfg.explore.alpha)
        lw = LossWeights(
            cfg.loss.omega1 if omega1 is None else omega1, cfg.loss.omega2
        )
        params, _ = policy_mod.train(
            site,
            base_env,
            lw,
            ep,
            epochs=cfg.sweep.train_epochs,
            batch_episodes=cfg.net.batch_episodes,
            stream=RngStream(cfg.seed),
            m=cfg.net.m if m is None else m,
            channels=tuple(cfg.net.channels),
            hidden=cfg.net.hidden,
            lr=cfg.net.lr,
            threads=cfg.threads,
        )
        return params

    if name == "tau":
        values = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        return values, lambda v: {"site": site, "policy": compass(), "cfg": env_with(tau=v)}
    if name == "proximity":
        values = [100.0, 200.0, 300.0, 400.0, 500.0, 700.0, 1000.0]
        return values, lambda v: {"site": site, "policy": compass(), "metric_d_m": v}
    if name == "distance":
        extent_m = site.extent * site.grid_size_m
        values = [v for v in range(200, 2600, 200) if v <= extent_m]
        return values, lambda v: {
            "site": site,
            "policy": compass(),
            "cfg": env_with(initial_distance_min_m=max(v - 100, 100), initial_distance_max_m=v + 100),
        }
    if name == "beta":
        values = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 13.0, 16.0]
        return values, lambda v: {"site": site, "policy": compass(beta=v)}
    if name == "alpha":
        values = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0]
        return values, lambda v: {"site": site, "policy": compass(alpha=v)}
    if name == "map_size":
        values = [2, 4, 6, 8, 10, 12]
        return values, lambda v: {"site": site, "policy": compass(params=trained(m=v))}
    if name == "omega1":
        values = [0.0, 0.5, 1.0, 1.5, 2.0]
        return values, lambda v: {"site": site, "policy": compass(params=trained(omega1=v))}
    if name == "agents":
        values = [1, 2, 3, 4, 5]
        return values, lambda v: {"site": site, "policy": compass(), "agents": v}
    if name == "explore":
        values = ["ucb", "greedy", "eps_greedy", "sampling"]
        return values, lambda v: {"site": site, "policy": compass(mode=v)}
    raise ValidationError("unknown sweep %r" % name)


def cmd_sweep(args):
    cfg = _config_from_args(args)
    site = sites.load_site(args.site)
    ckpt = nnet.load_checkpoint(args.checkpoint) if args.checkpoint else None
    train_site = sites.load_site(args.train_site) if args.train_site else None
    values, factory = _sweep_points(args, cfg, site, ckpt, train_site)
    rows = evaluate.run_sweep(
        args.sweep,
        values,
        factory,
        cfg.env,
        RngStream(cfg.seed),
        episodes=cfg.sweep.episodes,
        reps=cfg.sweep.reps,
        threads=cfg.threads,
    )
    evaluate.write_sweep_csv(rows, args.out)
    for entry in evaluate.summarize_sweep(rows):
        print(
            "%s=%-8s success %.3f +/- %.3f  efficiency %.3f +/- %.3f  median steps %.1f"
            % (
                args.sweep,
                entry["value"],
                entry["success_rate_mean"],
                entry["success_rate_std"],
                entry["efficiency_mean"],
                entry["efficiency_std"],
                entry["median_steps_mean"],
            )
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="loracompass",
        description="RSSI-guided grid search: site simulator, training, baselines, metrics",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-site", help="generate a synthetic site JSON file")
    p.add_argument("--out", required=True, help="output site JSON path")
    p.add_argument("--tag", nargs=2, type=int, default=[0, 0], metavar=("I", "J"))
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_site)

    p = sub.add_parser("ingest", help="build a site from an i,j,rssi sample CSV")
    p.add_argument("samples", help="CSV with header i,j,rssi")
    p.add_argument("--out", required=True)
    p.add_argument("--tag", nargs=2, type=int, required=True, metavar=("I", "J"))
    p.add_argument("--extent", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the policy on a site")
    p.add_argument("--site", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="training log CSV (default <out>.log.csv)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy on one or more sites")
    p.add_argument("sites", nargs="+", help="site JSON files")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy", choices=EVAL_POLICIES, default="loracompass")
    p.add_argument("--train-site", default=None, help="site for ranging fit / spiral stop")
    p.add_argument("--out", default=None, help="metrics CSV path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run one of the parameter sweeps")
    p.add_argument("sweep", choices=SWEEP_NAMES)
    p.add_argument("--site", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--train-site", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
