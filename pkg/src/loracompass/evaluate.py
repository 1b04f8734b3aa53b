"""Metrics, evaluation runs, parameter sweeps, and the multi-agent case study.

Success rate is the fraction of episodes whose final state lies strictly
within the proximity radius; efficiency is the mean, over converged episodes,
of the L1 shortest-path length divided by k*, the step at which the final
q-step dwell inside the radius began.  Both are pure functions of the
persisted records, so results can be recomputed exactly from CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, rollout_episodes
from .errors import ValidationError
from .grid import RngStream
from .sites import SiteModel


@dataclass
class EvalRecord:
    episode: int
    s0: tuple
    steps: int
    converged_at: object  # int or None (at the run's env proximity/q)
    final_s: tuple
    states: list  # relative states after 0..steps steps

    def distances_m(self, grid_size_m) -> np.ndarray:
        arr = np.array(self.states, dtype=np.float64)
        return np.hypot(arr[:, 0], arr[:, 1]) * grid_size_m


def record_from_episode(state, site: SiteModel, episode: int) -> EvalRecord:
    rel = [(u[0] - site.tag[0], u[1] - site.tag[1]) for u in state.positions]
    return EvalRecord(
        episode=episode,
        s0=rel[0],
        steps=state.k,
        converged_at=state.converged_at,
        final_s=rel[-1],
        states=rel,
    )


def success_rate(records, d_m, grid_size_m) -> float:
    """Fraction of records ending strictly within d_m of the tag."""
    if not records:
        raise ValidationError("no records")
    hits = sum(
        1
        for r in records
        if float(np.hypot(r.final_s[0], r.final_s[1])) * grid_size_m < d_m
    )
    return hits / len(records)


def k_star(record: EvalRecord, d_m, q, grid_size_m):
    """Earliest step from which the agent stayed within d_m for q consecutive
    steps; None if it never did.  The starting cell does not count."""
    dist = record.distances_m(grid_size_m)
    run = 0
    for k in range(1, len(dist)):
        if dist[k] < d_m:
            run += 1
            if run >= q:
                return k - q + 1
        else:
            run = 0
    return None


def efficiency(records, q, d_m, grid_size_m) -> float:
    """Mean of |s0|_1 / k* over converged records; 0 when none converged."""
    vals = []
    for r in records:
        ks = k_star(r, d_m, q, grid_size_m)
        if ks is not None:
            vals.append((abs(r.s0[0]) + abs(r.s0[1])) / ks)
    if not vals:
        return 0.0
    return float(np.mean(vals))


def median_steps(records, q, d_m, grid_size_m) -> float:
    """Median k* over converged records; median of step counts if none."""
    ks = [k_star(r, d_m, q, grid_size_m) for r in records]
    ks = [k for k in ks if k is not None]
    if not ks:
        return float(np.median([r.steps for r in records]))
    return float(np.median(ks))


def run_episodes(
    site: SiteModel,
    cfg: EnvConfig,
    policy,
    n: int,
    stream: RngStream,
    offset: int = 0,
    threads: int = 1,
    u0=None,
) -> list:
    states = rollout_episodes(site, cfg, policy, n, stream, offset=offset, threads=threads, u0=u0)
    return [record_from_episode(s, site, offset + i) for i, s in enumerate(states)]


# -- persistence ----------------------------------------------------------------

RECORD_FIELDS = ["episode", "s0_i", "s0_j", "steps", "converged_at", "final_i", "final_j"]


def save_records(records, path_prefix):
    """Write <prefix>.records.csv (one row per episode) and <prefix>.steps.csv
    (one row per step with the relative state, exact integers)."""
    with open(str(path_prefix) + ".records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow(
                [
                    r.episode,
                    r.s0[0],
                    r.s0[1],
                    r.steps,
                    "" if r.converged_at is None else r.converged_at,
                    r.final_s[0],
                    r.final_s[1],
                ]
            )
    with open(str(path_prefix) + ".steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "k", "s_i", "s_j"])
        for r in records:
            for k, s in enumerate(r.states):
                w.writerow([r.episode, k, s[0], s[1]])


def load_records(path_prefix) -> list:
    steps = {}
    with open(str(path_prefix) + ".steps.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            steps.setdefault(int(row["episode"]), []).append(
                (int(row["k"]), (int(row["s_i"]), int(row["s_j"])))
            )
    records = []
    with open(str(path_prefix) + ".records.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            eid = int(row["episode"])
            st = [s for _, s in sorted(steps.get(eid, []))]
            records.append(
                EvalRecord(
                    episode=eid,
                    s0=(int(row["s0_i"]), int(row["s0_j"])),
                    steps=int(row["steps"]),
                    converged_at=None if row["converged_at"] == "" else int(row["converged_at"]),
                    final_s=(int(row["final_i"]), int(row["final_j"])),
                    states=st,
                )
            )
    return records


# -- sweeps -----------------------------------------------------------------------

SWEEP_FIELDS = ["sweep_param", "value", "rep", "success_rate", "efficiency", "median_steps"]


def run_sweep(
    name,
    values,
    point_factory,
    base_cfg: EnvConfig,
    stream: RngStream,
    episodes: int = 200,
    reps: int = 10,
    threads: int = 1,
):
    """Generic sweep driver: one row per (value, rep).

    ``point_factory(value)`` returns a dict with keys among:
      site, policy (required), cfg, metric_d_m, agents.
    Episode RNG streams depend only on (rep, episode index), so sweep points
    with identical dynamics produce identical episodes (paired comparisons).
    """
    rows = []
    for value in values:
        point = point_factory(value)
        site = point["site"]
        policy = point["policy"]
        cfg = point.get("cfg", base_cfg)
        metric_d = point.get("metric_d_m", cfg.proximity_d_m)
        agents = point.get("agents", 1)
        for rep in range(reps):
            offset = rep * episodes
            if agents == 1:
                records = run_episodes(
                    site, cfg, policy, episodes, stream.child("sweep"), offset=offset,
                    threads=threads,
                )
                sr = success_rate(records, metric_d, site.grid_size_m)
                eff = efficiency(records, cfg.convergence_q, metric_d, site.grid_size_m)
                med = median_steps(records, cfg.convergence_q, metric_d, site.grid_size_m)
            else:
                groups = multi_agent_eval(
                    agents, site, policy, cfg, stream.child("sweep"),
                    n_groups=episodes, offset=offset, threads=threads,
                )
                sr = joint_success_rate(groups, metric_d, site.grid_size_m)
                eff = joint_efficiency(groups, cfg.convergence_q, metric_d, site.grid_size_m)
                med = joint_median_steps(groups, cfg.convergence_q, metric_d, site.grid_size_m)
            rows.append(
                {
                    "sweep_param": name,
                    "value": value,
                    "rep": rep,
                    "success_rate": sr,
                    "efficiency": eff,
                    "median_steps": med,
                }
            )
    return rows


def summarize_sweep(rows):
    """mean and std of each metric per swept value."""
    out = {}
    for row in rows:
        out.setdefault(row["value"], []).append(row)
    summary = []
    for value, group in out.items():
        entry = {"value": value, "n": len(group)}
        for key in ("success_rate", "efficiency", "median_steps"):
            vals = np.array([g[key] for g in group], dtype=np.float64)
            entry[key + "_mean"] = float(vals.mean())
            entry[key + "_std"] = float(vals.std())
        summary.append(entry)
    return summary


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


# -- multi-agent case study ---------------------------------------------------------


def multi_agent_eval(
    n_agents, site, policy, cfg, stream: RngStream, n_groups=1, offset=0, threads=1
):
    """Groups of n independent searches sharing one start cell per group.

    Returns a list of groups, each a list of EvalRecords.  A group succeeds
    if any member does; the joint k* is the minimum over converged members.
    """
    if n_agents < 1:
        raise ValidationError("n_agents must be >= 1")
    from .env import feasible_ring

    ring = feasible_ring(site, cfg)
    if not ring:
        raise ValidationError("initial distance range excludes every site cell")
    groups = []
    for g in range(n_groups):
        gid = offset + g
        g_init = stream.child("ma-start", gid).generator()
        u0 = ring[int(g_init.integers(len(ring)))]
        records = run_episodes(
            site, cfg, policy, n_agents,
            stream.child("ma", gid), threads=threads, u0=u0,
        )
        groups.append(records)
    return groups


def joint_success_rate(groups, d_m, grid_size_m) -> float:
    hits = sum(1 for g in groups if any(
        float(np.hypot(r.final_s[0], r.final_s[1])) * grid_size_m < d_m for r in g
    ))
    return hits / len(groups)


def joint_k_stars(groups, q, d_m, grid_size_m):
    out = []
    for g in groups:
        ks = [k_star(r, d_m, q, grid_size_m) for r in g]
        ks = [k for k in ks if k is not None]
        out.append(min(ks) if ks else None)
    return out


def joint_efficiency(groups, q, d_m, grid_size_m) -> float:
    vals = []
    for g, ks in zip(groups, joint_k_stars(groups, q, d_m, grid_size_m)):
        if ks is not None:
            s0 = g[0].s0
            vals.append((abs(s0[0]) + abs(s0[1])) / ks)
    return float(np.mean(vals)) if vals else 0.0


def joint_median_steps(groups, q, d_m, grid_size_m) -> float:
    ks = [k for k in joint_k_stars(groups, q, d_m, grid_size_m) if k is not None]
    if not ks:
        return float(np.median([g[0].steps for g in groups]))
    return float(np.median(ks))
