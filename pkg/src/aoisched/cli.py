"""Command-line experiment harness.

    aoisched run CONFIG|PRESET [-o out.csv]
    aoisched validate-indices [--lam 0.5 ...] [--a-max 5] [--d-max 10]
    aoisched admit DEADLINE_CONFIG [--schedule] [--simulate SLOTS]
    aoisched list-presets

Scenario configs are TOML files; see README.md for the schema. Set
AOISCHED_THREADS to run sweep points and replications in parallel processes.
Exit status: 0 ok, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .access import AccessConfig, PROTOCOLS, run_access, staggered_states, tune_ipra
from .core import TerminalSpec, run_slots
from .deadline import DeadlineSpec, admit, build_schedule, simulate_schedule
from .indices import index_bernoulli
from .mdp import default_a_max, indifference_charge, rvi_full
from .policies import POLICIES, make_policy

THREADS_ENV = "AOISCHED_THREADS"
DEFAULT_HORIZON = 1_000_000

SLOT_POLICIES = tuple(POLICIES)
ORACLE = "mdp_oracle"
ORACLE_A_MAX = 100
ORACLE_D_MAX = 20
POLICY_KINDS = SLOT_POLICIES + PROTOCOLS + (ORACLE,)
SWEEP_VARIABLES = ("lam", "n", "p_e", "omega", "T_s", "p", "index_threshold")

TERMINAL_KEYS = {"lam", "period", "omega", "p_e", "deadline", "epsilon", "phase", "count"}
POLICY_KEYS = {
    "kind", "p", "index_threshold", "T_s", "T_c", "stagger", "warmup",
    "tune_horizon", "tune_replications", "a_max", "d_max", "normalize_by",
}
TOP_KEYS = {"name", "horizon", "replications", "seed", "output", "terminals", "policy", "sweep"}

CSV_COLUMNS = [
    "scenario", "point", "sweep_variable", "sweep_value", "replication", "seed", "policy",
    "n_terminals", "horizon", "parameters", "mean_aoi", "normalized_aoi", "violation",
    "contention_slots", "idle_slots", "successes", "collisions", "channel_failures",
    "deliveries", "wall_time",
]


class ConfigError(ValueError):
    """The scenario or deadline config does not match the schema."""


@dataclass
class ScenarioConfig:
    name: str
    terminals: list
    policies: list
    policy_params: dict
    horizon: int = DEFAULT_HORIZON
    replications: int = 1
    seed: int = 0
    output: Optional[str] = None
    sweep_variable: Optional[str] = None
    sweep_values: list = field(default_factory=list)

    def points(self) -> list:
        """(variable, value, terminal specs, access params) per sweep point."""
        if self.sweep_variable is None:
            return [(None, None, self.terminals, dict(self.policy_params))]
        out = []
        for value in self.sweep_values:
            specs, params = self.terminals, dict(self.policy_params)
            var = self.sweep_variable
            if var == "n":
                specs = [replace(specs[0], id=i) for i in range(int(value))]
            elif var == "lam":
                # Periodic terminals keep their period.
                specs = [s if s.periodic else replace(s, lam=float(value)) for s in specs]
            elif var in ("p_e", "omega"):
                specs = [replace(s, **{var: float(value)}) for s in specs]
            else:
                params[var] = value
            out.append((var, value, specs, params))
        return out


def _expand_terminals(rows) -> list:
    if not isinstance(rows, list) or not rows:
        raise ConfigError("'terminals' must be a non-empty array of tables")
    specs = []
    for row in rows:
        unknown = set(row) - TERMINAL_KEYS
        if unknown:
            raise ConfigError(f"unknown terminal keys {sorted(unknown)}")
        row = dict(row)
        count = int(row.pop("count", 1))
        if count < 1:
            raise ConfigError("terminal count must be >= 1")
        for _ in range(count):
            try:
                specs.append(TerminalSpec(id=len(specs), **row))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad terminal {row}: {exc}") from None
    return specs


def parse_scenario(data: dict) -> ScenarioConfig:
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    specs = _expand_terminals(data.get("terminals"))
    pol = dict(data.get("policy", {}))
    bad = set(pol) - POLICY_KEYS
    if bad:
        raise ConfigError(f"unknown policy keys {sorted(bad)}")
    kinds = pol.pop("kind", "whittle")
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    for k in kinds:
        if k not in POLICY_KINDS:
            raise ConfigError(f"unknown policy {k!r}; choose from {list(POLICY_KINDS)}")
    ref = pol.get("normalize_by")
    if ref is not None and ref not in kinds:
        raise ConfigError("normalize_by must name one of the listed policies")
    cfg = ScenarioConfig(
        name=str(data.get("name", "scenario")),
        terminals=specs,
        policies=kinds,
        policy_params=pol,
        horizon=int(data.get("horizon", DEFAULT_HORIZON)),
        replications=int(data.get("replications", 1)),
        seed=int(data.get("seed", 0)),
        output=data.get("output"),
    )
    if cfg.horizon < 1 or cfg.replications < 1:
        raise ConfigError("horizon and replications must be >= 1")
    sweep = data.get("sweep")
    if sweep is not None:
        var, values = sweep.get("variable"), sweep.get("values")
        if var not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep values must be a non-empty array")
        cfg.sweep_variable, cfg.sweep_values = var, values
    if any(k in PROTOCOLS for k in kinds):
        for _, _, _, params in cfg.points():
            try:
                _access_config(params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad access parameters: {exc}") from None
    return cfg


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_scenario(data)


def _access_config(params: dict) -> AccessConfig:
    th = params.get("index_threshold", 0.0)
    return AccessConfig(
        p=float(params.get("p", 0.2)),
        index_threshold=0.0 if th == "tune" else float(th),
        T_s=int(params.get("T_s", 1)),
        T_c=None if params.get("T_c") is None else int(params["T_c"]),
    )


def _seed(base: int, point: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, point, rep]).generate_state(1)[0])


def _params_text(kind: str, params: dict) -> str:
    keys = []
    if kind in PROTOCOLS:
        keys = ["p", "index_threshold", "T_s", "T_c", "stagger", "warmup"]
    elif kind == ORACLE:
        keys = ["a_max", "d_max"]
    return ";".join(f"{k}={params[k]}" for k in keys if k in params)


def _run_task(task):
    kind, specs, params, horizon, seed = task
    t0 = time.perf_counter()
    if kind == ORACLE:
        # a_max caps the per-terminal default, which grows like 1 / lam.
        cap = int(params.get("a_max", ORACLE_A_MAX))
        A = [cap if s.periodic else min(cap, default_a_max(s.lam, tail=1e-8)) for s in specs]
        sol = rvi_full(specs, A_max=A, D_max=int(params.get("d_max", ORACLE_D_MAX)))
        res = {"mean_aoi": sol.J, "violation": "", "deliveries": ""}
    else:
        if kind in PROTOCOLS:
            cfg = _access_config(params)
            stagger = int(params.get("stagger", cfg.T_s))
            m = run_access(specs, cfg, horizon, kind, seed,
                           initial=staggered_states(len(specs), stagger),
                           warmup=int(params.get("warmup", 0)))
        else:
            m = run_slots(specs, make_policy(kind), horizon, seed)
        vf = m.violation_freq
        res = {
            "mean_aoi": m.mean_aoi,
            "violation": ";".join("" if math.isnan(v) else f"{v:.6g}" for v in vf)
            if np.isfinite(vf).any() else "",
            "deliveries": int(m.deliveries.sum()),
        }
        for key in ("contention_slots", "successes", "collisions", "channel_failures"):
            res[key] = m.stats.get(key, "")
        res["idle_slots"] = m.idle_slots
    res["wall_time"] = f"{time.perf_counter() - t0:.3f}"
    return res


def _tune_task(task):
    specs, params, horizon, seed = task
    cfg = _access_config(params)
    stagger = int(params.get("stagger", cfg.T_s))
    tuned = tune_ipra(
        specs, cfg,
        horizon=int(params.get("tune_horizon", max(1, horizon // 5))),
        seed=seed,
        replications=int(params.get("tune_replications", 2)),
        initial=staggered_states(len(specs), stagger),
        warmup=int(params.get("warmup", 0)),
    )
    return tuned.cfg.index_threshold


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _map(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def run_scenario(cfg: ScenarioConfig, threads: Optional[int] = None) -> list[dict]:
    """One row per (sweep point, policy, replication), in that order."""
    threads = _threads() if threads is None else threads
    points = cfg.points()

    # Threshold tuning happens once per sweep point, before the replications.
    tune_jobs = [
        (i, (specs, params, cfg.horizon, _seed(cfg.seed, i, 10**6)))
        for i, (_, _, specs, params) in enumerate(points)
        if "ipra" in cfg.policies and params.get("index_threshold") == "tune"
    ]
    tuned = dict(zip([i for i, _ in tune_jobs], _map(_tune_task, [j for _, j in tune_jobs], threads)))

    meta, tasks = [], []
    for i, (var, value, specs, params) in enumerate(points):
        for kind in cfg.policies:
            p = dict(params)
            if kind == "ipra" and i in tuned:
                p["index_threshold"] = tuned[i]
            reps = 1 if kind == ORACLE else cfg.replications
            for r in range(reps):
                seed = _seed(cfg.seed, i, r)
                meta.append((i, var, value, r, seed, kind, len(specs), p))
                tasks.append((kind, specs, p, cfg.horizon, seed))
    results = _map(_run_task, tasks, threads)

    ref_kind = cfg.policy_params.get("normalize_by")
    ref = {}
    if ref_kind:
        for (i, _, _, r, _, kind, _, _), res in zip(meta, results):
            if kind == ref_kind:
                ref[(i, r)] = res["mean_aoi"]

    rows = []
    for (i, var, value, r, seed, kind, n, p), res in zip(meta, results):
        norm = ref.get((i, r)) or ref.get((i, 0))
        row = {
            "scenario": cfg.name,
            "point": i,
            "sweep_variable": var or "",
            "sweep_value": "" if value is None else value,
            "replication": r,
            "seed": seed,
            "policy": kind,
            "n_terminals": n,
            "horizon": "" if kind == ORACLE else cfg.horizon,
            "parameters": _params_text(kind, p),
            "mean_aoi": f"{res['mean_aoi']:.10g}",
            "normalized_aoi": f"{res['mean_aoi'] / norm:.6g}" if norm else "",
        }
        for key in CSV_COLUMNS:
            if key not in row:
                row[key] = res.get(key, "")
        rows.append(row)
    return rows


def write_csv(rows, out) -> None:
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


PRESETS = {
    "fig5a": {
        "description": "Two symmetric terminals over arrival rates: joint-MDP optimum, "
                       "index policy and no-buffer index policy.",
        "config": {
            "name": "fig5a",
            "horizon": DEFAULT_HORIZON,
            "replications": 1,
            "terminals": [{"lam": 0.5, "count": 2}],
            "policy": {"kind": [ORACLE, "whittle", "whittle_no_buffer"]},
            "sweep": {"variable": "lam", "values": [round(0.1 * k, 1) for k in range(1, 11)]},
        },
    },
    "fig6": {
        "description": "Growing symmetric networks at lam = 0.05: index policy, no-buffer "
                       "index policy and round robin.",
        "config": {
            "name": "fig6",
            "horizon": DEFAULT_HORIZON,
            "replications": 1,
            "terminals": [{"lam": 0.05}],
            "policy": {"kind": ["whittle", "whittle_no_buffer", "rr_one"]},
            "sweep": {"variable": "n", "values": [5, 10, 20, 50, 100]},
        },
    },
    "fig7": {
        "description": "50 terminals at lam = 0.01 over frame lengths: tuned IPRA against the "
                       "centralized index policy with the same frames.",
        "config": {
            "name": "fig7",
            "horizon": DEFAULT_HORIZON,
            "replications": 2,
            "terminals": [{"lam": 0.01, "count": 50}],
            "policy": {"kind": ["ipra", "centralized"], "p": 0.2, "index_threshold": "tune",
                       "warmup": 100_000, "normalize_by": "centralized"},
            "sweep": {"variable": "T_s", "values": [1, 10, 100]},
        },
    },
}


def preset_config(name: str) -> ScenarioConfig:
    return parse_scenario(copy.deepcopy(PRESETS[name]["config"]))


# --- validate-indices -------------------------------------------------------


def validate_indices(lams, a_max: int, d_max: int, out=None) -> bool:
    """Compare numeric indifference charges with the closed-form index."""
    out = out or sys.stdout
    states = [(lam, a, d) for lam in lams for a in range(1, a_max + 1) for d in range(1, d_max + 1)]
    if not states:
        raise ConfigError("empty grid")
    ok_all = True
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["lam", "a", "d", "index_low", "charge", "index_high", "result"])
    for lam, a, d in states:
        lo = index_bernoulli(a, d - 1, lam)
        hi = index_bernoulli(a, d + 1, lam)
        m = indifference_charge(lam, a, d)
        ok = lo - 1e-6 <= m <= hi + 1e-6
        ok_all &= ok
        w.writerow([lam, a, d, f"{lo:.6g}", f"{m:.6g}", f"{hi:.6g}", "PASS" if ok else "FAIL"])
    if 1.0 in [float(x) for x in lams]:
        for d in range(1, d_max + 1):
            ok = index_bernoulli(1, d, 1.0) == d * (d + 1) / 2
            ok_all &= ok
            w.writerow([1.0, 1, d, "", f"{d * (d + 1) / 2:g}", "", "PASS" if ok else "FAIL"])
    return ok_all


# --- admit ------------------------------------------------------------------


def load_deadline_config(path) -> list:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    rows = data.get("terminals")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("'terminals' must be a non-empty array of tables")
    specs = []
    for row in rows:
        unknown = set(row) - {"lam", "H", "epsilon", "count"}
        if unknown:
            raise ConfigError(f"unknown deadline keys {sorted(unknown)}")
        row = dict(row)
        count = int(row.pop("count", 1))
        try:
            spec = DeadlineSpec(float(row["lam"]), int(row["H"]), float(row["epsilon"]))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        specs += [spec] * count
    return specs


def admission_report(specs, schedule: bool = False, simulate: int = 0, seed: int = 0,
                     out=None) -> bool:
    out = out or sys.stdout
    rep = admit(specs)
    w = csv.writer(out, lineterminator="\n")
    sched = None
    if schedule and rep.feasible:
        sched = build_schedule(rep.intervals)
    sim = None
    if simulate and sched is not None:
        terms = [TerminalSpec(id=n, lam=s.lam, deadline=s.H) for n, s in enumerate(specs)]
        sim = simulate_schedule(terms, sched.slots, simulate, seed).violation_freq
    w.writerow(["terminal", "lam", "H", "epsilon", "gamma_max", "gamma_lambert",
                "max_gap", "violation"])
    for n, s in enumerate(specs):
        g = rep.intervals[n]
        w.writerow([
            n, s.lam, s.H, s.epsilon,
            "infeasible" if g is None else g,
            f"{rep.lambert_intervals[n]:.4f}",
            "" if sched is None else sched.max_gap[n],
            "" if sim is None else f"{sim[n]:.6g}",
        ])
    print(f"# feasible={rep.feasible} utilization={rep.utilization:.6g}", file=out)
    if rep.n_deadline_bound is not None:
        print(f"# n_deadline_bound={rep.n_deadline_bound:.4f} n_mean_bound={rep.n_mean_bound}",
              file=out)
    return rep.feasible


# --- entry point ------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoisched", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a scenario config or a preset")
    r.add_argument("config", help="TOML scenario file or preset name")
    r.add_argument("-o", "--output", help="CSV path (default: config 'output' or stdout)")
    r.add_argument("--horizon", type=int, help="override the horizon")
    r.add_argument("--replications", type=int, help="override the replication count")
    r.add_argument("--seed", type=int, help="override the seed")

    v = sub.add_parser("validate-indices", help="numeric indifference charges vs closed form")
    v.add_argument("--lam", type=float, action="append", help="arrival rate (repeatable)")
    v.add_argument("--a-max", type=int, default=5)
    v.add_argument("--d-max", type=int, default=10)

    a = sub.add_parser("admit", help="deadline admission report")
    a.add_argument("config", help="TOML deadline file")
    a.add_argument("--schedule", action="store_true", help="also build the slot schedule")
    a.add_argument("--simulate", type=int, default=0, metavar="SLOTS",
                   help="simulate the schedule and report violation frequencies")
    a.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-presets", help="list built-in scenarios")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-presets":
            for name, p in PRESETS.items():
                print(f"{name}\t{p['description']}")
            return 0
        if args.verb == "validate-indices":
            lams = args.lam if args.lam is not None else [0.2, 0.5, 0.8, 1.0]
            return 0 if validate_indices(lams, args.a_max, args.d_max) else 1
        if args.verb == "admit":
            specs = load_deadline_config(args.config)
            admission_report(specs, args.schedule, args.simulate, args.seed)
            return 0
        # run
        if Path(args.config).is_file():
            cfg = load_scenario(args.config)
        elif args.config in PRESETS:
            cfg = preset_config(args.config)
        else:
            raise ConfigError(f"no such config file or preset: {args.config}")
        for key in ("horizon", "replications", "seed"):
            if getattr(args, key) is not None:
                setattr(cfg, key, getattr(args, key))
        if cfg.horizon < 1 or cfg.replications < 1:
            raise ConfigError("horizon and replications must be >= 1")
        rows = run_scenario(cfg)
        target = args.output or cfg.output
        if target:
            with open(target, "w", newline="") as fh:
                write_csv(rows, fh)
        else:
            write_csv(rows, sys.stdout)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime-error status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
