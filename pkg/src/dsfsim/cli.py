"""Experiment driver.

Subcommands::

    coalesce   coalescing-time survival curve and log-log slope
    renewals   renewal-gap survival curves (k = 1 or 2)
    dominate   coupled domination runs, hitting-time tails and drift table
    probe      conditional up/top-step frequency tables
    explore    raw step-record dump of one exploration run

Every output file embeds the resolved configuration and a format version.
Replication i always uses the seed mixed from (seed, i), and results are
aggregated in replication order, so outputs do not depend on ``--workers``.

Exit codes: 0 success, 1 configuration error, 2 invariant violation,
3 search-cap failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .ppp import PppConfig, SearchCapError, child_seed

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2
EXIT_SEARCH_CAP = 3

COMMANDS = ("coalesce", "renewals", "dominate", "probe", "explore")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "coalesce"
    lam: float = 1.0
    seed: int = 0
    replications: int = 1000
    k: int = 2
    kappa: float = 4.0
    starts: list | None = None
    gap: float = 1.0
    t_grid: list = field(default_factory=lambda: [4.0, 16.0, 64.0, 256.0])
    n_grid: list | None = None
    t_max: float = 512.0
    budget: int = 100_000
    steps: int = 1000
    out: str = "."
    workers: int = 1
    alpha: float = 0.1
    l_grid: list = field(default_factory=lambda: [10.0, 20.0, 50.0, 100.0])
    regime: str = "both"
    fault: bool = False
    original: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not (isinstance(self.lam, (int, float)) and self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be a positive number, got {self.lam!r}")
        if int(self.replications) < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if int(self.k) < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.k >= 2 and not self.kappa > 2 * (self.k - 1) + 1:
            raise ConfigError(f"kappa must exceed {2 * (self.k - 1) + 1} for k={self.k}, "
                              f"got {self.kappa}")
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if not self.t_max > 0:
            raise ConfigError(f"t_max must be positive, got {self.t_max}")
        if int(self.budget) < 1 or int(self.steps) < 1:
            raise ConfigError("budget and steps must be positive")
        if self.regime not in ("single", "joint", "both"):
            raise ConfigError(f"regime must be single, joint or both, got {self.regime!r}")
        if self.starts is not None:
            pts = self.start_points()
            if len({p[1] for p in pts}) != 1:
                raise ConfigError("start points must share one ordinate")
            if len({p[0] for p in pts}) != len(pts):
                raise ConfigError("start points must have distinct abscissas")
        for name in ("t_grid", "n_grid", "l_grid"):
            g = getattr(self, name)
            if g is not None and list(g) != sorted(g):
                raise ConfigError(f"{name} must be sorted")
        try:
            PppConfig(float(self.lam), int(self.seed))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def start_points(self, k: int | None = None) -> list[tuple[float, float]]:
        if self.starts is not None:
            return [tuple(map(float, p)) for p in self.starts]
        k = self.k if k is None else k
        return [(i * float(self.gap), 0.0) for i in range(k)]

    def to_dict(self) -> dict:
        return asdict(self)

    def experiment_dict(self) -> dict:
        """Config as embedded in outputs; execution-only fields are left out so
        that outputs are byte-identical across worker counts and locations."""
        d = asdict(self)
        for key in ("workers", "out"):
            d.pop(key)
        return d


def _parse_grid(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_starts(text: str) -> list[list[float]]:
    out = []
    for item in text.split(";"):
        if item.strip():
            x, y = item.split(",")
            out.append([float(x), float(y)])
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsfsim", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", dest="replications", type=int)
        s.add_argument("--k", type=int)
        s.add_argument("--kappa", type=float)
        s.add_argument("--starts", type=_parse_starts, help='e.g. "0,0;100,0"')
        s.add_argument("--gap", type=float)
        s.add_argument("--t-grid", dest="t_grid", type=_parse_grid)
        s.add_argument("--n-grid", dest="n_grid", type=_parse_grid)
        s.add_argument("--tmax", dest="t_max", type=float)
        s.add_argument("--budget", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--out")
        s.add_argument("--workers", type=int)
        s.add_argument("--alpha", type=float)
        s.add_argument("--l-grid", dest="l_grid", type=_parse_grid)
        s.add_argument("--regime", choices=("single", "joint", "both"))
        s.add_argument("--fault", action="store_true", default=None,
                       help="test hook: forge one top flag in the first coupled run")
        s.add_argument("--original", action="store_true", default=None,
                       help="explore on the global realization instead of fresh ones")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    data["command"] = args.command
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# --------------------------------------------------------------------------
# output helpers


def _header(cfg: RunConfig) -> dict:
    return {"format_version": FORMAT_VERSION, "config": cfg.experiment_dict()}


def write_json(path: Path, cfg: RunConfig, payload: dict) -> None:
    doc = _header(cfg) | payload
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def write_csv(path: Path, cfg: RunConfig, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write("# config=" + json.dumps(cfg.experiment_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(n / (4 * workers)))
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def parallel_map(fn, cfg: RunConfig, n: int) -> list:
    """Apply ``fn(cfg_dict, lo, hi)`` over replication chunks, in order."""
    chunks = _chunks(n, cfg.workers)
    d = cfg.to_dict()
    if cfg.workers == 1:
        return [fn(d, lo, hi) for lo, hi in chunks]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        futs = [ex.submit(fn, d, lo, hi) for lo, hi in chunks]
        return [f.result() for f in futs]


# --------------------------------------------------------------------------
# workers (module level so they pickle)


def _coalesce_chunk(d: dict, lo: int, hi: int):
    from .dsf_core import coalescence_sample
    from .geometry import Point

    (x1, y1), (x2, y2) = RunConfig(**d).start_points(2)[:2]
    seeds = [child_seed(d["seed"], i) for i in range(lo, hi)]
    return coalescence_sample(d["lam"], Point(x1, y1), Point(x2, y2), seeds, d["t_max"])


def _beta1_chunk(d: dict, lo: int, hi: int):
    from .geometry import Point
    from .renewal import beta1_steps

    x, y = RunConfig(**d).start_points(1)[0]
    out = []
    for i in range(lo, hi):
        b = beta1_steps(PppConfig(d["lam"], child_seed(d["seed"], i)), d["budget"], Point(x, y))
        out.append(np.diff(np.concatenate(([0], b))))
    return out


def _chain_chunk(d: dict, lo: int, hi: int):
    from .renewal import RenewalConfig, run_renewal_chain

    cfg = RunConfig(**d)
    out = []
    for i in range(lo, hi):
        ch = run_renewal_chain(cfg.start_points(), RenewalConfig(cfg.k, cfg.kappa), cfg.budget,
                               PppConfig(cfg.lam, child_seed(cfg.seed, i)))
        out.append(ch)
    return out


def _dominate_chunk(d: dict, lo: int, hi: int):
    from .dominator import coupled_joint, coupled_single

    cfg = RunConfig(**d)
    res = {}
    fault = cfg.fault and lo == 0
    if cfg.regime in ("single", "both"):
        res["single"] = coupled_single(cfg.lam, cfg.seed, hi - lo, cfg.steps, first_run=lo,
                                       fault=fault)
    if cfg.regime in ("joint", "both"):
        res["joint"] = coupled_joint(cfg.lam, cfg.seed, hi - lo, cfg.steps, cfg.kappa,
                                     starts=cfg.start_points(2), first_run=lo, fault=fault)
    return res


# --------------------------------------------------------------------------
# commands


def cmd_coalesce(cfg: RunConfig) -> int:
    from .stats import loglog_slope, survival_curve

    out = Path(cfg.out)
    parts = parallel_map(_coalesce_chunk, cfg, cfg.replications)
    t = np.concatenate([p[0] for p in parts])
    merged = np.concatenate([p[1] for p in parts])
    est = survival_curve([(float(a), not bool(m)) for a, m in zip(t, merged)], cfg.t_grid)
    try:
        fit = loglog_slope(est).to_dict()
    except ValueError as exc:
        fit = {"error": str(exc)}
    env = [math.sqrt(g) * s for g, s in zip(est.grid, est.survival)]
    write_csv(out / "coalesce_survival.csv", cfg, ["t", "survival", "ci_lo", "ci_hi"],
              zip(est.grid, est.survival, est.ci_lo, est.ci_hi))
    write_json(out / "coalesce_summary.json", cfg, {
        "tail": est.to_dict(), "slope": fit, "sqrt_t_survival": env,
        "envelope_ratio_max": max(env) / env[0] if env[0] > 0 else None,
    })
    return EXIT_OK


def cmd_renewals(cfg: RunConfig) -> int:
    from .renewal import write_renewals_csv
    from .stats import decay_ratios, survival_curve

    out = Path(cfg.out)
    if cfg.k == 1:
        grid = cfg.n_grid or [5.0, 10.0, 20.0]
        parts = parallel_map(_beta1_chunk, cfg, cfg.replications)
        gaps = np.concatenate([g for part in parts for g in part]) if parts else np.array([])
        payload = {"regime": "beta1", "n_gaps": int(gaps.size)}
        if gaps.size:
            est = survival_curve(gaps, grid)
            payload |= {"tail": est.to_dict(), "ratios": decay_ratios(est.survival)}
            write_csv(out / "renewals_survival.csv", cfg, ["n", "survival", "ci_lo", "ci_hi"],
                      zip(est.grid, est.survival, est.ci_lo, est.ci_hi))
        write_json(out / "renewals_summary.json", cfg, payload)
        return EXIT_OK
    if cfg.k != 2:
        raise ConfigError("renewals supports k = 1 or k = 2")
    grid = cfg.n_grid or [20.0, 40.0, 80.0]
    parts = parallel_map(_chain_chunk, cfg, cfg.replications)
    chains = [c for part in parts for c in part]
    beta_gaps = np.concatenate([c.beta_gaps() for c in chains])
    good_gaps = np.concatenate([c.good_gaps() for c in chains])
    records = [r for c in chains for r in c.records]
    write_renewals_csv(out / "renewals_records.csv", records)
    payload = {
        "regime": "joint", "n_renewals": len(records), "n_beta_gaps": int(beta_gaps.size),
        "n_good_steps": int(sum(len(c.good_steps) for c in chains)),
        "n_merged": int(sum(c.merged for c in chains)),
        "n_budget_exhausted": int(sum(c.budget_exhausted for c in chains)),
    }
    if beta_gaps.size:
        est = survival_curve(beta_gaps, grid)
        payload |= {"beta_tail": est.to_dict(), "beta_ratios": decay_ratios(est.survival)}
        write_csv(out / "renewals_survival.csv", cfg, ["n", "survival", "ci_lo", "ci_hi"],
                  zip(est.grid, est.survival, est.ci_lo, est.ci_hi))
    if good_gaps.size:
        est = survival_curve(good_gaps, [15.0, 30.0])
        payload |= {"good_step_tail": est.to_dict()}
    write_json(out / "renewals_summary.json", cfg, payload)
    return EXIT_OK


def cmd_dominate(cfg: RunConfig) -> int:
    from .dominator import S_TAU, drift_check, verify_domination
    from .stats import survival_curve

    out = Path(cfg.out)
    parts = parallel_map(_dominate_chunk, cfg, cfg.replications)
    payload: dict = {"domination": {}, "hitting": {}, "drift": {}}
    ok = True
    grid = cfg.n_grid or [10.0, 20.0, 40.0]
    for regime in ("single", "joint"):
        if cfg.regime not in (regime, "both"):
            continue
        summ = np.concatenate([p[regime] for p in parts])
        rep = verify_domination(summ, regime, cfg.steps)
        ok = ok and rep.ok
        payload["domination"][regime] = rep.to_dict()
        tau = summ[:, S_TAU]
        est = survival_curve([(float(t), False) if t >= 0 else (float(cfg.steps), True)
                              for t in tau], grid)
        payload["hitting"][regime] = est.to_dict()
        dr = drift_check(regime, cfg.alpha, cfg.l_grid, max(1000, cfg.replications), cfg.lam,
                         cfg.seed)
        payload["drift"][regime] = dr.to_dict()
        dr.write_csv(out / f"drift_{regime}.csv")
    write_json(out / "dominate_summary.json", cfg, payload)
    return EXIT_OK if ok else EXIT_VIOLATION


def probe_table(cfg: RunConfig) -> list[dict]:
    """Monte Carlo frequencies under the conditioning scenarios."""
    from .exploration import (
        C_LA, C_TOP, C_UP, init, inject_history, sample_from_state, small_ball_up_frequency,
    )
    from .geometry import Point, Rect

    n = cfg.replications
    rows = []

    def add(name, value, reference, relation):
        rows.append({"scenario": name, "frequency": float(value), "samples": n,
                     "reference": float(reference), "relation": relation})

    c = PppConfig(cfg.lam, child_seed(cfg.seed, 0))
    rec = sample_from_state(init([Point(0.0, 0.0)]), c, n)[:, 0]
    add("up_unconditioned", rec[:, C_UP].mean(), 0.5, "=")
    add("top_unconditioned", rec[:, C_TOP].mean(), 0.5, ">=")
    for r in (1.0, 2.0, 5.0):
        f = small_ball_up_frequency(PppConfig(cfg.lam, child_seed(cfg.seed, 1)), r, n)
        add(f"up_void_ball_r{r:g}_small_ball_occupied", f, 1 / 3, ">=")
    base = init([Point(0.0, 0.0)])
    for L in (10.0, 20.0, 50.0):
        st = inject_history(base, [Rect(0.0, 2 * L, 0.0, L)], 0.0)
        rec = sample_from_state(st, PppConfig(cfg.lam, child_seed(cfg.seed, int(L))), n)[:, 0]
        add(f"top_given_L{L:g}", rec[:, C_TOP].mean(), 0.5, ">=")
        inc = np.mean((rec[:, C_LA] > L) & (rec[:, C_LA] < L + 1))
        add(f"small_increase_given_L{L:g}", inc, 2 / math.floor(L), "<=")
    two = init([Point(0.0, 0.0), Point(float(cfg.gap), 0.0)])
    rec = sample_from_state(two, PppConfig(cfg.lam, child_seed(cfg.seed, 2)), n, n_steps=2)
    both = np.mean(rec[:, 0, C_TOP].astype(bool) & rec[:, 1, C_TOP].astype(bool))
    lam = cfg.lam
    add("k2_two_consecutive_top", both,
        (0.5 * math.exp(-2 * lam) * (1 - math.exp(-lam / 32))) ** 2, ">=")
    return rows


def cmd_probe(cfg: RunConfig) -> int:
    rows = probe_table(cfg)
    out = Path(cfg.out)
    keys = ["scenario", "frequency", "samples", "reference", "relation"]
    write_csv(out / "probe.csv", cfg, keys, ([r[k] for k in keys] for r in rows))
    write_json(out / "probe_summary.json", cfg, {"rows": rows})
    return EXIT_OK


def cmd_explore(cfg: RunConfig) -> int:
    from .exploration import CSV_FIELDS, init, records_from_array, run_exploration
    from .geometry import Point

    pts = [Point(*p) for p in cfg.start_points()]
    _, arr = run_exploration(init(pts), PppConfig(cfg.lam, cfg.seed), cfg.steps,
                             original=cfg.original)
    write_csv(Path(cfg.out) / "explore_records.csv", cfg, CSV_FIELDS,
              (r.csv_row() for r in records_from_array(arr)))
    return EXIT_OK


HANDLERS = {
    "coalesce": cmd_coalesce,
    "renewals": cmd_renewals,
    "dominate": cmd_dominate,
    "probe": cmd_probe,
    "explore": cmd_explore,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"dsfsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SearchCapError as exc:
        print(f"dsfsim: search cap exceeded: {exc}", file=sys.stderr)
        return EXIT_SEARCH_CAP


if __name__ == "__main__":
    sys.exit(main())
