"""Seeded single runs, parameter sweeps and sweep summaries.

Every file written here is a pure function of ``(config, model, scheme,
seed)``: floats are printed with a fixed format, rows are emitted in a fixed
order and wall-clock times never reach the files.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .baselines import SCHEMES, SchemeTag, run_scheme
from .channel import ScenarioConfig, generate_scenario, load_config
from .engine import CONVERGED, INFEASIBLE, MAX_ITER, SolverOptions, inner_pass_monotone
from .model import MODELS, QosSpec

log = logging.getLogger(__name__)

WORKERS_ENV = "STARSR_WORKERS"
DEFAULT_CONFIG = "default.cfg"

# sweep parameter -> config fields it sets (both models share one value)
SWEEP_PARAMS = {
    "gamma_db": ("gamma_b_min_db", "gamma_u_min_db"),
    "M": ("num_elements",),
    "N": ("num_antennas",),
    "K": ("num_pu",),
    "Q": ("num_su",),
    "mu": ("sic_mu",),
    "rate_min": ("rate_b_min", "rate_u_min"),
}
_INT_PARAMS = {"M", "N", "K", "Q"}

TRACE_HEADER = ["iteration", "stage", "power_dBm", "delta"]
SWEEP_HEADER = ["scheme", "model", "param", "value", "seed", "status", "feasible", "monotone",
                "power_w", "power_dBm", "outer", "inner", "worst_rate_margin",
                "worst_sinr_rel_margin", "n_runs", "n_feasible", "mean_power_w",
                "mean_power_dBm", "stderr_power_w"]
CHAIN = (("proposed-no-phase-corr", "proposed"), ("proposed", "baseline1"),
         ("baseline1", "baseline2"), ("proposed", "baseline3"))
BASELINE3_RATIO = 1.5


def fmt(x) -> str:
    """Fixed float format shared by every output file."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def default_config_path() -> Path:
    return Path(str(resources.files("starsr").joinpath(DEFAULT_CONFIG)))


def read_config(path: str | Path | None) -> ScenarioConfig:
    return load_config(default_config_path() if path is None else path)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


# -- single run ---------------------------------------------------------------

@dataclass
class RunRecord:
    scheme: str
    model: str
    seed: int
    param: str = ""
    value: float = float("nan")
    status: str = ""
    message: str = ""
    power_w: float = float("nan")
    outer: int = 0
    inner: int = 0
    delta: float = float("nan")
    feasible: bool = False
    monotone: bool = True
    margins: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def power_dbm(self) -> float:
        return 10.0 * math.log10(self.power_w) + 30.0 if self.power_w > 0 else float("nan")

    def worst_margin(self, prefixes: tuple) -> float:
        vals = [m for cid, m in self.margins.items() if cid.startswith(prefixes)]
        return min(vals) if vals else float("nan")


def apply_param(cfg: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    if param in _INT_PARAMS:
        if value != int(value):
            raise ValueError(f"{param} takes integer values, got {value!r}")
        value = int(value)
    return cfg.replace(**{name: value for name in SWEEP_PARAMS[param]})


def solve_run(cfg: ScenarioConfig, model: str, scheme: str, seed: int,
              options: SolverOptions | None = None):
    """Draw the channels for ``seed`` and run one scheme on them."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; valid: {', '.join(MODELS)}")
    SchemeTag.parse(scheme)
    channels = generate_scenario(cfg, seed)
    qos = QosSpec.from_config(cfg, model)
    opts = options or SolverOptions(seed=seed)
    return run_scheme(scheme, channels, qos, model, opts)


def make_record(solution, scheme: str, model: str, seed: int, param: str = "",
                value: float = float("nan"), wall_time: float = 0.0) -> RunRecord:
    report = solution.report
    margins = {} if report is None else {c.cid: c.margin for c in report.checks}
    # relative SINR margins make the single worst-margin column comparable across points
    if report is not None:
        for c in report.checks:
            if c.cid.startswith(("C3", "C15")):
                margins[c.cid] = c.margin / c.required if c.required > 0 else c.margin
    return RunRecord(scheme, model, seed, param, value, solution.status, solution.message,
                     float(solution.power), solution.outer_iterations, solution.inner_iterations,
                     float(solution.delta), bool(solution.feasible),
                     inner_pass_monotone(solution.trace), margins, wall_time)


def trace_csv(solution) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for row in solution.trace:
        writer.writerow([row.iteration, row.stage, fmt(row.power_dbm), fmt(row.delta)])
    return buf.getvalue()


def _cvec(x) -> str:
    return " ".join(f"{fmt(z.real)}{'+' if z.imag >= 0 else '-'}{fmt(abs(z.imag))}j"
                    for z in np.atleast_1d(x))


def _rvec(x) -> str:
    return " ".join(fmt(z) for z in np.atleast_1d(x))


def result_text(solution, record: RunRecord, cfg: ScenarioConfig) -> str:
    """Nested key-value record in INI form."""
    out = configparser.ConfigParser(interpolation=None)
    out.optionxform = str
    out["run"] = {"scheme": record.scheme, "model": record.model, "seed": str(record.seed),
                  "status": record.status, "message": record.message or "-",
                  "feasible": fmt(record.feasible), "monotone": fmt(record.monotone),
                  "outer_iterations": str(record.outer), "inner_iterations": str(record.inner),
                  "delta": fmt(record.delta)}
    if record.param:
        out["run"]["param"] = record.param
        out["run"]["value"] = fmt(record.value)
    out["power"] = {"watt": fmt(record.power_w), "dBm": fmt(record.power_dbm)}
    coeffs = solution.coefficients
    out["coefficients"] = {"beta_r": _rvec(coeffs.beta_r), "beta_t": _rvec(coeffs.beta_t),
                           "theta_r": _rvec(coeffs.theta_r), "theta_t": _rvec(coeffs.theta_t)}
    beam = solution.beamformer
    if beam is not None:
        vecs = np.atleast_2d(beam.vectors)
        out["beamformer"] = {"mode": beam.mode}
        for i, vec in enumerate(vecs):
            out["beamformer"][f"w{i}"] = _cvec(vec)
    order = getattr(solution, "order", None)
    if order is not None:
        out["decoding_order"] = {f"su{q}": " ".join(str(k) for k in o) for q, o in enumerate(order)}
    if solution.report is not None:
        out["constraints"] = {}
        for c in solution.report.checks:
            out["constraints"][c.cid] = (f"required={fmt(c.required)} achieved={fmt(c.achieved)} "
                                         f"margin={fmt(c.margin)} pass={fmt(c.passed)}")
    out["config"] = {}
    for key, val in vars(cfg).items():
        out["config"][key] = _rvec(val) if isinstance(val, tuple) else fmt(val)
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()


def run(config: str | Path | None, model: str, scheme: str, seed: int,
        out_dir: str | Path, cfg: ScenarioConfig | None = None) -> tuple[RunRecord, object]:
    """Solve one instance and write ``trace.csv`` and ``result.txt`` into ``out_dir``."""
    cfg = cfg or read_config(config)
    start = time.perf_counter()
    solution = solve_run(cfg, model, scheme, seed)
    record = make_record(solution, scheme, model, seed, wall_time=time.perf_counter() - start)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace_csv(solution))
    (out / "result.txt").write_text(result_text(solution, record, cfg))
    return record, solution


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepSpec:
    param: str
    values: list
    model: str
    schemes: list
    seeds: list
    out_dir: str | Path = "."

    def __post_init__(self) -> None:
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}; valid: {', '.join(SWEEP_PARAMS)}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; valid: {', '.join(MODELS)}")
        for name in ("values", "schemes", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep needs a non-empty {name} list")
        for s in self.schemes:
            SchemeTag.parse(s)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


def _sweep_task(args) -> RunRecord:
    cfg, model, scheme, seed, param, value = args
    start = time.perf_counter()
    try:
        sol = solve_run(apply_param(cfg, param, value), model, scheme, seed)
    except Exception as exc:  # one failed run must not stop the sweep
        log.warning("run %s/%s seed %d at %s=%s failed: %s", model, scheme, seed, param, value, exc)
        return RunRecord(scheme, model, seed, param, value, status="error", message=str(exc))
    return make_record(sol, scheme, model, seed, param, value, time.perf_counter() - start)


def sweep_records(spec: SweepSpec, cfg: ScenarioConfig, workers: int | None = None) -> list[RunRecord]:
    for v in spec.values:
        apply_param(cfg, spec.param, v)
    tasks = [(cfg, spec.model, scheme, seed, spec.param, value)
             for scheme in spec.schemes for value in spec.values for seed in spec.seeds]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [_sweep_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_task, tasks))


def aggregate(records: list[RunRecord]) -> dict:
    """``(scheme, value) -> (n_runs, n_feasible, mean_w, stderr_w)`` over feasible runs."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.scheme, r.value), []).append(r)
    out = {}
    for key, rows in groups.items():
        p = np.array([r.power_w for r in rows if r.feasible and math.isfinite(r.power_w)])
        mean = float(p.mean()) if p.size else float("nan")
        se = float(p.std(ddof=1) / math.sqrt(p.size)) if p.size > 1 else float("nan")
        out[key] = (len(rows), int(p.size), mean, se)
    return out


def sweep_csv(records: list[RunRecord]) -> str:
    agg = aggregate(records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        n, nf, mean, se = agg[(r.scheme, r.value)]
        mean_dbm = 10.0 * math.log10(mean) + 30.0 if mean > 0 else float("nan")
        writer.writerow([r.scheme, r.model, r.param, fmt(r.value), r.seed, r.status,
                         fmt(r.feasible), fmt(r.monotone), fmt(r.power_w), fmt(r.power_dbm),
                         r.outer, r.inner, fmt(r.worst_margin(("C1", "C2", "C13", "C14"))),
                         fmt(r.worst_margin(("C3", "C15"))), n, nf, fmt(mean), fmt(mean_dbm),
                         fmt(se)])
    return buf.getvalue()


def sweep(spec: SweepSpec, config: str | Path | None = None, cfg: ScenarioConfig | None = None,
          workers: int | None = None) -> tuple[Path, list[RunRecord]]:
    """Run every (scheme, value, seed) tuple and write ``sweep.csv``."""
    cfg = cfg or read_config(config)
    records = sweep_records(spec, cfg, workers)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    path.write_text(sweep_csv(records))
    return path, records


# -- report -------------------------------------------------------------------

@dataclass
class Summary:
    param: str
    # (value, scheme) -> (n_runs, n_feasible, mean_w, stderr_w)
    stats: dict
    # value -> {"a<=b": verdict}
    orderings: dict
    chain: dict
    flagged: list
    skipped: int

    def to_text(self) -> str:
        lines = []
        if self.skipped:
            lines.append(f"warning: skipped {self.skipped} malformed rows")
        if not self.stats:
            return "\n".join(lines + ["no runs"]) + "\n"
        lines.append(f"parameter: {self.param}")
        lines.append("value scheme n_runs n_feasible mean_power_dBm stderr_power_w")
        for (value, scheme), (n, nf, mean, se) in sorted(self.stats.items(), key=_stat_key):
            mean_dbm = 10.0 * math.log10(mean) + 30.0 if mean > 0 else float("nan")
            lines.append(f"{fmt(value)} {scheme} {n} {nf} {fmt(mean_dbm)} {fmt(se)}")
        for value in sorted(self.orderings, key=_value_key):
            pairs = " ".join(f"{k}:{v}" for k, v in self.orderings[value].items())
            lines.append(f"ordering {fmt(value)} {pairs} chain:{self.chain[value]}")
        for r in self.flagged:
            lines.append(f"non-monotone trace: scheme={r[0]} value={fmt(r[1])} seed={r[2]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["param", "value", "scheme", "n_runs", "n_feasible", "mean_power_w",
                         "stderr_power_w", "chain"])
        for (value, scheme), (n, nf, mean, se) in sorted(self.stats.items(), key=_stat_key):
            writer.writerow([self.param, fmt(value), scheme, n, nf, fmt(mean), fmt(se),
                             self.chain.get(value, "n/a")])
        return buf.getvalue()


def _value_key(v):
    return (math.isnan(v), v) if isinstance(v, float) else (False, v)


def _stat_key(item):
    (value, scheme), _ = item
    rank = SCHEMES.index(scheme) if scheme in SCHEMES else len(SCHEMES)
    return (_value_key(value), rank, scheme)


def ordering_verdicts(means: dict) -> tuple[dict, str]:
    """Pairwise ``mean(a) <= mean(b)`` verdicts and the overall chain verdict.

    ``means`` maps scheme -> mean power in W.  The chain also demands the
    baseline-3 to proposed ratio of at least 1.5.
    """
    verdicts = {}
    for a, b in CHAIN:
        ma, mb = means.get(a), means.get(b)
        if ma is None or mb is None or not (math.isfinite(ma) and math.isfinite(mb)):
            verdicts[f"{a}<={b}"] = "n/a"
        else:
            verdicts[f"{a}<={b}"] = "yes" if ma <= mb else "no"
    p, b3 = means.get("proposed"), means.get("baseline3")
    if p is None or b3 is None or not (math.isfinite(p) and math.isfinite(b3)) or p <= 0:
        verdicts["baseline3/proposed>=1.5"] = "n/a"
    else:
        verdicts["baseline3/proposed>=1.5"] = "yes" if b3 / p >= BASELINE3_RATIO else "no"
    known = [v for v in verdicts.values() if v != "n/a"]
    if len(known) < len(verdicts):
        chain = "n/a"
    else:
        chain = "holds" if all(v == "yes" for v in known) else "violated"
    return verdicts, chain


def _flag(text: str) -> bool:
    if text not in ("0", "1"):
        raise ValueError(f"bad flag {text!r}")
    return text == "1"


def read_sweep(text: str) -> tuple[list[RunRecord], int]:
    """Parse ``sweep.csv``; rows that do not parse are counted and skipped."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return [], 0
    header, body = rows[0], rows[1:]
    if header != SWEEP_HEADER:
        return [], len(body) + 1
    out, skipped = [], 0
    for row in body:
        try:
            rec = dict(zip(header, row, strict=True))
            out.append(RunRecord(rec["scheme"], rec["model"], int(rec["seed"]), rec["param"],
                                 float(rec["value"]), rec["status"], "", float(rec["power_w"]),
                                 int(rec["outer"]), int(rec["inner"]),
                                 feasible=_flag(rec["feasible"]), monotone=_flag(rec["monotone"])))
        except (ValueError, KeyError):
            skipped += 1
    return out, skipped


def summarize(records: list[RunRecord], skipped: int = 0) -> Summary:
    agg = aggregate(records)
    stats = {(value, scheme): s for (scheme, value), s in agg.items()}
    orderings, chain = {}, {}
    for value in {v for v, _ in stats}:
        means = {s: st[2] for (v, s), st in stats.items() if v == value}
        orderings[value], chain[value] = ordering_verdicts(means)
    flagged = [(r.scheme, r.value, r.seed) for r in records if not r.monotone]
    param = records[0].param if records else ""
    return Summary(param, stats, orderings, chain, flagged, skipped)


def report(path: str | Path) -> Summary:
    records, skipped = read_sweep(Path(path).read_text())
    if skipped:
        log.warning("skipped %d malformed rows in %s", skipped, path)
    return summarize(records, skipped)


__all__ = ["CONVERGED", "INFEASIBLE", "MAX_ITER", "RunRecord", "SWEEP_PARAMS", "Summary",
           "SweepSpec", "apply_param", "default_config_path", "make_record", "ordering_verdicts",
           "read_config", "read_sweep", "report", "result_text", "run", "solve_run", "summarize",
           "sweep", "sweep_csv", "sweep_records", "trace_csv", "worker_count"]
