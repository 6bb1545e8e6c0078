"""Command-line front end: scenario files in, CSV tables and SVG plots out.

Scenario files are YAML mappings whose keys carry their unit, e.g.::

    bandwidth_mhz: 30
    noise_dbm: -60
    task_mbits: [600, 200, 400, 200]
    ap_pos_m: [10, 5]
    sweep:
      parameter: I
      grid: 400..500:50

Omitted keys take the default simulation setting.  Unknown keys are an
error.  Run ``uavrelay --help`` for the flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import Scenario, db_to_linear, dbm_to_watt
from .orchestrator import SCHEMES, SWEEP_PARAMS, SolveConfig, SolveResult, solve, sweep_results

log = logging.getLogger("uavrelay")

CSV_SCHEMA_VERSION = 1
THREADS_ENV = "UAVRELAY_THREADS"

SCHEME_FLAGS = {
    "proposed": "proposed",
    "direct": "direct_trajectory",
    "offload-only": "offloading_only",
    "equal-bw": "equal_bandwidth",
    "local": "local_computing",
}

# file key -> (Scenario field, converter)
_SCALE = {
    "num_slots": ("num_slots", int),
    "num_ues": ("num_ues", int),
    "horizon_s": ("horizon", float),
    "bandwidth_mhz": ("bandwidth_total", lambda v: float(v) * 1e6),
    "ref_gain_db": ("ref_gain", lambda v: db_to_linear(float(v))),
    "noise_dbm": ("noise_power", lambda v: dbm_to_watt(float(v))),
    "altitude_m": ("altitude", float),
    "v_max_mps": ("v_max", float),
    "fly_coeff_1": ("fly_coeff_1", float),
    "fly_coeff_2": ("fly_coeff_2", float),
    "weight_uav": ("weight_uav", float),
    "cap_uav": ("cap_uav", float),
    "uav_start_m": ("uav_start", lambda v: np.asarray(v, dtype=float)),
    "uav_end_m": ("uav_end", lambda v: np.asarray(v, dtype=float)),
    "ap_pos_m": ("ap_pos", lambda v: np.asarray(v, dtype=float)),
    "ue_pos_m": ("ue_pos", lambda v: np.asarray(v, dtype=float)),
    "weight_ue": ("weight_ue", lambda v: np.asarray(v, dtype=float)),
    "cap_ue": ("cap_ue", lambda v: np.asarray(v, dtype=float)),
    "task_mbits": ("task_bits", lambda v: np.asarray(v, dtype=float) * 1e6),
    "cycles_per_bit": ("cycles_per_bit", lambda v: np.asarray(v, dtype=float)),
    "output_ratio": ("output_ratio", lambda v: np.asarray(v, dtype=float)),
    "latency_s": ("latency", lambda v: np.asarray(v, dtype=float)),
}
SCENARIO_KEYS = frozenset(_SCALE) | {"sweep"}


class ScenarioError(ValueError):
    """A scenario file that cannot be turned into a valid :class:`Scenario`."""


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    grid: tuple

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise ValueError(f"cannot sweep {self.parameter!r}; choose from {', '.join(SWEEP_PARAMS)}")
        if not self.grid:
            raise ValueError("sweep grid is empty")


@dataclass(frozen=True)
class ScenarioFile:
    scenario: Scenario
    sweep: Optional[SweepSpec] = None


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------

def parse_range(text: str, default_points: int = 5) -> tuple:
    """``lo..hi[:step]`` to a grid; without a step, ``default_points`` evenly spaced values."""
    try:
        lo_s, rest = text.split("..", 1)
        hi_s, step_s = rest.split(":", 1) if ":" in rest else (rest, None)
        lo, hi = float(lo_s), float(hi_s)
        step = None if step_s is None else float(step_s)
    except ValueError:
        raise ValueError(f"bad range {text!r}; expected lo..hi or lo..hi:step") from None
    if hi < lo:
        raise ValueError(f"range {text!r} runs backwards")
    if step is None:
        grid = np.linspace(lo, hi, default_points) if hi > lo else np.array([lo])
    else:
        if not step > 0:
            raise ValueError(f"range step must be positive, got {step}")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        grid = lo + step * np.arange(count)
    return tuple(float(f"{v:.12g}") for v in grid)


def parse_sweep_flag(text: str) -> SweepSpec:
    """``PARAM=lo..hi[:step]`` as given on the command line."""
    if "=" not in text:
        raise ValueError(f"bad sweep {text!r}; expected PARAM=lo..hi[:step]")
    name, rng = text.split("=", 1)
    return SweepSpec(name.strip(), parse_range(rng.strip()))


def _key_lines(text: str) -> dict:
    import yaml

    node = yaml.compose(text)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def _parse_sweep_block(block, line) -> SweepSpec:
    where = f"line {line}: sweep"
    if not isinstance(block, dict) or set(block) != {"parameter", "grid"}:
        raise ScenarioError(f"{where} needs exactly the keys 'parameter' and 'grid'")
    grid = block["grid"]
    try:
        if isinstance(grid, str):
            values = parse_range(grid)
        else:
            values = tuple(float(v) for v in np.atleast_1d(grid))
        return SweepSpec(str(block["parameter"]), values)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def parse_scenario(text: str, source: str = "<string>") -> ScenarioFile:
    """Scenario (and optional sweep) from YAML text."""
    import yaml

    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ScenarioError(f"{where}: not valid YAML ({getattr(exc, 'problem', exc)})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: expected a mapping of keys to values")

    unknown = sorted(set(map(str, data)) - SCENARIO_KEYS)
    if unknown:
        detail = ", ".join(f"{k!r} (line {lines.get(k, '?')})" for k in unknown)
        raise ScenarioError(f"{source}: unknown key(s) {detail}; allowed: {', '.join(sorted(SCENARIO_KEYS))}")

    kwargs = {}
    for key, value in data.items():
        if key == "sweep":
            continue
        name, conv = _SCALE[key]
        try:
            kwargs[name] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{source}:{lines.get(key, '?')}: key {key!r}: {exc}") from None
    if "ue_pos" in kwargs and "num_ues" not in kwargs:
        kwargs["num_ues"] = int(np.atleast_2d(kwargs["ue_pos"]).shape[0])
    try:
        scn = Scenario(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    spec = None
    if "sweep" in data:
        spec = _parse_sweep_block(data["sweep"], lines.get("sweep", "?"))
    return ScenarioFile(scn, spec)


def load_scenario(path) -> Scenario:
    """Scenario from a YAML file; see :func:`parse_scenario`."""
    return load_scenario_file(path).scenario


def load_scenario_file(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _num(v) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(v))


def _write_csv(path: Path, kind: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {kind}/{CSV_SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


SUMMARY_COLUMNS = ("scheme", "wsec_j", "ue_weighted_j", "uav_total_j", "ue_local_j", "ue_offload_j",
                   "uav_compute_j", "uav_offload_j", "uav_download_j", "uav_fly_j",
                   "converged", "outer_iterations", "flags")


def _summary_row(res: SolveResult) -> list:
    t = res.report.totals()
    return [res.scheme, res.wsec, res.report.ue_weighted, res.report.uav_total, t["ue_local"],
            t["ue_offload"], t["uav_compute"], t["uav_offload"], t["uav_download"], t["uav_fly"],
            int(res.converged), len(res.trace), ";".join(res.flags)]


def write_summary(path: Path, results: Sequence[SolveResult]) -> None:
    _write_csv(path, "summary", SUMMARY_COLUMNS, (_summary_row(r) for r in results))


def write_run(out: Path, scn: Scenario, res: SolveResult) -> None:
    """The run directory: five CSV tables and the trajectory plot."""
    out.mkdir(parents=True, exist_ok=True)
    k, n = scn.num_ues, scn.num_slots
    write_summary(out / "summary.csv", [res])
    z, bw = res.schedule, res.bandwidth
    _write_csv(out / "schedule.csv", "schedule",
               ("ue", "slot", "f_ue_hz", "l_off_ue_bits", "f_uav_hz", "l_off_uav_bits", "l_down_uav_bits"),
               ([i, s + 1, z.f_ue[i, s], z.l_off_ue[i, s], z.f_uav[i, s], z.l_off_uav[i, s],
                 z.l_down_uav[i, s]] for i in range(k) for s in range(n)))
    _write_csv(out / "bandwidth.csv", "bandwidth",
               ("ue", "slot", "b_off_ue_hz", "b_off_uav_hz", "b_down_uav_hz"),
               ([i, s + 1, bw.b_off_ue[i, s], bw.b_off_uav[i, s], bw.b_down_uav[i, s]]
                for i in range(k) for s in range(n)))
    wp, v = res.trajectory.waypoints, res.trajectory.speeds
    _write_csv(out / "trajectory.csv", "trajectory", ("slot", "x_m", "y_m", "speed_mps"),
               ([s, wp[s, 0], wp[s, 1], "" if s == 0 else v[s - 1]] for s in range(n + 1)))
    _write_csv(out / "convergence.csv", "convergence",
               ("iteration", "wsec_j", "ue_weighted_j", "uav_total_j", "dual_evaluations",
                "scheduling_gap_j", "sca_iterations", "kept"),
               ([r.index, r.wsec, r.ue_energy, r.uav_energy, r.dual_evaluations, r.scheduling_gap,
                 r.sca_iterations, ";".join(r.kept)] for r in res.records))
    plot_trajectory(out / "trajectory.svg", scn, res)


def _svg_figure():
    import matplotlib
    from matplotlib.figure import Figure

    matplotlib.rcParams["svg.hashsalt"] = "uavrelay"
    matplotlib.rcParams["path.simplify"] = False
    return Figure(figsize=(5.5, 5.0))


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_trajectory(path: Path, scn: Scenario, res: SolveResult) -> None:
    """UE and AP markers with the flight path as one polyline (``gid="trajectory"``)."""
    fig = _svg_figure()
    ax = fig.add_subplot()
    wp = res.trajectory.waypoints
    (line,) = ax.plot(wp[:, 0], wp[:, 1], "-", color="tab:blue", lw=1.2, label=f"UAV path ({res.scheme})")
    line.set_gid("trajectory")
    ax.plot(scn.ue_pos[:, 0], scn.ue_pos[:, 1], "s", color="tab:green", label="UEs")
    ax.plot(*scn.ap_pos, "^", color="tab:red", ms=9, label="AP")
    ax.plot(*scn.uav_start, "o", mfc="none", color="k", label="start")
    ax.plot(*scn.uav_end, "x", color="k", label="end")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"WSEC {res.wsec:.4g} J")
    _save_svg(fig, path)


def plot_sweep(path: Path, parameter: str, rows: Sequence[tuple]) -> None:
    """WSEC against the swept value, one line per scheme, log scale."""
    fig = _svg_figure()
    ax = fig.add_subplot()
    for scheme in dict.fromkeys(r[1] for r in rows):
        pts = [(v, w) for v, s, w in rows if s == scheme]
        ax.plot(*zip(*pts), "o-", label=scheme)
    ax.set_yscale("log")
    ax.set_xlabel(parameter)
    ax.set_ylabel("WSEC (J)")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    _save_svg(fig, path)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="uavrelay",
        description="Minimum weighted-sum-energy plans for a UAV relaying edge-computing tasks.",
        epilog=f"Set {THREADS_ENV} to run sweep grid points on that many threads.")
    p.add_argument("--scenario", type=Path, help="YAML scenario file (default: built-in setting)")
    p.add_argument("--scheme", default="proposed", choices=[*SCHEME_FLAGS, "all"])
    p.add_argument("--sweep", metavar="PARAM=lo..hi[:step]",
                   help=f"sweep one of {', '.join(SWEEP_PARAMS)} (I in Mbit, T in s)")
    p.add_argument("--out", type=Path, default=Path("uavrelay-out"), help="output directory")
    p.add_argument("--max-outer", type=int, default=SolveConfig.max_outer,
                   help="cap on outer iterations, counting the initial point")
    p.add_argument("--tol", type=float, default=SolveConfig.outer_tol,
                   help="stop when the weighted energy changes by less than this (J)")
    p.add_argument("--quiet", action="store_true", help="only warnings and errors")
    return p


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _failed(res: SolveResult) -> bool:
    return any(f.startswith("infeasible") for f in res.flags)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse flags, solve, write outputs; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    say = (lambda *a: None) if args.quiet else print
    try:
        sf = load_scenario_file(args.scenario) if args.scenario else ScenarioFile(Scenario())
        spec = parse_sweep_flag(args.sweep) if args.sweep else sf.sweep
        cfg = SolveConfig(outer_tol=args.tol, max_outer=args.max_outer)
        workers = _threads()
    except ValueError as exc:
        print(f"uavrelay: error: {exc}", file=sys.stderr)
        return 2
    schemes = SCHEMES if args.scheme == "all" else (SCHEME_FLAGS[args.scheme],)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    if spec is None:
        results = []
        for scheme in schemes:
            res = solve(sf.scenario, replace(cfg, scheme=scheme))
            results.append(res)
            write_run(out / scheme if len(schemes) > 1 else out, sf.scenario, res)
            say(f"{scheme:18s} WSEC {res.wsec:.9g} J  iterations {len(res.trace)}  "
                f"{'converged' if res.converged else 'not converged'}  {res.wall_time:.1f} s")
        if len(schemes) > 1:
            write_summary(out / "summary.csv", results)
    else:
        points = sweep_results(sf.scenario, spec.parameter, spec.grid, schemes, cfg, workers)
        results, table = [], []
        for scn, runs in points:
            for value, res in runs:
                results.append(res)
                table.append((value, res))
                write_run(out / "runs" / f"{spec.parameter}={value:g}" / res.scheme, scn, res)
                say(f"{spec.parameter}={value:<10g} {res.scheme:18s} WSEC {res.wsec:.9g} J")
        _write_csv(out / "sweep.csv", "sweep", ("parameter", "value") + SUMMARY_COLUMNS,
                   ([spec.parameter, v] + _summary_row(r) for v, r in table))
        plot_sweep(out / "sweep.svg", spec.parameter, [(v, r.scheme, r.wsec) for v, r in table])

    bad = [r.scheme for r in results if _failed(r)]
    if bad:
        print(f"uavrelay: infeasible result for {', '.join(sorted(set(bad)))}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
