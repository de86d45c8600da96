"""Command-line driver: ``driftlab <experiment> --config <path> [--seed N] [--out DIR]``.

Configuration grammar
---------------------
The config file is INI text read by :mod:`configparser` with inline
comments introduced by ``#`` or ``;``.  Three kinds of sections are
recognized:

``[system]``
    ``preset`` (a name from ``driftlab list``) or ``family`` plus family
    parameters, and ``epsilon``.  Parameters given next to a preset
    override the preset value.
``[run]``
    ``seed`` (int) and ``out`` (output directory).  The command line
    ``--seed`` and ``--out`` take precedence.
``[analyze]``, ``[simulate]``, ``[lclt]``, ``[correlations]``,
``[metastability]``, ``[wf]``, ``[coupling]``
    Parameters of one experiment.  Only the section of the experiment
    being run is used, but every section is checked.

Values are Python-like scalars; lists are comma separated.  An unknown
section or key is an error, so misspellings never fall back to defaults.
Every run writes ``report.json`` (with the fully resolved configuration),
CSV tables, a ``resolved.ini`` that reproduces the run, and plain-text
plot scripts that read the CSVs.

Exit status is 0 on success, 2 when a verdict is indeterminate or
assumption A2 is violated, and 1 on error.
"""

import argparse
import configparser
import csv
import dataclasses
import json
import math
import os
import sys as _sys
from pathlib import Path

import numpy as np

from . import __version__
from .system_model import PRESETS, BuiltinParams, builtin_system

__all__ = ["main", "load_config", "list_builtins", "run", "ConfigError", "EXPERIMENTS"]

EXIT_OK, EXIT_ERROR, EXIT_INDETERMINATE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(float(v)) for v in s.split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


_SYSTEM = {
    "preset": (str, None),
    "family": (str, None),
    "epsilon": (float, 1e-3),
    "degree": (_int, None),
    "bar_cos": (_floats, None),
    "bar_sin": (_floats, None),
    "hat_cos": (_floats, None),
    "hat_sin": (_floats, None),
    "ell": (float, None),
    "a": (float, None),
    "b": (float, None),
    "alpha": (float, None),
    "beta": (float, None),
}

_RUN = {"seed": (_int, 0), "out": (str, "")}

EXPERIMENTS = {
    "analyze": {
        "N": (_int, 4096),
        "M": (_int, 256),
        "period": (_int, 0),
        "eps_hat": (float, 1e-2),
    },
    "simulate": {
        "particles": (_int, 10000),
        "steps": (_int, 1000),
        "stride": (_int, 100),
        "theta_lo": (float, 0.0),
        "theta_hi": (float, 1.0),
        "jitter": (_bool, True),
        "reference": (_bool, True),
    },
    "lclt": {
        "particles": (_int, 100000),
        "t": (float, 1.0),
        "theta0": (float, 0.5),
        "enforce_floor": (_bool, True),
        "bins": (_int, 100),
    },
    "correlations": {
        "A_theta_cos": (_floats, (1.0, 1.0)),
        "A_theta_sin": (_floats, ()),
        "A_x_cos": (_floats, ()),
        "A_x_sin": (_floats, ()),
        "B_theta_cos": (_floats, (0.0, -1.0)),
        "B_theta_sin": (_floats, ()),
        "B_x_cos": (_floats, ()),
        "B_x_sin": (_floats, ()),
        "epsilons": (_floats, ()),
        "particles": (_int, 50000),
        "horizon": (float, 8.0),
        "window_lo": (float, 0.5),
        "window_hi": (float, 4.0),
    },
    "metastability": {
        "particles": (_int, 8),
        "steps": (_ints, (10 ** 7,)),
        "epsilons": (_floats, (0.05, 0.035, 0.025)),
        "start_sink": (_int, 0),
        "debounce": (_int, 10),
    },
    "wf": {
        "M": (_int, 256),
        "grid": (_int, 1024),
        "epsilons": (_floats, (0.05, 0.02, 0.01)),
    },
    "coupling": {
        "x0": (float, 0.3),
        "theta0": (float, 0.5),
        "c2": (float, 1.0),
        "Delta": (float, 1.0),
        "T": (float, 4.0),
        "steps": (_int, 5),
        "samples": (_int, 32),
        "sweep": (_floats, ()),
        "sweep_T": (float, 1.0),
    },
}


def _parse_section(name, items, schema):
    out = {}
    for key, raw in items:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]; "
                              f"allowed: {', '.join(sorted(schema))}")
        conv = schema[key][0]
        try:
            out[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
    return out


def load_config(text, experiment):
    """Parse config text and resolve defaults for ``experiment``.

    Returns
    -------
    dict
        ``{"system": {...}, "run": {...}, "<experiment>": {...}}`` with every
        key present.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    schemas = {"system": _SYSTEM, "run": _RUN, **EXPERIMENTS}
    parsed = {}
    for sec in cp.sections():
        if sec not in schemas:
            raise ConfigError(f"unknown section [{sec}]; allowed: {', '.join(sorted(schemas))}")
        parsed[sec] = _parse_section(sec, cp.items(sec), schemas[sec])
    if "system" not in parsed:
        raise ConfigError("missing [system] section")
    res = {}
    for sec in ("system", "run", experiment):
        given = parsed.get(sec, {})
        res[sec] = {k: given.get(k, d) for k, (_, d) in schemas[sec].items()}
    sysd = res["system"]
    if (sysd["preset"] is None) == (sysd["family"] is None):
        raise ConfigError("[system] needs exactly one of 'preset' or 'family'")
    return res


def _params(sysd):
    over = {k: v for k, v in sysd.items()
            if k not in ("preset", "family", "epsilon") and v is not None}
    if sysd["preset"] is not None:
        if sysd["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {sysd['preset']!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[sysd["preset"]][0]
        return dataclasses.replace(base, **over)
    return BuiltinParams(sysd["family"], **over)


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_ini(cfg):
    """INI text that reproduces ``cfg`` exactly."""
    lines = []
    for sec, vals in cfg.items():
        lines.append(f"[{sec}]")
        for k, v in vals.items():
            if v is None or (sec == "run" and k == "out"):
                continue
            lines.append(f"{k} = {_format(v)}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


class _Writer:
    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []

    def csv(self, name, header, rows):
        p = self.out / name
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in r])
        self.files.append(name)

    def text(self, name, body):
        (self.out / name).write_text(body, encoding="utf-8")
        self.files.append(name)

    def plot(self, name, csv_name, x, ys, logy=False, title=""):
        cols = ", ".join(repr(y) for y in ys)
        body = f'''"""Plot {csv_name}; run with python from this directory."""
import csv

import matplotlib.pyplot as plt

with open({csv_name!r}, newline="") as fh:
    rows = list(csv.DictReader(fh))
x = [float(r[{x!r}]) for r in rows]
for col in [{cols}]:
    plt.plot(x, [abs(float(r[col])) if {logy!r} else float(r[col]) for r in rows], label=col)
if {logy!r}:
    plt.yscale("log")
plt.xlabel({x!r})
plt.title({title!r})
plt.legend()
plt.savefig({name.replace(".py", ".png")!r}, dpi=120)
'''
        self.text(name, body)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _field_and_classes(sys, M=256, N=4096):
    from .averaged_dynamics import classify_zeros, tabulate_field

    fld = tabulate_field(sys, M=M, N=N)
    return fld, classify_zeros(fld)


def _exp_analyze(sys, cfg, seed, w):
    from .admissibility import assumption_report, omega_table

    p = cfg["analyze"]
    P = p["period"] or None
    tab = omega_table(sys, M=p["M"], P=P, N=p["N"])
    rep = assumption_report(sys, P=P, N=p["N"], M=p["M"], eps_hat=p["eps_hat"], table=tab)
    names = ("A0", "A1", "A2", "A3", "A4", "A4*")
    verdicts = {k: rep[k].as_dict() for k in names if k in rep}
    fld = rep["field"]
    w.csv("field.csv", ["theta", "omega_bar", "psi_bar", "sigma2"],
          zip(fld.theta, fld.omega_bar, fld.psi_bar, fld.sigma2))
    w.csv("omega_table.csv", ["theta", "lo_in", "hi_in", "lo_out", "hi_out"], tab.rows())
    w.plot("plot_field.py", "field.csv", "theta", ["omega_bar", "psi_bar", "sigma2"],
           title="averaged field")
    out = {"verdicts": verdicts, "rho_r": rep["rho_r"]}
    if rep.get("classification") is not None:
        out["classification"] = rep["classification"].as_dict()
    if rep.get("trapping") is not None:
        tr = rep["trapping"]
        out["trapping"] = tr.as_dict()
        w.csv("trapping_sets.csv", ["theta"] + [f"Ts_{k}" for k in range(len(tr.Ts))],
              tr.masks_rows())
    status = EXIT_OK
    messages = []
    if rep["A2"].status == "fails":
        status = EXIT_INDETERMINATE
        messages.append("A2 violated")
    bad = [k for k in names if k in rep and rep[k].status == "indeterminate"]
    if bad:
        status = EXIT_INDETERMINATE
        messages.append("verdict indeterminate: " + ", ".join(bad))
    return out, status, messages


def _exp_simulate(sys, cfg, seed, w):
    from .ensemble import evolve, uniform_ensemble, write_trace_csv

    p = cfg["simulate"]
    ens = uniform_ensemble(p["particles"], seed, (p["theta_lo"], p["theta_hi"]))
    fld = _field_and_classes(sys)[0] if p["reference"] else None
    out, tr = evolve(sys, ens, p["steps"], stride=min(p["stride"], p["steps"]), field=fld,
                     jitter=p["jitter"])
    write_trace_csv(w.out / "trace.csv", tr)
    w.files.append("trace.csv")
    w.csv("final.csv", ["pid", "x", "theta_lifted", "zeta"],
          zip(out.pid.tolist(), out.x, out.lifted, out.zeta))
    w.plot("plot_trace.py", "trace.csv", "t", ["dtheta_q0.5", "dzeta_q0.5"], title="median deviations")
    n = p["steps"]
    return {
        "steps": n,
        "slow_time": n * sys.epsilon,
        "theta_mean": float(np.mean(out.lifted)),
        "theta_std": float(np.std(out.lifted)),
        "zeta_rate_mean": float(np.mean(out.zeta - ens.zeta) / (n * sys.epsilon)),
    }, EXIT_OK, []


def _exp_lclt(sys, cfg, seed, w):
    from .ensemble import evolve, uniform_ensemble
    from .statistics import lclt_check

    p = cfg["lclt"]
    fld, _ = _field_and_classes(sys)
    n = int(round(p["t"] * fld.scale / sys.epsilon))
    ens = uniform_ensemble(p["particles"], seed, (p["theta0"], p["theta0"]))
    out, tr = evolve(sys, ens, n, field=fld)
    dev = out.lifted - tr.theta_bar[-1]
    res = lclt_check(dev, fld, p["theta0"], p["t"], sys.epsilon / fld.scale,
                     enforce_floor=p["enforce_floor"])
    z = dev / math.sqrt(sys.epsilon / fld.scale)
    s = math.sqrt(res.sigma2_t)
    h, e = np.histogram(z, bins=p["bins"], range=(-5 * s, 5 * s), density=True)
    c = 0.5 * (e[1:] + e[:-1])
    g = np.exp(-0.5 * (c / s) ** 2) / (s * math.sqrt(2 * math.pi))
    w.csv("lclt_histogram.csv", ["z", "empirical_density", "gaussian_density"], zip(c, h, g))
    w.plot("plot_lclt.py", "lclt_histogram.csv", "z", ["empirical_density", "gaussian_density"],
           title="rescaled deviation")
    return {"steps": n, **res.as_dict()}, EXIT_OK, []


def _exp_correlations(sys, cfg, seed, w):
    from .statistics import Observable, correlation_decay, fit_exponent

    p = cfg["correlations"]
    A = Observable.from_coefficients(p["A_theta_cos"], p["A_theta_sin"], p["A_x_cos"],
                                     p["A_x_sin"], name="A")
    B = Observable.from_coefficients(p["B_theta_cos"], p["B_theta_sin"], p["B_x_cos"],
                                     p["B_x_sin"], name="B")
    eps = p["epsilons"] or (sys.epsilon,)
    fits, rows = [], []
    for e in eps:
        s = sys.with_epsilon(e)
        n = int(round(p["horizon"] / e))
        f = correlation_decay(s, A, B, n, p["particles"], seed=seed,
                              window=(int(p["window_lo"] / e), int(p["window_hi"] / e)))
        fits.append(f.as_dict())
        rows.extend((e, lag * e) + r for lag, r in zip(f.lags, f.rows()))
    w.csv("correlations.csv", ["epsilon", "slow_time", "lag", "corr", "sigma", "ci_low", "ci_high"],
          rows)
    w.plot("plot_correlations.py", "correlations.csv", "slow_time", ["corr"], logy=True,
           title="correlation decay")
    out = {"fits": fits}
    rates = [f["rate_per_step"] for f in fits]
    if len(eps) >= 2 and all(r is not None and r > 0 for r in rates):
        k, r2 = fit_exponent(np.array(eps), np.array(rates))
        out["exponent"] = k
        out["exponent_r2"] = r2
    status = EXIT_OK if all(f["status"] == "ok" for f in fits) else EXIT_INDETERMINATE
    msgs = [] if status == EXIT_OK else ["no decay detected for some epsilon"]
    return out, status, msgs


def _exp_metastability(sys, cfg, seed, w):
    from .statistics import metastability_report

    p = cfg["metastability"]
    _, cls = _field_and_classes(sys)
    steps = p["steps"]
    steps = steps[0] if len(steps) == 1 else list(steps)
    start = None if p["start_sink"] < 0 else p["start_sink"]
    rep = metastability_report(sys, cls, p["particles"], steps, list(p["epsilons"]), seed=seed,
                               debounce=p["debounce"], start_sink=start)
    nz = cls.n_Z
    w.csv("metastability.csv",
          ["epsilon", "inverse_epsilon", "transitions", "mean_passage", "horizon"]
          + [f"mass_{k}" for k in range(nz)],
          ([r["epsilon"], 1 / r["epsilon"], r["transitions"], r["mean_passage"], r["horizon"]]
           + list(r["masses"]) for r in rep.rows))
    w.plot("plot_metastability.py", "metastability.csv", "inverse_epsilon", ["mean_passage"],
           logy=True, title="mean passage time")
    out = {"sinks": cls.sinks.tolist(), **rep.as_dict()}
    status = EXIT_OK if rep.status == "ok" else EXIT_INDETERMINATE
    return out, status, [] if status == EXIT_OK else [rep.status]


def _exp_wf(sys, cfg, seed, w):
    from .wentzell_freidlin import generator_matrix, model_from_field, spectral_gap, \
        stationary_density

    p = cfg["wf"]
    fld, _ = _field_and_classes(sys, M=p["M"])
    base = model_from_field(fld, p["epsilons"][0])
    gaps, l1s, cols = [], [], []
    for e in p["epsilons"]:
        m = base.with_epsilon(e)
        gaps.append(spectral_gap(m, grid=p["grid"]))
        G = generator_matrix(m, p["grid"])
        v = G.stationary_vector()
        rho = stationary_density(m, G.theta)
        l1s.append(float(np.mean(np.abs(v - rho))))
        cols.append(v)
    th = np.arange(p["grid"]) / p["grid"]
    w.csv("wf_stationary.csv", ["theta"] + [f"rho_eps_{e:g}" for e in p["epsilons"]],
          zip(th, *cols))
    w.plot("plot_wf.py", "wf_stationary.csv", "theta",
           [f"rho_eps_{e:g}" for e in p["epsilons"]], title="stationary densities")
    return {
        "epsilons": list(p["epsilons"]),
        "spectral_gaps": gaps,
        "gap_ratio_max_min": max(gaps) / min(gaps),
        "stationary_l1": l1s,
    }, EXIT_OK, []


def _exp_coupling(sys, cfg, seed, w):
    from .coupling_lab import holonomy_map, holonomy_regularity_check, holonomy_sweep, \
        iterate_coupling, matched_couple
    from .ensemble import default_constants, flat_pair

    p = cfg["coupling"]
    c = default_constants(sys, c2=p["c2"])
    pair = flat_pair(sys, p["x0"], p["theta0"], constants=c)
    N = int(round(p["T"] / sys.epsilon))
    couple = matched_couple(pair, p["Delta"])
    out = {"pair": {"a": pair.a, "b": pair.b, "delta": c.delta}, "N": N}
    Nh = int(round(p["sweep_T"] / sys.epsilon))
    table = holonomy_map(sys, couple.pair0, couple.pair1, Nh)
    out["holonomy"] = holonomy_regularity_check(table)
    w.csv("holonomy.csv", ["x", "H", "dH", "zeta", "tip_distance", "identity_error"], table.rows())
    if p["sweep"]:
        out["holonomy_sweep"] = holonomy_sweep(sys, pair, p["sweep"], Nh)
    run = iterate_coupling(sys, couple, N, steps=p["steps"], samples=p["samples"])
    out.update(run.as_dict())
    w.csv("coupling_steps.csv", ["step", "median_distance", "factor", "zeta_median"],
          ([r["step"], r["median_distance"], r["factor"], r["zeta_median"]] for r in run.steps))
    w.plot("plot_coupling.py", "coupling_steps.csv", "step", ["median_distance"], logy=True,
           title="matched distance")
    return out, EXIT_OK, []


_RUNNERS = {
    "analyze": _exp_analyze,
    "simulate": _exp_simulate,
    "lclt": _exp_lclt,
    "correlations": _exp_correlations,
    "metastability": _exp_metastability,
    "wf": _exp_wf,
    "coupling": _exp_coupling,
}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def list_builtins(file=None):
    """Print the built-in families with their default parameters."""
    file = file or _sys.stdout
    for name, (params, desc) in PRESETS.items():
        print(f"{name:22s} family={params.family}", file=file)
        print(f"{'':22s} {desc}", file=file)
    return EXIT_OK


def _threads():
    v = os.environ.get("DRIFTLAB_THREADS")
    if not v:
        return None
    import numba

    n = max(1, min(int(v), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def run(experiment, config_text, seed=None, out=None):
    """Run one experiment; returns ``(exit_status, report_dict)``."""
    cfg = load_config(config_text, experiment)
    if seed is not None:
        cfg["run"]["seed"] = int(seed)
    if out is not None:
        cfg["run"]["out"] = str(out)
    outdir = cfg["run"]["out"] or os.path.join("driftlab_out", experiment)
    seed = cfg["run"]["seed"]
    try:
        params = _params(cfg["system"])
        sysm = builtin_system(params, cfg["system"]["epsilon"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[system]: {exc}") from None
    threads = _threads()
    w = _Writer(outdir)
    result, status, messages = _RUNNERS[experiment](sysm, cfg, seed, w)
    w.text("resolved.ini", resolved_ini(cfg))
    report = {
        "experiment": experiment,
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "system": {"params": dataclasses.asdict(params), "epsilon": sysm.epsilon,
                   "lambda": sysm.lam},
        "threads": threads,
        "status": status,
        "messages": messages,
        "result": result,
        "files": sorted(w.files) + ["report.json"],
    }
    (w.out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=False),
                                       encoding="utf-8")
    return status, report


def main(argv=None):
    ap = argparse.ArgumentParser(prog="driftlab", description=__doc__.split("\n")[0])
    ap.add_argument("experiment", choices=sorted(EXPERIMENTS) + ["list"])
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    args = ap.parse_args(argv)
    if args.experiment == "list":
        return list_builtins()
    if not args.config:
        print("driftlab: --config is required", file=_sys.stderr)
        return EXIT_ERROR
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        status, rep = run(args.experiment, text, args.seed, args.out)
    except (OSError, ConfigError) as exc:
        print(f"driftlab: {exc}", file=_sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report any failure as exit 1
        print(f"driftlab: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_ERROR
    for m in rep["messages"]:
        print(m)
    print(f"{args.experiment}: status {status}; wrote {len(rep['files'])} files to "
          f"{rep['config']['run']['out'] or os.path.join('driftlab_out', args.experiment)}")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
