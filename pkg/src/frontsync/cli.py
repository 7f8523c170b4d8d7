"""Command-line front-end: run experiments from flat TOML configs, emit plot scripts.

Usage::

    frontsync CONFIG.toml [--seed N] [--trials N] [--out DIR] [--threads N]
    frontsync plot RESULT.csv

Each run writes ``<name>.csv`` and ``<name>.meta.json`` into the output
directory.  Exit codes: 0 success, 2 configuration error, 3 optimizer
convergence warning (results are still written, flagged per row).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import subprocess
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .config import SystemConfig
from .link_sim import EstimationImpossibleError, measure_error_term_powers, run_mse_experiment, run_ser_experiment
from .metrics import coeffs_from_crb, crb, effective_snr, error_term_powers, linear_approx_coeffs, CrbPair
from .psd_optimizer import ConvergenceWarning, data_phase_noise_variance, nominal_a_bar, optimize_psd, white_psd_baseline
from .quantizer import GAUSSIAN, SCALAR_UNIFORM

log = logging.getLogger("frontsync")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE = 0, 2, 3
KINDS = ("optimize-psd", "crb-sweep", "mse-sweep", "ser-sweep", "validate-appendix", "validate-scalar")
SWEEP_VARIABLES = {
    "optimize-psd": ("snr_db",),
    "crb-sweep": ("snr_db",),
    "mse-sweep": ("snr_db",),
    "ser-sweep": ("snr_db",),
    "validate-scalar": ("snr_db",),
    "validate-appendix": ("delta_tau_max",),
}
REQUIRED = ("kind", "name", "sweep_variable", "sweep_values")
# key -> (type, default)
OPTIONAL = {
    "trials": (int, 1000),
    "seed": (int, 0),
    "output_dir": (str, "results"),
    "threads": (int, 1),
    "amplitude": (float, 0.7),
    "symbol_period": (float, 1.0),
    "oversampling": (int, 2),
    "pilot_len": (int, 16),
    "data_len": (int, 84),
    "pilot_energy": (float, 1.0),
    "pulse_truncation": (int, 8),
    "capacities": (list, [3.0]),
    "max_iters": (int, 200),
    "tol": (float, 1e-8),
    "model": (str, GAUSSIAN),
    "weighting": (str, "uniform"),
    "constellation": (str, "qpsk"),
    "perfect_sync": (bool, True),
    "delta_theta_max": (float, 0.1),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    sweep_variable: str
    sweep_values: list
    trials: int = 1000
    seed: int = 0
    output_dir: str = "results"
    threads: int = 1
    system: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def system_config(self, **overrides) -> SystemConfig:
        return SystemConfig(**{**self.system, **overrides})


SYSTEM_KEYS = ("amplitude", "symbol_period", "oversampling", "pilot_len", "data_len", "pilot_energy", "pulse_truncation")


def _coerce(key, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is list:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"key {key!r} must be a non-empty list")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"key {key!r} must hold numbers") from None
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"key {key!r} must be of type {typ.__name__}, got {type(value).__name__}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat TOML experiment config (unknown keys are rejected)."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = sorted(set(raw) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key: {key}")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    if raw["sweep_variable"] not in SWEEP_VARIABLES[kind]:
        raise ConfigError(f"sweep_variable for {kind} must be one of {SWEEP_VARIABLES[kind]}")
    values = _coerce("sweep_values", raw["sweep_values"], list)
    if not all(math.isfinite(v) for v in values):
        raise ConfigError("sweep_values must be finite")
    if not isinstance(raw["name"], str) or not raw["name"]:
        raise ConfigError("key 'name' must be a non-empty string")
    opts = {k: _coerce(k, raw.get(k, d), t) for k, (t, d) in OPTIONAL.items()}
    if opts["model"] not in (GAUSSIAN, SCALAR_UNIFORM):
        raise ConfigError(f"model must be {GAUSSIAN!r} or {SCALAR_UNIFORM!r}")
    if opts["weighting"] not in ("uniform", "fisher"):
        raise ConfigError("weighting must be 'uniform' or 'fisher'")
    if opts["trials"] < 1 or opts["threads"] < 1:
        raise ConfigError("trials and threads must be positive")
    system = {k: opts.pop(k) for k in SYSTEM_KEYS}
    cfg = ExperimentConfig(
        kind=kind,
        name=raw["name"],
        sweep_variable=raw["sweep_variable"],
        sweep_values=values,
        trials=opts.pop("trials"),
        seed=opts.pop("seed"),
        output_dir=opts.pop("output_dir"),
        threads=opts.pop("threads"),
        system=system,
        options=opts,
    )
    try:
        for c in opts["capacities"]:
            cfg.system_config(capacity=c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# -- experiment kernels: each returns (rows, warnings) for one sweep value ------


def _designs(sys_cfg: SystemConfig, exp: ExperimentConfig):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        grid, trace = optimize_psd(sys_cfg, max_iters=exp.options["max_iters"], tol=exp.options["tol"])
    notes = [str(w.message) for w in caught if issubclass(w.category, ConvergenceWarning)]
    return grid, trace, white_psd_baseline(sys_cfg), notes


def _point_optimize_psd(exp, x):
    rows, notes = [], []
    for c in exp.options["capacities"]:
        sc = SystemConfig.from_snr_db(x, capacity=c, **exp.system)
        grid, trace, white, n = _designs(sc, exp)
        notes += n
        kc = sc.centered_freqs()
        order = np.argsort(kc, kind="stable")
        for n_br in range(sc.oversampling):
            for k in order:
                rows.append({
                    "snr_db": x, "capacity": c, "n": n_br, "k_c": int(kc[k]),
                    "inv_psd": grid.u[n_br, k], "inv_psd_white": white.u[n_br, k],
                    "converged": int(trace.converged), "iterations": len(trace.states),
                })
    return rows, notes


def _point_crb(exp, x):
    rows, notes = [], []
    for c in exp.options["capacities"]:
        sc = SystemConfig.from_snr_db(x, capacity=c, **exp.system)
        grid, trace, white, n = _designs(sc, exp)
        notes += n
        s2 = data_phase_noise_variance(sc)
        co, cw = crb(sc, grid), crb(sc, white)
        coeffs = coeffs_from_crb(cw, sc)
        rows.append({
            "snr_db": x, "capacity": c,
            "crb_tau_opt": co.crb_tau, "crb_theta_opt": co.crb_theta,
            "crb_tau_white": cw.crb_tau, "crb_theta_white": cw.crb_theta,
            "eff_snr_opt": effective_snr(sc, co, coeffs, s2), "eff_snr_white": effective_snr(sc, cw, coeffs, s2),
            "converged": int(trace.converged),
        })
    return rows, notes


def _mse_or_nan(sc, grid, exp, model):
    try:
        st = run_mse_experiment(sc, grid, model, exp.trials, exp.seed, weighting=exp.options["weighting"])
        return st, ""
    except EstimationImpossibleError as exc:
        return None, f"estimation-impossible: {exc}"


def _point_mse(exp, x, model=None):
    model = model or exp.options["model"]
    rows, notes = [], []
    for c in exp.options["capacities"]:
        sc = SystemConfig.from_snr_db(x, capacity=c, **exp.system)
        grid, trace, white, n = _designs(sc, exp)
        notes += n
        so, why = _mse_or_nan(sc, grid, exp, model)
        sw, why_w = _mse_or_nan(sc, white, exp, model)
        co = crb(sc, grid)
        nan = float("nan")
        rows.append({
            "snr_db": x, "capacity": c,
            "mse_tau_opt": so.mse_tau if so else nan, "se_tau_opt": so.se_tau if so else nan,
            "mse_theta_opt": so.mse_theta if so else nan, "se_theta_opt": so.se_theta if so else nan,
            "mse_tau_white": sw.mse_tau if sw else nan, "se_tau_white": sw.se_tau if sw else nan,
            "mse_theta_white": sw.mse_theta if sw else nan, "se_theta_white": sw.se_theta if sw else nan,
            "crb_tau_opt": co.crb_tau, "crb_theta_opt": co.crb_theta,
            "converged": int(trace.converged), "status": why or why_w or "ok",
        })
    return rows, notes


def _point_ser(exp, x):
    rows, notes = [], []
    nan = float("nan")
    const = exp.options["constellation"]
    for c in exp.options["capacities"]:
        sc = SystemConfig.from_snr_db(x, capacity=c, **exp.system)
        grid, trace, white, n = _designs(sc, exp)
        notes += n
        s2 = data_phase_noise_variance(sc)
        kw = dict(constellation=const, n_trials=exp.trials, seed=exp.seed, model=exp.options["model"],
                  weighting=exp.options["weighting"])
        status = "ok"
        try:
            so = run_ser_experiment(sc, grid, s2, **kw)
        except EstimationImpossibleError as exc:
            so, status = None, f"estimation-impossible: {exc}"
        sw = run_ser_experiment(sc, white, s2, **kw)
        row = {
            "snr_db": x, "capacity": c,
            "ser_opt": so.ser if so else nan, "se_opt": so.se_ser if so else nan,
            "ser_white": sw.ser, "se_white": sw.se_ser,
        }
        if exp.options["perfect_sync"]:
            sp = run_ser_experiment(sc, white, s2, perfect_sync=True, **kw)
            row.update({"ser_perfect": sp.ser, "se_perfect": sp.se_ser})
        row.update({"converged": int(trace.converged), "status": status})
        rows.append(row)
    return rows, notes


def _point_appendix(exp, x):
    sc = exp.system_config()
    dtm, dthm = x * sc.symbol_period, exp.options["delta_theta_max"]
    meas = measure_error_term_powers(sc, dtm, dthm, exp.trials, exp.seed, exp.options["constellation"])
    crbs = CrbPair(dtm**2 / 12.0, dthm**2 / 12.0)
    pred = error_term_powers(sc, crbs, linear_approx_coeffs(dtm, dthm, sc))
    return [{
        "delta_tau_max": x, "delta_theta_max": dthm,
        "p_signal_mc": meas.p_signal, "p_signal_model": pred.p_signal,
        "p_phase_noise_mc": meas.p_phase_noise, "p_phase_noise_model": pred.p_phase_noise,
        "p_isi_mc": meas.p_isi, "p_isi_model": pred.p_isi,
    }], []


def _point_scalar(exp, x):
    return _point_mse(exp, x, model=SCALAR_UNIFORM)


KERNELS = {
    "optimize-psd": _point_optimize_psd,
    "crb-sweep": _point_crb,
    "mse-sweep": _point_mse,
    "ser-sweep": _point_ser,
    "validate-appendix": _point_appendix,
    "validate-scalar": _point_scalar,
}


# -- output ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def provenance() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"frontsync {version}" + (f" ({rev})" if rev else "")


def run_experiment(exp: ExperimentConfig, config_text: str = "") -> tuple[Path, bool]:
    """Execute ``exp``; returns the CSV path and whether any point failed to converge."""
    kernel = KERNELS[exp.kind]
    with ThreadPoolExecutor(max_workers=exp.threads) as pool:
        results = list(pool.map(lambda x: kernel(exp, x), exp.sweep_values))
    rows = [r for rs, _ in results for r in rs]
    notes = [n for _, ns in results for n in ns]
    out_dir = Path(exp.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{exp.name}.csv"
    columns = list(rows[0])
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])
    meta = {
        "kind": exp.kind,
        "name": exp.name,
        "columns": columns,
        "config": asdict(exp),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": exp.seed,
        "trials": exp.trials,
        "provenance": provenance(),
        "numpy": np.__version__,
        "warnings": notes,
    }
    if exp.kind != "validate-appendix":
        meta["a_bar_nominal"] = {
            str(x): nominal_a_bar(SystemConfig.from_snr_db(x, capacity=exp.options["capacities"][0], **exp.system))
            for x in exp.sweep_values
        }
    (out_dir / f"{exp.name}.meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return csv_path, bool(notes)


def run(config_file_path, seed=None, trials=None, out=None, threads=None) -> int:
    """Run the experiment described by ``config_file_path``; returns the exit code."""
    try:
        text = Path(config_file_path).read_text()
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    try:
        exp = parse_config(text)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if seed is not None:
        exp.seed = seed
    if trials is not None:
        exp.trials = trials
    if out is not None:
        exp.output_dir = str(out)
    if threads is not None:
        exp.threads = threads
    try:
        csv_path, unconverged = run_experiment(exp, text)
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    log.info("wrote %s", csv_path)
    if unconverged:
        log.warning("optimizer did not converge for some sweep points (see meta warnings)")
        return EXIT_CONVERGENCE
    return EXIT_OK


# -- plotting -------------------------------------------------------------------

_PLOT_HEADER = '''"""Plot {csv_name} (generated by frontsync)."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

with open({csv_path!r}) as fh:
    rows = list(csv.DictReader(fh))
'''

_PLOT_BODIES = {
    "optimize-psd": '''
groups = defaultdict(list)
for r in rows:
    groups[(r["snr_db"], r["capacity"], r["n"])].append((int(r["k_c"]), float(r["inv_psd"])))
fig, ax = plt.subplots()
for (snr, c, n), pts in sorted(groups.items(), key=lambda kv: (float(kv[0][0]), float(kv[0][1]), int(kv[0][2]))):
    k, u = zip(*sorted(pts))
    ax.stem(k, u, label=f"SNR_p={{snr}} dB, C={{c}}, n={{n}}")
ax.set_xlabel("frequency index k")
ax.set_ylabel("1 / S_Q[k]")
''',
    "crb-sweep": '''
fig, ax = plt.subplots()
for c in sorted({{r["capacity"] for r in rows}}, key=float):
    sel = [r for r in rows if r["capacity"] == c]
    x = [float(r["snr_db"]) for r in sel]
    for col, style in (("crb_tau_opt", "-o"), ("crb_tau_white", "--s"), ("crb_theta_opt", "-^"), ("crb_theta_white", "--v")):
        ax.plot(x, [float(r[col]) for r in sel], style, label=f"{{col}}, C={{c}}")
ax.set_yscale("log")
ax.set_xlabel("SNR_p [dB]")
ax.set_ylabel("CRB")
''',
    "mse": '''
fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for ax, p in zip(axes, ("tau", "theta")):
    for c in sorted({{r["capacity"] for r in rows}}, key=float):
        sel = [r for r in rows if r["capacity"] == c]
        x = [float(r["snr_db"]) for r in sel]
        for curve, style in (("opt", "-o"), ("white", "--s")):
            ax.plot(x, [float(r[f"mse_{{p}}_{{curve}}"]) for r in sel], style, label=f"{{curve}}, C={{c}}")
    ax.set_yscale("log")
    ax.set_xlabel("SNR_p [dB]")
    ax.set_ylabel(f"MSE of {{p}}")
''',
    "ser-sweep": '''
fig, ax = plt.subplots()
for c in sorted({{r["capacity"] for r in rows}}, key=float):
    sel = [r for r in rows if r["capacity"] == c]
    x = [float(r["snr_db"]) for r in sel]
    for curve, style in (("opt", "-o"), ("white", "--s"), ("perfect", ":")):
        if f"ser_{{curve}}" in sel[0]:
            ax.plot(x, [float(r[f"ser_{{curve}}"]) for r in sel], style, label=f"{{curve}}, C={{c}}")
ax.set_yscale("log")
ax.set_xlabel("SNR [dB]")
ax.set_ylabel("SER")
''',
    "validate-appendix": '''
fig, ax = plt.subplots()
x = [float(r["delta_tau_max"]) for r in rows]
for term in ("p_signal", "p_phase_noise", "p_isi"):
    ax.plot(x, [float(r[f"{{term}}_mc"]) for r in rows], "o", label=f"{{term}} (Monte Carlo)")
    ax.plot(x, [float(r[f"{{term}}_model"]) for r in rows], "-", label=f"{{term}} (closed form)")
ax.set_yscale("log")
ax.set_xlabel("delta_tau_max / T")
ax.set_ylabel("power")
''',
}

_PLOT_FOOTER = '''
for ax in fig.axes:
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig({png_path!r}, dpi=150)
'''

_SIGNATURE_COLUMNS = {
    "optimize-psd": {"n", "k_c", "inv_psd"},
    "crb-sweep": {"crb_tau_opt", "crb_tau_white"},
    "mse": {"mse_tau_opt", "mse_theta_opt", "mse_tau_white", "mse_theta_white"},
    "ser-sweep": {"ser_opt", "ser_white"},
    "validate-appendix": {"p_isi_mc", "p_isi_model"},
}


def _detect_layout(columns: set) -> str:
    for layout, needed in _SIGNATURE_COLUMNS.items():
        if needed <= columns:
            return layout
    raise ValueError(f"unrecognized result table columns: {sorted(columns)}")


def emit_plot_script(result_table_path) -> Path:
    """Write ``<name>_plot.py``, a standalone matplotlib script for a result CSV."""
    path = Path(result_table_path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
    except (OSError, StopIteration, csv.Error) as exc:
        raise ValueError(f"malformed result table {path}: {exc}") from None
    if not body or any(len(r) != len(header) for r in body):
        raise ValueError(f"malformed result table {path}: ragged or empty rows")
    layout = _detect_layout(set(header))
    script = path.with_name(path.stem + "_plot.py")
    text = (
        _PLOT_HEADER.format(csv_name=path.name, csv_path=str(path.resolve()))
        + _PLOT_BODIES[layout].format()
        + _PLOT_FOOTER.format(png_path=str(path.with_suffix(".png").resolve()))
    )
    script.write_text(text)
    return script


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    if argv and argv[0] == "plot":
        p = argparse.ArgumentParser(prog="frontsync plot", description="Emit a plotting script for a result CSV.")
        p.add_argument("table")
        args = p.parse_args(argv[1:])
        try:
            script = emit_plot_script(args.table)
        except ValueError as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        log.info("wrote %s", script)
        return EXIT_OK
    p = argparse.ArgumentParser(prog="frontsync", description="Run a fronthaul synchronization experiment.")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)
    args = p.parse_args(argv)
    return run(args.config, args.seed, args.trials, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
