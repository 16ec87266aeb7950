"""Command-line front end.

Subcommands: ``fit-hetero``, ``fit-homo``, ``interval``, ``simulate-mse``,
``simulate-coverage`` and ``generate``. Every flag is also accepted as a key
in a ``--config`` file, one ``key = value`` per line (``#`` starts a comment,
keys use either ``kebab-case`` or ``snake_case``). Values from the file
override command-line flags.

Exit status: 0 success, 2 input error, 3 numeric error, 4 resource cap.
On failure a JSON error object goes to stderr and any outputs written by the
run are removed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IfeKrrError, InputError, NumericError, ResourceError
from .gcv import GRID_POINTS
from .hetero import fit_hetero, fit_hetero_unit, fit_hetero_unit_gcv, predict_hetero
from .homo import DEFAULT_NT_CAP, fit_homo, fit_homo_gcv
from .inference import (
    ci_beta_partial_linear,
    ci_g_homo,
    ci_g_homo_grid,
    ci_mean_hetero,
    prediction_interval,
)
from .io import parse_panel_csv, write_panel_csv
from .kernels import format_kernel, parse_kernel
from .simulate import DEFAULT_KERNELS, DgpSpec, EstimatorConfig, default_x_grid, generate, mc_coverage, mc_mse

MODES = ("fit-hetero", "fit-homo", "interval", "simulate-mse", "simulate-coverage", "generate")
DEFAULT_KERNEL = "gaussian()"


@dataclass
class RunConfig:
    mode: str
    data: str | None = None
    kernel: str | None = None
    eta: float | str = "gcv"
    eta_scale: float = 1.0
    eta_grid_lo: float | None = None
    eta_grid_hi: float | None = None
    eta_grid_points: int = GRID_POINTS
    level: float = 0.95
    seed: int = 0
    reps: int = 100
    cap: int = DEFAULT_NT_CAP
    threads: int | None = None
    out_json: str | None = None
    out_csv: str | None = None
    predict_file: str | None = None
    model: str = "homo"
    kind: str = "g_ci"
    unit: str | None = None
    x0: str | None = None
    f0: str | None = None
    xbar0: str | None = None
    anchor: str | None = None
    direction: int | None = None
    noise_model: str = "gaussian"
    design: str = "homo_beta"
    n: int = 50
    t: int = 25
    homogeneous: bool = False
    delta: float | None = None
    sqrt_innovation_scale: bool = False
    noise_scale: float = 1.0
    x_grid_points: int = 100

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}")
        if isinstance(self.eta, str) and self.eta != "gcv":
            raise InputError(f"eta must be a positive real or 'gcv', got {self.eta!r}")
        if not isinstance(self.eta, str) and not (math.isfinite(self.eta) and self.eta > 0):
            raise InputError(f"eta must be positive, got {self.eta!r}")
        if not 0 < self.level < 1:
            raise InputError(f"level must lie in (0, 1), got {self.level!r}")
        if (self.eta_grid_lo is None) != (self.eta_grid_hi is None):
            raise InputError("give both eta-grid-lo and eta-grid-hi, or neither")
        if self.eta_grid_lo is not None and not 0 < self.eta_grid_lo < self.eta_grid_hi:
            raise InputError("eta grid bounds must satisfy 0 < lo < hi")
        if self.eta_grid_points < 2:
            raise InputError("eta-grid-points must be at least 2")
        if self.mode in ("fit-hetero", "fit-homo", "interval") and not self.data:
            raise InputError(f"{self.mode} needs --data")
        if self.mode == "generate" and not self.out_csv:
            raise InputError("generate needs --out-csv")
        if self.kernel is not None:
            parse_kernel(self.kernel)

    def echo(self) -> dict:
        """Canonical config for artifacts (thread count lives in runtime metadata)."""
        d = asdict(self)
        d.pop("threads")
        return d


# ---------------------------------------------------------------------------
# argument handling


def _eta(text: str):
    if str(text).strip().lower() == "gcv":
        return "gcv"
    try:
        return float(text)
    except ValueError:
        raise InputError(f"eta must be a positive real or 'gcv', got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InputError(f"expected a boolean, got {text!r}")


def _optional(conv):
    def f(text):
        return None if str(text).strip().lower() in ("", "none") else conv(text)
    return f


_CONVERT = {
    "eta": _eta, "eta_scale": float, "eta_grid_lo": _optional(float), "eta_grid_hi": _optional(float),
    "eta_grid_points": int, "level": float, "seed": int, "reps": int, "cap": int,
    "threads": _optional(int), "direction": _optional(int), "n": int, "t": int,
    "homogeneous": _bool, "delta": _optional(float), "sqrt_innovation_scale": _bool, "noise_scale": float,
    "x_grid_points": int,
}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file into RunConfig field values."""
    known = {f.name for f in fields(RunConfig)} - {"mode"}
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise InputError(f"{path}:{no}: unknown key {key!r}")
        try:
            out[key] = _CONVERT.get(key, str)(value)
        except ValueError:
            raise InputError(f"{path}:{no}: bad value for {key}: {value!r}") from None
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifekrr", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"ifekrr {__version__}")
    sub = p.add_subparsers(dest="mode", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file overriding flags")
        sp.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
        sp.add_argument("--out-json", help="JSON artifact path")
        sp.add_argument("--out-csv", help="CSV artifact path")
        sp.add_argument("--kernel", help="kernel string, e.g. 'gaussian(b=0.5)'")
        sp.add_argument("--eta", type=_eta, default="gcv", help="positive real or 'gcv'")
        sp.add_argument("--eta-scale", type=float, default=1.0, help="multiplier on the GCV eta")
        sp.add_argument("--eta-grid-lo", type=float)
        sp.add_argument("--eta-grid-hi", type=float)
        sp.add_argument("--eta-grid-points", type=int, default=GRID_POINTS)
        sp.add_argument("--level", type=float, default=0.95)
        sp.add_argument("--cap", type=int, default=DEFAULT_NT_CAP, help="largest N*T for dense solves")

    def dgp(sp):
        sp.add_argument("--design", choices=("hetero_sj", "homo_beta", "firm_analog"), default="homo_beta")
        sp.add_argument("--n", type=int, default=50, help="number of units")
        sp.add_argument("--t", type=int, default=25, help="number of periods")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--homogeneous", action="store_true")
        sp.add_argument("--delta", type=float)
        sp.add_argument("--sqrt-innovation-scale", action="store_true")
        sp.add_argument("--noise-scale", type=float, default=1.0, help="multiplier on the outcome error")

    for mode in ("fit-hetero", "fit-homo"):
        sp = sub.add_parser(mode, help=f"fit the {mode[4:]}geneous model to a panel CSV")
        common(sp)
        sp.add_argument("--data", help="long-format panel CSV")
        sp.add_argument("--predict-file", help="CSV with header x1..xd of prediction points")

    sp = sub.add_parser("interval", help="confidence or prediction interval at one point")
    common(sp)
    sp.add_argument("--data", help="long-format panel CSV")
    sp.add_argument("--model", choices=("hetero", "homo"), default="homo")
    sp.add_argument("--kind", choices=("mean_ci", "prediction", "g_ci", "beta_ci"), default="g_ci")
    sp.add_argument("--unit", help="unit label (hetero model)")
    sp.add_argument("--x0", help="comma-separated covariate vector")
    sp.add_argument("--f0", help="comma-separated next-period observed factors (no intercept)")
    sp.add_argument("--xbar0", help="comma-separated next-period cross-section mean of x")
    sp.add_argument("--anchor", help="comma-separated anchor for beta_ci")
    sp.add_argument("--direction", type=int, help="0-based coordinate carrying beta")
    sp.add_argument("--noise-model", choices=("gaussian", "empirical"), default="gaussian")

    sp = sub.add_parser("simulate-mse", help="Monte Carlo MSE of g_hat")
    common(sp)
    dgp(sp)
    sp.add_argument("--reps", type=int, default=100)

    sp = sub.add_parser("simulate-coverage", help="Monte Carlo coverage of the g interval")
    common(sp)
    dgp(sp)
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--x-grid-points", type=int, default=100)

    sp = sub.add_parser("generate", help="write a synthetic panel CSV")
    sp.add_argument("--config", help="key = value file overriding flags")
    sp.add_argument("--out-csv", help="panel CSV path")
    dgp(sp)
    return p


def build_config(argv) -> RunConfig:
    ns = vars(_parser().parse_args(argv))
    config_path = ns.pop("config", None)
    known = {f.name for f in fields(RunConfig)}
    values = {k: v for k, v in ns.items() if k in known}
    if config_path:
        values.update(read_config_file(config_path))
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# outputs


def _outputs(cfg: RunConfig) -> list[Path]:
    return [Path(p) for p in (cfg.out_json, cfg.out_csv) if p]


def check_writable(paths) -> None:
    for p in paths:
        parent = p.parent if str(p.parent) else Path(".")
        if p.exists() and (p.is_dir() or not os.access(p, os.W_OK)):
            raise InputError(f"output {p} is not a writable file")
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise InputError(f"output directory {parent} does not exist or is not writable")


def _num(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    return x


def dumps(obj) -> str:
    return json.dumps(_num(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def _vector(text, name, size=None) -> np.ndarray:
    if text is None or str(text).strip() == "":
        if size == 0:
            return np.zeros(0)
        raise InputError(f"--{name} is required")
    try:
        v = np.array([float(s) for s in str(text).split(",") if s.strip()], dtype=float)
    except ValueError:
        raise InputError(f"--{name} must be comma-separated numbers, got {text!r}") from None
    if size is not None and v.size != size:
        raise InputError(f"--{name} needs {size} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"--{name} must be finite")
    return v


def _read_points(path, d) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    header = [c.strip() for c in lines[0].split(",")]
    if header != [f"x{j}" for j in range(1, d + 1)]:
        raise InputError(f"{path}: header must be x1..x{d}")
    pts = []
    for no, ln in enumerate(lines[1:], start=2):
        try:
            row = [float(c) for c in ln.split(",")]
        except ValueError:
            raise InputError(f"{path}: line {no} is not numeric") from None
        if len(row) != d or not all(math.isfinite(v) for v in row):
            raise InputError(f"{path}: line {no} must hold {d} finite numbers")
        pts.append(row)
    return np.array(pts, dtype=float).reshape(-1, d)


def _eta_grid(cfg: RunConfig):
    if cfg.eta_grid_lo is None:
        return None
    return np.logspace(math.log10(cfg.eta_grid_lo), math.log10(cfg.eta_grid_hi), cfg.eta_grid_points)


# ---------------------------------------------------------------------------
# modes


def _kernel(cfg: RunConfig, fallback: str = DEFAULT_KERNEL):
    return parse_kernel(cfg.kernel or fallback)


def _homo_fit(cfg: RunConfig, panel):
    spec = _kernel(cfg)
    if cfg.eta == "gcv":
        return fit_homo_gcv(panel, spec, eta_grid=_eta_grid(cfg), cap=cfg.cap,
                            eta_scale=cfg.eta_scale, grid_points=cfg.eta_grid_points)
    return fit_homo(panel, spec, cfg.eta * cfg.eta_scale, cap=cfg.cap)


def _hetero_fits(cfg: RunConfig, panel, threads):
    spec = _kernel(cfg)
    eta = cfg.eta if cfg.eta == "gcv" else cfg.eta * cfg.eta_scale
    return fit_hetero(panel, spec, eta=eta, eta_grid=_eta_grid(cfg), threads=threads,
                      eta_scale=cfg.eta_scale if cfg.eta == "gcv" else 1.0,
                      grid_points=cfg.eta_grid_points)


def _gcv_block(res):
    if res is None:
        return None
    return {"selected_eta": res.eta, "grid_eta": res.grid_eta, "refined": res.refined, "curve": res.curve()}


def run_fit_homo(cfg, threads):
    panel = parse_panel_csv(cfg.data)
    fit = _homo_fit(cfg, panel)
    result = {
        "model": "homo", "N": panel.N, "T": panel.T, "d": panel.d, "q1": panel.q1,
        "kernel": format_kernel(fit.spec), "eta": fit.eta, "h_hat": fit.h_hat,
        "sigma_eps_sq": fit.sigma_eps_sq, "cond_Z": fit.cond_Z, "gcv": _gcv_block(fit.gcv),
        "coefficients": [{"unit": u, "beta": b} for u, b in zip(panel.unit_labels, fit.betas)],
        "notes": list(fit.notes),
    }
    pts = _read_points(cfg.predict_file, panel.d) if cfg.predict_file else np.unique(panel.stacked_points(), axis=0)
    g, se, lo, hi = ci_g_homo_grid(fit, pts, cfg.level)
    header = [f"x{j}" for j in range(1, panel.d + 1)] + ["g_hat", "std_error", "lower", "upper"]
    rows = [list(p) + [a, b, c, e] for p, a, b, c, e in zip(pts, g, se, lo, hi)]
    return result, _csv_text(header, rows)


def run_fit_hetero(cfg, threads):
    panel = parse_panel_csv(cfg.data)
    fits = _hetero_fits(cfg, panel, threads)
    result = {
        "model": "hetero", "N": panel.N, "T": panel.T, "d": panel.d, "q1": panel.q1,
        "kernel": format_kernel(fits[0].spec),
        "units": [{
            "unit": panel.unit_labels[f.unit], "eta": f.eta, "h_hat": f.h_hat,
            "sigma_eps_sq": f.sigma_eps_sq, "beta": f.beta, "gcv": _gcv_block(f.gcv),
            "notes": list(f.notes),
        } for f in fits],
        "cond_Z": fits[0].cond_Z,
    }
    header = ["unit"] + [f"x{j}" for j in range(1, panel.d + 1)] + ["g_hat"]
    shared = _read_points(cfg.predict_file, panel.d) if cfg.predict_file else None
    rows = []
    for f in fits:
        pts = shared if shared is not None else panel.X[f.unit]
        g = predict_hetero(f, panel, pts)
        rows += [[panel.unit_labels[f.unit]] + list(p) + [v] for p, v in zip(pts, g)]
    return result, _csv_text(header, rows)


def run_interval(cfg, threads):
    panel = parse_panel_csv(cfg.data)
    if cfg.model == "homo":
        if cfg.kind not in ("g_ci", "beta_ci"):
            raise InputError(f"kind {cfg.kind} needs --model hetero")
        fit = _homo_fit(cfg, panel)
        if cfg.kind == "g_ci":
            est = ci_g_homo(fit, panel, _vector(cfg.x0, "x0", panel.d), cfg.level)
        else:
            if cfg.direction is None:
                raise InputError("beta_ci needs --direction")
            est = ci_beta_partial_linear(fit, panel, _vector(cfg.anchor, "anchor", panel.d),
                                         cfg.direction, cfg.level)
    else:
        if cfg.kind not in ("mean_ci", "prediction"):
            raise InputError(f"kind {cfg.kind} needs --model homo")
        if cfg.unit is None or cfg.unit not in panel.unit_labels:
            raise InputError(f"--unit must name one of the panel's units, got {cfg.unit!r}")
        i = panel.unit_labels.index(cfg.unit)
        spec = _kernel(cfg)
        if cfg.eta == "gcv":
            fit = fit_hetero_unit_gcv(panel, i, spec, _eta_grid(cfg), eta_scale=cfg.eta_scale,
                                      grid_points=cfg.eta_grid_points)
        else:
            fit = fit_hetero_unit(panel, i, spec, cfg.eta * cfg.eta_scale)
        x0 = _vector(cfg.x0, "x0", panel.d)
        f0 = np.concatenate([[1.0], _vector(cfg.f0, "f0", panel.q1 - 1)])
        xbar0 = _vector(cfg.xbar0, "xbar0", panel.d)[None, :]
        if cfg.kind == "mean_ci":
            est = ci_mean_hetero(fit, panel, x0, f0, xbar0, cfg.level)
        else:
            est = prediction_interval(fit, panel, x0, f0, xbar0, cfg.level, cfg.noise_model)
    return {"interval": est.to_dict(), "eta": fit.eta, "kernel": format_kernel(fit.spec)}, None


def _dgp(cfg: RunConfig) -> DgpSpec:
    return DgpSpec(cfg.design, cfg.n, cfg.t, seed=cfg.seed, homogeneous=cfg.homogeneous,
                   delta=cfg.delta, sqrt_innovation_scale=cfg.sqrt_innovation_scale,
                   noise_scale=cfg.noise_scale, cap=cfg.cap)


def _est(cfg: RunConfig, dgp: DgpSpec) -> EstimatorConfig:
    return EstimatorConfig(kernel=cfg.kernel or DEFAULT_KERNELS[dgp.design], eta=cfg.eta,
                           eta_scale=cfg.eta_scale, grid_points=cfg.eta_grid_points, cap=cfg.cap)


def run_simulate_mse(cfg, threads):
    dgp = _dgp(cfg)
    rep = mc_mse(dgp, _est(cfg, dgp), cfg.reps, threads=threads)
    return rep, rep.to_csv()


def run_simulate_coverage(cfg, threads):
    dgp = _dgp(cfg)
    rep = mc_coverage(dgp, _est(cfg, dgp), default_x_grid(cfg.x_grid_points), cfg.level,
                      cfg.reps, threads=threads)
    return rep, rep.to_csv()


def run_generate(cfg, threads):
    panel, _ = generate(_dgp(cfg))
    return panel, None


RUNNERS = {
    "fit-homo": run_fit_homo, "fit-hetero": run_fit_hetero, "interval": run_interval,
    "simulate-mse": run_simulate_mse, "simulate-coverage": run_simulate_coverage,
    "generate": run_generate,
}


def _write(path: Path, text: str, written: list) -> None:
    tmp = path.with_name(path.name + ".partial")
    written.append(tmp)
    tmp.write_text(text)
    os.replace(tmp, path)
    written.append(path)


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute one configured run; returns the process exit status."""
    stdout = stdout or sys.stdout
    written: list[Path] = []
    try:
        cfg.validate()
        check_writable(_outputs(cfg))
        threads = cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)
        t0 = time.perf_counter()
        result, csv_text = RUNNERS[cfg.mode](cfg, threads)
        runtime = {"threads": threads, "wall_seconds": time.perf_counter() - t0}
        if cfg.mode == "generate":
            tmp = Path(cfg.out_csv + ".partial")
            written.append(tmp)
            write_panel_csv(result, tmp)
            os.replace(tmp, cfg.out_csv)
            written.append(Path(cfg.out_csv))
            return 0
        if hasattr(result, "payload"):
            body = result.payload()
            body["run_config"] = cfg.echo()
            body["runtime"] = runtime
        else:
            body = {"kind": cfg.mode, "version": __version__, "config": cfg.echo(), "result": result}
        text = dumps(body)
        if cfg.out_json:
            _write(Path(cfg.out_json), text, written)
        else:
            stdout.write(text)
        if cfg.out_csv and csv_text is not None:
            _write(Path(cfg.out_csv), csv_text, written)
        return 0
    except BaseException as exc:  # noqa: BLE001
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        if isinstance(exc, KeyboardInterrupt):
            raise
        return _report_error(exc)


def _report_error(exc: BaseException) -> int:
    if isinstance(exc, IfeKrrError):
        code, kind = exc.exit_code, exc.kind
    elif isinstance(exc, np.linalg.LinAlgError):
        code, kind = NumericError.exit_code, NumericError.kind
    elif isinstance(exc, MemoryError):
        code, kind = ResourceError.exit_code, ResourceError.kind
    elif isinstance(exc, OSError):
        code, kind = InputError.exit_code, "io_error"
    else:
        code, kind = 1, "internal_error"
    err = {"error": {"kind": kind, "message": str(exc), "exit_code": code,
                     "type": type(exc).__name__, "version": __version__}}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        cfg = build_config(sys.argv[1:] if argv is None else argv)
    except IfeKrrError as exc:
        return _report_error(exc)
    return run(cfg)


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package, e.g. ``load_schema("fit-homo")``."""
    from importlib.resources import files

    return json.loads(files("ifekrr").joinpath("schemas", f"{name}.schema.json").read_text())


if __name__ == "__main__":
    sys.exit(main())
