"""Command-line driver: ``run``, ``analyze``, ``plotdata`` and ``fixtures``.

Run configurations are flat TOML files, for example::

    kind = "classical"
    L = 51
    Gamma = 6.75
    engine = "double_schrodinger"
    chi_list = [16, 32, 64]
    t_max = 10.0
    output_dir = "runs/ccp_critical"

All times and rates are in units of ``gamma``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import numpy as np

from . import __version__
from . import analysis as an
from . import doublespace as ds
from . import model as m
from . import oracle
from . import qjmc

log = logging.getLogger("contact_tebd")

ENGINES = ("double_schrodinger", "double_heisenberg", "qjmc")
FIGURES = ("observables", "entropy_barrier", "error_barrier", "ent_hist")
HEISENBERG_OBSERVABLES = ("absorbing", "seed_density")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Flat run configuration; see the module docstring for the file format."""

    kind: str
    L: int = 51
    gamma: float = 1.0
    omega: float = 0.0
    Gamma: float = 0.0
    engine: str = "double_schrodinger"
    chi_list: list[int] = field(default_factory=lambda: [64])
    dt: float | None = None
    t_max: float = 10.0
    n_traj: int = 1000
    master_seed: int = 0
    measure_every: int | None = None
    fit_window: list[float] = field(default_factory=lambda: [5.0, 10.0])
    svd_cutoff: float = 1e-12
    initial: str = "seed"
    observable: str = "absorbing"
    record_profile: bool = False
    real_gauge: bool = True
    n_workers: int = 1
    n_resample: int = 1000
    output_dir: str = "run"

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if not isinstance(self.chi_list, list) or not self.chi_list:
            raise ConfigError("chi_list must be a non-empty list of bond dimensions")
        if any(not isinstance(c, int) or c < 1 for c in self.chi_list):
            raise ConfigError(f"chi_list entries must be positive integers, got {self.chi_list}")
        if len(set(self.chi_list)) != len(self.chi_list):
            raise ConfigError("chi_list contains duplicates")
        try:
            self.model_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.engine == "qjmc" and self.kind != "quantum":
            raise ConfigError("the qjmc engine requires kind = 'quantum'")
        if self.dt is None:
            self.dt = 0.01 if self.engine == "qjmc" else 0.1
        if self.measure_every is None:
            self.measure_every = 10 if self.engine == "qjmc" else 1
        if not self.dt > 0 or not self.t_max > 0:
            raise ConfigError("dt and t_max must be positive")
        n_steps = self.t_max / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, n_steps):
            raise ConfigError(f"t_max={self.t_max} is not a multiple of dt={self.dt}")
        if self.measure_every < 1:
            raise ConfigError("measure_every must be >= 1")
        if len(self.fit_window) != 2 or not self.fit_window[0] < self.fit_window[1]:
            raise ConfigError(f"fit_window must be [lo, hi] with lo < hi, got {self.fit_window}")
        if self.n_traj < 1 or self.n_resample < 1 or self.n_workers < 1:
            raise ConfigError("n_traj, n_resample and n_workers must be >= 1")
        if self.initial not in ("seed", "vacuum", "full"):
            raise ConfigError(f"initial must be 'seed', 'vacuum' or 'full', got {self.initial!r}")
        if self.observable not in HEISENBERG_OBSERVABLES:
            raise ConfigError(f"observable must be one of {HEISENBERG_OBSERVABLES}")
        if self.engine == "qjmc" and self.initial != "seed":
            raise ConfigError("trajectories always start from the seed state")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError("config must set 'kind'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_mapping(data)

    def model_spec(self) -> m.ModelSpec:
        return m.ModelSpec(self.kind, self.L, self.gamma, self.omega, self.Gamma)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# -- run ----------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def series_path(out: Path, chi: int) -> Path:
    return out / f"series_chi{chi}.csv"


def store_path(out: Path, chi: int) -> Path:
    return out / f"ensemble_chi{chi}"


def execute(cfg: RunConfig) -> Path:
    """Run every bond dimension of ``cfg``, then fit and write the manifest."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.model_spec()
    started = time.time()
    per_chi_time: dict[str, float] = {}
    for chi in cfg.chi_list:
        t0 = time.time()
        log.info("engine=%s L=%d chi=%d", cfg.engine, cfg.L, chi)
        if cfg.engine == "qjmc":
            stats = qjmc.run_ensemble(
                spec,
                chi,
                cfg.dt,
                cfg.t_max,
                cfg.n_traj,
                cfg.master_seed,
                measure_every=cfg.measure_every,
                svd_cutoff=cfg.svd_cutoff,
                store=store_path(out, chi),
                n_workers=cfg.n_workers,
            )
            stats.to_csv(series_path(out, chi))
        else:
            picture = "schrodinger" if cfg.engine == "double_schrodinger" else "heisenberg"
            run = ds.DoubleSpaceRun(
                spec,
                picture=picture,
                chi_max=chi,
                dt=cfg.dt,
                t_max=cfg.t_max,
                measure_every=cfg.measure_every,
                svd_cutoff=cfg.svd_cutoff,
                initial=cfg.initial,
                real_gauge=cfg.real_gauge,
                record_profile=cfg.record_profile,
            )
            if picture == "schrodinger":
                series = ds.run_schrodinger(run)
                if cfg.record_profile:
                    series.profile_to_csv(out / f"profile_chi{chi}.csv")
            else:
                if cfg.observable == "absorbing":
                    obs = ds.absorbing_state(cfg.L)
                else:
                    obs = ds.local_operator_state(cfg.L, m.NUMBER, spec.seed_site)
                series = ds.run_heisenberg(run, obs, cfg.observable)
            series.to_csv(series_path(out, chi))
        per_chi_time[str(chi)] = round(time.time() - t0, 3)

    fits = fit_run(out, cfg)
    an.write_fits(out / "fits.json", fits)
    (out / "summary.txt").write_text(summary_for(cfg, fits))
    write_manifest(out, cfg, wall_time=time.time() - started, per_chi_time=per_chi_time)
    return out


def write_manifest(out: Path, cfg: RunConfig, wall_time: float, per_chi_time: dict[str, float] | None = None) -> None:
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p != out / "manifest.json" and not p.name.endswith(".tmp"):
            artifacts[p.relative_to(out).as_posix()] = _sha256(p)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_time_s": round(wall_time, 3),
        "per_chi_wall_time_s": per_chi_time or {},
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(run_dir: Path) -> tuple[dict, RunConfig]:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no manifest.json")
    manifest = json.loads(path.read_text())
    return manifest, RunConfig.from_mapping(manifest["config"])


# -- analysis -------------------------------------------------------------------


def _read_series(out: Path, chi: int) -> ds.ObservableSeries:
    path = series_path(out, chi)
    if not path.exists():
        raise FileNotFoundError(f"missing series file {path}")
    return ds.ObservableSeries.from_csv(path)


def _double_fits(series: ds.ObservableSeries, window: tuple[float, float], heisenberg: bool) -> dict[str, an.FitResult]:
    arr = series.as_arrays()
    fits: dict[str, an.FitResult] = {}
    p = an.powerlaw_fit(arr["t"], arr["P_sur"], window)
    fits["delta"] = an.FitResult(-p.exponent, p.amplitude, p.window, p.residual_rms, n_points=p.n_points)
    if not heisenberg:
        fits["theta"] = an.powerlaw_fit(arr["t"], arr["N_a"], window)
        fits["seed_slope"] = an.powerlaw_fit(arr["t"], arr["n_seed"], window)
    return fits


def fit_run(out: Path, cfg: RunConfig, window: Sequence[float] | None = None, n_resample: int | None = None) -> dict[str, Any]:
    """Fit every bond dimension of a finished run.

    Double-space fits of the largest chi get the chi-difference error against
    the next smaller chi when one is available; trajectory fits use a joint
    bootstrap. Errors from individual fits are reported in place of results.
    """
    win = (float((window or cfg.fit_window)[0]), float((window or cfg.fit_window)[1]))
    n_res = n_resample or cfg.n_resample
    results: dict[str, Any] = {"window": list(win)}
    chis = sorted(cfg.chi_list)
    per_chi: dict[int, dict[str, an.FitResult]] = {}
    for chi in chis:
        key = f"chi{chi}"
        try:
            if cfg.engine == "qjmc":
                stats = qjmc.EnsembleStore(store_path(out, chi)).stats(cfg.n_traj)
                jb = an.joint_bootstrap(
                    stats.times, stats.samples["P_sur"], stats.samples["N_a"], stats.samples["n_seed"],
                    win, n_resample=n_res, seed=cfg.master_seed,
                )
                per_chi[chi] = {"delta": jb.delta, "theta": jb.theta, "seed_slope": jb.seed_slope, "z": jb.z}
            else:
                per_chi[chi] = _double_fits(_read_series(out, chi), win, cfg.engine == "double_heisenberg")
        except (an.FitError, FileNotFoundError, ValueError) as exc:
            results[key] = {"error": str(exc)}
            continue
        results[key] = {k: v.to_dict() for k, v in per_chi[chi].items()}

    if cfg.engine != "qjmc":
        fitted = [c for c in chis if c in per_chi]
        if len(fitted) >= 2:
            hi, lo = fitted[-1], fitted[-2]
            best = {k: an.chi_difference_error(per_chi[hi][k], per_chi[lo][k]) for k in per_chi[hi]}
            if "theta" in best:
                try:
                    best["z"] = an.propagate_z(best["theta"], best["seed_slope"])
                except an.FitError as exc:
                    results["z_error"] = str(exc)
            results["best"] = {"chi": hi, "chi_reference": lo, **{k: v.to_dict() for k, v in best.items()}}
    elif chis and chis[-1] in per_chi:
        results["best"] = {"chi": chis[-1], **{k: v.to_dict() for k, v in per_chi[chis[-1]].items()}}
    return results


def summary_for(cfg: RunConfig, fits: dict[str, Any]) -> str:
    label = f"{cfg.kind} {cfg.engine} L={cfg.L}"
    rows = []
    if "best" in fits:
        b = fits["best"]
        row = {"label": f"{label} chi={b['chi']}"}
        for k in ("delta", "z", "theta"):
            if k in b:
                row[k] = an.FitResult.from_dict(b[k])
        rows.append(row)
    for chi in sorted(cfg.chi_list):
        f = fits.get(f"chi{chi}", {})
        if "error" in f:
            rows.append({"label": f"{label} chi={chi} (fit failed: {f['error']})"})
            continue
        row = {"label": f"{label} chi={chi}"}
        for k in ("delta", "theta"):
            if k in f:
                row[k] = an.FitResult.from_dict(f[k])
        if "z" in f:
            row["z"] = an.FitResult.from_dict(f["z"])
        rows.append(row)
    rows.append({"label": "1d DP", **an.DP_1D})
    header = f"fit window gamma*t in [{fits['window'][0]:g}, {fits['window'][1]:g}]\n"
    return header + an.summary_table(rows)


def analyze(run_dir: Path, window: Sequence[float] | None = None, n_resample: int | None = None) -> dict[str, Any]:
    manifest, cfg = load_manifest(run_dir)
    if window is not None:
        win = (float(window[0]), float(window[1]))
        t_lo, t_hi = 0.0, cfg.t_max
        if not (t_lo <= win[0] < win[1] <= t_hi + 1e-9):
            raise ConfigError(f"fit window [{win[0]:g}, {win[1]:g}] lies outside the data range [0, {cfg.t_max:g}]")
    fits = fit_run(run_dir, cfg, window, n_resample)
    an.write_fits(run_dir / "fits.json", fits)
    text = summary_for(cfg, fits)
    (run_dir / "summary.txt").write_text(text)
    return fits


# -- plot data ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _write_columns(path: Path, header: Sequence[str], columns: Sequence[Sequence[float]]) -> None:
    n = max(len(c) for c in columns)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(c[i]) if i < len(c) else "nan" for c in columns) + "\n")


def plotdata(run_dir: Path, figure: str, pair: Path | None = None, times: Sequence[float] = (1.0, 5.0, 10.0)) -> list[Path]:
    """Write the plot-ready CSVs of ``figure`` into ``run_dir/plotdata``."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; expected one of {FIGURES}")
    manifest, cfg = load_manifest(run_dir)
    dest = run_dir / "plotdata"
    dest.mkdir(exist_ok=True)
    written: list[Path] = []
    chis = sorted(cfg.chi_list)

    if figure == "observables":
        fits_path = run_dir / "fits.json"
        fits = json.loads(fits_path.read_text()) if fits_path.exists() else {}
        for chi in chis:
            arr = _read_series(run_dir, chi).as_arrays()
            t = arr["t"]
            f = fits.get(f"chi{chi}", {})
            cols, header = [t], ["t"]
            for name, key, sign in (("P_sur", "delta", -1.0), ("N_a", "theta", 1.0), ("n_seed", "seed_slope", 1.0)):
                cols.append(arr[name])
                header.append(name)
                overlay = np.full_like(t, np.nan)
                if key in f:
                    fr = an.FitResult.from_dict(f[key])
                    lo, hi = fr.window
                    inside = (t >= lo - 1e-9) & (t <= hi + 1e-9) & (t > 0)
                    overlay[inside] = fr.amplitude * t[inside] ** (sign * fr.exponent)
                cols.append(overlay)
                header.append(f"{name}_fit")
            path = dest / f"observables_chi{chi}.csv"
            _write_columns(path, header, cols)
            written.append(path)

    elif figure in ("entropy_barrier", "error_barrier"):
        column = "S_tilde" if figure == "entropy_barrier" else "err_est"
        if figure == "entropy_barrier":
            if pair is None:
                raise ConfigError("entropy_barrier needs --pair pointing at the Heisenberg run")
            _, pcfg = load_manifest(pair)
            if pcfg.engine != "double_heisenberg":
                raise ConfigError(f"paired run {pair} is not a Heisenberg run (engine {pcfg.engine})")
            for chi in chis:
                if not series_path(pair, chi).exists():
                    raise FileNotFoundError(f"paired Heisenberg run has no series for chi={chi}")
        for chi in chis:
            a = _read_series(run_dir, chi).as_arrays()
            header, cols = ["t", f"{column}_{cfg.engine}"], [a["t"], a[column]]
            if pair is not None:
                b = _read_series(pair, chi).as_arrays()
                if len(b["t"]) != len(a["t"]) or np.max(np.abs(b["t"] - a["t"])) > 1e-9:
                    raise ConfigError("paired runs use different time grids")
                header.append(f"{column}_{pcfg.engine if figure == 'entropy_barrier' else 'pair'}")
                cols.append(b[column])
            path = dest / f"{figure}_chi{chi}.csv"
            _write_columns(path, header, cols)
            written.append(path)

    elif figure == "ent_hist":
        if cfg.engine != "qjmc":
            raise ConfigError("ent_hist needs a qjmc run")
        stats = {chi: qjmc.EnsembleStore(store_path(run_dir, chi)).stats(cfg.n_traj) for chi in chis}
        reference = stats[chis[-1]]
        for chi in chis:
            for t in times:
                h = qjmc.entanglement_histogram(stats[chi], t, reference, first_bin_scale=0.1)
                path = dest / f"ent_hist_chi{chi}_t{t:g}.csv"
                h.to_csv(path)
                written.append(path)
    return written


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contact-tebd", description="Contact-process TEBD and trajectory simulations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the engine for every chi in a config file")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--output-dir", type=Path, help="override output_dir from the config")

    a = sub.add_parser("analyze", help="refit the series of a finished run")
    a.add_argument("run_dir", type=Path)
    a.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"))
    a.add_argument("--n-resample", type=int)

    pd = sub.add_parser("plotdata", help="emit plot-ready CSVs for one figure")
    pd.add_argument("run_dir", type=Path)
    pd.add_argument("figure", help=f"one of {', '.join(FIGURES)}")
    pd.add_argument("--pair", type=Path, help="Heisenberg run paired with a Schrodinger run")
    pd.add_argument("--times", nargs="+", type=float, default=[1.0, 5.0, 10.0])

    f = sub.add_parser("fixtures", help="regenerate the dense-oracle test fixtures")
    f.add_argument("--force", action="store_true", help="overwrite an existing fixture file")
    f.add_argument("--path", type=Path, default=None)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        if args.command == "run":
            cfg = RunConfig.from_file(args.config)
            if args.output_dir is not None:
                cfg.output_dir = str(args.output_dir)
            out = execute(cfg)
            print((out / "summary.txt").read_text(), end="")
        elif args.command == "analyze":
            analyze(args.run_dir, args.window, args.n_resample)
            print((args.run_dir / "summary.txt").read_text(), end="")
        elif args.command == "plotdata":
            for path in plotdata(args.run_dir, args.figure, args.pair, args.times):
                print(path)
        elif args.command == "fixtures":
            path = args.path or oracle.FIXTURE_PATH
            if Path(path).exists() and not args.force:
                raise ConfigError(f"{path} exists; pass --force to regenerate it")
            oracle.write_fixtures(path)
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (an.FitError, FileNotFoundError, m.UnsupportedConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
