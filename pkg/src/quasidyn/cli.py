"""Command-line front end: deterministic experiment runs with CSV/JSON output.

Subcommands
-----------
spectrum   band table of a Fibonacci periodic approximant
trace      trace orbits (and special-energy root lists) for any model
verify     named invariant suites with a machine-readable report
dynamics   moment ladders and lower-bound verdicts
powerlaw   transfer-matrix power-law and block-coding bound sweeps

Every output file embeds the tool version, the block-indexing convention,
the tolerances in force, and a hash of the resolved configuration, so that
identical configurations yield byte-identical files.  Wall-clock timing is
reported on stderr only; keeping it out of the files preserves the
determinism contract.
"""

from __future__ import annotations

import enum
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from quasidyn import __version__
from quasidyn.lattice import (
    DomainError,
    Geometry,
    Model,
    PotentialSpec,
    ResourceError,
)
from quasidyn.traces import (
    FIB_CONVENTION_ID,
    fib_trace_orbit,
    indexing_convention_report,
    pd_special_energies,
    subst_trace_orbit,
    tm_special_energies,
)
from quasidyn import dynamics, spectra

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3


# ---------------------------------------------------------------------------
# configuration and deterministic writers

@dataclass
class RunConfig:
    """Resolved run configuration; round-trips through flat key=value text."""

    command: str
    values: dict = field(default_factory=dict)

    def hash(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(f"{self.command}\n{canon}".encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"command={self.command}"]
        lines += [f"{k}={self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values: dict = {}
        command = ""
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"bad config line: {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key == "command":
                command = val
            else:
                values[key] = val
        return cls(command=command, values=values)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return RunConfig.from_text(Path(path).read_text()).values


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


def _meta_lines(config: RunConfig, tolerances: dict) -> list[str]:
    meta = {
        "tool": f"quasidyn {__version__}",
        "convention": FIB_CONVENTION_ID,
        "config_hash": config.hash(),
        **{f"tol_{k}": _fmt(v) for k, v in sorted(tolerances.items())},
    }
    return [f"# {k}: {meta[k]}" for k in sorted(meta)]


def write_csv(path: Path, config: RunConfig, tolerances: dict,
              header: list[str], rows: list[tuple]) -> None:
    lines = _meta_lines(config, tolerances)
    lines.append(",".join(header))
    lines += [",".join(_fmt(cell) for cell in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def write_json(path: Path, config: RunConfig, tolerances: dict, payload: dict) -> None:
    doc = {
        "meta": {
            "tool": f"quasidyn {__version__}",
            "convention": FIB_CONVENTION_ID,
            "config_hash": config.hash(),
            "tolerances": _jsonable(tolerances),
        },
        **_jsonable(payload),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _report_error(kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}, sort_keys=True), err=True)


def _build_spec(model: str, lam: float, geometry: str, seed: str | None,
                perturb_sites: tuple[str, ...]) -> PotentialSpec:
    overlay: dict[int, float] = {}
    for item in perturb_sites:
        site, _, value = item.partition(":")
        overlay[int(site)] = float(value)
    return PotentialSpec(Model.parse(model), lam,
                         Geometry(geometry), seed=seed,
                         perturbation=tuple(sorted(overlay.items())))


def _positive(value: float, name: str) -> float:
    if value <= 0:
        raise click.UsageError(f"{name} must be positive")
    return value


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Quantum dynamics of one-dimensional aperiodic chains."""


# ---------------------------------------------------------------------------
# spectrum

@main.command()
@click.option("--model", default="fib", show_default=True)
@click.option("--lambda", "lam", type=float, default=None, help="coupling constant")
@click.option("--k", type=int, default=None, help="approximant level")
@click.option("--edge-tol", type=float, default=1e-10, show_default=True)
@click.option("--measure", "with_measure", is_flag=True,
              help="also emit the measure-decay report JSON (coupling above 4)")
@click.option("--out", type=click.Path(path_type=Path), default=Path("bands.csv"),
              show_default=True, help="band CSV path; a JSON summary sits next to it")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def spectrum(model, lam, k, edge_tol, with_measure, out, config_path):
    """Band table of the level-k Fibonacci periodic approximant."""
    file_vals = _load_config_file(config_path)
    lam = lam if lam is not None else float(file_vals.get("lambda", 0.0))
    k = k if k is not None else int(file_vals.get("k", 0))
    model = Model.parse(model if model != "fib" or "model" not in file_vals
                        else file_vals["model"])
    if model is not Model.FIBONACCI:
        raise click.UsageError("band spectra are computed for the Fibonacci model only")
    if lam <= 0:
        raise click.UsageError("--lambda must be positive")
    if k < 1:
        raise click.UsageError("--k must be at least 1")
    config = RunConfig("spectrum", {"model": model.value, "lambda": _fmt(lam),
                                    "k": k, "edge_tol": _fmt(edge_tol)})
    t_start = time.monotonic()
    try:
        if lam > 4.0:
            bands = spectra.classify_bands(lam, k, edge_tol=edge_tol) if k >= 2 \
                else spectra.approximant_spectrum(lam, k, edge_tol=edge_tol)
        else:
            bands = spectra.approximant_spectrum(lam, k, edge_tol=edge_tol)
    except spectra.BandCountError as err:
        _report_error("band-count", str(err))
        sys.exit(EXIT_CHECK_FAILED)
    rows = [(k, i, b.lo, b.hi, b.width, b.kind.value) for i, b in enumerate(bands)]
    write_csv(out, config, {"edge": edge_tol},
              ["k", "band_index", "lo", "hi", "width", "kind"], rows)
    write_json(out.with_suffix(".json"), config, {"edge": edge_tol}, {
        "lambda": lam,
        "k": k,
        "n_bands": len(bands),
        "total_measure": bands.total_measure,
        "min_width": bands.min_width,
    })
    if with_measure:
        if lam <= 4.0:
            raise click.UsageError("--measure needs coupling above 4")
        measure = spectra.measure_report(lam, k, edge_tol=edge_tol)
        write_json(out.with_suffix(".measure.json"), config, {"edge": edge_tol}, measure)
    click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
    click.echo(f"{len(bands)} bands -> {out}")


# ---------------------------------------------------------------------------
# trace

@main.command()
@click.option("--model", required=True)
@click.option("--lambda", "lam", type=float, required=True)
@click.option("--energy", "--E", "energy", type=float, default=0.0, show_default=True)
@click.option("--kmax", type=int, default=12, show_default=True)
@click.option("--roots", "roots_level", type=int, default=None,
              help="emit the special-energy root list of this level instead of an orbit")
@click.option("--potential", "potential_range", default=None, metavar="LO:HI",
              help="emit the potential sequence (site, value) on this range instead")
@click.option("--geometry", default="whole-line", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("trace.csv"),
              show_default=True)
def trace(model, lam, energy, kmax, roots_level, potential_range, geometry, out):
    """Trace orbit CSV (k, x_k[, y_k]), root list, or potential sequence."""
    model = Model.parse(model)
    config = RunConfig("trace", {"model": model.value, "lambda": _fmt(lam),
                                 "energy": _fmt(energy), "kmax": kmax,
                                 "roots": roots_level if roots_level is not None else "",
                                 "potential": potential_range or "",
                                 "geometry": geometry})
    t_start = time.monotonic()
    if potential_range is not None:
        from quasidyn.lattice import potential_values

        lo_s, _, hi_s = potential_range.partition(":")
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError:
            raise click.UsageError("--potential expects LO:HI with integer sites")
        if lo > hi:
            raise click.UsageError("--potential range must satisfy LO <= HI")
        spec = _build_spec(model.value, lam, geometry, None, ())
        sites = np.arange(lo, hi + 1)
        values = potential_values(spec, sites)
        write_csv(out, config, {}, ["site", "value"], list(zip(sites, values)))
        click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
        click.echo(f"{sites.size} sites -> {out}")
        return
    if roots_level is not None:
        if model is Model.PERIOD_DOUBLING:
            roots = pd_special_energies(lam, roots_level)
        elif model is Model.THUE_MORSE:
            roots = tm_special_energies(lam, roots_level)
        else:
            raise click.UsageError("root lists exist for the pd and tm models")
        write_csv(out, config, {}, ["index", "E_root"],
                  [(i, e) for i, e in enumerate(roots)])
        click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
        click.echo(f"{roots.size} roots -> {out}")
        return
    if model is Model.FIBONACCI:
        orbit = fib_trace_orbit(lam, energy, kmax)
        stop = orbit.overflow_at if orbit.overflow_at is not None else kmax + 1
        rows = [(j, orbit.xs[j]) for j in range(min(stop, kmax + 1))]
        write_csv(out, config, {}, ["k", "x_k"], rows)
    elif model in (Model.PERIOD_DOUBLING, Model.THUE_MORSE):
        orbit = subst_trace_orbit(model, lam, energy, kmax)
        stop = orbit.overflow_at if orbit.overflow_at is not None else kmax + 1
        rows = [(j, orbit.xs[j], orbit.ys[j]) for j in range(min(stop, kmax + 1))]
        write_csv(out, config, {}, ["k", "x_k", "y_k"], rows)
    else:
        raise click.UsageError("trace orbits exist for fib, pd, and tm models")
    click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
    click.echo(f"orbit to k={kmax} -> {out}")


# ---------------------------------------------------------------------------
# verify

def _suite_invariant(lam: float, samples: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    target_tol = 1e-9
    worst = 0.0
    checked = 0
    for _ in range(samples):
        lam_s = lam if lam > 0 else rng.uniform(0.1, 4.0)
        energy = rng.uniform(-4.0, 4.0)
        orbit = fib_trace_orbit(lam_s, energy, 25)
        inv = orbit.invariant_values()
        target = 4.0 + lam_s * lam_s
        xs = orbit.xs
        for j in range(1, 24):
            if not np.isfinite(inv[j]):
                continue
            if max(abs(xs[j - 1]), abs(xs[j]), abs(xs[j + 1])) > 1e6:
                continue
            worst = max(worst, abs(inv[j] - target) / target)
            checked += 1
    return {"name": "fibonacci-invariant", "ok": worst < target_tol,
            "max_relative_drift": worst, "tolerance": target_tol,
            "triples_checked": checked, "samples": samples}


def _suite_algebra(lam: float, seed: int) -> dict:
    report = indexing_convention_report(lam=lam if lam > 0 else 1.0)
    ok = report["adopted"] == "A(F_k)...A(1)" and report["residual_adopted"] < 1e-10
    return {"name": "block-convention", "ok": ok, **report}


def _suite_covering(lam: float, mmax: int) -> dict:
    worst: list = []
    for m in range(2, mmax + 1):
        rep = spectra.covering_check(lam, m)
        if not rep.ok:
            worst.extend(rep.violations)
    return {"name": "band-covering", "ok": not worst, "lambda": lam,
            "mmax": mmax, "violations": worst}


def _suite_parseval(model: str, lam: float, T: float, threads: int) -> dict:
    spec = PotentialSpec(Model.parse(model), lam)
    prof_t = dynamics.profile_time(spec, T)
    prof_r = dynamics.profile_resolvent(spec, T, window=prof_t.window, threads=threads)
    l1 = float(np.sum(np.abs(prof_t.a - prof_r.a)))
    rel = l1 / prof_t.total_mass
    return {"name": "parseval-cross-validation", "ok": rel <= 0.02,
            "model": model, "lambda": lam, "T": T,
            "l1_distance": l1, "relative_l1": rel, "tolerance": 0.02,
            "mass_time": prof_t.total_mass, "mass_resolvent": prof_r.total_mass}


@main.command()
@click.argument("suite", type=click.Choice(["invariant", "algebra", "covering", "parseval"]))
@click.option("--model", default="fib", show_default=True)
@click.option("--lambda", "lam", type=float, default=0.0,
              help="coupling; 0 samples couplings at random where applicable")
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--T", "t_avg", type=float, default=50.0, show_default=True)
@click.option("--mmax", type=int, default=9, show_default=True)
@click.option("--seed", type=int, default=20250808, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
def verify(suite, model, lam, samples, t_avg, mmax, seed, threads, out):
    """Run one named invariant suite and emit a JSON report."""
    config = RunConfig("verify", {"suite": suite, "model": model, "lambda": _fmt(lam),
                                  "samples": samples, "T": _fmt(t_avg), "mmax": mmax,
                                  "seed": seed})
    t_start = time.monotonic()
    if suite == "invariant":
        record = _suite_invariant(lam, samples, seed)
    elif suite == "algebra":
        record = _suite_algebra(lam, seed)
    elif suite == "covering":
        record = _suite_covering(lam if lam > 0 else 5.0, mmax)
    else:
        record = _suite_parseval(model, lam, t_avg, threads)
    payload = {"suite": suite, "records": [record], "ok": record["ok"]}
    if out is not None:
        write_json(out, config, {}, payload)
    else:
        click.echo(json.dumps(_jsonable(payload), sort_keys=True, indent=2))
    click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
    sys.exit(EXIT_OK if record["ok"] else EXIT_CHECK_FAILED)


# ---------------------------------------------------------------------------
# dynamics

@main.command(name="dynamics")
@click.option("--model", required=True)
@click.option("--lambda", "lam", type=float, default=0.0, show_default=True)
@click.option("--p", "p_values", type=float, multiple=True, default=(2.0,),
              show_default=True)
@click.option("--Tmax", "t_max", type=float, default=1000.0, show_default=True)
@click.option("--Tcount", "t_count", type=int, default=7, show_default=True)
@click.option("--Tmin", "t_min", type=float, default=10.0, show_default=True)
@click.option("--bound", "bound_id", default=None,
              help="bound formula id; defaults to the model's own bound")
@click.option("--slope-tol", type=float, default=0.15, show_default=True)
@click.option("--perturb", "perturb_sites", multiple=True,
              help="site:value overlay, repeatable")
@click.option("--window", "window_radius", type=int, default=None,
              help="window radius override (default: light-cone sized)")
@click.option("--geometry", default="whole-line", show_default=True)
@click.option("--seed-word", "seed", default=None)
@click.option("--max-cost", type=float, default=5e10, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("moments.csv"),
              show_default=True, help="moment CSV path; the report JSON sits next to it")
@click.option("--profile-out", type=click.Path(path_type=Path), default=None,
              help="also write the site profile (n, a) at the largest T")
@click.option("--profile-method", type=click.Choice(["time", "resolvent"]),
              default="time", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def dynamics_cmd(model, lam, p_values, t_max, t_count, t_min, bound_id, slope_tol,
                 perturb_sites, window_radius, geometry, seed, max_cost, out,
                 profile_out, profile_method, threads, config_path):
    """Moment ladder CSV plus a lower-bound verdict JSON."""
    file_vals = _load_config_file(config_path)
    lam = float(file_vals.get("lambda", lam))
    t_max = float(file_vals.get("Tmax", t_max))
    if Model.parse(model) is not Model.FREE and lam <= 0:
        raise click.UsageError("--lambda must be positive for the aperiodic models")
    _positive(t_max, "--Tmax")
    if t_count < 5:
        raise click.UsageError("--Tcount must be at least 5 for slope estimation")
    spec = _build_spec(model, lam, geometry, seed, perturb_sites)
    t_values = list(np.geomspace(t_min, t_max, t_count))
    config = RunConfig("dynamics", {
        "model": spec.model.value, "lambda": _fmt(lam), "geometry": geometry,
        "p": ",".join(_fmt(p) for p in p_values), "Tmin": _fmt(t_min),
        "Tmax": _fmt(t_max), "Tcount": t_count,
        "bound": bound_id or dynamics.default_bound_id(spec.model),
        "slope_tol": _fmt(slope_tol),
        "perturb": ";".join(perturb_sites),
        "window": window_radius if window_radius is not None else "",
    })
    window = None
    if window_radius is not None:
        from quasidyn.lattice import LatticeWindow

        window = (LatticeWindow(1, window_radius, Geometry.HALF_LINE)
                  if spec.geometry is Geometry.HALF_LINE
                  else LatticeWindow(-window_radius, window_radius))
    t_start = time.monotonic()
    try:
        report = dynamics.bound_report(spec, list(p_values), t_values, bound_id,
                                       slope_tolerance=slope_tol, max_cost=max_cost,
                                       window=window)
        profiles = dynamics.profiles_time_ladder(spec, t_values, window=window)
    except ResourceError as err:
        _report_error("budget", str(err))
        sys.exit(EXIT_RESOURCE)
    except DomainError as err:
        raise click.UsageError(str(err))
    rows = []
    for p in p_values:
        series = dynamics.moment_series(profiles, p)
        rows += [(T, p, logm) for T, logm in series.points]
    tolerances = {"slope": slope_tol}
    write_csv(out, config, tolerances, ["T", "p", "log_moment"], rows)
    if profile_out is not None:
        prof = profiles[-1]
        if profile_method == "resolvent":
            prof = dynamics.profile_resolvent(spec, prof.T, window=prof.window,
                                              threads=threads)
        profile_config = RunConfig("dynamics-profile", {
            **config.values, "profile_method": profile_method,
            "profile_T": _fmt(prof.T),
            "window": f"{prof.window.lo}:{prof.window.hi}",
        })
        write_csv(profile_out, profile_config, tolerances, ["n", "a"],
                  list(zip(prof.sites(), prof.a)))
    write_json(out.with_suffix(".json"), config, tolerances, {
        "bound_id": report.bound_id,
        "spec": report.spec_description,
        "T_values": list(report.T_values),
        "entries": [{
            "p": e.p,
            "measured_slope": e.measured_slope,
            "slope_confidence": e.slope_confidence,
            "bound_slope": e.bound_slope,
            "verdict": e.verdict.value,
        } for e in report.entries],
        "ok": report.ok,
    })
    click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
    for e in report.entries:
        click.echo(f"p={e.p:g}: slope={e.measured_slope:.3f} bound={e.bound_slope:.3f} "
                   f"-> {e.verdict.value}")
    sys.exit(EXIT_OK if report.ok else EXIT_CHECK_FAILED)


# ---------------------------------------------------------------------------
# powerlaw

@main.command()
@click.option("--model", required=True)
@click.option("--lambda", "lam", type=float, required=True)
@click.option("--energy", "--E", "energies", type=float, multiple=True,
              help="explicit energies; defaults per model")
@click.option("--from-level", "from_level", type=int, default=None,
              help="sample energies from this approximant level (fib only)")
@click.option("--count", type=int, default=20, show_default=True)
@click.option("--mmax", type=int, default=1000, show_default=True)
@click.option("--alpha", type=float, default=None,
              help="power-law exponent; defaults to the model's own")
@click.option("--geometry", default="whole-line", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("powerlaw.csv"),
              show_default=True)
def powerlaw(model, lam, energies, from_level, count, mmax, alpha, geometry, out):
    """Transfer-norm power-law sweep with the Fibonacci coding bound."""
    spec = _build_spec(model, lam, geometry, None, ())
    if alpha is None:
        alpha = {Model.FIBONACCI: None, Model.PERIOD_DOUBLING: 1.0,
                 Model.THUE_MORSE: 0.0}.get(spec.model)
        if alpha is None and spec.model is Model.FIBONACCI:
            alpha = spectra.bound_parameters(lam).alpha
        elif alpha is None:
            raise click.UsageError("--alpha is required for this model")
    energy_list = list(energies)
    if not energy_list:
        if spec.model is Model.FIBONACCI:
            level = from_level if from_level is not None else 10
            bands = spectra.approximant_spectrum(lam, level)
            picks = np.linspace(0, len(bands.bands) - 1, min(count, len(bands.bands)))
            energy_list = [0.5 * (bands.bands[int(i)].lo + bands.bands[int(i)].hi)
                           for i in picks]
        elif spec.model is Model.PERIOD_DOUBLING:
            energy_list = [0.0]
        elif spec.model is Model.THUE_MORSE:
            roots = tm_special_energies(lam, 3)
            energy_list = [float(e) for e in roots]
        else:
            raise click.UsageError("supply --energy for this model")
    config = RunConfig("powerlaw", {
        "model": spec.model.value, "lambda": _fmt(lam), "alpha": _fmt(alpha),
        "mmax": mmax, "energies": ",".join(_fmt(e) for e in energy_list),
    })
    t_start = time.monotonic()
    rows = []
    all_ok = True
    d_const = spectra.bound_parameters(lam).d if spec.model is Model.FIBONACCI else None
    for energy in energy_list:
        rep = dynamics.powerlaw_check(spec, energy, alpha, mmax)
        zk_ok = ""
        if d_const is not None:
            zk = dynamics.zeckendorf_bound_check(spec, energy, mmax, d_const)
            zk_ok = zk["ok"]
            all_ok = all_ok and zk["ok"]
        rows.append((energy, rep.c_estimate, rep.argmax_m, rep.max_norm, zk_ok))
    write_csv(out, config, {}, ["E", "c_estimate", "argmax_m", "max_norm", "coding_bound_ok"],
              rows)
    click.echo(f"wall_clock_s={time.monotonic() - t_start:.3f}", err=True)
    click.echo(f"{len(rows)} energies -> {out}")
    sys.exit(EXIT_OK if all_ok else EXIT_CHECK_FAILED)


if __name__ == "__main__":
    main()
