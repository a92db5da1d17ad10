"""Command-line interface.

Exit codes: 0 success, 2 bad configuration, 3 computation error or sandwich
violation, 4 infeasible restriction.
"""
from __future__ import annotations

import csv
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Any

import click
import numpy as np
from scipy import integrate, stats

from .distributions import (ChiSquare, Chi2NormalConvolution, DistributionError, FitFailureError,
                            MarginalDistribution, Normal, fit_normal_mixture, from_spec)
from .makarov import makarov_lower, makarov_upper
from .mtr import MtrOptions, mtr_lower
from .oracle import (InfeasibleRestrictionError, aligned_window, build_mask, discretize_pair, solve_transport_lp,
                     support_window)
from .restrictions import RestrictionSpec
from .roy import RoyContext, roy_bounds
from .shape import concave_bounds, convex_bounds

EXIT_CONFIG = 2
EXIT_COMPUTE = 3
EXIT_INFEASIBLE = 4
SECTION4_K1 = (1, 5, 10)
SECTION4_K2 = (1, 10, 40)
SANDWICH_SLACK = 1e-6
# equal spacing wins on this design; fewer starts keep the study inside its time budget
SECTION4_MULTISTARTS = 10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    f0: MarginalDistribution
    f1: MarginalDistribution
    restriction: RestrictionSpec
    delta_min: float
    delta_max: float
    steps: int
    mtr: MtrOptions = field(default_factory=MtrOptions)
    roy: RoyContext | None = None
    out: str | None = None
    raw: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def deltas(self) -> np.ndarray:
        return np.linspace(self.delta_min, self.delta_max, self.steps)

    @classmethod
    def from_dict(cls, doc: dict[str, Any], seed: int | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        try:
            f0, f1 = from_spec(doc["f0"]), from_spec(doc["f1"])
            rdoc = doc.get("restriction")
            restriction = RestrictionSpec.from_dict(rdoc if not isinstance(rdoc, dict) or rdoc.get("kind") != "roy"
                                                    else {"kind": "roy", "d": 1, "m_C": 0.0})
            roy = RoyContext.from_dict(rdoc["context"]) if restriction.kind == "roy" else None
            m = dict(doc.get("mtr", {}))
            if seed is not None:
                m["seed"] = seed
            opts = MtrOptions(epsilon_K=float(m.get("epsilon", 1e-5)), smoothing_h=float(m.get("h", 0.05)),
                              multistarts=int(m.get("multistarts", 100)), rng_seed=int(m.get("seed", 0)))
            cfg = cls(f0, f1, restriction, float(doc.get("delta_min", 0.0)), float(doc["delta_max"]),
                      int(doc.get("steps", 81)), opts, roy, doc.get("out"), doc)
        except (KeyError, TypeError, ValueError, DistributionError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if not cfg.delta_min < cfg.delta_max or cfg.steps < 2:
            raise ConfigError("need delta_min < delta_max and steps >= 2")
        return cfg


def _load_config(path: str | None, seed: int | None) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(doc, seed)


def _fail(code: int, msg: str):
    click.echo(msg, err=True)
    sys.exit(code)


def _fmt(x: float) -> str:
    return "%.12g" % x


def _write_csv(path: str, header: list[str], rows: list[list[float]]):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def restricted_bounds(cfg: RunConfig, delta: float) -> tuple[float, float, Any]:
    """(lower, upper, witness) for the configured restriction at one delta."""
    r = cfg.restriction
    if r.kind == "none":
        lo, ly = makarov_lower(cfg.f0, cfg.f1, delta)
        up, uy = makarov_upper(cfg.f0, cfg.f1, delta)
        return lo, up, {"lower_y": ly, "upper_y": uy}
    if r.kind == "mtr":
        lo, seq = mtr_lower(cfg.f0, cfg.f1, delta, cfg.mtr)
        up = makarov_upper(cfg.f0, cfg.f1, delta)[0] if delta >= 0 else 0.0
        return lo, max(up, lo), seq.to_dict()
    if r.kind in ("concave", "convex"):
        fn = concave_bounds if r.kind == "concave" else convex_bounds
        lo, up = fn(cfg.f0, cfg.f1, delta, r.shape, cfg.mtr)
        return lo, up, None
    lo, up = roy_bounds(cfg.roy, delta, cfg.mtr)
    return lo, up, None


def _mtr_options_dict(o: MtrOptions) -> dict[str, Any]:
    return {"epsilon_K": o.epsilon_K, "smoothing_h": o.smoothing_h, "multistarts": o.multistarts,
            "seed": o.rng_seed, "method": o.method}


def run_bounds(cfg: RunConfig, out: str) -> None:
    rows, witnesses = [], []
    for d in cfg.deltas:
        ml, my = makarov_lower(cfg.f0, cfg.f1, d)
        mu, uy = makarov_upper(cfg.f0, cfg.f1, d)
        lo, up, wit = restricted_bounds(cfg, d)
        rows.append([d, ml, mu, lo, up])
        witnesses.append({"delta": float(d), "makarov_lower_y": my, "makarov_upper_y": uy, "restricted": wit})
    _write_csv(out, ["delta", "makarov_lower", "makarov_upper", "restricted_lower", "restricted_upper"], rows)
    sidecar = {"restriction": cfg.restriction.to_dict(), "f0": cfg.f0.to_dict(), "f1": cfg.f1.to_dict(),
               "options": _mtr_options_dict(cfg.mtr), "witnesses": witnesses}
    with open(out + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True, default=float)


def _parse_grid(text: str | None, default=(50, 100, 200)) -> list[int]:
    if not text:
        return list(default)
    try:
        sizes = sorted(int(s) for s in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --grid {text!r}") from exc
    if not sizes or sizes[0] < 2 or sizes[-1] > 500:
        raise ConfigError("grid sizes must lie in [2, 500]")
    return sizes


def run_oracle_check(cfg: RunConfig, sizes: list[int], tolerance: float, out: str | None) -> bool:
    r = cfg.restriction
    if r.kind == "roy":
        raise ConfigError("oracle-check supports none, mtr, concave and convex")
    deltas = cfg.deltas
    formula = [restricted_bounds(cfg, d)[:2] for d in deltas]
    lo, hi = aligned_window(*support_window(cfg.f0, cfg.f1), deltas, sizes[0])
    rows, ok = [], True
    for n in sizes:
        mu0, mu1 = discretize_pair(cfg.f0, cfg.f1, n, lo, hi)
        mask = None if r.kind == "none" else build_mask(mu0.points, mu1.points, r)
        for d, (fl, fu) in zip(deltas, formula):
            ll, _ = solve_transport_lp(mu0, mu1, mask, d, "min_below")
            lu, _ = solve_transport_lp(mu0, mu1, mask, d, "max_below")
            gl, gu = abs(fl - ll), abs(fu - lu)
            click.echo(f"n={n} delta={_fmt(d)} lower {_fmt(fl)} vs {_fmt(ll)} gap {gl:.3g}; "
                       f"upper {_fmt(fu)} vs {_fmt(lu)} gap {gu:.3g}")
            rows.append([n, d, fl, ll, fu, lu])
            if n == sizes[-1] and max(gl, gu) > tolerance:
                ok = False
    if out:
        _write_csv(out, ["n", "delta", "formula_lower", "lp_lower", "formula_upper", "lp_upper"], rows)
    return ok


def section4_rows(k1: int, k2: float, steps: int = 81, opts: MtrOptions = MtrOptions()) -> list[list[float]]:
    """delta, true DTE, Makarov lower/upper and MTR lower on [0, chi2(k1) 0.999-quantile]."""
    F0, F1 = Normal(0.0, float(k2)), Chi2NormalConvolution(k1, float(k2))
    truth = ChiSquare(float(k1))
    rows = []
    for d in np.linspace(0.0, float(stats.chi2.ppf(0.999, k1)), steps):
        ml = makarov_lower(F0, F1, d)[0]
        mu = makarov_upper(F0, F1, d)[0]
        lo = mtr_lower(F0, F1, d, opts)[0]
        rows.append([d, truth.cdf(d), ml, mu, lo])
    return rows


def check_section4(rows: list[list[float]], slack: float = SANDWICH_SLACK) -> list[str]:
    bad = []
    for d, t, ml, mu, lo in rows:
        if not (ml <= lo + slack and lo <= t + slack and t <= mu + slack):
            bad.append(f"delta={_fmt(d)}: makarov_lower={_fmt(ml)} mtr_lower={_fmt(lo)} true={_fmt(t)} "
                       f"makarov_upper={_fmt(mu)}")
    return bad


def integrated_gain(rows: list[list[float]]) -> float:
    a = np.asarray(rows, float)
    return float(integrate.trapezoid(a[:, 4] - a[:, 2], a[:, 0]))


@click.group()
def main():
    """Sharp bounds on the distribution of treatment effects."""


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(), default=None)(f)
    f = click.option("--out", type=click.Path(), default=None)(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None)(f)
    return f


@main.command("bounds")
@_common
def cmd_bounds(config_path, out, seed):
    """Makarov and restricted bounds on a delta grid, written as CSV plus a JSON sidecar."""
    try:
        cfg = _load_config(config_path, seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = out or cfg.out or "bounds.csv"
    try:
        run_bounds(cfg, out)
    except InfeasibleRestrictionError as exc:
        _fail(EXIT_INFEASIBLE, f"infeasible: {exc} {exc.certificate}")
    except Exception as exc:  # noqa: BLE001 - any numerical failure maps to one exit code
        _fail(EXIT_COMPUTE, f"computation failed: {exc}")
    click.echo(out)


@main.command("oracle-check")
@_common
@click.option("--tolerance", type=float, default=0.02, show_default=True)
@click.option("--grid", type=str, default=None, help="comma-separated grid sizes, at most 500")
def cmd_oracle_check(config_path, out, seed, tolerance, grid):
    """Compare the formulas with the discrete transport LP at several grid sizes."""
    try:
        cfg = _load_config(config_path, seed)
        sizes = _parse_grid(grid)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ok = run_oracle_check(cfg, sizes, tolerance, out)
    except InfeasibleRestrictionError as exc:
        _fail(EXIT_INFEASIBLE, f"infeasible: {exc}; certificate {json.dumps(exc.certificate, default=float)}")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_COMPUTE, f"computation failed: {exc}")
    if not ok:
        _fail(EXIT_COMPUTE, f"gaps above tolerance {tolerance} at n={sizes[-1]}")
    click.echo("all gaps within tolerance")


@main.command("replicate-section4")
@_common
@click.option("--grid", type=int, default=81, show_default=True, help="number of delta points")
def cmd_replicate_section4(config_path, out, seed, grid):
    """The chi-square/normal study: 9 (k1, k2) pairs, one CSV each."""
    out = out or "section4"
    opts = MtrOptions(multistarts=SECTION4_MULTISTARTS, rng_seed=seed or 0)
    failures, gains = [], {}
    try:
        for k1 in SECTION4_K1:
            for k2 in SECTION4_K2:
                rows = section4_rows(k1, k2, grid, opts)
                _write_csv(os.path.join(out, f"k1_{k1}_k2_{k2}.csv"),
                           ["delta", "true_dte", "makarov_lower", "makarov_upper", "mtr_lower"], rows)
                gains[(k1, k2)] = integrated_gain(rows)
                failures += [f"(k1={k1}, k2={k2}) {b}" for b in check_section4(rows)]
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_COMPUTE, f"computation failed: {exc}")
    _write_csv(os.path.join(out, "integrated_gain.csv"), ["k1", "k2", "gain"],
               [[k1, k2, g] for (k1, k2), g in gains.items()])
    if failures:
        _fail(EXIT_COMPUTE, "sandwich violated:\n" + "\n".join(failures))
    click.echo(out)


@main.command("fit-mixture")
@_common
@click.option("--tolerance", type=float, default=0.01, show_default=True, help="sup-distance threshold")
@click.option("--grid", type=int, default=401, show_default=True, help="evaluation grid size")
def cmd_fit_mixture(config_path, out, seed, tolerance, grid):
    """Fit the smallest normal mixture to the distribution in the config's "target" field."""
    try:
        if config_path is None:
            raise ConfigError("--config is required")
        with open(config_path) as fh:
            doc = json.load(fh)
        target = from_spec(doc["target"])
        max_comp = int(doc.get("max_components", 3))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        _fail(EXIT_CONFIG, f"invalid config: {exc}")
    lo, hi = target.effective_range(1e-6)
    try:
        mix = fit_normal_mixture(target, np.linspace(lo, hi, grid), max_comp, tolerance, seed or 0)
    except FitFailureError as exc:
        _fail(EXIT_COMPUTE, str(exc))
    text = json.dumps({**mix.to_dict(), "sup_distance": mix.fit_sup_distance}, indent=1)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    click.echo(text)


if __name__ == "__main__":
    main()
