"""Command-line driver: synthetic generation, inference and summaries."""

import argparse
import csv
from dataclasses import asdict, dataclass, fields, replace
import hashlib
import json
import math
import os
import platform
import sys
import warnings

import numpy as np

from . import __version__
from .data import Catalog
from .diagnostics import (
    ChainRecord,
    enclosed_mass_area_weighted,
    profile_summaries,
    split_chain_check,
    write_profile_csv,
    write_summary_csv,
)
from .errors import ConfigError, DataError, GalmassError
from .likelihood import LikelihoodConfig, PriorSpec
from .potential import DensityProfile, RadialGrid
from .sampler import Sampler, SamplerConfig, run_chain
from .synth import SynthModel, sample_catalog

MODES = ("generate", "infer", "summarize")
# fields that do not change what a run computes
_NON_SEMANTIC = {"out", "resume", "catalog", "record"}


@dataclass(frozen=True)
class RunConfig:
    mode: str = "infer"
    catalog: str = ""
    out: str = "out"
    record: str = ""
    resume: str = ""
    seed: int = 0
    n_iter: int = 1000
    thin: int = 10
    checkpoint_every: int = 1000
    isotropic: bool = False
    n_eps: int = 8
    n_ell_init: int = 7
    nell_min: int = 5
    nell_max: int = 10
    nell_period: int = 10
    nx_cap: int = 8
    rho0: float = 0.1
    r_s: float = 1.0
    nfw_span_decades: float = 3.0
    f_max: float = 1.0
    gh_nodes: int = 7
    n0: int = 1000
    adapt_stop: int = -1
    burn_in: float = 0.5
    unit_length: float = 1.0
    unit_velocity: float = 1.0
    unit_mass: float = 1.0
    emit_area_weighted_mass: bool = False
    synth_kind: str = "WD"
    synth_sigma: float = 0.25
    synth_r_a: float = 3.0
    synth_M: float = 1.0
    synth_a: float = 1.0
    synth_n: int = 198
    synth_sigma_v3: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.n_iter < 0 or self.thin < 1 or self.checkpoint_every < 0:
            raise ConfigError("n_iter >= 0, thin >= 1 and checkpoint_every >= 0 are required")
        if not 1 <= self.nell_min <= self.nell_max:
            raise ConfigError("need 1 <= nell_min <= nell_max")
        if self.nx_cap < 1 or self.n_eps < 2:
            raise ConfigError("nx_cap >= 1 and n_eps >= 2 are required")
        if min(self.unit_length, self.unit_velocity, self.unit_mass) <= 0:
            raise ConfigError("unit scales must be positive")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must lie in [0, 1)")

    def config_hash(self):
        d = {k: v for k, v in asdict(self).items() if k not in _NON_SEMANTIC}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def priors(self):
        support = (1, 1) if self.isotropic else (self.nell_min, self.nell_max)
        return PriorSpec(self.nfw_span_decades, support, self.rho0, self.r_s, f_max=self.f_max)

    def sampler_config(self):
        return SamplerConfig(
            n_iter=self.n_iter,
            thin=self.thin,
            checkpoint_every=self.checkpoint_every,
            n_eps=self.n_eps,
            n_ell_init=1 if self.isotropic else min(max(self.n_ell_init, self.nell_min), self.nell_max),
            learn_n_ell=not self.isotropic,
            nell_period=self.nell_period,
            n0=self.n0,
            adapt_stop=self.adapt_stop,
        )

    def synth_model(self):
        return SynthModel(self.synth_kind, self.synth_sigma, self.synth_r_a, self.synth_M, self.synth_a,
                          self.synth_n, self.synth_sigma_v3)


def _coerce(name, raw, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in types:
            raise ConfigError(f"config line {n}: unknown key {k!r}")
        out[k] = _coerce(k, v, types[k])
    return out


def load_config(path=None, **overrides):
    values = {}
    if path:
        try:
            with open(path) as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# catalogs


def ingest_catalog(path, unit_length=1.0, unit_velocity=1.0):
    """Read ``x1,x2,v3,sigma_v3`` or ``rp,v3,sigma_v3`` CSV into internal units."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read catalog {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty catalog") from None
        if header == ["x1", "x2", "v3", "sigma_v3"]:
            cols = header
        elif header == ["rp", "v3", "sigma_v3"]:
            cols = header
        else:
            raise DataError(f"{path}, line 1: unrecognised header {header}")
        rows = []
        for line_no, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise DataError(f"{path}, line {line_no}: expected {len(cols)} fields, got {len(row)}")
            vals = []
            for name, cell in zip(cols, row):
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(f"{path}, line {line_no}, column {name}: not a number: {cell!r}") from None
                if not math.isfinite(x):
                    raise DataError(f"{path}, line {line_no}, column {name}: non-finite value")
                vals.append(x)
            rec = dict(zip(cols, vals))
            if "rp" in rec:
                rec = {"x1": rec["rp"], "x2": 0.0, "v3": rec["v3"], "sigma_v3": rec["sigma_v3"]}
            if math.hypot(rec["x1"], rec["x2"]) <= 0.0:
                raise DataError(f"{path}, line {line_no}: projected radius is zero")
            if rec["sigma_v3"] < 0:
                raise DataError(f"{path}, line {line_no}, column sigma_v3: negative")
            rows.append(rec)
    if not rows:
        raise DataError(f"{path}: empty catalog")
    a = {k: np.array([r[k] for r in rows]) for k in ("x1", "x2", "v3", "sigma_v3")}
    return Catalog(a["x1"] / unit_length, a["x2"] / unit_length, a["v3"] / unit_velocity,
                   a["sigma_v3"] / unit_velocity)


def write_catalog(catalog, path, unit_length=1.0, unit_velocity=1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "v3", "sigma_v3"])
        for x1, x2, v3, s in zip(catalog.x1, catalog.x2, catalog.v3, catalog.sigma_v3):
            w.writerow([repr(float(x1 * unit_length)), repr(float(x2 * unit_length)),
                        repr(float(v3 * unit_velocity)), repr(float(s * unit_velocity))])


def build_radial_bins(catalog, cap=8):
    """Finest uniform grid over [min R_p, max R_p] (at most ``cap`` bins) with no empty bin."""
    rp = np.asarray(catalog.rp, dtype=float)
    if rp.size == 0:
        raise DataError("empty catalog")
    lo, hi = float(rp.min()), float(rp.max())
    if hi <= lo:
        warnings.warn("all data share one projected radius; using a single radial bin", stacklevel=2)
        return RadialGrid(lo, lo if lo > 0 else 1.0, 1)
    for n in range(cap, 0, -1):
        grid = RadialGrid(lo, (hi - lo) / n, n)
        counts = np.bincount(grid.bin_index(rp), minlength=n)
        if np.all(counts >= 1):
            return grid
    raise AssertionError("unreachable: a single bin always holds every datum")


# ---------------------------------------------------------------------------
# runs


def _manifest(cfg, extra=None):
    import numba
    import scipy

    m = {
        "config_hash": cfg.config_hash(),
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {
            "galmass": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    if extra:
        m.update(extra)
    return m


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)


def _summaries(cfg, record, out):
    grid, rho_s, mass_s = profile_summaries(record, cfg.burn_in)
    rho_scale = cfg.unit_mass / cfg.unit_length**3

    def scaled(items, k):
        return [replace(s, mode=s.mode * k, hpd_lo=s.hpd_lo * k, hpd_hi=s.hpd_hi * k) for s in items]

    rho_s, mass_s = scaled(rho_s, rho_scale), scaled(mass_s, cfg.unit_mass)
    write_summary_csv(os.path.join(out, "summary.csv"), rho_s + mass_s)
    phys_grid = RadialGrid(grid.r_min * cfg.unit_length, grid.delta_r * cfg.unit_length, grid.n_x)
    write_profile_csv(os.path.join(out, "profile.csv"), phys_grid, rho_s, mass_s)
    files = ["summary.csv", "profile.csv"]
    try:
        rep = split_chain_check(record, burn_in=cfg.burn_in)
        with open(os.path.join(out, "split_check.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "pair", "ks_statistic", "p_value", "flag"])
            for i, name in enumerate(rep.names):
                for q, pair in enumerate(rep.pairs):
                    w.writerow([name, f"{pair[0] + 1}-{pair[1] + 1}", repr(float(rep.statistics[i, q])),
                                repr(float(rep.pvalues[i, q])), int(rep.flags[i, q])])
        files.append("split_check.csv")
    except ValueError as exc:
        warnings.warn(f"split-chain check skipped: {exc}", stacklevel=2)
    if cfg.emit_area_weighted_mass:
        rec = record.after_burn_in(cfg.burn_in)
        alt = np.array([enclosed_mass_area_weighted(DensityProfile(grid, r)) for r in rec.rho])
        np.savetxt(os.path.join(out, "mass_area_weighted.csv"), alt * cfg.unit_mass, delimiter=",",
                   header=",".join(f"M_{b + 1}" for b in range(grid.n_x)), comments="")
        files.append("mass_area_weighted.csv")
    return files


def run(cfg):
    """Execute one run; returns the list of artifacts written."""
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.mode == "generate":
        cat = sample_catalog(cfg.synth_model(), np.random.default_rng(cfg.seed))
        path = cfg.catalog or os.path.join(cfg.out, "catalog.csv")
        write_catalog(cat, path, cfg.unit_length, cfg.unit_velocity)
        _write_json(os.path.join(cfg.out, "manifest.json"), _manifest(cfg, {"artifacts": [path]}))
        return [path]

    if cfg.mode == "infer":
        if not cfg.catalog:
            raise ConfigError("infer mode needs a catalog")
        cat = ingest_catalog(cfg.catalog, cfg.unit_length, cfg.unit_velocity)
        grid = build_radial_bins(cat, cfg.nx_cap)
        sampler = Sampler(cat, grid, cfg.sampler_config(), cfg.priors(),
                          LikelihoodConfig(gh_nodes=cfg.gh_nodes), np.random.default_rng(cfg.seed))
        if not math.isfinite(sampler.state.log_post):
            raise DataError("initial state has zero posterior density; check the catalog and prior envelope")
        record = None
        if cfg.resume:
            record = sampler.restore(cfg.resume)
        remaining = max(cfg.n_iter - sampler.state.iter, 0)
        ckpt = os.path.join(cfg.out, "checkpoint.npz")
        summary = run_chain(sampler, remaining, ckpt, record)
        if not cfg.checkpoint_every or sampler.state.iter % cfg.checkpoint_every:
            sampler.checkpoint(ckpt, summary.record)
        chain = os.path.join(cfg.out, "chain.npz")
        summary.record.save(chain)
        files = ["checkpoint.npz", "chain.npz"]
        if len(summary.record.after_burn_in(cfg.burn_in)) >= 20:
            files += _summaries(cfg, summary.record, cfg.out)
        extra = {"artifacts": files, "acceptance": summary.acceptance,
                 "radial_grid": [grid.r_min, grid.delta_r, grid.n_x], "iterations": sampler.state.iter}
        _write_json(os.path.join(cfg.out, "manifest.json"), _manifest(cfg, extra))
        return files

    path = cfg.record or os.path.join(cfg.out, "chain.npz")
    try:
        record = ChainRecord.load(path)
    except OSError as exc:
        raise DataError(f"cannot read chain record {path}: {exc}") from None
    files = _summaries(cfg, record, cfg.out)
    _write_json(os.path.join(cfg.out, "manifest.json"), _manifest(cfg, {"artifacts": files, "record": path}))
    return files


def build_parser():
    p = argparse.ArgumentParser(prog="galmass", description=__doc__)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--catalog", help="catalog CSV (read in infer mode, written in generate mode)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, dest="n_iter")
    p.add_argument("--isotropic", action="store_true", default=None, help="fix the number of L-bins to 1")
    p.add_argument("--resume", help="checkpoint to continue from")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        over = {k: v for k, v in vars(args).items() if k != "config"}
        cfg = load_config(args.config, **over)
        files = run(cfg)
    except GalmassError as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        diag = getattr(exc, "diagnostics", None)
        if diag:
            report["diagnostics"] = diag
        print(json.dumps(report, default=str), file=sys.stderr)
        return exc.exit_code
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
