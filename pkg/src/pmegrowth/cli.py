"""Command-line entry points: evolve | certify | infer | validate.

Each command reads a JSON config, writes CSV/JSON artifacts plus a run
manifest (config echo, hash, wall time, per-file checksums), and exits
0 on success, 1 on certificate/test failure, 2 on config error, 3 on
solver failure.  Fixed seed + config gives bit-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (CommonConfig, ConfigError, build_grid, build_growth,
                     build_initial, check_gamma, check_tau_admissible,
                     check_window_alignment, config_hash, load_config,
                     parse_common, _require)
from .evolution import (EvolutionConfig, barenblatt_refinement_errors, evolve,
                        fit_decay_exponent, self_convergence_gaps)
from .field import GridField, write_csv
from .inference import (ForwardCache, ForwardScenario, InferenceError,
                        ObservationSet, PriorSpec, effective_sample_size,
                        histogram_on_grid, make_synthetic_observations,
                        mala_chain, mh_chain, posterior_tv_convergence,
                        quadrature_posterior, tv_distance_masses)
from .model import ConstitutiveModel, PowerLaw, Regularization
from .resolvent import ResolventError
from .stability import certify


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class ManifestWriter:
    def __init__(self, common: CommonConfig):
        self.common = common
        self.outputs: list[Path] = []
        self.extra: dict = {}
        self.t0 = time.time()
        common.output_dir.mkdir(parents=True, exist_ok=True)

    def add(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def write_csv_rows(self, name: str, header: list[str], rows) -> Path:
        path = self.common.output_dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        return self.add(path)

    def write_json(self, name: str, obj) -> Path:
        path = self.common.output_dir / name
        _write_text_atomic(path, _json_dumps(obj))
        return self.add(path)

    def finalize(self, verdicts: dict) -> Path:
        manifest = {
            "command": self.common.command,
            "config": self.common.raw,
            "config_sha256": config_hash(self.common.raw),
            "seed": self.common.seed,
            "version": __version__,
            "wall_time_s": round(time.time() - self.t0, 3),
            "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in self.outputs],
            "verdicts": verdicts,
        }
        manifest.update(self.extra)
        path = self.common.output_dir / "manifest.json"
        _write_text_atomic(path, _json_dumps(manifest))
        return path


def _fmt(x) -> str:
    # plain-float repr: numpy scalars would otherwise print as np.float64(...)
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _field_csv(mw: ManifestWriter, name: str, f: GridField) -> Path:
    path = mw.common.output_dir / name
    write_csv(f, path)
    return mw.add(path)


# -- commands ----------------------------------------------------------------


def cmd_evolve(common: CommonConfig) -> int:
    cfg = common.raw
    spec = build_grid(cfg)
    u0 = build_initial(cfg, spec)
    model_cfg = _require(cfg, "model", "config")
    gamma = check_gamma(_require(model_cfg, "gamma", "model"))
    growth = build_growth(model_cfg)
    model = ConstitutiveModel(PowerLaw(gamma), growth,
                              Regularization(float(model_cfg.get("epsilon", 0.0))))
    evo = _require(cfg, "evolution", "config")
    t_final = float(_require(evo, "t_final", "evolution"))
    n_steps = int(_require(evo, "n_steps", "evolution"))
    check_tau_admissible(t_final, n_steps, growth.g0)
    ecfg = EvolutionConfig(
        t_final=t_final, n_steps=n_steps,
        newton_tol=evo.get("newton_tol"),
        continuation_epsilons=tuple(evo.get("continuation_epsilons", (1e-2, 1e-4, 0.0))),
        snapshot_times=tuple(float(s) for s in evo.get("snapshot_times", ())))

    mw = ManifestWriter(common)
    traj = evolve(u0, model, ecfg)
    for t, f in traj.snapshots:
        _field_csv(mw, f"snapshot_t{t:.6f}.csv", f)
    mw.write_csv_rows("mass_series.csv", ["time", "mass"], traj.mass_series)
    mw.write_csv_rows("step_flags.csv",
                      ["step", "residual_l1", "bounds_ok", "growth_cap_ok", "boundary_mass"],
                      [(fl.step, fl.residual_l1, int(fl.bounds_ok),
                        int(fl.growth_cap_ok), fl.boundary_mass)
                       for fl in traj.step_flags])
    violations = sum(1 for fl in traj.step_flags if not (fl.bounds_ok and fl.growth_cap_ok))
    mw.extra["snapshot_times"] = [t for t, _ in traj.snapshots]
    verdicts = {
        "invariant_violations": violations,
        "boundary_mass_flagged": traj.boundary_flagged(),
    }
    mw.finalize(verdicts)
    return 0 if violations == 0 else 1


def cmd_certify(common: CommonConfig) -> int:
    cfg = common.raw
    spec = build_grid(cfg)
    u0 = build_initial(cfg, spec)
    growth = build_growth(cfg)
    pairs = [(check_gamma(a), check_gamma(b)) for a, b in _require(cfg, "pairs", "config")]
    t_final = float(_require(cfg, "t_final", "config"))
    n_list = [int(n) for n in _require(cfg, "n_steps_list", "config")]
    for n in n_list:
        check_tau_admissible(t_final, n, growth.g0)
    epsilons = tuple(cfg.get("continuation_epsilons", (1e-2, 1e-4, 0.0)))
    inflate = float(cfg.get("_test_inflate_gap", 1.0))  # test hook: corrupt the gap
    threads = int(cfg.get("threads", 1))

    tasks = [(g1, g2, n) for (g1, g2) in pairs for n in n_list]

    def run_one(task):
        g1, g2, n = task
        m1 = ConstitutiveModel(PowerLaw(g1), growth)
        m2 = ConstitutiveModel(PowerLaw(g2), growth)
        res = certify(u0, u0, m1, m2, t_final, n, continuation_epsilons=epsilons)
        if inflate != 1.0:
            res = certify_inflated(res, inflate)
        return (g1, g2, n, res)

    mw = ManifestWriter(common)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]

    rows = []
    certificates = []
    all_ok = True
    for g1, g2, n, res in results:
        bd = res.breakdown_discrete
        rows.append((g1, g2, n, res.empirical_gap, bd.term_initial, bd.term_diffusion,
                     bd.term_pressure, bd.term_growthlaw, bd.total,
                     res.breakdown_general.total,
                     res.breakdown_powerlaw.total if res.breakdown_powerlaw else float("nan"),
                     int(res.certified), int(res.chain_ok)))
        certificates.append({
            "gamma1": g1, "gamma2": g2, "n_steps": n, "tau": res.tau,
            "term_initial": bd.term_initial, "term_diffusion": bd.term_diffusion,
            "term_pressure": bd.term_pressure, "term_growthlaw": bd.term_growthlaw,
            "discrete_total": bd.total, "empirical_gap": res.empirical_gap,
            "certified": res.certified, "chain_ok": res.chain_ok,
        })
        all_ok &= res.certified and res.chain_ok
    mw.write_csv_rows(
        "certificates.csv",
        ["gamma1", "gamma2", "n_steps", "empirical_gap", "term_initial",
         "term_diffusion", "term_pressure", "term_growthlaw", "discrete_total",
         "general_total", "powerlaw_total", "certified", "chain_ok"],
        rows)
    mw.write_json("certify_summary.json", {
        "inputs_sha256": config_hash(cfg),
        "all_certified": bool(all_ok),
        "n_certificates": len(rows),
        "certificates": certificates,
        "failures": [f"({r[0]}, {r[1]}) n={r[2]}" for r in rows if not (r[11] and r[12])],
    })
    mw.finalize({"all_certified": bool(all_ok)})
    return 0 if all_ok else 1


def certify_inflated(res, factor: float):
    """Test hook: re-certify with an artificially inflated empirical gap."""
    from dataclasses import replace

    gap = res.empirical_gap * factor
    disc = res.breakdown_discrete.with_empirical(gap)
    return replace(res, empirical_gap=gap, breakdown_discrete=disc)


def _parse_windows(raw) -> tuple:
    return tuple(tuple(w) if not isinstance(w[0], list) else tuple(map(tuple, w))
                 for w in raw)


def _validate_observation_geometry(windows, times, scenario: ForwardScenario, spec) -> None:
    check_window_alignment(windows, spec)
    for t in times:
        if not (0.0 < t <= scenario.t_final * (1 + 1e-12)):
            raise ConfigError(f"observation time {t} outside (0, t_final]")
        steps = t / (scenario.t_final / scenario.n_steps)
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"observation time {t} is not a multiple of the marching step "
                f"(piecewise-constant snapshots would misalign)")


def _build_observations(cfg: dict, scenario: ForwardScenario, spec, seed: int) -> ObservationSet:
    obs_cfg = _require(cfg, "observations", "config")
    if "file" in obs_cfg:
        with Path(obs_cfg["file"]).open() as fh:
            data = json.load(fh)
        windows = _parse_windows(data["windows"])
        times = tuple(float(t) for t in data["times"])
        _validate_observation_geometry(windows, times, scenario, spec)
        n = len(times) * len(windows)
        sigma = np.asarray(data["sigma"], dtype=float).reshape(n, n)
        obs = ObservationSet(windows=windows, times=times,
                             y=np.asarray(data["y"], dtype=float), sigma=sigma)
    elif "synthetic" in obs_cfg:
        syn = obs_cfg["synthetic"]
        windows = _parse_windows(_require(syn, "windows", "observations.synthetic"))
        times = tuple(float(t) for t in _require(syn, "times", "observations.synthetic"))
        _validate_observation_geometry(windows, times, scenario, spec)
        obs = make_synthetic_observations(
            gamma_true=check_gamma(_require(syn, "gamma_true", "observations.synthetic")),
            scenario=scenario,
            windows=windows,
            times=times,
            noise_rel=float(syn.get("noise_rel", 0.01)),
            seed=seed,
            generator_step_factor=int(syn.get("generator_step_factor", 4)))
    else:
        raise ConfigError("observations needs either 'file' or 'synthetic'")
    obs.check_windows_disjoint(spec)
    return obs


def cmd_infer(common: CommonConfig) -> int:
    cfg = common.raw
    spec = build_grid(cfg)
    u0 = build_initial(cfg, spec)
    growth = build_growth(cfg)
    scen_cfg = _require(cfg, "scenario", "config")
    t_final = float(_require(scen_cfg, "t_final", "scenario"))
    n_steps = int(_require(scen_cfg, "n_steps", "scenario"))
    check_tau_admissible(t_final, n_steps, growth.g0)
    scenario = ForwardScenario(
        u0=u0, growth=growth, t_final=t_final, n_steps=n_steps,
        newton_tol=scen_cfg.get("newton_tol"),
        continuation_epsilons=tuple(scen_cfg.get("continuation_epsilons", (0.0,))))
    prior_cfg = _require(cfg, "prior", "config")
    prior = PriorSpec(m0=float(_require(prior_cfg, "mean", "prior")),
                      sigma0=float(_require(prior_cfg, "std", "prior")),
                      support=tuple(_require(prior_cfg, "support", "prior")))
    if prior.support[0] <= 1.0:
        raise ConfigError("prior support must stay inside (1, inf): power-law admissibility")
    obs = _build_observations(cfg, scenario, spec, common.seed)

    quad_cfg = cfg.get("quadrature", {})
    gammas = np.linspace(float(quad_cfg.get("lo", prior.support[0])),
                         float(quad_cfg.get("hi", prior.support[1])),
                         int(quad_cfg.get("points", 41)))

    mw = ManifestWriter(common)
    cache = ForwardCache()
    quad = quadrature_posterior(gammas, scenario, obs, prior, cache)
    mw.write_csv_rows("quadrature_posterior.csv", ["gamma", "mass", "potential"],
                      zip(quad.gammas.tolist(), quad.masses.tolist(),
                          quad.potentials.tolist()))

    sampler_cfg = _require(cfg, "sampler", "config")
    kind = _require(sampler_cfg, "kind", "sampler")
    n_samples = int(_require(sampler_cfg, "n_samples", "sampler"))
    burn_in = int(sampler_cfg.get("burn_in", 0))
    init = float(sampler_cfg.get("init", prior.m0))
    tune = bool(sampler_cfg.get("tune", False))
    if kind == "mh":
        summary = mh_chain(init, n_samples, float(_require(sampler_cfg, "step", "sampler")),
                           scenario, obs, prior, seed=common.seed + 1, burn_in=burn_in,
                           cache=cache, tune=tune)
    elif kind == "mala":
        summary = mala_chain(init, n_samples, float(_require(sampler_cfg, "step", "sampler")),
                             scenario, obs, prior, seed=common.seed + 1, burn_in=burn_in,
                             cache=cache, tune=tune)
    else:
        raise ConfigError(f"sampler.kind '{kind}' is not one of mh|mala")

    mw.write_csv_rows(
        "chain.csv", ["step", "gamma", "V", "accepted", "gradV"],
        [(r.step, r.gamma, r.v, int(r.accepted),
          "" if r.grad is None else repr(float(r.grad))) for r in summary.records])
    hist = histogram_on_grid(summary.samples, gammas)
    ess = effective_sample_size(summary.samples)
    posterior_summary = {
        "sampler": kind,
        "acceptance_rate": summary.acceptance_rate,
        "tuned_step": summary.tuned_step,
        "map_estimate": summary.map_estimate,
        "sample_mean": float(summary.samples.mean()),
        "ess": ess,
        "quadrature_mode": quad.mode,
        "tv_to_quadrature": tv_distance_masses(hist, quad.masses),
        "n_samples": int(summary.samples.size),
        "fallback_steps": sum(1 for r in summary.records if r.fallback),
    }
    mw.write_json("posterior_summary.json", posterior_summary)

    if "tv_convergence" in cfg:
        n_list = [int(n) for n in _require(cfg["tv_convergence"], "n_list", "tv_convergence")]
        tv_rows = posterior_tv_convergence(gammas, scenario, obs, prior, n_list)
        exponent = fit_decay_exponent(tv_rows)
        mw.write_csv_rows("posterior_tv_convergence.csv", ["n_steps", "tv_next"], tv_rows)
        mw.extra["tv_fit_exponent"] = exponent

    mw.finalize({"acceptance_rate": summary.acceptance_rate, "ess": ess})
    return 0


def cmd_validate(common: CommonConfig) -> int:
    cfg = common.raw
    mw = ManifestWriter(common)
    verdicts: dict = {}
    ok = True

    rate_cfg = cfg.get("rate_study")
    if rate_cfg:
        spec = build_grid(cfg)
        u0 = build_initial(cfg, spec)
        growth = build_growth(cfg)
        gamma = check_gamma(_require(rate_cfg, "gamma", "rate_study"))
        model = ConstitutiveModel(PowerLaw(gamma), growth)
        t = float(_require(rate_cfg, "t", "rate_study"))
        n_list = [int(n) for n in _require(rate_cfg, "n_list", "rate_study")]
        for n in n_list:
            check_tau_admissible(t, n, growth.g0)
        gaps = self_convergence_gaps(u0, model, t, n_list,
                                     continuation_epsilons=tuple(
                                         rate_cfg.get("continuation_epsilons", (0.0,))))
        exponent = fit_decay_exponent(gaps)
        mw.write_csv_rows("self_convergence.csv", ["n_steps", "gap_l1"], gaps)
        threshold = float(rate_cfg.get("min_exponent", 0.4))
        verdicts["rate_exponent"] = exponent
        verdicts["rate_ok"] = bool(exponent >= threshold)
        ok &= verdicts["rate_ok"]

    bb_cfg = cfg.get("barenblatt")
    if bb_cfg:
        gamma = check_gamma(_require(bb_cfg, "gamma", "barenblatt"))
        levels = [tuple(map(int, lv)) for lv in _require(bb_cfg, "levels", "barenblatt")]
        errs = barenblatt_refinement_errors(
            gamma, float(_require(bb_cfg, "t0", "barenblatt")),
            float(_require(bb_cfg, "t1", "barenblatt")),
            float(_require(bb_cfg, "c", "barenblatt")),
            levels, half_width=float(bb_cfg.get("half_width", 1.0)))
        mw.write_csv_rows("barenblatt_errors.csv", ["n_cells", "n_steps", "l1_error"], errs)
        decreasing = all(errs[i + 1][2] < errs[i][2] for i in range(len(errs) - 1))
        verdicts["barenblatt_monotone_decrease"] = bool(decreasing)
        ok &= decreasing

    mass_cfg = cfg.get("mass_check")
    if mass_cfg:
        spec = build_grid(cfg)
        u0 = build_initial(cfg, spec)
        gamma = check_gamma(_require(mass_cfg, "gamma", "mass_check"))
        from .evolution import pure_diffusion_model

        traj = evolve(u0, pure_diffusion_model(gamma),
                      EvolutionConfig(t_final=float(_require(mass_cfg, "t_final", "mass_check")),
                                      n_steps=int(_require(mass_cfg, "n_steps", "mass_check"))))
        m0 = traj.mass_series[0][1]
        drift = max(abs(m - m0) for _, m in traj.mass_series) / abs(m0)
        mw.write_csv_rows("mass_series.csv", ["time", "mass"], traj.mass_series)
        verdicts["mass_rel_drift"] = drift
        verdicts["mass_ok"] = bool(drift <= float(mass_cfg.get("tolerance", 1e-6)))
        ok &= verdicts["mass_ok"]

    if not verdicts:
        raise ConfigError("validate config needs at least one of "
                          "rate_study|barenblatt|mass_check")
    mw.finalize(verdicts)
    return 0 if ok else 1


_DISPATCH = {"evolve": cmd_evolve, "certify": cmd_certify,
             "infer": cmd_infer, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pmegrowth",
        description="Degenerate-diffusion growth model: marching, stability "
                    "certificates, and exponent inference")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DISPATCH:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to JSON run config")
        p.add_argument("--output", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for internal sweeps")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg["threads"] = args.threads
        common = parse_common(cfg, args.command, args.output, args.seed)
        return _DISPATCH[args.command](common)
    except ConfigError as exc:
        _emit_error(2, "config", exc, args)
        return 2
    except (ResolventError, InferenceError) as exc:
        _emit_error(3, "solver", exc, args)
        return 3


def _emit_error(code: int, kind: str, exc: Exception, args) -> None:
    payload = {"error": kind, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    out = getattr(args, "output", None)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            _write_text_atomic(Path(out) / "error.json", _json_dumps(payload))
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
