"""Command-line pipeline: each stage reads and writes files only.

Subcommands: ingest, excess, bias, build-graph, fit, summarize, cluster,
simulate. Every stage writes a ``manifest.json`` into its output directory
recording the resolved configuration, SHA-256 digests of the inputs, the
artifact paths, the seed and the tool version, so reruns can be verified to
be pure functions of (inputs, config, seed).

Exit codes: 0 success, 1 validation error, 2 numerical failure, 64 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bias import (
    BiasKind,
    BiasPanel,
    additive_bias,
    multiplicative_bias,
    prepare_panel,
    prepare_response,
)
from .cluster import TrajectorySet, kmedoids_fit, select_k
from .errors import NumericalError, ValidationError
from .excess import ExcessPanel, compute_baseline, compute_excess
from .indices import ProvinceIndex, WeekIndex
from .ingest import (
    MortalityPanel,
    ValidationLog,
    load_mobility_stack,
    load_population,
    load_value_panel,
    load_weekly_deaths_panel,
    panel_indices_from_csv,
    write_population,
    write_value_panel,
    write_weekly_deaths_panel,
)
from .model import HyperParams, PriorConfig
from .posterior import (
    fitted_values,
    interval_coverage,
    summarize_effects,
    variance_shares,
)
from .sampler import ChainConfig, PosteriorDraws, convergence, run_chains
from .simulate import SimScenario, simulate_dataset
from .structure import (
    build_mobility_weights,
    load_weights_csv,
    model_structures,
    rw1_structure,
    write_weights_csv,
)

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


@dataclass
class RunManifest:
    """Audit record of one stage invocation."""

    command: str
    version: str
    seed: int | None
    config: dict
    inputs: dict          # name -> {path, sha256}
    artifacts: list[str]

    @staticmethod
    def digest(path) -> str:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(65536), b""):
                h.update(chunk)
        return h.hexdigest()

    @classmethod
    def collect(cls, command, seed, config, inputs, artifacts) -> "RunManifest":
        digests = {}
        for name, path in inputs.items():
            if path is None:
                continue
            path = Path(path)
            if path.is_dir():
                parts = {
                    f.name: cls.digest(f) for f in sorted(path.glob("*.csv"))
                }
                digests[name] = {"path": str(path), "sha256": parts}
            else:
                digests[name] = {"path": str(path), "sha256": cls.digest(path)}
        return cls(
            command=command,
            version=__version__,
            seed=seed,
            config=config,
            inputs=digests,
            artifacts=[str(a) for a in artifacts],
        )

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    def verify_inputs(self) -> list[str]:
        """Names of inputs whose on-disk digest no longer matches."""
        stale = []
        for name, entry in self.inputs.items():
            ref = entry["sha256"]
            if isinstance(ref, dict):
                cur = {
                    f.name: self.digest(f)
                    for f in sorted(Path(entry["path"]).glob("*.csv"))
                }
            else:
                cur = self.digest(entry["path"])
            if cur != ref:
                stale.append(name)
        return stale


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_log(log: ValidationLog, args) -> None:
    lines = "".join(json.dumps(e) + "\n" for e in log.events)
    if args.log:
        Path(args.log).write_text(lines)
    elif lines:
        sys.stderr.write(lines)


def _load_config(args) -> dict:
    if not args.config:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    return json.loads(path.read_text())


def _pick(args, config, key, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def _weeks_from_spec(spec: str, year: int) -> WeekIndex:
    try:
        start_week, n_weeks = (int(x) for x in spec.split(":"))
    except ValueError:
        raise ValidationError(
            f"bad --weeks spec {spec!r}; expected START_ISO_WEEK:N_WEEKS"
        ) from None
    return WeekIndex.from_range(year, start_week, n_weeks)


def _year_of_deaths_csv(path) -> int:
    import pandas as pd

    df = pd.read_csv(path, usecols=["year"])
    years = sorted(set(int(y) for y in df["year"].dropna().unique()))
    if len(years) != 1:
        raise ValidationError(f"{path}: expected a single year, found {years}")
    return years[0]


def _load_deaths_for_weeks(path, provinces, spec, log=None) -> MortalityPanel:
    year = _year_of_deaths_csv(path)
    weeks = _weeks_from_spec(spec, year)
    return load_weekly_deaths_panel(path, provinces, weeks, log=log)


# --- stage implementations ----------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    provinces = _roster(args.population)
    log = ValidationLog()
    artifacts = []
    inputs = {"population": args.population, "official": args.official}
    pop = load_population(args.population, provinces)
    write_population(pop, out / "population.csv")
    artifacts.append(out / "population.csv")
    official = _load_deaths_for_weeks(args.official, provinces, args.weeks, log)
    write_weekly_deaths_panel(official, out / "deaths_official.csv")
    artifacts.append(out / "deaths_official.csv")
    for k, path in enumerate(args.deaths or []):
        panel = _load_deaths_for_weeks(path, provinces, args.weeks, log)
        dest = out / f"deaths_allcause_{panel.year_label}.csv"
        write_weekly_deaths_panel(panel, dest)
        artifacts.append(dest)
        inputs[f"deaths_{k}"] = path
    if args.mobility_dir:
        stack = load_mobility_stack(args.mobility_dir, provinces)
        inputs["mobility"] = args.mobility_dir
        (out / "mobility").mkdir(exist_ok=True)
        for day, mat in zip(stack.days, stack.flows):
            rows = ["origin_id,destination_id,flow"]
            for p in range(len(provinces)):
                for q in range(len(provinces)):
                    if mat[p, q] != 0.0:
                        rows.append(
                            f"{provinces.ids[p]},{provinces.ids[q]},{mat[p, q]!r}"
                        )
            dest = out / "mobility" / f"{day.isoformat()}.csv"
            dest.write_text("\n".join(rows) + "\n")
            artifacts.append(dest)
    _emit_log(log, args)
    manifest = RunManifest.collect("ingest", args.seed, {"weeks": args.weeks, **config}, inputs, artifacts)
    manifest.write(out)
    return 0


def _roster(population_path) -> ProvinceIndex:
    import pandas as pd

    path = Path(population_path)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    df = pd.read_csv(path)
    if "province_id" not in df.columns:
        raise ValidationError(f"{path}: missing column province_id")
    return ProvinceIndex.from_ids(df["province_id"].astype(str).tolist())


def cmd_excess(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    window = int(_pick(args, config, "window", 3))
    provinces, current_weeks = panel_indices_from_csv(args.current)
    current = load_weekly_deaths_panel(args.current, provinces, current_weeks)
    baselines = []
    for path in args.baseline:
        year = _year_of_deaths_csv(path)
        weeks = WeekIndex.from_range(year, current_weeks.weeks[0][1], len(current_weeks))
        baselines.append(load_weekly_deaths_panel(path, provinces, weeks))
    baseline = compute_baseline(baselines)
    excess = compute_excess(current, baseline, window=window)
    dest = out / "excess.csv"
    write_value_panel(excess.dhat, provinces, current_weeks, "dhat", dest)
    manifest = RunManifest.collect(
        "excess",
        args.seed,
        {"window": window},
        {"current": args.current, **{f"baseline_{k}": p for k, p in enumerate(args.baseline)}},
        [dest],
    )
    manifest.write(out)
    return 0


def cmd_bias(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    eps = float(_pick(args, config, "eps", 1e-4))
    provinces, weeks = panel_indices_from_csv(args.excess)
    dhat = load_value_panel(args.excess, provinces, weeks, "dhat", allow_negative=True)
    excess = ExcessPanel(provinces, weeks, dhat)
    official = load_weekly_deaths_panel(args.official, provinces, weeks)
    pop = load_population(args.population, provinces)
    artifacts = []
    clamp_log = {}
    metrics = {
        "additive": lambda: additive_bias(excess, official, pop),
        "multiplicative": lambda: multiplicative_bias(excess, official),
    }
    wanted = ["additive", "multiplicative"] if args.metric == "both" else [args.metric]
    for name in wanted:
        panel = metrics[name]()
        dest = out / f"bias_{name}.csv"
        write_value_panel(panel.values, provinces, weeks, "value", dest)
        artifacts.append(dest)
        prepared = prepare_panel(panel, eps=eps)
        clamp_log[name] = [
            {
                "province_id": provinces.ids[i],
                "year": weeks.weeks[j][0],
                "iso_week": weeks.weeks[j][1],
                "original": None if np.isnan(orig) else orig,
                "replaced_by": float(prepared.values[i, j]),
            }
            for (i, j, orig) in prepared.clamped_cells
        ]
    clamp_path = out / "clamp_log.json"
    clamp_path.write_text(json.dumps({"eps": eps, "clamped": clamp_log}, indent=2) + "\n")
    artifacts.append(clamp_path)
    manifest = RunManifest.collect(
        "bias",
        args.seed,
        {"eps": eps, "metric": args.metric},
        {"excess": args.excess, "official": args.official, "population": args.population},
        artifacts,
    )
    manifest.write(out)
    return 0


def cmd_build_graph(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    quantile_keep = float(_pick(args, config, "quantile_keep", 0.2))
    provinces = _roster(args.population)
    stack = load_mobility_stack(args.mobility_dir, provinces)
    structure = build_mobility_weights(
        stack, quantile_keep=quantile_keep, scale=not args.no_scale
    )
    weights_path = out / "weights.csv"
    write_weights_csv(structure, provinces, weights_path)
    degrees = structure.degrees
    report = {
        "n_provinces": structure.n,
        "n_components": structure.n_components,
        "nnz_weights": int(structure.M.nnz),
        "quantile_keep": quantile_keep,
        "quantile_threshold": structure.quantile_threshold,
        "scale_factor": structure.scale_factor,
        "rank": structure.rank,
        "degree_min": float(degrees.min()),
        "degree_mean": float(degrees.mean()),
        "degree_max": float(degrees.max()),
        "isolated_provinces": [
            provinces.ids[i] for i in np.nonzero(degrees == 0)[0]
        ],
    }
    report_path = out / "graph_report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    manifest = RunManifest.collect(
        "build-graph",
        args.seed,
        {"quantile_keep": quantile_keep, "scale": not args.no_scale},
        {"mobility": args.mobility_dir, "population": args.population},
        [weights_path, report_path],
    )
    manifest.write(out)
    return 0


def _prior_config(args, config) -> tuple[PriorConfig, str]:
    response = _pick(args, config, "response", "multiplicative")
    overrides = {}
    for key, attr in (
        ("U", "u_bound"),
        ("alpha", "alpha"),
        ("lambda_psi", "lambda_psi"),
        ("mu_sd", "mu_sd"),
        ("eps_clamp", "eps"),
    ):
        val = _pick(args, config, attr, config.get(key))
        if val is not None:
            overrides[key] = float(val)
    if "eps_prior" in config:
        overrides["eps_prior"] = tuple(float(x) for x in config["eps_prior"])
    return PriorConfig.for_response(response, **overrides), response


def cmd_fit(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    prior_cfg, response = _prior_config(args, config)
    provinces, weeks = panel_indices_from_csv(args.bias)
    values = load_value_panel(
        args.bias, provinces, weeks, "value", allow_negative=True, allow_missing_value=True
    )
    kind = BiasKind.ADDITIVE if response == "additive" else BiasKind.MULTIPLICATIVE
    panel = BiasPanel(provinces, weeks, values, kind)
    resp = prepare_response(panel, eps=prior_cfg.eps_clamp)
    spatial = load_weights_csv(args.weights, provinces, scale=not args.no_scale)
    structures = model_structures(spatial, rw1_structure(len(weeks)))
    chain_cfg = ChainConfig(
        n_chains=int(_pick(args, config, "chains", 4)),
        n_warmup=int(_pick(args, config, "warmup", 2000)),
        n_draws=int(_pick(args, config, "draws", 2000)),
        thin=int(_pick(args, config, "thin", 1)),
        seed=int(args.seed if args.seed is not None else config.get("seed", 0)),
        hyper_sweeps=int(_pick(args, config, "hyper_sweeps", 5)),
        save_latent=bool(args.save_latent or config.get("save_latent", False)),
        backend=str(_pick(args, config, "backend", "auto")),
        threads=int(_pick(args, config, "threads", 1)),
    )
    draws = run_chains(resp.y, structures, chain_cfg, prior_cfg)
    draws_path = out / "draws.csv"
    draws.to_csv(draws_path)
    report = convergence(draws)
    meta = {
        "version": __version__,
        "response": response,
        "seed": chain_cfg.seed,
        "chain_config": draws.config,
        "prior_config": {
            "U": prior_cfg.U,
            "alpha": prior_cfg.alpha,
            "lambda_psi": prior_cfg.lambda_psi,
            "eps_prior": list(prior_cfg.eps_prior),
            "mu_sd": prior_cfg.mu_sd,
            "eps_clamp": prior_cfg.eps_clamp,
        },
        "province_ids": list(provinces.ids),
        "weeks": [list(w) for w in weeks.weeks],
        "diagnostics": report.to_dict(),
        "flagged_params": report.flagged,
        "accept_rates": draws.accept_rates,
        "n_clamped_cells": len(resp.clamped_cells),
        "spatial": {
            "n_components": spatial.n_components,
            "scale_factor": spatial.scale_factor,
        },
    }
    if args.truth:
        truth = json.loads(Path(args.truth).read_text())
        hyper_truth = {
            k: truth["hyper"][k]
            for k in ("V", "phi", "psi", "sigma2_eps")
            if k in truth.get("hyper", {})
        }
        meta["recovery"] = interval_coverage(draws, hyper_truth, level=0.9)
    meta_path = out / "draws_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    inputs = {"bias": args.bias, "weights": args.weights}
    if args.truth:
        inputs["truth"] = args.truth
    manifest = RunManifest.collect(
        "fit",
        chain_cfg.seed,
        {"response": response, **{k: v for k, v in draws.config.items()}},
        inputs,
        [draws_path, meta_path],
    )
    manifest.write(out)
    if report.flagged:
        sys.stderr.write(
            f"warning: R-hat above 1.01 for {report.flagged}; "
            "consider longer chains\n"
        )
    return 0


def _geojson_join(geometry_path, rows: dict, out_path) -> None:
    geo = json.loads(Path(geometry_path).read_text())
    features = geo.get("features", [])
    for feature in features:
        pid = str(feature.get("properties", {}).get("province_id"))
        if pid in rows:
            feature.setdefault("properties", {}).update(rows[pid])
    Path(out_path).write_text(json.dumps(geo) + "\n")


def cmd_summarize(args) -> int:
    import pandas as pd

    out = _out_dir(args)
    meta = json.loads(Path(args.meta).read_text())
    provinces = ProvinceIndex.from_ids(meta["province_ids"])
    weeks = WeekIndex(tuple((int(y), int(w)) for y, w in meta["weeks"]))
    draws = PosteriorDraws.from_csv(args.draws)
    artifacts = []

    shares = variance_shares(draws)
    share_path = out / "variance_shares.csv"
    pd.DataFrame(
        {
            "component": list(shares.COMPONENTS),
            "mean": shares.mean,
            "q025": shares.lower,
            "q975": shares.upper,
        }
    ).to_csv(share_path, index=False)
    artifacts.append(share_path)

    spatial, temporal = summarize_effects(draws)
    spatial_path = out / "spatial_effect.csv"
    pd.DataFrame(
        {
            "province_id": provinces.ids,
            "mean": spatial.mean,
            "q025": spatial.lower,
            "q975": spatial.upper,
            "unscaled_mean": spatial.unscaled_mean,
            "unscaled_q025": spatial.unscaled_lower,
            "unscaled_q975": spatial.unscaled_upper,
        }
    ).to_csv(spatial_path, index=False)
    artifacts.append(spatial_path)

    temporal_path = out / "temporal_effect.csv"
    pd.DataFrame(
        {
            "year": [y for y, _ in weeks.weeks],
            "iso_week": [w for _, w in weeks.weeks],
            "mean": temporal.mean,
            "q025": temporal.lower,
            "q975": temporal.upper,
            "unscaled_mean": temporal.unscaled_mean,
            "unscaled_q025": temporal.unscaled_lower,
            "unscaled_q975": temporal.unscaled_upper,
        }
    ).to_csv(temporal_path, index=False)
    artifacts.append(temporal_path)

    panel = fitted_values(draws)
    rows = []
    for i, pid in enumerate(provinces.ids):
        for j, (y, w) in enumerate(weeks.weeks):
            rows.append(
                (pid, y, w, panel.mean[i, j], panel.q025[i, j], panel.median[i, j], panel.q975[i, j])
            )
    fitted_path = out / "fitted.csv"
    pd.DataFrame(
        rows, columns=["province_id", "year", "iso_week", "mean", "q025", "q50", "q975"]
    ).to_csv(fitted_path, index=False)
    artifacts.append(fitted_path)

    if args.geometry:
        join_rows = {
            pid: {
                "spatial_effect_mean": float(spatial.mean[i]),
                "fitted_mean_first_week": float(panel.mean[i, 0]),
                "fitted_mean_last_week": float(panel.mean[i, -1]),
            }
            for i, pid in enumerate(provinces.ids)
        }
        geo_path = out / "fitted.geojson"
        _geojson_join(args.geometry, join_rows, geo_path)
        artifacts.append(geo_path)

    inputs = {"draws": args.draws, "meta": args.meta}
    if args.geometry:
        inputs["geometry"] = args.geometry
    RunManifest.collect("summarize", args.seed, {}, inputs, artifacts).write(out)
    return 0


def cmd_cluster(args) -> int:
    import pandas as pd

    config = _load_config(args)
    out = _out_dir(args)
    provinces, weeks = panel_indices_from_csv(args.fitted)
    series = load_value_panel(args.fitted, provinces, weeks, "mean", allow_negative=True)
    trajectories = TrajectorySet(provinces, series)
    if args.zscore:
        trajectories = trajectories.zscored()
    artifacts = []
    if args.k is not None:
        fit = kmedoids_fit(trajectories, int(args.k), seed=args.seed)
        scores = {int(args.k): fit.mean_silhouette}
        chosen_k = int(args.k)
    else:
        k_min = int(_pick(args, config, "k_min", 2))
        k_max = int(_pick(args, config, "k_max", 8))
        selection = select_k(trajectories, range(k_min, k_max + 1), seed=args.seed)
        if selection.degenerate:
            raise ValidationError(
                "all trajectories are identical; clustering is degenerate"
            )
        fit = selection.best
        scores = selection.scores
        chosen_k = selection.k
    clusters_path = out / "clusters.csv"
    pd.DataFrame(
        {
            "province_id": provinces.ids,
            "cluster": fit.assignment,
            "silhouette": fit.silhouette,
        }
    ).to_csv(clusters_path, index=False)
    medoids_path = out / "medoids.csv"
    pd.DataFrame(
        {
            "cluster": list(range(fit.k)),
            "province_id": fit.medoid_ids(provinces),
        }
    ).to_csv(medoids_path, index=False)
    scores_path = out / "k_scores.json"
    scores_path.write_text(
        json.dumps(
            {"selected_k": chosen_k, "mean_silhouette": {str(k): v for k, v in scores.items()}},
            indent=2,
        )
        + "\n"
    )
    artifacts += [clusters_path, medoids_path, scores_path]
    if args.geometry:
        join_rows = {
            pid: {
                "cluster": int(fit.assignment[i]),
                "silhouette": float(fit.silhouette[i]),
            }
            for i, pid in enumerate(provinces.ids)
        }
        geo_path = out / "clusters.geojson"
        _geojson_join(args.geometry, join_rows, geo_path)
        artifacts.append(geo_path)
    inputs = {"fitted": args.fitted}
    if args.geometry:
        inputs["geometry"] = args.geometry
    RunManifest.collect(
        "cluster", args.seed, {"k": chosen_k, "zscore": bool(args.zscore)}, inputs, artifacts
    ).write(out)
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    hp = HyperParams(
        V=float(_pick(args, config, "true_v", 0.5)),
        phi=float(_pick(args, config, "true_phi", 0.6)),
        psi=float(_pick(args, config, "true_psi", 0.3)),
        sigma2_eps=float(_pick(args, config, "true_sigma2", 0.1)),
    )
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    scenario = SimScenario(
        n_s=int(args.ns),
        n_t=int(args.nt),
        true_hp=hp,
        graph=str(_pick(args, config, "graph", "grid")),
        seed=seed,
        mu=float(_pick(args, config, "mu", 0.0)),
    )
    sim = simulate_dataset(scenario)
    provinces = sim.response.provinces
    weeks = sim.response.weeks
    bias_path = out / "bias_simulated.csv"
    write_value_panel(sim.response.prepared, provinces, weeks, "value", bias_path)
    weights_path = out / "weights.csv"
    write_weights_csv(sim.structures.spatial, provinces, weights_path)
    truth = {
        "hyper": {
            "V": hp.V,
            "phi": hp.phi,
            "psi": hp.psi,
            "sigma2_eps": hp.sigma2_eps,
        },
        "mu": sim.truth.mu,
        "u": sim.truth.u.tolist(),
        "v": sim.truth.v.tolist(),
        "w": sim.truth.w.tolist(),
        "eta": sim.eta.tolist(),
        "seed": seed,
        "scenario": {"n_s": scenario.n_s, "n_t": scenario.n_t, "graph": scenario.graph},
    }
    truth_path = out / "truth.json"
    truth_path.write_text(json.dumps(truth) + "\n")
    RunManifest.collect(
        "simulate",
        seed,
        {
            "ns": scenario.n_s,
            "nt": scenario.n_t,
            "graph": scenario.graph,
            "true_hyper": truth["hyper"],
            "mu": scenario.mu,
        },
        {},
        [bias_path, weights_path, truth_path],
    ).write(out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="epibias", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with defaults for this stage")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", "-o", default=None, help="output directory")
        p.add_argument("--log", default=None, help="validation log path (JSON lines)")
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("ingest", help="validate and normalize the input tables")
    common(p)
    p.add_argument("--population", required=True)
    p.add_argument("--official", required=True)
    p.add_argument("--deaths", action="append", help="all-cause deaths CSV (repeatable)")
    p.add_argument("--mobility-dir", default=None)
    p.add_argument("--weeks", required=True, help="START_ISO_WEEK:N_WEEKS")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("excess", help="estimate weekly excess mortality")
    common(p)
    p.add_argument("--current", required=True, help="epidemic-year all-cause deaths CSV")
    p.add_argument("--baseline", action="append", required=True, help="baseline-year CSV (repeatable)")
    p.add_argument("--window", type=int, default=None, help="moving-average window (default 3)")
    p.set_defaults(func=cmd_excess)

    p = sub.add_parser("bias", help="compute under-reporting bias metrics")
    common(p)
    p.add_argument("--excess", required=True)
    p.add_argument("--official", required=True)
    p.add_argument("--population", required=True)
    p.add_argument("--metric", choices=["additive", "multiplicative", "both"], default="both")
    p.add_argument("--eps", type=float, default=None, help="clamp width (default 1e-4)")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("build-graph", help="mobility flows -> spatial weight matrix")
    common(p)
    p.add_argument("--mobility-dir", required=True)
    p.add_argument("--population", required=True, help="defines the province roster")
    p.add_argument("--quantile-keep", dest="quantile_keep", type=float, default=None)
    p.add_argument("--no-scale", action="store_true", help="skip marginal-variance scaling")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("fit", help="run the MCMC sampler on a bias panel")
    common(p)
    p.add_argument("--bias", required=True, help="bias CSV (value column)")
    p.add_argument("--weights", required=True, help="weights CSV from build-graph")
    p.add_argument("--response", choices=["additive", "multiplicative"], default=None)
    p.add_argument("--u-bound", dest="u_bound", type=float, default=None, help="PC prior bound U")
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--save-latent", action="store_true")
    p.add_argument("--backend", choices=["auto", "cholmod", "dense"], default=None)
    p.add_argument("--no-scale", action="store_true")
    p.add_argument("--truth", default=None, help="truth.json for a recovery report")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior summaries from stored draws")
    common(p)
    p.add_argument("--draws", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--geometry", default=None, help="province-boundary GeoJSON")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("cluster", help="cluster provinces by fitted trajectories")
    common(p)
    p.add_argument("--fitted", required=True)
    p.add_argument("--k", type=int, default=None, help="fixed cluster count")
    p.add_argument("--k-min", dest="k_min", type=int, default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument("--zscore", action="store_true")
    p.add_argument("--geometry", default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known truth")
    common(p)
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--graph", default=None, help="ring | grid | mobility CSV directory")
    p.add_argument("--true-v", dest="true_v", type=float, default=None)
    p.add_argument("--true-phi", dest="true_phi", type=float, default=None)
    p.add_argument("--true-psi", dest="true_psi", type=float, default=None)
    p.add_argument("--true-sigma2", dest="true_sigma2", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"epibias: validation error: {exc}\n")
        return 1
    except NumericalError as exc:
        sys.stderr.write(f"epibias: numerical failure: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"epibias: missing file: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
