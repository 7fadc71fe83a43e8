"""``pulsecal`` command-line entry point.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 I/O failure
or missing input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from pulsecal.harness import io, plots
from pulsecal.harness.config import ConfigError, RunConfig, load_config
from pulsecal.harness.experiments import (CALIBRATE_METHODS, aggregate, coverage_study,
                                          rank_study, sensitivity_study, shift_study)
from pulsecal.pipeline import RULES, bound_tightness_sweep, correlated_sigma, independence_bound, \
    worst_case_bound
from pulsecal.scorekit import bootstrap_score_ci, cross_source_divergence
from pulsecal.simgen import PopulationSpec, ShiftEvent, gen_population, with_shift

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2
COVERAGE_HEADER = ("group", "n", "coverage", "mean_width", "method", "alpha")
TRAJECTORY_WINDOW = (-48, 96)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pulsecal", description="Calibrated uncertainty for score streams.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, helptext in (
        ("simulate", "generate a synthetic population dataset"),
        ("calibrate", "coverage and width of every interval method"),
        ("shift-study", "ACI against fixed intervals around release events"),
        ("rank", "leaderboard with pairwise abstention and FDR control"),
        ("pipeline", "compositional bound tightness sweep"),
        ("sensitivity", "weight sensitivity and perturbation report"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--data", help="dataset directory (overrides data_dir)")
    return parser


def _data_file(cfg: RunConfig, name: str) -> Path:
    if cfg.data_dir is None:
        raise io.InputError("no dataset: set data_dir in the config or pass --data")
    path = Path(cfg.data_dir) / name
    if not path.is_file():
        raise io.InputError(f"missing input file {path}")
    return path


def _coverage_rows(rows):
    return ((r.group, r.n, r.coverage, r.mean_width, r.method, r.alpha) for r in rows)


# -- commands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    spec = PopulationSpec(
        n_stable=cfg.n_stable, n_volatile=cfg.n_volatile, stable_std=cfg.stable_std,
        volatile_std=cfg.volatile_std, stable_divergence=cfg.stable_divergence,
        volatile_divergence=cfg.volatile_divergence, platforms=cfg.platforms,
        length=cfg.stream_length, reversion=cfg.sim_reversion, threshold=cfg.mondrian_threshold,
        innovation_df=cfg.innovation_df, seed=cfg.seed)
    pop = gen_population(spec)
    events = {}
    if cfg.shift_time is not None:
        ev = ShiftEvent(cfg.shift_time, cfg.shift_jump, cfg.shift_multiplier)
        count = spec.size if cfg.shift_agents is None else min(cfg.shift_agents, spec.size)
        for i in range(count):
            pop = with_shift(pop, i, ev)
            events[pop.agent_ids[i]] = ev
    return io.write_dataset(out, pop, events)


def _divergences(cfg: RunConfig, agents) -> dict[str, float]:
    try:
        platforms = io.read_platforms(_data_file(cfg, io.PLATFORMS))
        sigma = {a: cross_source_divergence(p) for a, p in platforms.items()}
    except io.InputError:
        classes = io.read_classes(_data_file(cfg, io.CLASSES))
        sigma = {a: c["sigma_cross"] for a, c in classes.items()}
    missing = [a for a in agents if a not in sigma]
    if missing:
        raise io.InputError(f"no platform scores for agents {missing[:3]}")
    return sigma


def cmd_calibrate(cfg: RunConfig, out: Path) -> list[Path]:
    series = io.read_scores(_data_file(cfg, io.SCORES))
    sigma = _divergences(cfg, series)
    ref = cfg.reference_horizon
    common = dict(gamma=cfg.gamma, resamples=cfg.resamples, threshold=cfg.mondrian_threshold,
                  test_fraction=cfg.test_fraction, train_fraction=cfg.train_fraction,
                  reversion=cfg.reversion, seed=cfg.seed)
    horizons = sorted(set(cfg.horizons) | {ref})
    extra = [a for a in dict.fromkeys(cfg.alpha_levels) if a != cfg.alpha]
    records = coverage_study(series, sigma, horizons, [cfg.alpha], **common)
    if extra:
        records += coverage_study(series, sigma, [ref], extra, **common)

    order = {m: i for i, m in enumerate(CALIBRATE_METHODS)}
    main = [r for r in records if r.alpha == cfg.alpha]
    table = aggregate([r for r in main if r.horizon in cfg.horizons], lambda r: r.horizon)
    table.sort(key=lambda r: (order[r.method], r.group))
    curve = aggregate([r for r in records if r.horizon == ref], lambda r: r.horizon)
    curve.sort(key=lambda r: (order[r.method], -r.alpha))
    by_agent = aggregate([r for r in main if r.horizon == ref], lambda r: r.agent_id)
    by_agent.sort(key=lambda r: (order[r.method], r.group))
    by_stratum = aggregate([r for r in main if r.horizon in cfg.horizons],
                           lambda r: f"{r.stratum}@h{r.horizon}")
    by_stratum.sort(key=lambda r: (order[r.method], r.group))

    paths = [
        io.write_csv(out / "coverage_by_horizon.csv", COVERAGE_HEADER, _coverage_rows(table)),
        io.write_csv(out / "calibration_curve.csv", COVERAGE_HEADER, _coverage_rows(curve)),
        io.write_csv(out / "coverage_by_agent.csv", COVERAGE_HEADER, _coverage_rows(by_agent)),
        io.write_csv(out / "coverage_by_stratum.csv", COVERAGE_HEADER, _coverage_rows(by_stratum)),
    ]
    ref_rows = [r for r in curve if r.alpha == cfg.alpha]
    strata = sorted({r.stratum for r in records})
    summary = {
        "agents": len(series),
        "reference_horizon": ref,
        "alpha": cfg.alpha,
        "strata": {s: len({r.agent_id for r in records if r.stratum == s}) for s in strata},
        "methods": {r.method: {"coverage": r.coverage, "mean_width": r.mean_width,
                               "calibration_error": abs(r.coverage - (1 - cfg.alpha)), "n": r.n}
                    for r in ref_rows},
    }
    paths.append(io.write_json(out / "calibrate_summary.json", summary))
    if cfg.figures:
        paths += [
            plots.calibration_curve(curve, ref, out / "calibration_curve.png"),
            plots.coverage_by_horizon(table, cfg.alpha, out / "coverage_by_horizon.png"),
            plots.agent_coverage(by_agent, ("split-conformal-pooled", "split-conformal", "mondrian"),
                                 cfg.alpha, out / "coverage_by_agent.png"),
            plots.stratum_heatmap(by_stratum, strata, sorted(cfg.horizons),
                                  ("parametric", "split-conformal-pooled", "mondrian"),
                                  out / "coverage_by_stratum.png"),
        ]
    return paths


def cmd_shift_study(cfg: RunConfig, out: Path) -> list[Path]:
    series = io.read_scores(_data_file(cfg, io.SCORES))
    events_path = Path(cfg.data_dir) / io.EVENTS
    events = io.read_events(events_path) if events_path.is_file() else {}
    if not events:
        raise ConfigError("no shift event in the dataset (simulate with shift_time set)")
    study = shift_study(series, events, alpha=cfg.alpha, gamma=cfg.gamma, horizon=cfg.shift_horizon,
                        pre=cfg.shift_pre, train_fraction=cfg.train_fraction,
                        reversion=cfg.reversion)
    lo_step, hi_step = TRAJECTORY_WINDOW
    steps = np.arange(lo_step, hi_step)
    rows, stacks = [], {"aci": [], "split-conformal": [], "parametric": [], "alpha": []}
    for tr in study.traces:
        rel = tr.origins - tr.event.time
        m = (rel >= lo_step) & (rel < hi_step)
        s_w = tr.split_upper - tr.split_lower
        p_w = tr.param_upper - tr.param_lower
        s_cov = (tr.split_lower <= tr.actuals) & (tr.actuals <= tr.split_upper)
        p_cov = (tr.param_lower <= tr.actuals) & (tr.actuals <= tr.param_upper)
        for i in np.nonzero(m)[0]:
            rows.append((tr.agent_id, rel[i], tr.origins[i], tr.targets[i], tr.run.alpha[i],
                         tr.run.width[i], tr.run.covered[i], s_w[i], s_cov[i], p_w[i], p_cov[i]))
        if m.sum() == steps.size:
            stacks["aci"].append(tr.run.width[m])
            stacks["split-conformal"].append(s_w[m])
            stacks["parametric"].append(p_w[m])
            stacks["alpha"].append(tr.run.alpha[m])
    paths = [
        io.write_csv(out / "shift_trajectory.csv",
                     ("agent_id", "step", "origin", "target", "working_alpha", "aci_width",
                      "aci_covered", "split_width", "split_covered", "parametric_width",
                      "parametric_covered"), rows),
        io.write_csv(out / "shift_agents.csv", tuple(study.per_agent[0]),
                     (tuple(r.values()) for r in study.per_agent)),
        io.write_json(out / "shift_summary.json", study.summary()),
    ]
    if cfg.figures and stacks["aci"]:
        widths = {k: np.mean(v, axis=0) for k, v in stacks.items() if k != "alpha"}
        paths.append(plots.shift_widths(steps, widths, np.mean(stacks["alpha"], axis=0),
                                        cfg.alpha, out / "shift_widths.png"))
    return paths


def cmd_rank(cfg: RunConfig, out: Path) -> list[Path]:
    series = io.read_scores(_data_file(cfg, io.SCORES))
    truth = None
    classes_path = Path(cfg.data_dir) / io.CLASSES
    if classes_path.is_file():
        classes = io.read_classes(classes_path)
        means = {a: c["long_run_mean"] for a, c in classes.items()}
        if all(means.get(a) is not None for a in series):
            truth = means
    study = rank_study(series, alpha=cfg.alpha, q=cfg.fdr_q, horizon=cfg.rank_horizon,
                       train_fraction=cfg.train_fraction, reversion=cfg.reversion, truth=truth)
    paths = []
    rows = []
    for mode, board in study.leaderboards.items():
        slug = mode.replace("-alpha", "").replace("-", "_")
        paths.append(io.write_json(out / f"leaderboard_{slug}.json", board.entries))
        for d in study.decisions[mode]:
            rows.append((d.pair.a, d.pair.b, d.delta, d.p_value, d.decision, mode))
        if cfg.figures:
            paths.append(plots.abstention_matrix(board, out / f"abstention_{slug}.png"))
    paths.append(io.write_csv(out / "pair_decisions.csv",
                              ("agent_a", "agent_b", "delta", "p_value", "decision", "mode"), rows))
    summary = {"alpha": cfg.alpha, "fdr_q": cfg.fdr_q, "horizon": cfg.rank_horizon,
               **study.summary()}
    paths.append(io.write_json(out / "rank_summary.json", summary))
    return paths


def cmd_pipeline(cfg: RunConfig, out: Path) -> list[Path]:
    sigmas = cfg.pipeline_sigmas
    header = ("rho", "empirical_sigma", "independence_bound", "worst_case_bound", "n")
    sweeps, paths = {}, []
    for rule in RULES:
        rows = bound_tightness_sweep(sigmas, cfg.rho_grid, rule, cfg.pipeline_n, cfg.seed)
        sweeps[rule] = rows
        paths.append(io.write_csv(out / f"sweep_{rule}.csv", header,
                                  ((r.rho, r.empirical_sigma, r.independence_bound,
                                    r.worst_case_bound, r.n) for r in rows)))
    ind, worst = independence_bound(sigmas), worst_case_bound(sigmas)
    additive = sweeps["additive"]
    summary = {
        "sigmas": list(sigmas),
        "independence_bound": ind,
        "worst_case_bound": worst,
        "independence_bound_3dp": round(ind, 3),
        "worst_case_bound_3dp": round(worst, 3),
        "additive_max_relative_error_vs_closed_form": max(
            abs(r.empirical_sigma / correlated_sigma(*sigmas, r.rho) - 1.0) for r in additive),
        "additive_within_bounds_rho_nonnegative": all(
            ind * 0.98 <= r.empirical_sigma <= worst * 1.02 for r in additive if r.rho >= 0),
    }
    paths.append(io.write_json(out / "pipeline_summary.json", summary))
    if cfg.figures:
        paths.append(plots.bound_tightness(sweeps, out / "bound_tightness.png"))
    return paths


def cmd_sensitivity(cfg: RunConfig, out: Path) -> list[Path]:
    ids, vectors = io.read_factors(_data_file(cfg, io.FACTOR_FILE))
    if len(ids) < 2:
        raise ConfigError("sensitivity needs at least 2 agents")
    study = sensitivity_study(ids, vectors, concentrations=cfg.concentrations, draws=cfg.draws,
                              delta=cfg.perturbation_delta, seed=cfg.seed)
    order = sorted(range(len(ids)), key=lambda i: (-study.composite[i], ids[i]))
    rank = {i: r + 1 for r, i in enumerate(order)}
    paths = [
        io.write_csv(out / "dirichlet_sweep.csv",
                     ("concentration", "draws", "median_tau", "p05_tau", "p95_tau"),
                     ((s.concentration, s.draws, s.median, s.p05, s.p95) for s in study.sweep)),
        io.write_csv(out / "u_model.csv", ("agent_id", "composite", "rank", "u_model"),
                     ((ids[i], study.composite[i], rank[i], study.u_model[i]) for i in order)),
    ]
    medians = [s.median for s in study.sweep]
    summary = {
        "agents": len(ids),
        "draws": cfg.draws,
        "concentrations": list(cfg.concentrations),
        "median_tau": medians,
        "medians_nondecreasing": bool(np.all(np.diff(medians) >= 0)),
        "u_model_counts": {str(k): int(np.sum(study.u_model == k)) for k in range(9)},
    }
    scores_path = Path(cfg.data_dir) / io.SCORES
    if scores_path.is_file():
        series = io.read_scores(scores_path)
        ci_rows = []
        for idx, a in enumerate(sorted(series)):
            obs = series[a].scores[-cfg.bootstrap_window:]
            seed = int(np.random.SeedSequence([cfg.seed, idx]).generate_state(1)[0])
            iv = bootstrap_score_ci(obs, cfg.resamples, cfg.bootstrap_level, seed)
            ci_rows.append((a, iv.center, iv.lower, iv.upper, iv.width / 2))
        paths.append(io.write_csv(out / "bootstrap_ci.csv",
                                  ("agent_id", "mean", "lower", "upper", "half_width"), ci_rows))
        summary["bootstrap_max_half_width"] = max(r[4] for r in ci_rows)
    paths.append(io.write_json(out / "sensitivity_summary.json", summary))
    if cfg.figures:
        paths.append(plots.dirichlet_sweep(study.sweep, out / "dirichlet_sweep.png"))
    return paths


COMMANDS: dict[str, Callable[[RunConfig, Path], list[Path]]] = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "shift-study": cmd_shift_study,
    "rank": cmd_rank,
    "pipeline": cmd_pipeline,
    "sensitivity": cmd_sensitivity,
}


def run(command: str, cfg: RunConfig) -> Path:
    """Run one command into ``cfg.out_dir`` and write its manifest last."""
    started = io.now_utc()
    out = io.prepare_out_dir(cfg.out_dir)
    artifacts = COMMANDS[command](cfg, out)
    io.write_manifest(out, command, cfg.to_dict(), artifacts, started)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out, data_dir=args.data)
        out = run(args.command, cfg)
    except (ConfigError, ValueError) as exc:
        print(f"pulsecal: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.InputError, OSError) as exc:
        print(f"pulsecal: error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"pulsecal {args.command}: wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
