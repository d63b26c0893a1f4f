"""Command-line entry point: ``monitored-qubit {simulate,fig1,fig2,fig3,validate}``.

Every subcommand writes plot-ready CSV files plus ``manifest.json`` into
``--out``.  Output bytes depend only on the config and the seed; ``--threads``
changes speed, never results.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as est
from .core import PLUS, HermitianOperator2
from .errors import ConfigError, MonitoredQubitError
from .io import (
    AVERAGES_COLUMNS,
    CORRGRID_COLUMNS,
    DEFAULT_CONFIG,
    build_config,
    config_to_dict,
    load_config,
    records_csv,
    trajectories_csv,
    write_manifest,
    write_table,
    write_text,
)
from .past_state import analytic_effect_components, analytic_rho_components, predict_weighted_row
from .trajectory import SimulationConfig, deterministic_solution, simulate_ensemble
from .validation import DEFAULT_SEED, AcceptanceSuite, derived_seed

_HERALDS = ("plus", "minus", "mixed")
_POLICY = {"plus": "herald-plus", "minus": "herald-minus", "mixed": "unheralded-mixed"}


class _Run:
    """Collects output hashes, stage timings and subset sizes for the manifest."""

    def __init__(self, command, config, out, threads):
        self.command = command
        self.config = config
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.outputs = {}
        self.timings = {}
        self.subsets = {}
        self.checks = {}
        self._t = time.perf_counter()

    def stage(self, name):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def table(self, name, columns, rows):
        self.outputs[name] = write_table(self.out / name, columns, rows)

    def text(self, name, text):
        self.outputs[name] = write_text(self.out / name, text)

    def simulate(self, config, label="ensemble"):
        ens = simulate_ensemble(config, threads=self.threads)
        self.subsets[label] = {
            "n_trajectories": len(ens),
            "herald_plus": int(np.sum(ens.herald == 1)),
            "herald_minus": int(np.sum(ens.herald == -1)),
            "unheralded": int(np.sum(ens.herald == 0)),
            "final_plus": int(np.sum(ens.final_outcome == 1)),
            "final_minus": int(np.sum(ens.final_outcome == 0)),
            "seed": config.seed,
            "herald": config.herald_policy,
        }
        self.stage(f"simulate_{label}")
        return ens

    def finish(self):
        self.stage("write")
        write_manifest(
            self.out / "manifest.json",
            {
                "command": self.command,
                "package_version": __version__,
                "config": config_to_dict(self.config),
                "seed": self.config.seed,
                "threads": self.threads,
                "outputs": self.outputs,
                "timings_s": self.timings,
                "subset_sizes": self.subsets,
                "checks": self.checks,
            },
        )


def _time_ns(config: SimulationConfig):
    dt_ns = config.params.bin_duration * 1e9
    return [round(m * dt_ns, 9) for m in range(config.n_bins + 1)]


def _plus_populations(config: SimulationConfig):
    """rho00(t_m), m = 0..M, of the unconditioned solution from |+z>, for overlays."""
    p = config.effective_params
    if p.is_underdamped:
        return analytic_rho_components(config.times, p)[0]
    return deterministic_solution(HermitianOperator2.plus(), p, config.n_bins, p.bin_duration)[0]


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(config, args):
    run = _Run("simulate", config, args.out, args.threads)
    ens = run.simulate(config)
    run.text("records.csv", records_csv(ens))
    run.text("trajectories.csv", trajectories_csv(ens))
    run.finish()
    return 0


def cmd_fig1(config, args):
    config = config.replace(herald_policy=_POLICY[args.herald or "plus"])
    run = _Run("fig1", config, args.out, args.threads)
    ens = run.simulate(config)
    pre_est = est.preselected_estimator(ens, PLUS)
    pre = est.preselected_average(ens, PLUS)
    mz_est = est.RatioEstimator(2 * ens.rho00[:, : ens.n_bins] - 1, pre_est.weights)
    mz = est.mean_sigma_z(ens, PLUS)
    seed = [config.seed, 0xF1]
    diff_se = (pre_est.replicates(200, seed) - mz_est.replicates(200, seed)).std(axis=0, ddof=1)
    run.stage("estimate")

    analytic = 2 * _plus_populations(config)[:-1] - 1
    t = _time_ns(config)
    m = config.n_bins
    run.table("averages.csv", AVERAGES_COLUMNS, (
        (t[i], pre.mean[i], None, None, analytic[i], pre.ci_lo[i], pre.ci_hi[i], pre.count[i]) for i in range(m)
    ))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(pre.mean - mz.mean) / diff_se
    run.table("mean_z.csv", ("time_ns", "mean_z", "se", "ci_lo", "ci_hi", "z_vs_v_pre", "within_4se"), (
        (t[i], mz.mean[i], mz.se[i], mz.ci_lo[i], mz.ci_hi[i], z[i], not z[i] > 4) for i in range(m)
    ))
    f = config.effective_prep_fidelity
    run.checks = {
        "v_pre0": float(pre.mean[0]),
        "v_pre0_ci": [float(pre.ci_lo[0]), float(pre.ci_hi[0])],
        "expected_v_pre0": 2 * f - 1,
        "v_pre0_within_ci": bool(pre.ci_lo[0] <= 2 * f - 1 <= pre.ci_hi[0]),
        "mean_z_within_4se_all_bins": bool(np.all(~(z > 4))),
    }
    run.finish()
    return 0


def cmd_fig2(config, args):
    config = config.replace(herald_policy=_POLICY[args.herald or "mixed"])
    run = _Run("fig2", config, args.out, args.threads)
    ens = run.simulate(config)
    ref_cfg = config.replace(herald_policy="herald-plus", seed=derived_seed(config.seed, 2))
    ref = run.simulate(ref_cfg, "preselected_reference")

    ps_est, wp_est = est.postselected_estimator(ens), est.weighted_estimator(ens)
    ps = est.postselected_average(ens)
    wp = est.weighted_average(ens)
    pre = est.preselected_average(ref).reversed()
    seed = [config.seed, 0xF2]
    pair_se = (wp_est.replicates(200, seed) - ps_est.replicates(200, seed)).std(axis=0, ddof=1)
    run.stage("estimate")

    p, m = config.effective_params, config.n_bins
    if p.is_underdamped:
        e00 = analytic_effect_components(config.times[:-1], config.total_time, p)[0]
    else:
        e00 = _plus_populations(config)[::-1][:-1]
    analytic = 2 * e00 - 1
    t = _time_ns(config)
    run.table("averages.csv", AVERAGES_COLUMNS, (
        (t[i], pre.mean[i], ps.mean[i], wp.mean[i], analytic[i], ps.ci_lo[i], ps.ci_hi[i], float(ps.n_selected)) for i in range(m)
    ))

    with np.errstate(divide="ignore", invalid="ignore"):
        z_sym = np.abs(ps.mean - pre.mean) / np.hypot(ps.se, pre.se)
        z_wp = np.abs(wp.mean - ps.mean) / pair_se
    thr_sym, thr_wp = est.corrected_z(m - 1), est.corrected_z(m)
    run.table("fig2_bins.csv", ("time_ns", "z_post_vs_reversed_pre", "symmetry_pass", "z_wp_vs_post", "wp_pass"), (
        (t[i], z_sym[i], None if i == 0 else bool(z_sym[i] <= thr_sym), z_wp[i], bool(not z_wp[i] > thr_wp)) for i in range(m)
    ))
    final_ok = bool(ps.ci_lo[-1] <= 1.0 <= ps.ci_hi[-1])
    checks = [
        ("post_vs_reversed_pre", float(np.nanmax(z_sym)), thr_sym, bool(np.nanmax(z_sym) <= thr_sym)),
        ("wp_vs_post", float(np.nanmax(z_wp)), thr_wp, bool(np.nanmax(z_wp) <= thr_wp)),
        ("final_bin_post_ci_contains_1", float(ps.mean[-1]), 1.0, final_ok),
    ]
    run.table("fig2_checks.csv", ("check", "statistic", "threshold", "passed"), checks)
    run.checks = {name: {"statistic": s, "threshold": th, "passed": ok} for name, s, th, ok in checks}
    run.finish()
    return 0


def _bin_of(t_us: float, config: SimulationConfig) -> int:
    j = round(t_us * 1e-6 / config.params.bin_duration)
    if not 1 <= j <= config.n_bins - 2:
        raise ConfigError(f"t' = {t_us} us must fall on an interior bin (1..{config.n_bins - 2})")
    return j


def cmd_fig3(config, args):
    config = config.replace(herald_policy=_POLICY[args.herald or "plus"])
    tprimes = args.tprime_us or [config.total_time * 1e6 / 4, config.total_time * 1e6 / 2]
    panel_bins = [_bin_of(tp, config) for tp in tprimes]
    run = _Run("fig3", config, args.out, args.threads)
    ens = run.simulate(config)
    hyb = est.hybrid_correlation_grid(ens)
    ss = est.state_state_grid(ens)
    sig = est.signal_correlation_grid(ens)
    p, m = config.params, config.n_bins
    pred = {j: predict_weighted_row(j, p, config.herald_policy, config.prep_fidelity, a2=p.variance) for j in range(1, m + 1)}
    rows_k, kink, kink_se = est.kink_table(ens, seed=[config.seed, 0xF3])
    run.stage("estimate")

    t = _time_ns(config)

    def grid_rows():
        for i in range(m):
            for j in range(m + 1):
                yield t[i], t[j], hyb.value[i, j], hyb.weight_sum[j], "hybrid"
        for i in range(m):
            for j in range(i + 1):
                yield t[i], t[j], ss.value[i, j], ss.weight_sum[j], "state-state"
        for j in range(m):
            for i in range(j):
                yield t[i], t[j], sig.value[i, j], sig.weight_sum[j], "signal-only"
        for j in range(1, m + 1):
            for i in range(j):
                yield t[i], t[j], pred[j][i], None, "predicted"

    run.table("corrgrid.csv", CORRGRID_COLUMNS, grid_rows())

    def panel_rows():
        for j in panel_bins:
            for i in range(m):
                yield (
                    t[j], t[i], hyb.value[i, j], hyb.se[i, j],
                    ss.value[i, j] if i >= j else None,
                    sig.value[i, j] if i < j else None,
                    pred[j][i] if i < j else None,
                )

    run.table("sidepanels.csv", ("tprime_ns", "t_ns", "hybrid", "hybrid_se", "state_state", "signal_only", "predicted"), panel_rows())
    run.table("kinks.csv", ("tprime_ns", "kink", "kink_se", "kink_over_se"), (
        (t[j], kink[c], kink_se[c], abs(kink[c]) / kink_se[c]) for c, j in enumerate(rows_k)
    ))
    run.checks = {f"kink_over_se_at_{t[j]!r}_ns": float(abs(kink[j - 1]) / kink_se[j - 1]) for j in panel_bins}
    run.finish()
    return 0


def cmd_validate(config, args, seed_given):
    # the suite fixes its own physics; only the base seed comes from the command line or config
    base = config.seed if (seed_given or args.config) else DEFAULT_SEED
    suite = AcceptanceSuite(seed=base, threads=args.threads)
    print(f"base seed {suite.seed}")
    suite.run_all(echo=print)
    report = suite.report()
    passed = report["all_passed"]
    print(f"{sum(r.passed for r in suite.results.values())}/{len(suite.results)} criteria passed in {report['total_runtime_s']:.1f} s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "validation.json", report)
    return 0 if passed else 1


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monitored-qubit", description="Simulate a continuously monitored qubit and export plot-ready CSV files.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file (defaults: reference device)")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads (speed only)")
    common.add_argument("--trajectories", type=int, metavar="N", help="override n_trajectories")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate an ensemble and export records and trajectories")
    for name, default, text in (
        ("fig1", "plus", "pre-selected average, mean sigma_z and analytic overlay"),
        ("fig2", "mixed", "post-selected and weighted past averages"),
        ("fig3", "plus", "two-time correlation grid, side panels and kinks"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--herald", choices=_HERALDS, help=f"initial-state policy (default: {default})")
        if name == "fig3":
            p.add_argument("--tprime-us", type=float, nargs=2, metavar="T", help="side-panel t' values in microseconds")
    sub.add_parser("validate", parents=[common], help="run the acceptance suite; nonzero exit on any failure")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else build_config(dict(DEFAULT_CONFIG))
        if args.seed is not None:
            config = config.replace(seed=args.seed)
        if args.trajectories is not None:
            config = config.replace(n_trajectories=args.trajectories)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command != "validate" and args.out is None:
            args.out = "."
        if args.command == "simulate":
            return cmd_simulate(config, args)
        if args.command == "fig1":
            return cmd_fig1(config, args)
        if args.command == "fig2":
            return cmd_fig2(config, args)
        if args.command == "fig3":
            return cmd_fig3(config, args)
        return cmd_validate(config, args, args.seed is not None)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MonitoredQubitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
