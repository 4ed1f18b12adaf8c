#!/usr/bin/env python3
"""
Transfer Accuracy CLI

Doubly robust transfer of a logistic risk model and its ROC/AUC from a
labelled source sample to an unlabelled target sample.

Usage:
    python cli.py <command> [options]

Commands:
    fit <data.csv>           Calibrated doubly robust beta (beta.json, nuisance_meta.json)
    roc <data.csv>           beta plus ROC/AUC and bootstrap CIs (roc_curve.csv, roc_summary.json, ci.json)
    simulate                 Simulation benchmark (benchmark.csv, benchmark.txt, reps.csv, truth.json)
    report <benchmark.csv>   Re-render a benchmark CSV as an aligned text table
    validate <data.csv>      Load a dataset and print its shape and population constants

Exit codes: 0 ok, 1 estimation/data error (error.json written), 2 usage, 130 interrupted.
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

SIM_CONFIGS = ('i', 'ii', 'iii')


class UsageError(Exception):
    """Invalid option values caught after argparse (exit code 2)."""


@dataclass
class CommandContext:
    """Resolved configuration plus the bookkeeping every command shares."""

    command: str
    config: Any
    output_dir: str
    seed: int
    artifacts: List[str] = field(default_factory=list)
    _manifest: Any = None

    def manifest(self, dataset: Optional[str] = None, simulation: Optional[Dict[str, Any]] = None):
        from orchestrator.manifest import RunManifest

        if self._manifest is None:
            self._manifest = RunManifest(
                command=self.command,
                seed=self.seed,
                output_dir=self.output_dir,
                dataset=dataset,
                simulation=simulation,
                overrides=self.config.applied_overrides,
                config=self.config.effective(),
            )
        return self._manifest

    def wrote(self, *paths) -> None:
        self.artifacts.extend(Path(p).name for p in paths)


def _parse_u(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise UsageError(f"--u expects comma-separated numbers, got {text!r}")


def _overrides(args) -> Dict[str, Any]:
    """CLI flags as dotted config keys (``None`` means not given)."""
    get = lambda name: getattr(args, name, None)
    out = {
        'run.seed': get('seed'),
        'run.threads': get('threads'),
        'run.output': get('out'),
        'tuning.cv_folds': get('cv_folds'),
        'tuning.lambda_alpha': get('lambda_alpha'),
        'tuning.lambda_gamma': get('lambda_gamma'),
        'tuning.kappa': get('kappa'),
        'solver.backend': get('backend'),
        'roc.n_min': get('n_min'),
        'roc.u': _parse_u(get('u')),
        'roc.eval_points': get('eval_points'),
        'bootstrap.B': get('bootstrap'),
        'bootstrap.level': get('level'),
    }
    if get('no_bootstrap'):
        out['bootstrap.enabled'] = False
    if get('no_standardize'):
        out['data.standardize'] = False
    if args.command == 'simulate':
        out.update({
            'simulation.config': get('config'),
            'simulation.reps': get('reps'),
            'simulation.p': get('p'),
            'simulation.n': get('n'),
            'simulation.N': get('N'),
            'simulation.n_min': get('n_min'),
            'simulation.B': get('bootstrap'),
            'simulation.truth_rows': get('truth_rows'),
        })
        out.pop('roc.n_min')
        out.pop('bootstrap.B')
    return out


def _context(args) -> CommandContext:
    from orchestrator.config import ConfigManager

    config = ConfigManager(args.config_file, quiet=args.quiet)
    config.overrides(_overrides(args))
    try:
        config.validate()
    except ValueError as e:
        raise UsageError(str(e))
    return CommandContext(command=args.command, config=config,
                          output_dir=config.output_dir, seed=config.seed)


def _fit(args, ctx: CommandContext, with_roc: bool):
    """Load the dataset and run the pipeline; shared by ``fit`` and ``roc``."""
    from estimation.data import load_dataset
    from orchestrator.pipeline import RunSettings, TransferPipeline

    manifest = ctx.manifest(dataset=str(args.data))
    d = load_dataset(args.data, standardize=ctx.config.standardize)
    print(f"Loaded {args.data}: n={d.n} source, N={d.N} target, q={d.q}, p={d.p}")
    pipeline = TransferPipeline(RunSettings.from_config(ctx.config), quiet=args.quiet)
    result = pipeline.run(d, with_roc=with_roc)
    return d, pipeline, result, manifest


def _comparators(d, result) -> Dict[str, Any]:
    """IW / IM / source-only fits next to the doubly robust one."""
    from estimation.errors import TransferError
    from estimation.roc import tv_distance
    from simulation.baselines import (
        prediction_agreement,
        run_baseline_im,
        run_baseline_iw,
        run_baseline_source,
    )

    fits = {
        'iw': lambda: run_baseline_iw(d, result.beta.alpha),
        'im': lambda: run_baseline_im(d, result.beta.gamma),
        'source': lambda: run_baseline_source(d),
    }
    beta = result.beta.estimate.beta
    out: Dict[str, Any] = {}
    for method, fit in fits.items():
        try:
            b, curve = fit()
        except TransferError as e:
            out[method] = {'error': f"{type(e).__name__}: {e}"}
            continue
        entry = {'beta': b.tolist(), 'agreement': prediction_agreement(d, beta, b), 'auc': curve.auc}
        if result.roc is not None:
            entry['tv_distance'] = tv_distance(result.roc, curve)
        out[method] = entry
    return out


def _write_beta(ctx: CommandContext, d, result, manifest, comparators: Dict[str, Any]) -> None:
    from orchestrator.manifest import write_json

    fit = result.beta
    payload = fit.estimate.to_dict()
    payload.update({
        'names': list(d.feature_names[: d.q]),
        'sandwich_se': fit.sandwich_se,
        'comparators': comparators,
    })
    ctx.wrote(
        write_json(manifest.out / 'beta.json', payload, manifest),
        write_json(manifest.out / 'nuisance_meta.json', fit.nuisance_meta(), manifest),
    )


def cmd_fit(args, ctx: CommandContext):
    """Calibrated doubly robust beta."""
    d, _, result, manifest = _fit(args, ctx, with_roc=False)
    _write_beta(ctx, d, result, manifest, _comparators(d, result))
    print(f"beta = {[round(b, 4) for b in result.beta.estimate.beta.tolist()]}")


def cmd_roc(args, ctx: CommandContext):
    """beta plus ROC/AUC and bootstrap intervals."""
    from orchestrator.manifest import write_curve_csv, write_json

    d, pipeline, result, manifest = _fit(args, ctx, with_roc=True)
    comparators = _comparators(d, result)
    _write_beta(ctx, d, result, manifest, comparators)
    u_values = pipeline.settings.u_values
    summary = result.roc.summary(u_values)
    summary['comparators'] = {
        m: {k: v for k, v in entry.items() if k in ('auc', 'tv_distance', 'error')}
        for m, entry in comparators.items()
    }
    ctx.wrote(
        write_curve_csv(manifest.out / 'roc_curve.csv', result.roc, manifest),
        write_json(manifest.out / 'roc_summary.json', summary, manifest),
    )
    if result.bootstrap is not None:
        payload = result.bootstrap.to_dict()
        payload['sandwich_se'] = {f"beta_{j + 1}": se for j, se in enumerate(result.beta.sandwich_se)}
        ctx.wrote(write_json(manifest.out / 'ci.json', payload, manifest))

    print(f"AUC = {result.roc.auc:.4f}")
    for u, v in summary['roc_at'].items():
        print(f"ROC({u}) = {v:.4f}")


def cmd_simulate(args, ctx: CommandContext):
    """Run the simulation benchmark."""
    from orchestrator.pipeline import RunSettings
    from simulation.benchmark import run_benchmark, write_benchmark
    from simulation.generators import SimConfig

    config = ctx.config
    cfg = SimConfig(
        config_id=config.simulation('config', 'i'),
        n=int(config.simulation('n')),
        N=int(config.simulation('N')),
        p=int(config.simulation('p')),
        q=int(config.simulation('q')),
        reps=int(config.simulation('reps')),
        seed=ctx.seed,
        n_min=int(config.simulation('n_min')),
        B=int(config.simulation('B')),
        truth_rows=int(config.simulation('truth_rows')),
    )
    if config.bootstrap_enabled and cfg.B < 100:
        raise UsageError(f"--bootstrap must be >= 100, got {cfg.B}")
    manifest = ctx.manifest(simulation=cfg.to_dict())
    if not cfg.is_full_scale:
        print(f"[simulate] reduced setting (q={cfg.q}, p={cfg.p}); acceptance bands are calibrated for q=4, p in (100, 200)")
    settings = RunSettings.from_config(config)
    settings.n_min = cfg.n_min
    settings.B = cfg.B

    report = run_benchmark(cfg, settings=settings, u_values=settings.u_values,
                           threads=config.threads, quiet=args.quiet)
    ctx.wrote(*write_benchmark(report, manifest))
    print(report.to_text())


def cmd_report(args, ctx: CommandContext):
    """Re-render a benchmark CSV."""
    from orchestrator.manifest import read_csv
    from simulation.benchmark import render_table

    path = Path(args.csv)
    if not path.exists():
        raise UsageError(f"benchmark CSV not found: {path}")
    text = render_table(read_csv(path))
    print(text)
    if args.write:
        target = path.with_suffix('.txt')
        with open(target, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text + '\n')
        ctx.wrote(target)


def cmd_validate(args, ctx: CommandContext):
    """Load a dataset and print its shape and population constants."""
    from estimation.data import load_dataset, population_constants

    d = load_dataset(args.data, standardize=ctx.config.standardize)
    rho = population_constants(d)
    print(f"\n=== Dataset ===")
    print(f"Source rows (n):   {d.n}")
    print(f"Target rows (N):   {d.N}")
    print(f"Risk factors (q):  {d.q}  ({', '.join(d.feature_names[: d.q])})")
    print(f"Adjusters (p):     {d.p}")
    print(f"Source prevalence: {d.source_y.mean():.4f}")
    print(f"rho_n={rho.rho_n:.4f}  rho_N={rho.rho_N:.4f}  n/N={rho.rho2:.4f}")


def _force_utf8_console():
    """Make stdout/stderr UTF-8 so non-ASCII column names never crash the run."""
    for stream in (sys.stdout, sys.stderr):
        try:
            stream.reconfigure(encoding='utf-8', errors='replace')
        except Exception:
            pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config-file', default='transfer-config.yaml',
                   help='YAML or key = value run configuration (default: transfer-config.yaml)')
    p.add_argument('--out', default=None, help='output directory (default: config run.output)')
    p.add_argument('--seed', type=int, default=None, help='master seed for every random draw')
    p.add_argument('--threads', type=int, default=None, help='worker pool size')
    p.add_argument('--quiet', action='store_true', help='suppress progress lines')


def _add_fit_flags(p: argparse.ArgumentParser, roc: bool) -> None:
    p.add_argument('data', help='CSV with columns s, y, a_2..a_q, w_1..w_p')
    p.add_argument('--cv-folds', type=int, default=None, help='cross-validation folds (default 5)')
    p.add_argument('--lambda-alpha', type=float, default=None, help='fixed penalty for the density-ratio fit')
    p.add_argument('--lambda-gamma', type=float, default=None, help='fixed penalty for the imputation fit')
    p.add_argument('--kappa', type=float, default=None, help='fixed calibration penalty factor (skips CV)')
    p.add_argument('--backend', default=None, help='l1 solver backend (proximal | coordinate)')
    p.add_argument('--no-standardize', action='store_true', help='leave adjustment columns unscaled')
    if roc:
        p.add_argument('--n-min', type=int, default=None, help='rows per calibrated cutoff segment')
        p.add_argument('--u', default=None, help='comma-separated FPR values for ROC(u) (default 0.1,0.2)')
        p.add_argument('--eval-points', type=int, default=None, help='thin the curve to this many cutoffs')
        p.add_argument('--bootstrap', type=int, default=None, metavar='B', help='bootstrap replicates (default 500)')
        p.add_argument('--no-bootstrap', action='store_true', help='skip the bootstrap (no ci.json)')
        p.add_argument('--level', type=float, default=None, help='interval level (default 0.95)')


def main(argv=None):
    _force_utf8_console()
    parser = argparse.ArgumentParser(
        prog='transfer-accuracy',
        description='Transfer Accuracy CLI',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # fit command
    fit_parser = subparsers.add_parser('fit', help='Calibrated doubly robust beta')
    _add_fit_flags(fit_parser, roc=False)
    _add_run_flags(fit_parser)
    fit_parser.set_defaults(func=cmd_fit)

    # roc command
    roc_parser = subparsers.add_parser('roc', help='beta plus ROC/AUC and bootstrap CIs')
    _add_fit_flags(roc_parser, roc=True)
    _add_run_flags(roc_parser)
    roc_parser.set_defaults(func=cmd_roc)

    # simulate command
    sim_parser = subparsers.add_parser('simulate', help='Run the simulation benchmark')
    sim_parser.add_argument('--config', choices=SIM_CONFIGS, default=None,
                            help='misspecification setting: i (none), ii (imputation), iii (density ratio)')
    sim_parser.add_argument('--reps', type=int, default=None, help='repetitions (default 200)')
    sim_parser.add_argument('--p', type=int, default=None, help='adjustment covariates (100 or 200 for the presets)')
    sim_parser.add_argument('--n', type=int, default=None, help='source rows (default 600)')
    sim_parser.add_argument('--N', type=int, default=None, help='target rows (default 3000)')
    sim_parser.add_argument('--n-min', type=int, default=None, help='rows per cutoff segment (default 120)')
    sim_parser.add_argument('--bootstrap', type=int, default=None, metavar='B', help='bootstrap replicates per rep')
    sim_parser.add_argument('--no-bootstrap', action='store_true', help='skip intervals (CP column empty)')
    sim_parser.add_argument('--level', type=float, default=None, help='interval level (default 0.95)')
    sim_parser.add_argument('--u', default=None, help='comma-separated FPR values (default 0.1,0.2)')
    sim_parser.add_argument('--truth-rows', type=int, default=None, help='Monte-Carlo rows for the truth')
    _add_run_flags(sim_parser)
    sim_parser.set_defaults(func=cmd_simulate)

    # report command
    report_parser = subparsers.add_parser('report', help='Re-render a benchmark CSV')
    report_parser.add_argument('csv', help='benchmark.csv written by simulate')
    report_parser.add_argument('--write', action='store_true', help='also write the table next to the CSV')
    _add_run_flags(report_parser)
    report_parser.set_defaults(func=cmd_report)

    # validate command
    validate_parser = subparsers.add_parser('validate', help='Check a dataset loads')
    validate_parser.add_argument('data', help='CSV to check')
    validate_parser.add_argument('--no-standardize', action='store_true', help='leave adjustment columns unscaled')
    _add_run_flags(validate_parser)
    validate_parser.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 1

    from estimation.errors import TransferError
    from orchestrator.manifest import write_error
    from orchestrator.run_history import append_run, make_record

    try:
        ctx = _context(args)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2

    def record(outcome: str, error: Optional[str] = None) -> None:
        try:
            append_run(make_record(args.command, ctx.seed, ctx.output_dir, outcome, ctx.artifacts, error),
                       ctx.config.history_path)
        except OSError as e:
            print(f"[history] could not record run: {e}", file=sys.stderr)

    try:
        args.func(args, ctx)
        record('ok')
        return 0
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except TransferError as e:
        write_error(ctx.output_dir, e, ctx._manifest)
        record('error', type(e).__name__)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("\nOperation cancelled.")
        return 130
    except Exception as e:
        try:
            write_error(ctx.output_dir, e, ctx._manifest)
        except OSError as write_failure:
            print(f"[error] could not write error.json: {write_failure}", file=sys.stderr)
        record('error', type(e).__name__)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
