"""Command-line surface.

Eight subcommands cover the pipeline: gen-data, solve, train-sup,
train-unsup, eval, rates, warmstart, darcy-demo.  Every flag can also come
from a `key = value` config file passed with --config; explicit flags win.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import dg, io, nn, symbolic, train
from .mesh import DofLayout, build_mesh, vector_to_image
from .sparse import BreakdownError


class UsageError(Exception):
    pass


_RUNTIME_ERRORS = (io.FormatError, dg.SolverConvergenceError,
                   dg.SourceEvaluationError, nn.TrainingError,
                   symbolic.GenerationError, symbolic.DegenerateExpressionError,
                   BreakdownError, OSError)

_FLAG = object()


def _epsilon(text):
    v = int(text)
    if v not in (-1, 1):
        raise argparse.ArgumentTypeError("epsilon must be -1 or 1")
    return v


def _existing(path):
    if not os.path.exists(path):
        raise UsageError(f"file not found: {path}")
    return path


def _build():
    parser = argparse.ArgumentParser(
        prog="dgnet",
        description="Interior penalty DG Poisson solver with CNN surrogates.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    specs = {}

    def command(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None,
                        help="key = value file supplying defaults for any flag")
        spec = specs[name] = {}

        def opt(flag, convert=str, default=None, required=False, help=None,
                repeat=False):
            dest = flag.lstrip("-").replace("-", "_")
            spec[dest] = (convert, default, required)
            if convert is _FLAG:
                sp.add_argument(flag, action="store_const", const=True,
                                default=None, help=help)
            elif repeat:
                sp.add_argument(flag, action="append", default=None, help=help)
            else:
                sp.add_argument(flag, type=convert, default=None, help=help)
        return opt

    opt = command("gen-data", "generate a dataset of random solutions")
    opt("--n", int, required=True, help="grid subdivisions per side")
    opt("--count", int, required=True, help="number of samples")
    opt("--bank", str, "train", help="symbol bank: train or test")
    opt("--eps", _epsilon, -1, help="DG variant: -1 SIPG, 1 NIPG")
    opt("--sigma", float, 1.0, help="penalty parameter")
    opt("--seed", int, 0)
    opt("--out", str, required=True, help="output .dgds path")

    opt = command("solve", "assemble and solve one problem")
    opt("--n", int, required=True)
    opt("--eps", _epsilon, -1)
    opt("--sigma", float, 1.0)
    opt("--scenario", str, help="built-in problem: darcy or sinsin")
    opt("--expr", str, help="exact solution u in the expression grammar")
    opt("--tol", float, 1e-12)
    opt("--max-iter", int, 20000)
    opt("--report", str, help="CSV report path")
    opt("--dump", str, help="raw f64 dump of the coefficient vector")

    opt = command("train-sup", "train a surrogate against DG labels")
    opt("--data", str, required=True, help="training .dgds file")
    opt("--test", str, help="held-out .dgds file to evaluate after training")
    opt("--epochs", int, 150)
    opt("--beta", float, 0.5)
    opt("--batch", int, help="batch size, default min(32, dataset size)")
    opt("--lr0", float, 1e-3)
    opt("--seed", int, 0)
    opt("--channels", int, 32)
    opt("--kernel", int, 7)
    opt("--out", str, help="checkpoint .dgcn path")
    opt("--with-optimizer", _FLAG, False, help="store Adam state in the checkpoint")
    opt("--report", str, help="test-set metrics CSV")
    opt("--history", str, help="per-epoch loss CSV")
    opt("--dump-dir", str, help="directory for per-sample test predictions")

    opt = command("train-unsup", "fit one source without labels")
    opt("--n", int, 16)
    opt("--eps", _epsilon, -1)
    opt("--sigma", float, 1.0)
    opt("--scenario", str, help="built-in problem: darcy or sinsin")
    opt("--expr", str, help="exact solution u in the expression grammar")
    opt("--beta", float, 0.5)
    opt("--eta", float, 2.0)
    opt("--steps", int, 5000)
    opt("--lr0", float, 1e-3)
    opt("--seed", int, 0)
    opt("--channels", int, 32)
    opt("--kernel", int, 7)
    opt("--report", str, help="metrics CSV for the best prediction")
    opt("--history", str, help="per-step loss CSV")
    opt("--dump", str, help="raw f64 dump of the best prediction")

    opt = command("eval", "evaluate a checkpoint on a dataset")
    opt("--model", str, required=True, help=".dgcn checkpoint")
    opt("--data", str, required=True, help=".dgds dataset")
    opt("--report", str, help="metrics CSV")
    opt("--dump-dir", str, help="directory for per-sample predictions")

    opt = command("rates", "convergence-rate table from solve reports")
    opt("--inputs", str, required=True,
        help="comma-separated solve report CSVs, one per grid")
    opt("--out", str, help="rate table CSV")

    opt = command("warmstart", "Gauss-Seidel sweep counts from stored guesses")
    opt("--n", int, 64)
    opt("--eps", _epsilon, -1)
    opt("--sigma", float, 1.0)
    opt("--scenario", str, help="built-in problem, default darcy")
    opt("--expr", str)
    opt("--guess", str, repeat=True,
        help="name=path of a raw f64 guess; repeatable")
    opt("--tol", float, 1e-6)
    opt("--max-iter", int, 30000)
    opt("--report", str, help="sweep-count CSV")

    opt = command("darcy-demo", "end-to-end warm-start demonstration")
    opt("--steps", int, 300, help="unsupervised steps on the fine grid")
    opt("--coarse-steps", int, 500, help="unsupervised steps at n=16")
    opt("--eps", _epsilon, -1)
    opt("--sigma", float, 1.0)
    opt("--beta", float, 0.5)
    opt("--eta", float, 2.0)
    opt("--seed", int, 0)
    opt("--tol", float, 1e-6)
    opt("--max-iter", int, 30000)
    opt("--report", str, help="sweep-count CSV")
    opt("--dump-dir", str, help="directory for the two predictions")

    return parser, specs


def _merge(args, spec):
    """Fill unset flags from the config file, then fall back to defaults."""
    file_vals = {}
    if args.config is not None:
        _existing(args.config)
        try:
            raw = io.read_config_file(args.config)
        except ValueError as e:
            raise UsageError(str(e))
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest not in spec:
                raise UsageError(f"unknown config key '{key}'")
            file_vals[dest] = value
    merged = {}
    for dest, (convert, default, required) in spec.items():
        value = getattr(args, dest)
        if value is None and dest in file_vals:
            raw = file_vals[dest]
            try:
                if convert is _FLAG:
                    value = raw.lower() in ("1", "true", "yes", "on")
                elif dest == "guess":
                    value = [g.strip() for g in raw.split(",")]
                else:
                    value = convert(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise UsageError(f"config key '{dest}': {e}")
        if value is None:
            value = default
        if value is None and required:
            raise UsageError(
                f"missing required option --{dest.replace('_', '-')}")
        merged[dest] = value
    return argparse.Namespace(**merged)


def _parse_u(text):
    try:
        return symbolic.parse_expr(text)
    except symbolic.ParseError as e:
        raise UsageError(f"bad expression: {e}")


def _problem(opts, default_scenario=None):
    """Resolve (mesh, config, source, exact u) from --scenario / --expr."""
    scenario = opts.scenario or (None if opts.expr else default_scenario)
    if (scenario is None) == (opts.expr is None):
        raise UsageError("give exactly one of --scenario or --expr")
    try:
        cfg = dg.DgConfig(opts.eps, opts.sigma, opts.n)
    except ValueError as e:
        raise UsageError(str(e))
    mesh = build_mesh(opts.n)
    if scenario == "darcy":
        return mesh, cfg, dg.darcy_source(opts.n), None
    if scenario == "sinsin":
        u = symbolic.parse_expr("sin(pi*x)*sin(pi*y)")
    elif scenario is None:
        u = _parse_u(opts.expr)
    else:
        raise UsageError(f"unknown scenario '{scenario}'")
    return mesh, cfg, symbolic.negate(symbolic.laplacian(u)), u


def _net_cfg(opts, n):
    try:
        return nn.UNetConfig(input_side=2 * n, channels=opts.channels,
                             kernel=opts.kernel)
    except ValueError as e:
        raise UsageError(str(e))


def _single_report(path, alpha, u, label, ops):
    """One-row metrics CSV; exact columns are nan when u is unknown."""
    cand = dg.DgFunction(alpha, ops.mesh)
    ref = dg.DgFunction(label, ops.mesh)
    known = u is not None
    cols = {
        "l2_vs_exact": [dg.error_norm(u, cand, "L2") if known else math.nan],
        "h1_vs_exact": [dg.error_norm(u, cand, "brokenH1") if known else math.nan],
        "l2_vs_dg": [dg.error_norm(ref, cand, "L2")],
        "h1_vs_dg": [dg.error_norm(ref, cand, "brokenH1")],
    }
    table = train.MetricsTable(cols)
    if path:
        io.write_metrics_csv(path, table)
    return table


def _print_aggregates(table):
    for field in table.fields:
        mean, std, median = table.aggregate(field)
        print(f"{field}: mean {mean:.6e}  std {std:.6e}  median {median:.6e}")


def _cmd_gen_data(opts):
    try:
        symbolic.symbol_bank(opts.bank)
    except ValueError as e:
        raise UsageError(str(e))
    try:
        cfg = dg.DgConfig(opts.eps, opts.sigma, opts.n)
    except ValueError as e:
        raise UsageError(str(e))
    ds = io.generate_dataset(opts.n, opts.count, opts.bank, cfg.epsilon,
                             cfg.sigma, opts.seed)
    io.write_dataset(opts.out, ds)
    print(f"wrote {len(ds)} samples at n={ds.n} to {opts.out}")
    return 0


def _cmd_solve(opts):
    mesh, cfg, f, u = _problem(opts)
    ops = dg.assemble(mesh, cfg, f)
    sol = dg.solve_dg(ops, tol=opts.tol, max_iter=opts.max_iter)
    merr = float(np.max(np.abs(dg.mass_error(ops, sol.coeffs))))
    print(f"solved n={opts.n} eps={cfg.epsilon} sigma={cfg.sigma}; "
          f"max mass error {merr:.3e}")
    if u is not None:
        l2 = dg.error_norm(u, sol, "L2")
        h1 = dg.error_norm(u, sol, "brokenH1")
        print(f"L2 error {l2:.6e}  broken H1 error {h1:.6e}")
        if opts.report:
            with open(opts.report, "w") as fh:
                fh.write("n,L2_error,H1_error,mass_error_max\n")
                fh.write(f"{opts.n},{l2!r},{h1!r},{merr!r}\n")
    elif opts.report:
        # no exact solution: dump per-element mean values instead
        with open(opts.report, "w") as fh:
            fh.write("element,i,j,value\n")
            vals = sol.coeffs.reshape(-1, 4).mean(axis=1)
            for e, v in enumerate(vals):
                fh.write(f"{e},{e % opts.n},{e // opts.n},{float(v)!r}\n")
    if opts.dump:
        io.write_alpha(opts.dump, sol.coeffs)
    return 0


def _load_dataset(path):
    return io.read_dataset(_existing(path))


def _dump_predictions(dump_dir, alphas):
    os.makedirs(dump_dir, exist_ok=True)
    for i, a in enumerate(alphas):
        io.write_alpha(os.path.join(dump_dir, f"pred_{i:04d}.bin"), a)


def _cmd_train_sup(opts):
    ds = _load_dataset(opts.data)
    cfg = train.SupervisedConfig(beta=opts.beta, epochs=opts.epochs,
                                 batch_size=opts.batch, lr0=opts.lr0,
                                 seed=opts.seed)
    net, history = train.train_supervised(ds, cfg, _net_cfg(opts, ds.n))
    print(f"trained {opts.epochs} epochs on {len(ds)} samples; "
          f"final epoch loss {history[-1]:.6e}")
    if opts.out:
        io.save_checkpoint(opts.out, net, with_optimizer=opts.with_optimizer)
        print(f"checkpoint written to {opts.out}")
    if opts.history:
        io.write_history_csv(opts.history, history, index_name="epoch")
    if opts.test:
        test = _load_dataset(opts.test)
        if (test.n, test.epsilon, test.sigma) != (ds.n, ds.epsilon, ds.sigma):
            raise UsageError("test set grid or DG config differs from training set")
        mesh = build_mesh(test.n)
        ops = dg.assemble(mesh, dg.DgConfig(test.epsilon, test.sigma, test.n),
                          np.zeros(test.n * test.n))
        table = train.evaluate(net, test, ops)
        if opts.report:
            io.write_metrics_csv(opts.report, table)
        _print_aggregates(table)
        if opts.dump_dir:
            _dump_predictions(opts.dump_dir,
                              [train.predict(net, s.pi_f_image)
                               for s in test.samples])
    return 0


def _cmd_train_unsup(opts):
    mesh, cfg, f, u = _problem(opts, default_scenario="sinsin")
    ops = dg.assemble(mesh, cfg, f)
    ucfg = train.UnsupervisedConfig(beta=opts.beta, sigma=cfg.sigma,
                                    eta=opts.eta, steps=opts.steps,
                                    lr0=opts.lr0, seed=opts.seed)
    image = vector_to_image(ops.proj_coeffs, DofLayout(opts.n))
    alpha, history = train.train_unsupervised(image, ops, ucfg,
                                              _net_cfg(opts, opts.n))
    print(f"best loss {min(history):.6e} after {opts.steps} steps")
    if opts.history:
        io.write_history_csv(opts.history, history, index_name="step")
    if opts.dump:
        io.write_alpha(opts.dump, alpha)
    label = dg.solve_dg(ops).coeffs
    table = _single_report(opts.report, alpha, u, label, ops)
    _print_aggregates(table)
    return 0


def _cmd_eval(opts):
    ds = _load_dataset(opts.data)
    try:
        net = io.load_checkpoint(_existing(opts.model),
                                 expected_input_side=2 * ds.n)
    except io.ConfigError as e:
        raise UsageError(str(e))
    mesh = build_mesh(ds.n)
    ops = dg.assemble(mesh, dg.DgConfig(ds.epsilon, ds.sigma, ds.n),
                      np.zeros(ds.n * ds.n))
    table = train.evaluate(net, ds, ops)
    if opts.report:
        io.write_metrics_csv(opts.report, table)
    _print_aggregates(table)
    if opts.dump_dir:
        _dump_predictions(opts.dump_dir,
                          [train.predict(net, s.pi_f_image)
                           for s in ds.samples])
    return 0


def _cmd_rates(opts):
    paths = [p.strip() for p in opts.inputs.split(",") if p.strip()]
    if len(paths) < 2:
        raise UsageError("rates needs at least two solve reports")
    rows = []
    for path in paths:
        _existing(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[:3] != ["n", "L2_error", "H1_error"]:
                raise UsageError(f"{path} is not a solve error report")
            fields = fh.readline().strip().split(",")
            rows.append((int(fields[0]), float(fields[1]), float(fields[2])))
    rows.sort()
    levels = [r[0] for r in rows]
    l2 = [r[1] for r in rows]
    h1 = [r[2] for r in rows]
    if opts.out:
        io.write_rates_csv(opts.out, levels, l2, h1)
    print("n      L2_error      rate   H1_error      rate")
    for i, n in enumerate(levels):
        l2r = "" if i == 0 else f"{dg.convergence_rate(l2[i-1], l2[i]):6.3f}"
        h1r = "" if i == 0 else f"{dg.convergence_rate(h1[i-1], h1[i]):6.3f}"
        print(f"{n:<6d} {l2[i]:.6e} {l2r:>6} {h1[i]:.6e} {h1r:>6}")
    return 0


def _run_warmstart(ops, guesses, tol, max_iter, report):
    reports = train.warmstart_benchmark(ops, guesses, tol=tol,
                                        max_iter=max_iter)
    lines = []
    for name in guesses:
        rep = reports[name]
        final = float(rep.history[-1]) if len(rep.history) else float("nan")
        lines.append((name, rep.iterations, rep.converged, final))
        print(f"{name:>14}: {rep.iterations:6d} sweeps  "
              f"converged={rep.converged}  final rr {final:.3e}")
    if report:
        with open(report, "w") as fh:
            fh.write("guess,sweeps,converged,final_residual\n")
            for name, sweeps, conv, final in lines:
                fh.write(f"{name},{sweeps},{int(conv)},{final!r}\n")
    return reports


def _cmd_warmstart(opts):
    mesh, cfg, f, _ = _problem(opts, default_scenario="darcy")
    ops = dg.assemble(mesh, cfg, f)
    guesses = {"zero": None}
    for item in opts.guess or []:
        if "=" not in item:
            raise UsageError(f"--guess wants name=path, got '{item}'")
        name, path = item.split("=", 1)
        alpha = io.read_alpha(_existing(path))
        if alpha.size != 4 * opts.n * opts.n:
            raise UsageError(
                f"guess '{name}' has {alpha.size} values, grid needs "
                f"{4 * opts.n * opts.n}")
        guesses[name] = alpha
    _run_warmstart(ops, guesses, opts.tol, opts.max_iter, opts.report)
    return 0


def _cmd_darcy_demo(opts):
    fine_n, coarse_n = 64, 16
    try:
        cfg_f = dg.DgConfig(opts.eps, opts.sigma, fine_n)
        cfg_c = dg.DgConfig(opts.eps, opts.sigma, coarse_n)
    except ValueError as e:
        raise UsageError(str(e))
    ops_f = dg.assemble(build_mesh(fine_n), cfg_f, dg.darcy_source(fine_n))
    ops_c = dg.assemble(build_mesh(coarse_n), cfg_c, dg.darcy_source(coarse_n))

    print(f"unsupervised fit at n={coarse_n} ({opts.coarse_steps} steps)")
    ucfg_c = train.UnsupervisedConfig(beta=opts.beta, sigma=opts.sigma,
                                      eta=opts.eta, steps=opts.coarse_steps,
                                      lr0=1e-3, seed=opts.seed)
    img_c = vector_to_image(ops_c.proj_coeffs, DofLayout(coarse_n))
    alpha_c, _ = train.train_unsupervised(
        img_c, ops_c, ucfg_c, nn.UNetConfig(input_side=2 * coarse_n))
    interp = train.interpolate_coarse_guess(
        vector_to_image(alpha_c, DofLayout(coarse_n)), fine_n)

    print(f"unsupervised fit at n={fine_n} ({opts.steps} steps)")
    ucfg_f = train.UnsupervisedConfig(beta=opts.beta, sigma=opts.sigma,
                                      eta=opts.eta, steps=opts.steps,
                                      lr0=1e-3, seed=opts.seed)
    img_f = vector_to_image(ops_f.proj_coeffs, DofLayout(fine_n))
    alpha_f, _ = train.train_unsupervised(
        img_f, ops_f, ucfg_f, nn.UNetConfig(input_side=2 * fine_n))

    guesses = {"zero": None, "unsupervised": alpha_f, "interpolated": interp}
    reports = _run_warmstart(ops_f, guesses, opts.tol, opts.max_iter,
                             opts.report)
    if opts.dump_dir:
        os.makedirs(opts.dump_dir, exist_ok=True)
        io.write_alpha(os.path.join(opts.dump_dir, "unsupervised.bin"), alpha_f)
        io.write_alpha(os.path.join(opts.dump_dir, "interpolated.bin"), interp)
    base = reports["zero"].iterations
    for name in ("unsupervised", "interpolated"):
        saved = base - reports[name].iterations
        print(f"{name} start saves {saved} sweeps over the zero start")
    return 0


_RUNNERS = {
    "gen-data": _cmd_gen_data,
    "solve": _cmd_solve,
    "train-sup": _cmd_train_sup,
    "train-unsup": _cmd_train_unsup,
    "eval": _cmd_eval,
    "rates": _cmd_rates,
    "warmstart": _cmd_warmstart,
    "darcy-demo": _cmd_darcy_demo,
}


def run_cli(argv=None):
    parser, specs = _build()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        opts = _merge(args, specs[args.command])
        return _RUNNERS[args.command](opts)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
