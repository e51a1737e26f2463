"""Command-line surface: generate data, fit models, run tests, and emit
plot-ready prediction curves, correlation curves, and ellipse parameters.

Exit codes: 0 success (possibly with warnings), 2 usage error, 3 I/O error,
4 estimation failure.  Every output document embeds the tool version, seed,
and input hash, and reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .baseline import fit_bilinear, fit_mlr, fit_ols, fit_variance_function, fit_wls
from .covreg import (
    CovRegPosterior,
    CovRegSpec,
    GibbsProtocol,
    correlation_curves,
    ellipse_from_cov,
    fit_covreg_em,
    fit_covreg_gibbs,
    mean_covariance_at,
    prediction_ellipse,
)
from .dataset import build_stripes, load_dataset, polynomial_basis, save_dataset, stripe_summary
from .diagnostics import breusch_pagan, white_test
from .errors import HetPsdmError
from .harvey import (
    ChainProtocol,
    HarveyFit,
    HarveyPosterior,
    HarveySpec,
    fit_harvey_bayes,
    fit_harvey_mle,
    harvey_predict,
)
from .stochastics import ChainDiagnostics
from .synth import PRESETS, generate_multivariate, generate_univariate, load_truth, save_truth, table1_grid, UnivariateTruth

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ESTIMATION = 4

FIT_MODELS = (
    "ols",
    "wls",
    "bilinear",
    "varfunc",
    "mlr",
    "harvey-mle",
    "harvey-bayes",
    "covreg-em",
    "covreg-gibbs",
)


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(doc, path):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _parse_grid(spec):
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise UsageError(f"bad grid spec {spec!r}; expected start:stop:step")
    if step <= 0:
        raise UsageError("grid step must be positive")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _document(model, args, data_path, extra):
    doc = {
        "tool": "hetpsdm",
        "version": __version__,
        "model": model,
        "seed": getattr(args, "seed", None),
        "input": data_path,
        "input_sha256": _sha256(data_path) if data_path else None,
        "warnings": [],
    }
    doc.update(extra)
    return doc


def cmd_generate(args):
    if args.truth:
        truth = load_truth(args.truth)
    else:
        if args.preset not in PRESETS:
            raise UsageError(
                f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}"
            )
        truth = PRESETS[args.preset]()
    grid = table1_grid(records_per_level=args.records)
    if isinstance(truth, UnivariateTruth):
        data = generate_univariate(truth, grid, seed=args.seed)
    else:
        data = generate_multivariate(truth, grid, seed=args.seed)
    save_dataset(data, args.output)
    save_truth(truth, str(args.output) + ".truth.json")
    print(f"{data.n} rows written to {args.output}")
    return 0


def _mean_design(data, degree):
    return polynomial_basis(data.x, degree)


def _harvey_draws_csv(post: HarveyPosterior, path):
    names = list(post.param_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*names, "chain", "iter"])
        n_chains, n_draws, _ = post.chains.shape
        for c in range(n_chains):
            for d in range(n_draws):
                writer.writerow(
                    ["%.17g" % v for v in post.chains[c, d]] + [c, d]
                )


def _covreg_draws_csv(post: CovRegPosterior, path):
    p = post.p
    q = post.spec.q
    r = post.spec.rank
    header = []
    for j in range(p):
        for k in range(q):
            header.append(f"A_{j}_{k}")
    for b in range(r):
        for j in range(p):
            for k in range(q):
                header.append(f"B{b + 1}_{j}_{k}")
    for j in range(p):
        for k in range(p):
            header.append(f"Psi_{j}_{k}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["iter"])
        for d in range(post.n_draws):
            C = post.C_draws[d]
            row = ["%.17g" % v for v in C[:, :q].ravel()]
            for b in range(r):
                row += ["%.17g" % v for v in C[:, q * (b + 1) : q * (b + 2)].ravel()]
            row += ["%.17g" % v for v in post.Psi_draws[d].ravel()]
            writer.writerow(row + [d])


def _load_covreg_draws(path, p, q, r):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row[:-1]] for row in reader]
    arr = np.asarray(rows)
    nA = p * q
    nB = r * p * q
    C_draws = np.empty((len(arr), p, q * (r + 1)))
    C_draws[:, :, :q] = arr[:, :nA].reshape(-1, p, q)
    for b in range(r):
        C_draws[:, :, q * (b + 1) : q * (b + 2)] = arr[
            :, nA + b * p * q : nA + (b + 1) * p * q
        ].reshape(-1, p, q)
    Psi_draws = arr[:, nA + nB :].reshape(-1, p, p)
    return C_draws, Psi_draws


def cmd_fit(args):
    data = load_dataset(args.data, intensity_col=args.intensity_col)
    model = args.model
    extra = {"demand_index": args.demand}
    if model in ("ols", "wls"):
        X = _mean_design(data, args.degree)
        y = data.demand(args.demand)
        if model == "wls":
            w = np.ones(data.n) if args.weights is None else np.loadtxt(args.weights)
            fit = fit_wls(y, X, w)
        else:
            fit = fit_ols(y, X)
        extra["params"] = {
            "coeffs": fit.coeffs.tolist(),
            "sigma": fit.sigma,
            "n": fit.n,
            "dof": fit.dof,
            "degree": args.degree,
        }
    elif model == "bilinear":
        fit = fit_bilinear(data.demand(args.demand), data.x)
        extra["params"] = {
            "theta01": fit.theta01,
            "theta11": fit.theta11,
            "theta21": fit.theta21,
            "theta_sa": fit.theta_sa,
            "sigma1": fit.sigma1,
            "sigma2": fit.sigma2,
            "n1": fit.n1,
            "n2": fit.n2,
        }
    elif model == "varfunc":
        stripes = build_stripes(data, tolerance=args.stripe_tolerance)
        summ = [s for s in stripe_summary(data, stripes) if s.std is not None]
        im = np.exp(np.array([s.level for s in summ]))
        sig = np.array([s.std[args.demand] for s in summ])
        fit = fit_variance_function(im, sig, log_im=args.log_im)
        extra["params"] = {
            "beta1": fit.beta1,
            "beta2": fit.beta2,
            "beta3": fit.beta3,
            "log_im": fit.log_im,
            "negative_prediction": fit.negative_prediction,
        }
    elif model == "mlr":
        fit = fit_mlr(data.y, data.x)
        extra["params"] = {
            "beta0": fit.beta0.tolist(),
            "beta1": fit.beta1.tolist(),
            "Sigma": fit.Sigma.tolist(),
            "n": fit.n,
        }
    elif model == "harvey-mle":
        spec = HarveySpec(mean_degree=args.degree, var_degree=args.var_degree)
        fit = fit_harvey_mle(data, args.demand, spec)
        extra["spec"] = {"mean_degree": spec.mean_degree, "var_degree": spec.var_degree}
        extra["params"] = {
            "beta": fit.beta.tolist(),
            "gamma": fit.gamma.tolist(),
            "loglik": fit.loglik,
            "iterations": fit.iterations,
        }
    elif model == "harvey-bayes":
        spec = HarveySpec(mean_degree=args.degree, var_degree=args.var_degree)
        protocol = ChainProtocol(
            chains=args.chains,
            iterations=args.iters,
            thin=args.thin,
            burn_fraction=args.burn_fraction,
        )
        post = fit_harvey_bayes(
            data, args.demand, spec, protocol=protocol, seed=args.seed
        )
        pooled = post.draws
        extra["spec"] = {"mean_degree": spec.mean_degree, "var_degree": spec.var_degree}
        extra["protocol"] = {
            "chains": protocol.chains,
            "iterations": protocol.iterations,
            "thin": protocol.thin,
            "burn_fraction": protocol.burn_fraction,
        }
        extra["params"] = {
            "posterior_mean": dict(
                zip(post.param_names, (float(v) for v in pooled.mean(axis=0)))
            )
        }
        extra["diagnostics"] = {
            "r_hat": dict(zip(post.param_names, post.diagnostics.r_hat.tolist())),
            "mcse": dict(zip(post.param_names, post.diagnostics.mcse.tolist())),
            "ess": dict(zip(post.param_names, post.diagnostics.ess.tolist())),
            "accept_rate": post.accept_rate.tolist(),
        }
        if not post.converged:
            extra.setdefault("_warnings", []).append(
                "convergence diagnostics exceed thresholds (R-hat or MCSE)"
            )
        if args.draws:
            _harvey_draws_csv(post, args.draws)
            extra["draws_file"] = args.draws
    elif model == "covreg-em":
        spec = CovRegSpec(rank=args.rank, basis_degree=args.degree)
        fit = fit_covreg_em(data, spec, seed=args.seed)
        extra["spec"] = {"rank": spec.rank, "basis_degree": spec.basis_degree}
        extra["params"] = {
            "A": fit.A.tolist(),
            "B": [Bk.tolist() for Bk in fit.B],
            "Psi": fit.Psi.tolist(),
            "loglik": fit.loglik,
            "iterations": fit.iterations,
        }
    elif model == "covreg-gibbs":
        spec = CovRegSpec(rank=args.rank, basis_degree=args.degree)
        protocol = GibbsProtocol(
            iterations=args.iters if args.iters else 15000,
            thin=args.thin,
            burn_retained=args.burn_retained,
        )
        post = fit_covreg_gibbs(data, spec, protocol=protocol, seed=args.seed)
        extra["spec"] = {"rank": spec.rank, "basis_degree": spec.basis_degree}
        extra["protocol"] = {
            "iterations": protocol.iterations,
            "thin": protocol.thin,
            "burn_retained": protocol.burn_retained,
        }
        extra["params"] = {
            "p": post.p,
            "n_draws": post.n_draws,
            "posterior_mean_Psi": post.Psi_draws.mean(axis=0).tolist(),
        }
        if args.draws:
            _covreg_draws_csv(post, args.draws)
            extra["draws_file"] = args.draws
    else:
        raise UsageError(f"unknown model {model!r}")
    warnings = extra.pop("_warnings", [])
    doc = _document(model, args, args.data, extra)
    doc["warnings"] = warnings
    _write_json(doc, args.output)
    return 0


def cmd_test(args):
    data = load_dataset(args.data, intensity_col=args.intensity_col)
    y = data.demand(args.demand)
    if args.fit:
        with open(args.fit, "r", encoding="utf-8") as fh:
            fdoc = json.load(fh)
        coeffs = np.asarray(fdoc["params"]["coeffs"], dtype=float)
        degree = int(fdoc["params"].get("degree", len(coeffs) - 1))
        X = _mean_design(data, degree)
        residuals = y - X @ coeffs
    else:
        X = _mean_design(data, args.degree)
        residuals = y - X @ fit_ols(y, X).coeffs
    if args.method == "bp":
        result = breusch_pagan(residuals, X, studentized=not args.original)
    elif args.method == "white":
        result = white_test(residuals, X)
    else:
        raise UsageError(f"unknown method {args.method!r}")
    doc = _document(
        f"test-{args.method}",
        args,
        args.data,
        {
            "statistic": result.statistic,
            "dof": result.dof,
            "p_value": result.p_value,
            "variant": result.variant,
        },
    )
    _write_json(doc, args.output)
    print(
        f"{args.method} ({result.variant}): statistic={result.statistic:.4f} "
        f"dof={result.dof} p={result.p_value:.4g}"
    )
    return 0


def _load_harvey_from_fit(args):
    with open(args.fit, "r", encoding="utf-8") as fh:
        fdoc = json.load(fh)
    model = fdoc.get("model")
    spec = HarveySpec(
        mean_degree=int(fdoc["spec"]["mean_degree"]),
        var_degree=int(fdoc["spec"]["var_degree"]),
    )
    if model == "harvey-mle":
        return HarveyFit(
            beta=np.asarray(fdoc["params"]["beta"], dtype=float),
            gamma=np.asarray(fdoc["params"]["gamma"], dtype=float),
            loglik=float(fdoc["params"]["loglik"]),
            iterations=int(fdoc["params"]["iterations"]),
            converged=True,
            spec=spec,
        )
    if model == "harvey-bayes":
        draws_path = args.draws or fdoc.get("draws_file")
        if not draws_path:
            raise UsageError("harvey-bayes prediction needs a draws CSV")
        with open(draws_path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        dim = len(header) - 2
        chain_col = np.array([int(r[-2]) for r in rows])
        vals = np.asarray([[float(v) for v in r[:dim]] for r in rows])
        n_chains = chain_col.max() + 1
        chains = np.stack(
            [vals[chain_col == c] for c in range(n_chains)], axis=0
        )
        protocol = ChainProtocol(**{
            k: fdoc["protocol"][k]
            for k in ("chains", "iterations", "thin", "burn_fraction")
        })
        return HarveyPosterior(
            chains=chains,
            param_names=tuple(header[:dim]),
            spec=spec,
            protocol=protocol,
            diagnostics=ChainDiagnostics.from_chains(chains),
            accept_rate=np.zeros(n_chains),
            converged=True,
            seed=int(fdoc.get("seed") or 0),
        )
    raise UsageError(f"fit document model {model!r} is not a univariate model")


def cmd_predict(args):
    model_fit = _load_harvey_from_fit(args)
    grid = _parse_grid(args.grid)
    pred = harvey_predict(model_fit, grid, level=args.level)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["grid_x", "mean", "sd", "cred_lo", "cred_hi", "pred_lo", "pred_hi"]
        )
        for i, g in enumerate(grid):
            writer.writerow(
                "%.12g" % v
                for v in (
                    g,
                    pred.mean_curve[i],
                    pred.sd_curve[i],
                    pred.credible_band[0][i],
                    pred.credible_band[1][i],
                    pred.prediction_band[0][i],
                    pred.prediction_band[1][i],
                )
            )
    print(f"{len(grid)} rows written to {args.output}")
    return 0


def _load_covreg_posterior(args):
    with open(args.fit, "r", encoding="utf-8") as fh:
        fdoc = json.load(fh)
    if fdoc.get("model") != "covreg-gibbs":
        raise UsageError("expected a covreg-gibbs fit document")
    spec = CovRegSpec(
        rank=int(fdoc["spec"]["rank"]),
        basis_degree=int(fdoc["spec"]["basis_degree"]),
    )
    p = int(fdoc["params"]["p"])
    draws_path = args.draws or fdoc.get("draws_file")
    if not draws_path:
        raise UsageError("covreg-gibbs curves/ellipses need a draws CSV")
    C_draws, Psi_draws = _load_covreg_draws(draws_path, p, spec.q, spec.rank)
    protocol = GibbsProtocol(**{
        k: fdoc["protocol"][k] for k in ("iterations", "thin", "burn_retained")
    })
    return CovRegPosterior(
        C_draws=C_draws,
        Psi_draws=Psi_draws,
        spec=spec,
        protocol=protocol,
        diagnostics=None,
        seed=int(fdoc.get("seed") or 0),
        p=p,
    )


def cmd_curves(args):
    post = _load_covreg_posterior(args)
    grid = _parse_grid(args.grid)
    curves = correlation_curves(post, grid, level=args.level)
    pairs = sorted(curves)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["grid_x"]
        for j, k in pairs:
            tag = f"rho_{j + 1}{k + 1}"
            header += [f"{tag}_med", f"{tag}_lo", f"{tag}_hi"]
        writer.writerow(header)
        for i, g in enumerate(grid):
            row = ["%.12g" % g]
            for pair in pairs:
                med, lo, hi = curves[pair]
                row += ["%.12g" % med[i], "%.12g" % lo[i], "%.12g" % hi[i]]
            writer.writerow(row)
    print(f"{len(grid)} rows written to {args.output}")
    return 0


def cmd_ellipse(args):
    try:
        j, k = (int(v) - 1 for v in args.pair.split(","))
    except ValueError:
        raise UsageError(f"bad pair {args.pair!r}; expected e.g. 1,3")
    with open(args.fit, "r", encoding="utf-8") as fh:
        fdoc = json.load(fh)
    if fdoc.get("model") == "covreg-em":
        from .covreg import CovRegFit

        spec = CovRegSpec(
            rank=int(fdoc["spec"]["rank"]),
            basis_degree=int(fdoc["spec"]["basis_degree"]),
        )
        fit = CovRegFit(
            A=np.asarray(fdoc["params"]["A"], dtype=float),
            B=tuple(np.asarray(b, dtype=float) for b in fdoc["params"]["B"]),
            Psi=np.asarray(fdoc["params"]["Psi"], dtype=float),
            loglik=float(fdoc["params"]["loglik"]),
            iterations=int(fdoc["params"]["iterations"]),
            converged=True,
            spec=spec,
        )
        ells = [
            prediction_ellipse(fit, x, pair=(j, k), level=args.level)
            for x in args.at
        ]
    elif fdoc.get("model") == "covreg-gibbs":
        post = _load_covreg_posterior(args)
        ells = []
        for x in args.at:
            S = mean_covariance_at(post, x)[np.ix_([j, k], [j, k])]
            ells.append(ellipse_from_cov(S, level=args.level))
    else:
        raise UsageError("expected a covreg-em or covreg-gibbs fit document")
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["grid_x", "center_1", "center_2", "semi_major", "semi_minor", "angle_rad"]
        )
        for x, e in zip(args.at, ells):
            writer.writerow(
                "%.12g" % v
                for v in (x, e.center[0], e.center[1], e.semi_axes[0], e.semi_axes[1], e.angle)
            )
    print(f"{len(ells)} ellipse rows written to {args.output}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hetpsdm",
        description="Heteroscedastic probabilistic demand-intensity modeling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic MSA dataset")
    g.add_argument("--preset", default="paper-like")
    g.add_argument("--truth", help="truth JSON path (overrides --preset)")
    g.add_argument("--records", type=int, default=80)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a model to a dataset")
    f.add_argument("--model", required=True, choices=FIT_MODELS)
    f.add_argument("--data", required=True)
    f.add_argument("--demand", type=int, default=0)
    f.add_argument("--degree", type=int, default=None)
    f.add_argument("--var-degree", type=int, default=3)
    f.add_argument("--rank", type=int, default=3)
    f.add_argument("--chains", type=int, default=4)
    f.add_argument("--iters", type=int, default=None)
    f.add_argument("--thin", type=int, default=10)
    f.add_argument("--burn-fraction", type=float, default=0.5)
    f.add_argument("--burn-retained", type=int, default=200)
    f.add_argument("--weights", help="optional weights file for wls")
    f.add_argument("--stripe-tolerance", type=float, default=1e-9)
    f.add_argument("--log-im", action="store_true")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--intensity-col", default="im")
    f.add_argument("--draws", help="optional draws CSV output")
    f.add_argument("-o", "--output", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("test", help="run a heteroscedasticity test")
    t.add_argument("--method", required=True, choices=("bp", "white"))
    t.add_argument("--data", required=True)
    t.add_argument("--fit", help="optional linear fit JSON supplying residual model")
    t.add_argument("--demand", type=int, default=0)
    t.add_argument("--degree", type=int, default=1)
    t.add_argument("--original", action="store_true", help="original LM variant of BP")
    t.add_argument("--intensity-col", default="im")
    t.add_argument("-o", "--output", default="-")
    t.set_defaults(func=cmd_test)

    p = sub.add_parser("predict", help="emit prediction curves from a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--draws", help="draws CSV for posterior fits")
    p.add_argument("--grid", required=True, help="start:stop:step in log-intensity")
    p.add_argument("--level", type=float, default=0.90)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("curves", help="emit correlation curves from a posterior")
    c.add_argument("--fit", required=True)
    c.add_argument("--draws", help="draws CSV if not recorded in the fit document")
    c.add_argument("--grid", required=True)
    c.add_argument("--level", type=float, default=0.90)
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_curves)

    e = sub.add_parser("ellipse", help="emit prediction ellipse parameters")
    e.add_argument("--fit", required=True)
    e.add_argument("--draws")
    e.add_argument("--pair", required=True, help="1-based pair, e.g. 1,3")
    e.add_argument("--level", type=float, default=0.90)
    e.add_argument("--at", type=float, nargs="+", required=True)
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_ellipse)

    return parser


def _default_degree(args):
    # linear mean for the baseline models, cubic for the generalized ones
    if args.command == "fit" and args.degree is None:
        if args.model in ("ols", "wls"):
            args.degree = 1
        else:
            args.degree = 3


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    _default_degree(args)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HetPsdmError as exc:
        print(f"estimation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
