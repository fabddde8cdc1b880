"""Command line front end.

Exit codes: 0 success, 1 input/output problems, 2 model specification or
data problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from .errors import DynpanelError, InputOutputError
from .fit import PanelFit, fit
from .formula import parse_formula
from .panel import PanelData, load_panel
from .posterior import diagnostics_table, extract, fit_summary, sampler_summary
from .predict import fitted, parse_funs, predict
from .priors import default_priors, priors_to_frame, read_priors
from .simulate import read_truth, simulate, write_simulation

# config-file keys that take numbers
_INT_KEYS = {"chains", "iter_warmup", "iter_sampling", "seed", "cores", "max_treedepth", "n_draws"}
_FLOAT_KEYS = {"target_accept", "init_radius"}


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes equal underscores."""
    p = Path(path)
    if not p.exists():
        raise InputOutputError(f"config file not found: {path}")
    out = {}
    for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DynpanelError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        value = value.strip("\"'")
        if key in _INT_KEYS:
            value = int(value)
        elif key in _FLOAT_KEYS:
            value = float(value)
        out[key] = value
    return out


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise InputOutputError(f"file not found: {path}")
    return p.read_text(encoding="utf-8")


def _load_data(args) -> PanelData:
    if not args.data:
        raise DynpanelError("--data is required")
    if not args.time:
        raise DynpanelError("--time is required")
    return load_panel(args.data, args.time, args.group)


def _write_table(df: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out, index=False, na_rep="NA", float_format="%.10g")
    else:
        df.to_csv(sys.stdout, index=False, na_rep="NA", float_format="%.10g")


def _load_fit(args) -> PanelFit:
    if not args.fit:
        raise DynpanelError("--fit (a fit directory written by the fit command) is required")
    if not Path(args.fit).is_dir():
        raise InputOutputError(f"fit directory not found: {args.fit}")
    return PanelFit.load(args.fit)


def _newdata(args) -> Optional[pd.DataFrame]:
    if not getattr(args, "newdata", None):
        return None
    if not Path(args.newdata).exists():
        raise InputOutputError(f"file not found: {args.newdata}")
    return pd.read_csv(args.newdata, na_values=["", "NA"], keep_default_na=False)


def _list(text: Optional[str]) -> Optional[list[str]]:
    return None if text is None else [s.strip() for s in text.split(",") if s.strip()]


# commands ----------------------------------------------------------------------

def cmd_fit(args) -> int:
    if not args.formula:
        raise DynpanelError("--formula is required")
    text = _read_text(args.formula)
    data = _load_data(args)
    priors = read_priors(args.priors) if args.priors else None
    if not args.out:
        raise DynpanelError("--out (fit directory) is required")
    res = fit(text, data, args.time, args.group, priors, chains=args.chains,
              iter_warmup=args.iter_warmup, iter_sampling=args.iter_sampling, seed=args.seed,
              cores=args.cores, target_accept=args.target_accept, max_treedepth=args.max_treedepth,
              init_radius=args.init_radius)
    res.data_name = Path(args.data).name
    res.save(args.out)
    print(f"fit written to {args.out}")
    return 0


def cmd_priors(args) -> int:
    if not args.formula:
        raise DynpanelError("--formula is required")
    f = parse_formula(_read_text(args.formula))
    _write_table(priors_to_frame(default_priors(f, _load_data(args))), args.out)
    return 0


def cmd_summary(args) -> int:
    res = _load_fit(args)
    if args.table:
        probs = [float(p) for p in _list(args.probs)] if args.probs else (0.05, 0.95)
        tab = extract(res, parameters=_list(args.parameters), responses=_list(args.responses),
                      types=_list(args.types), summary=True, probs=probs,
                      include_fixed=not args.exclude_fixed)
        _write_table(tab, args.out)
        return 0
    text = fit_summary(res)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_diagnostics(args) -> int:
    res = _load_fit(args)
    tab = diagnostics_table(res)
    s = sampler_summary(res)
    _write_table(tab, args.out)
    ebfmi = ", ".join(f"{e:.3f}" for e in s.ebfmi)
    print(f"divergences: {s.divergences}; max treedepth hits: {s.max_treedepth_hits}; E-BFMI: {ebfmi}",
          file=sys.stderr)
    return 0


def cmd_fitted(args) -> int:
    res = _load_fit(args)
    out = fitted(res, _newdata(args), new_levels=args.new_levels, n_draws=args.n_draws,
                 seed=args.seed, cores=args.cores)
    _write_table(out, args.out)
    return 0


def cmd_predict(args) -> int:
    res = _load_fit(args)
    funs = parse_funs(args.funs) if args.funs else None
    pred = predict(res, _newdata(args), type=args.type, funs=funs, impute=args.impute,
                   new_levels=args.new_levels, n_draws=args.n_draws, expand=args.expand,
                   seed=args.seed, cores=args.cores)
    if pred.summary is not None or pred.expanded is not None:
        _write_table(pred.table, args.out)
        return 0
    _write_table(pred.simulated, args.out)
    if args.out:
        p = Path(args.out)
        _write_table(pred.observed, str(p.with_name(p.stem + "_observed" + p.suffix)))
    return 0


def cmd_simulate(args) -> int:
    if not args.formula or not args.truth:
        raise DynpanelError("--formula and --truth are required")
    text = _read_text(args.formula)
    truth = read_truth(args.truth)
    sim = simulate(text, truth, seed=args.seed)
    if not args.out:
        raise DynpanelError("--out (data CSV) is required")
    truth_out = args.truth_out or str(Path(args.out).with_name(Path(args.out).stem + "_truth.csv"))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_simulation(sim, args.out, truth_out)
    return 0


# parser ------------------------------------------------------------------------

def _shared(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="key = value file with defaults for any flag")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--out", help="output file or directory")
    if data:
        p.add_argument("--formula", help="model formula file")
        p.add_argument("--data", help="panel data CSV")
        p.add_argument("--time", help="time index column")
        p.add_argument("--group", help="group column (omit for a single series)")


def _predict_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fit", help="fit directory")
    p.add_argument("--newdata", help="CSV; missing responses are simulated")
    p.add_argument("--new-levels", default="none", choices=["none", "bootstrap", "gaussian", "original"])
    p.add_argument("--n-draws", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynpanel", description="Bayesian dynamic multivariate panel models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate a model and write a fit directory")
    _shared(p)
    p.add_argument("--priors", help="prior table CSV (as written by the priors command)")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iter-warmup", type=int, default=1000)
    p.add_argument("--iter-sampling", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-treedepth", type=int, default=10)
    p.add_argument("--init-radius", type=float, default=2.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("priors", help="write the editable default prior table")
    _shared(p)
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("summary", help="text report or parameter summary table of a fit")
    _shared(p, data=False)
    p.add_argument("--fit", help="fit directory")
    p.add_argument("--table", action="store_true", help="write the parameter summary CSV instead")
    p.add_argument("--parameters")
    p.add_argument("--responses")
    p.add_argument("--types")
    p.add_argument("--probs", help="comma separated quantile probabilities")
    p.add_argument("--exclude-fixed", action="store_true")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("diagnostics", help="per-parameter R-hat and ESS table")
    _shared(p, data=False)
    p.add_argument("--fit", help="fit directory")
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("fitted", help="expected values given the observed history")
    _shared(p, data=False)
    _predict_flags(p)
    p.set_defaults(func=cmd_fitted)

    p = sub.add_parser("predict", help="posterior predictive and counterfactual simulation")
    _shared(p, data=False)
    _predict_flags(p)
    p.add_argument("--type", default="response", choices=["response", "mean", "link"])
    p.add_argument("--funs", help='summary functions, e.g. "g:mean_t=mean,sd;y:mean"')
    p.add_argument("--impute", default="none", choices=["none", "locf"])
    p.add_argument("--expand", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="synthetic panel from a formula and true parameters")
    _shared(p, data=False)
    p.add_argument("--formula", help="model formula file")
    p.add_argument("--truth", help="JSON file with dimensions and true parameters")
    p.add_argument("--truth-out", help="ground-truth CSV (default <out>_truth.csv)")
    p.set_defaults(func=cmd_simulate)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise DynpanelError(f"unknown config key(s): {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.seed is None and args.command != "simulate":
        args.seed = 0
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return args.func(args)
    except DynpanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
