"""Command-line entry points for simulation, fitting, testing and the
Monte Carlo harnesses.

Every command reads a TOML model config, validates it before doing any
work, and writes its payload files plus a side manifest recording the
config hash, seed and library versions.  All output bytes, manifests
included, are deterministic given identical flags and seed.

Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 unstable
model where stability is required.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys

import numpy as np

from . import chibar as _chibar
from . import estimate as _estimate
from . import likelihood as _likelihood
from . import model as _model
from . import simulate as _simulate
from . import test as _test
from . import volterra as _volterra

__all__ = ["main", "build_parser"]


# ---------------------------------------------------------------------------
# small shared helpers


def _read_config(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    spec, theta = _model.spec_from_toml(raw.decode("utf-8"))
    return spec, theta, raw


def _need_theta(theta, what):
    if theta is None:
        raise ValueError(f"{what} needs a [theta] section in the config")
    return theta


def parse_pattern(text: str, K: int):
    """Cells "k,l;k,l" with 1-based coordinates."""
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(",")
        if len(bits) != 2:
            raise ValueError(f"bad pattern cell {part!r}, want k,l")
        try:
            k, l = int(bits[0]), int(bits[1])
        except ValueError:
            raise ValueError(f"bad pattern cell {part!r}, want integers") from None
        if not (1 <= k <= K and 1 <= l <= K):
            raise ValueError(f"pattern cell ({k},{l}) outside a {K}x{K} grid")
        cells.append((k - 1, l - 1))
    if not cells:
        raise ValueError("empty pattern")
    return cells


def parse_grid(text: str):
    """Arithmetic grid "start:step:count"."""
    bits = text.split(":")
    if len(bits) != 3:
        raise ValueError(f"bad grid {text!r}, want start:step:count")
    start, step = float(bits[0]), float(bits[1])
    count = int(bits[2])
    if count < 1:
        raise ValueError("grid count must be >= 1")
    return [start + i * step for i in range(count)]


def _versions():
    import numba
    import scipy
    try:
        from importlib.metadata import version
        own = version("sparsehawkes")
    except Exception:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__,
            "sparsehawkes": own}


def _validation_dict(spec, theta):
    if theta is None:
        return {"stable": None, "messages": ["no [theta] in config"]}
    rep = _model.validate(spec, theta)
    return {"stable": rep.stable, "spectral_radius": rep.spectral_radius,
            "messages": list(rep.messages)}


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float)
                              else str(v) for v in row) + "\n")


def _manifest(command, config_path, config_bytes, seed, outputs,
              validation=None):
    man = {
        "command": command,
        "config": {"path": str(config_path),
                   "sha256": hashlib.sha256(config_bytes).hexdigest()},
        "seed": seed,
        "versions": _versions(),
        "outputs": list(outputs),
    }
    if validation is not None:
        man["validation"] = validation
    return man


def _manifest_path(primary_out):
    return str(primary_out) + ".manifest.json"


def _require_stable(spec, theta, what):
    rep = _model.validate(spec, theta)
    if not rep.stable:
        raise _model.UnstableModel(
            f"{what} needs a stable model; spectral radius "
            f"{rep.spectral_radius:.6g} >= 1")
    return rep


# ---------------------------------------------------------------------------
# mixture assembly for the known / mc weight tests


def _tested_slots(spec, cells):
    lay = spec.layout
    slots = []
    for (k, l) in cells:
        s = lay.alpha_slots[k, l]
        if s == -1:
            raise ValueError(f"tested cell ({k + 1},{l + 1}) is a structural zero")
        j = lay.alpha_flat_index(s)
        if j not in slots:
            slots.append(j)
    return slots


def _metric_tested_first(spec, theta, cells):
    """Information over free slots, tested coordinates permuted to the front.

    Slots frozen by the bounds and decay slots that are dead when every
    tested cell sits at zero carry no information and are dropped.
    """
    rep = _volterra.information_report(spec, theta)
    info = rep["matrix"]
    tested = _tested_slots(spec, cells)
    dead = {spec.layout.beta_flat_index(b)
            for b in _estimate._dead_beta_slots(
                spec, _model.pattern_slots(spec, cells))}
    free = [j for j in range(spec.layout.d)
            if spec.lo[j] < spec.hi[j] and j not in dead]
    for j in tested:
        if j not in free:
            raise ValueError("a tested slot is frozen by its bounds")
    perm = tested + [j for j in free if j not in tested]
    return info[np.ix_(perm, perm)], len(tested)


def _mixture_for(spec, theta, cells, method, draws, seed):
    p = len(_tested_slots(spec, cells))
    if method == "known" and p == 1:
        return _chibar.weights_closed_form(1)
    A, p = _metric_tested_first(spec, theta, cells)
    if method == "known":
        if p == 2:
            sigma = np.linalg.inv(A)[:2, :2]
            return _chibar.weights_closed_form_p2(np.linalg.inv(sigma))
        raise ValueError(f"no closed-form weights for p = {p}; use --method mc")
    return _chibar.mc_weights(A, p, draws=draws, seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    spec, theta, raw = _read_config(args.config)
    _need_theta(theta, "simulate")
    val = _require_stable(spec, theta, "simulate")
    data = _simulate.simulate_dataset(spec, theta, n=args.n,
                                      master_seed=args.seed)
    _simulate.save_jsonl(data, args.out)
    man = _manifest("simulate", args.config, raw, args.seed, [args.out],
                    {"stable": True, "spectral_radius": val.spectral_radius,
                     "messages": list(val.messages)})
    _write_json(man, _manifest_path(args.out))
    return 0


def _fit_options(args):
    return _estimate.FitOptions(n_starts=args.starts, epsilon=args.epsilon,
                                start_seed=args.seed)


def cmd_fit(args) -> int:
    spec, theta, raw = _read_config(args.config)
    data = _simulate.load_jsonl(args.data)
    pattern = parse_pattern(args.pattern, spec.K) if args.pattern else ()
    options = _fit_options(args)
    if args.strategy == "aggregate":
        ctx = _likelihood.build_context(spec, _simulate.aggregate(data), data.n)
        res = _estimate.fit(ctx, spec, pattern, options)
    elif args.strategy == "pooled":
        res = _estimate.fit_strategy_pooled(data, spec, pattern, options)
    else:
        res = _estimate.fit_strategy_averaged(data, spec, pattern, options)
    _write_json(res.to_json_dict(), args.out)
    man = _manifest("fit", args.config, raw, args.seed, [args.out],
                    _validation_dict(spec, res.theta_hat))
    _write_json(man, _manifest_path(args.out))
    return 0 if res.converged else 3


def cmd_test(args) -> int:
    spec, theta, raw = _read_config(args.config)
    data = _simulate.load_jsonl(args.data)
    cells = parse_pattern(args.pattern, spec.K)
    options = _fit_options(args)
    ctx = _likelihood.build_context(spec, _simulate.aggregate(data), data.n)
    null = _estimate.fit(ctx, spec, cells, options)
    full = _estimate.fit(ctx, spec, (), options, warm_starts=(null.theta_hat,))
    lam = _test.lrs(full, null)
    if args.method == "conditional":
        res = _test.test_conditional_susko(lam, full, cells, args.level,
                                           args.epsilon, fits=(full, null))
    else:
        mix = _mixture_for(spec, null.theta_hat, cells, args.method,
                           args.mc_draws, args.seed)
        res = _test.test_known_weights(lam, mix, args.level, fits=(full, null))
    _write_json(res.to_json_dict(), args.out)
    man = _manifest("test", args.config, raw, args.seed, [args.out],
                    _validation_dict(spec, null.theta_hat))
    _write_json(man, _manifest_path(args.out))
    return 0 if (full.converged and null.converged) else 3


def cmd_calibrate(args) -> int:
    spec, theta0, raw = _read_config(args.config)
    _need_theta(theta0, "calibrate")
    val = _require_stable(spec, theta0, "calibrate")
    cells = parse_pattern(args.pattern, spec.K)
    fit_spec = None
    if args.fit_config:
        fit_spec, _, _ = _read_config(args.fit_config)
    levels = tuple(float(v) for v in args.levels.split(","))
    method = {"known": "known_weights", "mc": "mc_weights",
              "conditional": "conditional"}[args.method]
    mixture = None
    if method != "conditional":
        mspec = fit_spec if fit_spec is not None else spec
        mtheta = theta0
        if fit_spec is not None and _model.check_theta(fit_spec, theta0):
            mtheta = None  # truth invalid under the fitted model
        if len(cells) == 1:
            mixture = _chibar.weights_closed_form(1)
        elif mtheta is not None:
            mixture = _mixture_for(mspec, mtheta, cells,
                                   "known" if method == "known_weights" else "mc",
                                   args.mc_draws, args.seed)
        else:
            raise ValueError("cannot derive mixture weights: truth is invalid "
                             "under --fit-config; use p=1 or --method conditional")
    rep = _test.calibrate_level(spec, theta0, cells, n=args.n, reps=args.reps,
                                method=method, seed=args.seed, levels=levels,
                                mixture=mixture, epsilon=args.epsilon,
                                fit_spec=fit_spec, options=_fit_options(args))
    outs = []
    path = args.out_prefix + "level.csv"
    _write_csv(path, ("level", "rate", "se"), rep.level_rows())
    outs.append(path)
    path = args.out_prefix + "qq.csv"
    _write_csv(path, ("q_empirical", "q_theoretical"), rep.qq_rows())
    outs.append(path)
    if method == "conditional":
        path = args.out_prefix + "strata.csv"
        rows = []
        for (phat, count, rejects) in rep.strata:
            for lv, rj in zip(rep.levels, rejects):
                rows.append((phat, count, lv, rj / count))
        _write_csv(path, ("zeros", "count", "level", "rate"), rows)
        outs.append(path)
    man = _manifest("calibrate", args.config, raw, args.seed, outs,
                    {"stable": True, "spectral_radius": val.spectral_radius,
                     "messages": list(val.messages),
                     "excluded": rep.excluded, "zero_mass": rep.zero_mass})
    _write_json(man, args.out_prefix + "manifest.json")
    return 0


def cmd_power(args) -> int:
    spec, theta, raw = _read_config(args.config)
    _need_theta(theta, "power")
    cells = parse_pattern(args.pattern, spec.K)
    fit_spec = None
    if args.fit_config:
        fit_spec, _, _ = _read_config(args.fit_config)
    grid = []
    for a in parse_grid(args.alpha_grid):
        alpha = np.asarray(theta.alpha, dtype=float).copy()
        for (k, l) in cells:
            alpha[k, l] = a
        th = _model.make_theta(spec, theta.gamma, alpha, theta.beta)
        _require_stable(spec, th, f"power grid point alpha={a:g}")
        grid.append((a, th))
    mixture = None
    if args.method != "conditional" and len(_tested_slots(spec, cells)) > 1:
        raise ValueError("power with p > 1 needs --method conditional")
    method = "conditional" if args.method == "conditional" else "known_weights"
    pts = _test.power_curve(spec, grid, cells, n=args.n,
                            reps_per_point=args.reps, level=args.level,
                            seed=args.seed, method=method, mixture=mixture,
                            epsilon=args.epsilon, fit_spec=fit_spec,
                            options=_fit_options(args))
    _write_csv(args.out, ("alpha", "power", "se"),
               [(p.alpha, p.power, p.se) for p in pts])
    man = _manifest("power", args.config, raw, args.seed, [args.out],
                    _validation_dict(spec, theta))
    _write_json(man, _manifest_path(args.out))
    return 0


def cmd_info(args) -> int:
    spec, theta, raw = _read_config(args.config)
    if args.theta:
        text = args.theta
        if not text.lstrip().startswith("{"):
            with open(text, "r", encoding="utf-8") as fh:
                text = fh.read()
        obj = json.loads(text)
        theta = _model.make_theta(spec, np.asarray(obj["gamma"], float),
                                  np.asarray(obj["alpha"], float),
                                  np.asarray(obj["beta"], float))
    _need_theta(theta, "info")
    rep = _volterra.information_report(spec, theta)
    payload = {
        "information": rep["matrix"].tolist(),
        "slot_names": spec.slot_names(),
        "spectral_radius": rep["rho"],
        "min_eigenvalue": rep["min_eigenvalue"],
        "max_eigenvalue": rep["max_eigenvalue"],
        "degenerate": rep["degenerate"],
    }
    if args.out:
        _write_json(payload, args.out)
        man = _manifest("info", args.config, raw, None, [args.out],
                        _validation_dict(spec, theta))
        _write_json(man, _manifest_path(args.out))
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_fit_flags(sp):
    sp.add_argument("--starts", type=int, default=8,
                    help="multi-start count for each fit (default 8)")
    sp.add_argument("--epsilon", type=float, default=1e-5,
                    help="zero threshold for weights and statistics")
    sp.add_argument("--seed", type=int, default=0,
                    help="seed for every random draw in this command")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sparsehawkes",
        description="Replicated marked Hawkes estimation and sparsity tests")
    p.add_argument("--threads", type=int, default=1,
                   help="cap worker threads (pipelines currently run one worker)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="draw a dataset of replicates")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="maximum likelihood on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--pattern", default="",
                    help='adjacency cells pinned to zero, "k,l;k,l" 1-based')
    sp.add_argument("--strategy", default="aggregate",
                    choices=("aggregate", "pooled", "averaged"))
    sp.add_argument("--out", required=True)
    _add_fit_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("test", help="sparsity test of a zero pattern")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--pattern", required=True)
    sp.add_argument("--method", default="known",
                    choices=("known", "conditional", "mc"))
    sp.add_argument("--mc-draws", type=int, default=200_000)
    sp.add_argument("--level", type=float, default=0.05)
    sp.add_argument("--out", required=True)
    _add_fit_flags(sp)
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("calibrate", help="empirical level over simulated nulls")
    sp.add_argument("--config", required=True)
    sp.add_argument("--fit-config", default="",
                    help="optional config for the fitted model (frozen-decay profiles)")
    sp.add_argument("--pattern", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, required=True)
    sp.add_argument("--method", default="known",
                    choices=("known", "conditional", "mc"))
    sp.add_argument("--mc-draws", type=int, default=200_000)
    sp.add_argument("--levels", default="0.05",
                    help="comma-separated nominal levels")
    sp.add_argument("--out-prefix", required=True)
    _add_fit_flags(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("power", help="empirical power along an alpha grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--fit-config", default="")
    sp.add_argument("--pattern", required=True)
    sp.add_argument("--alpha-grid", required=True, help="start:step:count")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, required=True)
    sp.add_argument("--level", type=float, default=0.05)
    sp.add_argument("--method", default="known",
                    choices=("known", "conditional"))
    sp.add_argument("--out", required=True)
    _add_fit_flags(sp)
    sp.set_defaults(func=cmd_power)

    sp = sub.add_parser("info", help="asymptotic information at a parameter")
    sp.add_argument("--config", required=True)
    sp.add_argument("--theta", default="",
                    help="inline JSON or a path to a JSON theta file")
    sp.add_argument("--out", default="")
    sp.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads > 1:
            try:
                import numba
                numba.set_num_threads(args.threads)
            except Exception:
                pass
        return args.func(args)
    except _model.UnstableModel as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except _simulate.RunawaySimulation as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (_estimate.NonConvergence, _test.NestingViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (_estimate.InfeasiblePattern, _chibar.NotSPD,
            _chibar.ExponentialBlowup) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
