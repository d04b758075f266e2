"""Experiment driver.

Subcommands: gen-data, train, eval, curves, blowup, bayesopt, transfer.
Every flag can also be given as a KEY=VALUE line in a --config file (flags on
the command line win); unknown config keys are rejected. Output files start
with a comment line carrying the resolved configuration and seed, and the
default output directory comes from $LUNA_NLM_OUT.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import bayesopt as bo
from . import blr, data, metrics, nn, trainer

MODEL_FORMAT = "luna-nlm-model/1"


# ---------------------------------------------------------------- model io


def save_model(model: trainer.TrainedModel, path: str, comment: str | None = None) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "config": dataclasses.asdict(model.config),
        "feature_map": {
            "layer_sizes": model.feature_map.layer_sizes,
            "activation": model.feature_map.activation,
            "params": model.feature_map.to_vector().tolist(),
        },
        "posterior": {
            "w_n": model.posterior.w_n.tolist(),
            "v_n": model.posterior.v_n.tolist(),
            "sigma2": model.posterior.sigma2,
            "alpha": model.posterior.alpha,
        },
        "stats": {
            "x_mean": model.stats.x_mean.tolist(),
            "x_std": model.stats.x_std.tolist(),
            "y_mean": model.stats.y_mean,
            "y_std": model.stats.y_std,
        },
        "history": [[h.epoch, h.fit_loss, h.diverse_loss, h.effective_lambda] for h in model.history],
        "diversity_score": model.diversity_score,
    }
    with open(path, "w") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str) -> trainer.TrainedModel:
    with open(path) as fh:
        text = "\n".join(line for line in fh.read().splitlines() if not line.startswith("#"))
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model file (format {doc.get('format')!r})")
    cfg_doc = doc["config"]
    cfg_doc["hidden"] = tuple(cfg_doc["hidden"])
    config = trainer.TrainConfig(**cfg_doc)
    fm_doc = doc["feature_map"]
    sizes = fm_doc["layer_sizes"]
    template = nn.init_params(sizes, fm_doc["activation"], np.random.default_rng(0))
    feature_map = template.from_vector(np.asarray(fm_doc["params"], dtype=np.float64))
    post = doc["posterior"]
    posterior = blr.BlrPosterior(
        w_n=np.asarray(post["w_n"], dtype=np.float64),
        v_n=np.asarray(post["v_n"], dtype=np.float64),
        sigma2=post["sigma2"],
        alpha=post["alpha"],
    )
    st = doc["stats"]
    stats = data.Standardization(
        x_mean=np.asarray(st["x_mean"], dtype=np.float64),
        x_std=np.asarray(st["x_std"], dtype=np.float64),
        y_mean=st["y_mean"],
        y_std=st["y_std"],
    )
    history = [trainer.EpochStats(int(e), f, d, l) for e, f, d, l in doc["history"]]
    return trainer.TrainedModel(
        feature_map=feature_map,
        posterior=posterior,
        config=config,
        history=history,
        diversity_score=doc["diversity_score"],
        stats=stats,
    )


# ---------------------------------------------------------------- helpers


def _resolved(args: argparse.Namespace) -> str:
    skip = {"func", "config"}
    doc = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return json.dumps(doc, default=str)


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_rows(path: str, args, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {_resolved(args)}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _config_from_args(args) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        objective=args.objective,
        hidden=args.hidden,
        activation=args.activation,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        optimizer=args.optimizer,
        gamma=args.gamma,
        lam=args.lam,
        alpha=args.alpha,
        sigma2=args.sigma2,
        n_heads=args.heads,
        anneal=args.anneal,
        restarts=args.restarts,
        seed=args.seed,
        epsilon_scale=args.epsilon_scale,
        standardize=not args.no_standardize,
    )


# ------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    if args.kind == "ucigap":
        if not args.input:
            raise CliError("--input is required for ucigap")
        x, y = data.load_table(args.input)
        ds = data.make_gap_split(x, y, gap_dim=args.dim, seed=args.seed)
    elif args.kind == "cubic":
        ds = data.gen_cubic_gap(args.n_train, args.n_test, args.noise_sd, args.seed)
    else:
        ds = data.gen_squiggle_gap(args.n_train, args.n_test, args.noise_sd, args.seed)
    os.makedirs(args.out, exist_ok=True)
    data.save_dataset(ds, args.out, comment=_resolved(args))
    return 0


def cmd_train(args) -> int:
    ds = data.load_dataset(args.data_dir)
    config = _config_from_args(args)
    if args.grid_gamma or args.grid_lam or args.grid_alpha:
        grid = [
            {"gamma": g, "lam": l, "alpha": a}
            for g in (args.grid_gamma or (config.gamma,))
            for l in (args.grid_lam or (config.lam,))
            for a in (args.grid_alpha or (config.alpha,))
        ]
        model, rows = trainer.hyper_search(grid, config, ds)
        _write_rows(
            _out_path(args, "selection.csv"),
            args,
            "gamma,lam,alpha,seed,val_ll,diversity,selected",
            [[r["gamma"], r["lam"], r["alpha"], r["seed"], r["val_ll"], r["diversity"], int(r["selected"])] for r in rows],
        )
    elif args.select:
        models = trainer.random_restarts(config, ds, config.restarts)
        model = trainer.select_model(models, (ds.val.x, ds.val.y))
        rows = [
            [m.config.seed, trainer.validation_ll(m, (ds.val.x, ds.val.y)), m.diversity_score, int(m is model)]
            for m in models
        ]
        _write_rows(_out_path(args, "selection.csv"), args, "seed,val_ll,diversity,selected", rows)
    else:
        model = trainer.train(config, ds)
    save_model(model, _out_path(args, "model.json"), comment=_resolved(args))
    _write_rows(
        _out_path(args, "history.csv"),
        args,
        "epoch,fit_loss,diverse_loss,effective_lambda",
        [[h.epoch, h.fit_loss, h.diverse_loss, h.effective_lambda] for h in model.history],
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = data.load_dataset(args.data_dir)
    rows = []
    eu = {}
    for name, split in ds.splits().items():
        pred = model.predict(split.x)
        eu[name] = metrics.epistemic_sd(pred)
        rows.append([name, metrics.avg_ll(pred, split.y), metrics.rmse(pred, split.y), eu[name]])
    rows.append(["eurc_percent", 100.0 * metrics.eurc(eu["test_gap"], eu["test_not_gap"]), "", ""])
    _write_rows(_out_path(args, "metrics.csv"), args, "split,avg_ll,rmse,epistemic_sd", rows)
    return 0


def cmd_curves(args) -> int:
    model = load_model(args.model)
    if model.feature_map.input_dim != 1:
        raise CliError("curves requires a 1-D model")
    grid = np.linspace(args.x_min, args.x_max, args.grid_n)[:, None]
    pred = model.predict(grid)
    header = "x,mean,total_sd,epistemic_sd"
    cols = [grid[:, 0], pred.mean, np.sqrt(pred.total_var), np.sqrt(pred.epistemic_var)]
    if args.samples > 0:
        source = "prior" if args.source == "prior" else model.posterior
        draws = blr.sample_functions(
            model.feature_map,
            model.posterior.alpha,
            model.transform_x(grid),
            args.samples,
            source=source,
            rng_seed=args.seed,
        )
        draws = draws * model.stats.y_std + model.stats.y_mean
        header += "," + ",".join(f"sample_{i + 1}" for i in range(args.samples))
        cols.extend(draws)
    _write_rows(_out_path(args, "curves.csv"), args, header, zip(*cols))
    return 0


def cmd_blowup(args) -> int:
    if args.data_dir:
        ds = data.load_dataset(args.data_dir)
        x, y = ds.train.x, ds.train.y
    else:
        ds = data.gen_cubic_gap(seed=args.seed)
        x, y = ds.train.x, ds.train.y
    rng = np.random.default_rng(args.seed)
    params = nn.init_params([x.shape[1]] + list(args.hidden), args.activation, rng)
    rows = []
    for c in args.c_list:
        scaled = nn.scale_last_layer(params, c)
        feats, _ = nn.forward(scaled, x)
        ll = blr.log_marginal_likelihood(nn.augment_bias(feats), y, args.sigma2, args.alpha)
        rows.append([c, ll])
    _write_rows(_out_path(args, "blowup.csv"), args, "c,marginal_ll", rows)
    return 0


def cmd_bayesopt(args) -> int:
    benchmark = bo.BENCHMARKS[args.benchmark]
    spec = bo.SurrogateSpec(kind=args.surrogate, epochs=args.surrogate_epochs)
    trace = bo.optimize(spec, benchmark, budget=args.steps, init_count=args.init, seed=args.seed)
    header = "step," + ",".join(f"x{i + 1}" for i in range(benchmark.dim)) + ",f,best,regret,fallback"
    rows = [
        [i] + [trace.x[i, j] for j in range(benchmark.dim)] + [trace.f[i], trace.best[i], trace.regret[i], int(trace.fallback[i])]
        for i in range(len(trace))
    ]
    _write_rows(_out_path(args, "trace.csv"), args, header, rows)
    return 0


def cmd_transfer(args) -> int:
    model = load_model(args.model)
    ds = data.load_dataset(args.data_dir)
    gap = ds.test_gap
    half = len(gap) // 2
    if half < 1:
        raise CliError("gap split too small to refit on")
    refit = trainer.refit_head(model, (gap.x[:half], gap.y[:half]))
    rows = []
    for label, m in (("original_head", model), ("refit_head", refit)):
        pred = m.predict(gap.x[half:])
        rows.append([label, metrics.avg_ll(pred, gap.y[half:]), metrics.rmse(pred, gap.y[half:]), metrics.epistemic_sd(pred)])
    _write_rows(_out_path(args, "transfer.csv"), args, "head,gap_avg_ll,gap_rmse,gap_epistemic_sd", rows)
    save_model(refit, _out_path(args, "model_refit.json"), comment=_resolved(args))
    return 0


# ------------------------------------------------------------------ parser


class CliError(RuntimeError):
    pass


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", choices=trainer.OBJECTIVES, default="luna")
    p.add_argument("--hidden", type=_ints, default=(50, 20), help="comma-separated hidden widths")
    p.add_argument("--activation", choices=nn.ACTIVATIONS, default="relu")
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--gamma", type=float, default=1e-2)
    p.add_argument("--lam", type=float, default=50.0)
    p.add_argument("--alpha", type=float, default=1.5e-3)
    p.add_argument("--sigma2", type=float, default=9.0)
    p.add_argument("--heads", type=int, default=20)
    p.add_argument("--anneal", choices=("constant", "sqrt", "sigmoid", "tanh"), default="sqrt")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--epsilon-scale", type=float, default=0.12)
    p.add_argument("--no-standardize", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="luna-nlm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="KEY=VALUE file; command-line flags override it")
        p.add_argument("--out", default=os.environ.get("LUNA_NLM_OUT", "."), help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
        parser.subcommands[name] = p
        return p

    p = add("gen-data", cmd_gen_data, help="generate or construct a gap dataset")
    p.add_argument("kind", choices=("cubic", "squiggle", "ucigap"))
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise-sd", type=float, default=data.CUBIC_NOISE_SD)
    p.add_argument("--input", help="source table for ucigap")
    p.add_argument("--dim", type=int, default=0, help="gap dimension for ucigap")

    p = add("train", cmd_train, help="train a model on a gap dataset")
    p.add_argument("--data-dir", required=True)
    _add_train_flags(p)
    p.add_argument("--select", action="store_true", help="pick the best restart by the selection rule")
    p.add_argument("--grid-gamma", type=_floats, default=())
    p.add_argument("--grid-lam", type=_floats, default=())
    p.add_argument("--grid-alpha", type=_floats, default=())

    p = add("eval", cmd_eval, help="compute metrics for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)

    p = add("curves", cmd_curves, help="emit predictive bands and function samples on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--x-min", type=float, default=-6.0)
    p.add_argument("--x-max", type=float, default=6.0)
    p.add_argument("--grid-n", type=int, default=200)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--source", choices=("prior", "posterior"), default="posterior")

    p = add("blowup", cmd_blowup, help="marginal likelihood under last-layer scalings")
    p.add_argument("--data-dir")
    p.add_argument("--c-list", type=_floats, default=(1.0, 10.0, 100.0, 1000.0))
    p.add_argument("--hidden", type=_ints, default=(50, 20))
    p.add_argument("--activation", choices=nn.ACTIVATIONS, default="relu")
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--sigma2", type=float, default=9.0)

    p = add("bayesopt", cmd_bayesopt, help="run the optimization loop on a benchmark")
    p.add_argument("benchmark", choices=sorted(bo.BENCHMARKS))
    p.add_argument("--surrogate", choices=("gp", "luna", "map", "mle"), default="gp")
    p.add_argument("--steps", type=int, default=50, help="total evaluations including the initial design")
    p.add_argument("--init", type=int, default=None)
    p.add_argument("--surrogate-epochs", type=int, default=500)

    p = add("transfer", cmd_transfer, help="refit the Bayesian head on gap data with frozen features")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    pairs = {}
    with open(args.config) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise CliError(f"{args.config}: line {lineno} is not KEY=VALUE")
            key, value = (t.strip() for t in text.split("=", 1))
            pairs[key.replace("-", "_")] = value
    unknown = [k for k in pairs if not hasattr(args, k)]
    if unknown:
        raise CliError(f"{args.config}: unknown keys {unknown}")
    # Config supplies subcommand defaults; explicit flags keep priority via re-parse.
    converted = {}
    for key, value in pairs.items():
        current = getattr(args, key)
        if isinstance(current, bool):
            converted[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            converted[key] = int(value)
        elif isinstance(current, float):
            converted[key] = float(value)
        elif isinstance(current, tuple):
            converted[key] = _floats(value) if (current and isinstance(current[0], float)) else _ints(value)
        else:
            converted[key] = value
    parser.subcommands[args.command].set_defaults(**converted)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, sys.argv[1:] if argv is None else argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
