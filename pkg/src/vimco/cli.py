"""vimco command line: train, eval-nll, eval-bound, oracle-check,
probe-variance, complete.

Settings come from an optional flat ``key = value`` file (``--config``) with
dotted keys such as ``train.k = 5``; command-line flags override it.
Exit codes: 0 success, 1 usage or configuration error, 2 failed check.
"""
import argparse
import csv
import io
import os
import sys
from dataclasses import fields

import numpy as np

from . import checks, data, oracle, train as T
from .core import EVAL, make_rng
from .data import sop_view

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config(path):
    """Flat key = value file; blank lines and # comments are skipped."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def _tuple_of(cast):
    def parse(v):
        if isinstance(v, (tuple, list)):
            return tuple(cast(x) for x in v)
        v = str(v).strip()
        return tuple(cast(x) for x in v.split(",") if x.strip()) if v else ()
    return parse


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_TRAIN_TYPES = {"latent_sizes": _tuple_of(int), "sweep": _tuple_of(float), "rws_sleep": _bool,
                "init_obs_bias": _bool}

# (flag, dotted key, type, default)
DATA_OPTS = [
    ("--data", "data.source", str, "mnist10k"),
    ("--data-seed", "data.seed", int, 0),
    ("--binarization", "data.binarization", str, "stochastic"),
    ("--splits", "data.splits", _tuple_of(int), ()),
]


def _train_opts():
    out = []
    defaults = T.TrainConfig()
    for f in fields(T.TrainConfig):
        cast = _TRAIN_TYPES.get(f.name, type(getattr(defaults, f.name)))
        out.append(("--" + f.name.replace("_", "-"), "train." + f.name, cast, getattr(defaults, f.name)))
    return out


EVAL_OPTS = [
    ("--checkpoint", "eval.checkpoint", str, None),
    ("--split", "eval.split", str, "test"),
    ("--cases", "eval.cases", int, 0),
    ("--seed", "eval.seed", int, 0),
    ("--out", "eval.out", str, None),
]
COMMANDS = {
    "train": _train_opts() + DATA_OPTS + [("--out", "run.dir", str, None)],
    "eval-nll": EVAL_OPTS + DATA_OPTS + [("--samples", "eval.samples", int, 1000)],
    "eval-bound": EVAL_OPTS + DATA_OPTS + [("--k", "eval.k", int, 0), ("--draws", "eval.draws", int, 1)],
    "oracle-check": [
        ("--seed", "oracle.seed", int, 0),
        ("--instances", "oracle.instances", int, 20),
        ("--ks", "oracle.ks", _tuple_of(int), (2, 3, 5)),
        ("--budget", "oracle.budget", int, oracle.TUPLE_BUDGET),
        ("--finite-diff", "oracle.finite_diff", _bool, True),
        ("--out", "oracle.out", str, None),
    ],
    "probe-variance": [
        ("--seed", "probe.seed", int, 0),
        ("--instances", "probe.instances", int, 5),
        ("--ks", "probe.ks", _tuple_of(int), (2, 5, 10)),
        ("--budget", "probe.budget", int, oracle.TUPLE_BUDGET),
        ("--train-steps", "probe.train_steps", int, 0),
        ("--train-k", "probe.train_k", int, 10),
        ("--out", "probe.out", str, None),
    ] + DATA_OPTS,
    "complete": [
        ("--checkpoint", "complete.checkpoint", str, None),
        ("--split", "complete.split", str, "test"),
        ("--cases", "complete.cases", int, 8),
        ("--n", "complete.n", int, 10),
        ("--seed", "complete.seed", int, 0),
        ("--out", "complete.out", str, None),
    ] + DATA_OPTS,
}


def build_parser():
    p = _Parser(prog="vimco", description="Multi-sample variational training of sigmoid belief networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value settings file; flags override it")
        for flag, key, _, default in opts:
            sp.add_argument(flag, dest=key, default=None, metavar="V", help=f"{key} (default: {default})")
    return p


def resolve(command, args):
    """Defaults, then the config file, then flags; every value cast and checked."""
    opts = COMMANDS[command]
    file_vals = read_config(args.config) if args.config else {}
    known = {key for _, key, _, _ in opts}
    unknown = sorted(set(file_vals) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for flag, key, cast, default in opts:
        v = getattr(args, key)
        if v is None:
            v = file_vals.get(key, default)
        try:
            out[key] = cast(v) if v is not None else None
        except ValueError as e:
            raise UsageError(f"{flag}: {e}") from None
    return out


def _dataset(cfg):
    splits = cfg["data.splits"]
    if splits:
        if len(splits) != 3:
            raise UsageError("--splits takes train,valid,test sizes")
        splits = dict(zip(("train", "valid", "test"), splits))
    try:
        return data.load_dataset(cfg["data.source"], cfg["data.seed"], splits or None, cfg["data.binarization"])
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load dataset {cfg['data.source']!r}: {e}") from None


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _train_config(cfg):
    kw = {f.name: cfg["train." + f.name] for f in fields(T.TrainConfig)}
    try:
        return T.TrainConfig(**kw).validate()
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_train(cfg):
    config = _train_config(cfg)
    out = cfg["run.dir"]
    if not out:
        raise UsageError("train needs --out <run directory>")
    ds = _dataset(cfg)
    rates = config.sweep or (config.lr,)
    summary = []
    for lr in rates:
        c = T.TrainConfig(**{**T.config_dict(config), "lr": lr, "sweep": ()})
        run = os.path.join(out, f"lr-{lr:g}") if config.sweep else out
        os.makedirs(os.path.join(run, "checkpoints"), exist_ok=True)
        data_lines = "".join(f"{k} = {_fmt(cfg[k])}\n" for _, k, _, _ in DATA_OPTS)
        _write(os.path.join(run, "config.resolved"), c.resolved() + data_lines)
        res = T.train(c, ds)
        _write(os.path.join(run, "metrics.csv"), res.metrics_csv())
        meta = {"dataset": ds.name, "image_shape": "x".join(map(str, ds.shape)), "best_step": res.best_step}
        T.save_state(os.path.join(run, "checkpoints", "best.nta"), res.best_state, c, meta)
        final = T.state_tensors(res.model, res.proposal, res.baseline)
        T.save_state(os.path.join(run, "checkpoints", "final.nta"), final, c, {**meta, "step": res.steps})
        row = [repr(lr), c.estimator, c.k, c.seed, res.steps, res.best_step, repr(res.best_valid)]
        _write(os.path.join(run, "report.csv"), _csv(REPORT_HEADER, [row]))
        summary.append(row)
    if config.sweep:
        _write(os.path.join(out, "report.csv"), _csv(REPORT_HEADER, summary))
    return EXIT_OK


REPORT_HEADER = ("lr", "estimator", "K", "seed", "steps", "best_step", "best_valid_bound")


def _fmt(v):
    return ",".join(map(str, v)) if isinstance(v, tuple) else v


def _load(path):
    if not path:
        raise UsageError("--checkpoint is required")
    try:
        return T.load_model(path)
    except (OSError, KeyError, ValueError) as e:
        raise UsageError(f"cannot read checkpoint {path!r}: {e}") from None


def _eval_inputs(cfg, meta, prefix):
    ds = _dataset(cfg)
    sop = meta["mode"] != "generative"
    try:
        x, c = ds.view(cfg[f"{prefix}.split"], sop)
    except KeyError as e:
        raise UsageError(str(e)) from None
    n = cfg[f"{prefix}.cases"]
    if n:
        x = x[:n]
        c = None if c is None else c[:n]
    mode = "prior" if meta["mode"] == "sop-prior" else "learned"
    return x, c, mode


def cmd_eval_nll(cfg):
    model, proposal, meta = _load(cfg["eval.checkpoint"])
    x, c, mode = _eval_inputs(cfg, meta, "eval")
    S = cfg["eval.samples"]
    if S < 1:
        raise UsageError("--samples must be at least 1")
    v = T.eval_nll(model, proposal, x, S, c, cfg["eval.seed"], mode)
    _write(cfg["eval.out"], _csv(("split", "cases", "samples", "nll"), [[cfg["eval.split"], len(x), S, repr(v)]]))
    return EXIT_OK


def cmd_eval_bound(cfg):
    model, proposal, meta = _load(cfg["eval.checkpoint"])
    x, c, mode = _eval_inputs(cfg, meta, "eval")
    K = cfg["eval.k"] or int(meta["k"])
    if K < 1 or cfg["eval.draws"] < 1:
        raise UsageError("--k and --draws must be at least 1")
    v = T.eval_bound(model, proposal, x, K, c, cfg["eval.seed"], mode, cfg["eval.draws"])
    _write(cfg["eval.out"], _csv(("split", "cases", "K", "draws", "bound"),
                                 [[cfg["eval.split"], len(x), K, cfg["eval.draws"], repr(v)]]))
    return EXIT_OK


def cmd_oracle_check(cfg):
    try:
        results = checks.oracle_suite(cfg["oracle.seed"], cfg["oracle.instances"], cfg["oracle.ks"],
                                      cfg["oracle.budget"], cfg["oracle.finite_diff"])
    except (oracle.BudgetError, ValueError) as e:
        raise UsageError(str(e)) from None
    _write(cfg["oracle.out"], _csv(checks.REPORT_COLUMNS, [r.row() for r in results]))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


PROBE_HEADER = ("source", "instance", "estimator", "K", "step", "metric", "value")


def cmd_probe_variance(cfg):
    try:
        exact = checks.variance_probe(cfg["probe.seed"], cfg["probe.instances"], cfg["probe.ks"],
                                      budget=cfg["probe.budget"])
    except (oracle.BudgetError, ValueError) as e:
        raise UsageError(str(e)) from None
    rows = []
    for i, inst_kind, kind, K, var, rms in exact:
        rows.append(["exact", f"{i}:{inst_kind}", kind, K, "", "grad_var", repr(var)])
        rows.append(["exact", f"{i}:{inst_kind}", kind, K, "", "signal_rms", repr(rms)])
    steps = cfg["probe.train_steps"]
    if steps > 0:
        ds = _dataset(cfg)
        for kind in ("nvil", "vimco"):
            c = T.TrainConfig(estimator=kind, k=cfg["probe.train_k"], epochs=0, max_steps=steps,
                              seed=cfg["probe.seed"], log_every=max(1, steps // 100), eval_every=steps,
                              eval_cases=100)
            try:
                res = T.train(c.validate(), ds)
            except ValueError as e:
                raise UsageError(str(e)) from None
            rows += [["train", ds.name, kind, c.k, m["step"], "signal_rms", m["value"]]
                     for m in res.metrics if m["metric"] == "signal_rms"]
    _write(cfg["probe.out"], _csv(PROBE_HEADER, rows))
    return EXIT_OK


def completion_grid(model, contexts, truths, n, seed, shape):
    """(n+1) rows of cases: originals on top, then n sampled completions (Bernoulli means)."""
    rows, cols = shape
    half = rows // 2
    cases = len(contexts)
    grid = np.zeros(((n + 1) * rows, cases * cols))
    for j in range(cases):
        _, probs = model.sample_prior(make_rng(seed, EVAL, j), context=contexts[j:j + 1].repeat(n, axis=0), n=n)
        top = contexts[j].reshape(half, cols)
        grid[:rows, j * cols:(j + 1) * cols] = np.vstack([top, truths[j].reshape(rows - half, cols)])
        for r in range(n):
            img = np.vstack([top, probs[r].reshape(rows - half, cols)])
            grid[(r + 1) * rows:(r + 2) * rows, j * cols:(j + 1) * cols] = img
    return grid


def write_pgm(path, grid):
    pix = np.clip(np.rint(np.asarray(grid) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def cmd_complete(cfg):
    model, _, meta = _load(cfg["complete.checkpoint"])
    if meta["mode"] == "generative" or not model.conditional:
        raise UsageError("completion needs a structured-output (sop-*) checkpoint")
    if not cfg["complete.out"]:
        raise UsageError("complete needs --out <file.pgm>")
    if cfg["complete.n"] < 1 or cfg["complete.cases"] < 1:
        raise UsageError("--n and --cases must be at least 1")
    ds = _dataset(cfg)
    shape = tuple(int(v) for v in meta.get("image_shape", "x".join(map(str, ds.shape))).split("x"))
    try:
        images = ds.split(cfg["complete.split"])[:cfg["complete.cases"]]
        contexts, truths = sop_view(images, shape)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    grid = completion_grid(model, contexts, truths, cfg["complete.n"], cfg["complete.seed"], shape)
    write_pgm(cfg["complete.out"], grid)
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval-nll": cmd_eval_nll, "eval-bound": cmd_eval_bound,
            "oracle-check": cmd_oracle_check, "probe-variance": cmd_probe_variance, "complete": cmd_complete}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args.command, args)
        return HANDLERS[args.command](cfg)
    except UsageError as e:
        print(f"vimco: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"vimco: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
