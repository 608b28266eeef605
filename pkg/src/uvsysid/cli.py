"""``uvsysid`` command line.

Subcommands: synth, ingest, fit-koopman, fit-di, fit-residual, eval, bench.
Every option can also come from a JSON ``--config`` file (keys are the long
option names with dashes replaced by underscores); flags win over the file.
The resolved configuration is written into every output's provenance header.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, container, core, dynamics, evaluation, ingest, koopman, residual
from .errors import ConfigError, ContainerError, DataError, SysIdError

log = logging.getLogger("uvsysid")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

# Defaults per subcommand.  argparse itself gets ``None`` defaults so that a
# value coming from the config file can be told apart from an explicit flag.
DEFAULTS = {
    "synth": {
        "params": None,
        "duration": 60.0,
        "rate": 50.0,
        "noise": 0.0,
        "segments": 1,
        "excitation": "thrusters",
        "output": "synth.csv",
    },
    "ingest": {"input": None, "schema": None, "rate": None, "gap_periods": 5.0, "derive_twists": False,
               "output": "dataset.csv"},
    "fit-koopman": {"data": None, "K": koopman.DEFAULT_K, "gamma": koopman.DEFAULT_GAMMA,
                    "lambda": koopman.DEFAULT_LAMBDA, "train_fraction": 1.0, "relift": False,
                    "output": "koopman.json"},
    "fit-di": {"data": None, "lambda": 1e-3, "train_fraction": 1.0, "output": "di.json"},
    "fit-residual": {"data": None, "params": None, "train_fraction": 1.0, "epochs": 2000, "batch_size": 768,
                     "lr": 3e-3, "weight_decay": 1e-5, "lr_gamma": 0.997, "beta": 0.9,
                     "huber_form": "continuous", "reduction": "per-sample", "selection": "epoch-mean",
                     "output": "residual.json"},
    "eval": {"data": None, "models": None, "horizons": "1,10,100", "split": "all", "train_fraction": 0.8,
             "plot": False, "stem": "report"},
    "bench": {"data": None, "models": [], "horizon": 100, "repetitions": 3, "fit": "", "windows": 1,
              "train_fraction": 1.0, "stem": "bench"},
}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(command, config, inputs=()):
    return {
        "tool": "uvsysid",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {os.path.basename(p): _digest(p) for p in inputs},
    }


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def resolve(args):
    """Merge defaults, config file and flags (in increasing priority)."""
    cmd = args.command
    file_cfg = _load_config_file(args.config)
    section = file_cfg.get(cmd, {}) if isinstance(file_cfg.get(cmd), dict) else {}
    flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
    cfg = dict(DEFAULTS[cmd])
    cfg["seed"] = 0
    for src in (flat, section):
        for k, v in src.items():
            key = k.replace("-", "_")
            if key in cfg:
                cfg[key] = v
            else:
                raise ConfigError(f"unknown config key {k!r} for {cmd}")
    for k in list(cfg):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _require(cfg, key):
    if cfg.get(key) in (None, "", []):
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def _load_params(path):
    return dynamics.default_params() if path is None else dynamics.FossenParams.load(path)


def _load_dataset(path):
    if not os.path.exists(path):
        raise ContainerError(f"dataset not found: {path}")
    return ingest.Dataset.from_csv(path)


def _split(ds, fraction, which="train"):
    if fraction >= 1.0:
        return ds
    train, test = ingest.split_chronological(ds, fraction)
    return train if which == "train" else test


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(source):
    """Model from a container file, a Fossen parameter file or ``identity``."""
    if source == "identity":
        return evaluation.IdentityModel()
    if not os.path.exists(source):
        raise ContainerError(f"model file not found: {source}")
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    try:
        head = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{source}: not a model file ({exc})") from None
    name = os.path.splitext(os.path.basename(source))[0]
    if isinstance(head, dict) and head.get("kind") == "fossen-params":
        return dynamics.FossenModel(dynamics.FossenParams.from_dict(head), 1.0 / 50.0, name=name)
    c = container.loads(text)
    if c.kind == "koopman":
        m = koopman.KoopmanModel.from_container(c)
        return _renamed(m, name)
    if c.kind == "di":
        return _renamed(dynamics.DIModel.from_container(c), name)
    if c.kind == "residual":
        nominal = c.config.get("nominal")
        if nominal is None:
            raise ContainerError(f"{source}: residual model has no embedded nominal simulator")
        params = dynamics.FossenParams.from_dict(nominal["params"])
        sim = dynamics.FossenModel(params, nominal["dt"], scheme="semi-implicit")
        return residual.CorrectedSimulator(sim, residual.ResidualModel.from_container(c), name=name)
    raise ContainerError(f"{source}: unsupported model kind {c.kind!r}")


def _renamed(model, name):
    return replace(model, name=name)


def _with_dt(model, dt):
    """Fossen models loaded from parameter files take the dataset's period."""
    if isinstance(model, dynamics.FossenModel) and model.dt != dt:
        return dynamics.FossenModel(model.params, dt, model.scheme, model.bound, model.name)
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg):
    params = _load_params(cfg["params"])
    exc = dynamics.excitation_preset(cfg["excitation"])
    ds = dynamics.synth_generate(
        params,
        exc,
        duration=float(cfg["duration"]),
        rate=float(cfg["rate"]),
        noise=float(cfg["noise"]),
        seed=int(cfg["seed"]),
        segments=int(cfg["segments"]),
    )
    path = _out(args, cfg["output"])
    inputs = [cfg["params"]] if cfg["params"] else []
    ds.to_csv(path, provenance("synth", cfg, inputs))
    log.info("wrote %d rows to %s", ds.n_samples, path)
    return path


def cmd_ingest(args, cfg):
    src = _require(cfg, "input")
    if not os.path.exists(src):
        raise ContainerError(f"input log not found: {src}")
    schema = ingest.ColumnSchema.from_file(cfg["schema"]) if cfg["schema"] else None
    raw = ingest.clean(ingest.load_log(src, schema))
    rate = cfg["rate"]
    if rate is None:
        dts = np.diff(raw.t)
        dts = dts[dts > 0]
        if dts.size == 0:
            raise DataError("cannot infer a sample rate from the log")
        rate = float(np.round(1.0 / np.median(dts), 6))
    ds = ingest.resample(raw, float(rate), gap_periods=float(cfg["gap_periods"]))
    if cfg["derive_twists"]:
        ds = ingest.with_derived_twists(ds)
    path = _out(args, cfg["output"])
    prov = provenance("ingest", cfg, [src])
    prov["cleaning"] = ds.metadata.get("cleaning", {})
    ds.to_csv(path, prov)
    return path


def cmd_fit_koopman(args, cfg):
    data = _require(cfg, "data")
    ds = _split(_load_dataset(data), float(cfg["train_fraction"]))
    model = koopman.edmdc_fit(ds, K=int(cfg["K"]), gamma=float(cfg["gamma"]), lam=float(cfg["lambda"]),
                              seed=int(cfg["seed"]))
    if cfg["relift"]:
        model = replace(model, relift=True)
    path = _out(args, cfg["output"])
    model.save(path, provenance("fit-koopman", cfg, [data]), config=cfg)
    return path


def cmd_fit_di(args, cfg):
    data = _require(cfg, "data")
    ds = _split(_load_dataset(data), float(cfg["train_fraction"]))
    model = dynamics.di_fit(ds, lam=float(cfg["lambda"]))
    path = _out(args, cfg["output"])
    container.save(path, model.to_container(provenance("fit-di", cfg, [data]), cfg))
    return path


def cmd_fit_residual(args, cfg):
    data = _require(cfg, "data")
    ds = _split(_load_dataset(data), float(cfg["train_fraction"]))
    nominal = dynamics.FossenModel(_load_params(cfg["params"]), ds.dt, scheme="semi-implicit")
    samples = residual.build_residual_dataset(ds, nominal)
    tc = residual.TrainConfig(
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        weight_decay=float(cfg["weight_decay"]),
        lr_gamma=float(cfg["lr_gamma"]),
        beta=float(cfg["beta"]),
        huber_form=cfg["huber_form"],
        reduction=cfg["reduction"],
        selection=cfg["selection"],
    )

    def report(epoch, loss):
        print(f"epoch {epoch + 1}/{tc.epochs} loss {loss:.6g}", file=sys.stderr)

    model, hist = residual.train(samples, tc, seed=int(cfg["seed"]), callback=report)
    path = _out(args, cfg["output"])
    inputs = [data] + ([cfg["params"]] if cfg["params"] else [])
    prov = provenance("fit-residual", cfg, inputs)
    prov["best_epoch"] = hist.best_epoch
    prov["best_loss"] = hist.best_loss
    model.save(path, prov, nominal=nominal)
    return path


def _horizons(text):
    if isinstance(text, (list, tuple)):
        return [int(h) for h in text]
    try:
        hs = [int(h) for h in str(text).split(",") if h.strip()]
    except ValueError:
        raise ConfigError(f"horizons must be a comma-separated list of integers, got {text!r}") from None
    if not hs or min(hs) < 0:
        raise ConfigError("horizons must be non-negative integers")
    return hs


def cmd_eval(args, cfg):
    data = _require(cfg, "data")
    specs = _require(cfg, "models")
    ds = _load_dataset(data)
    if cfg["split"] in ("train", "test"):
        ds = _split(ds, float(cfg["train_fraction"]), cfg["split"])
    elif cfg["split"] != "all":
        raise ConfigError("split must be one of all, train, test")
    models = [_with_dt(load_model(s), ds.dt) for s in specs]
    reports = evaluation.compare_report(models, ds, _horizons(cfg["horizons"]))
    inputs = [data] + [s for s in specs if s != "identity"]
    txt, js = evaluation.write_report(reports, args.out, cfg["stem"], provenance("eval", cfg, inputs))
    if cfg["plot"]:
        evaluation.write_plot_data(models, ds, os.path.join(args.out, f"{cfg['stem']}_trajectory.csv"))
    print(open(txt, encoding="utf-8").read(), end="")
    return txt


def cmd_bench(args, cfg):
    data = _require(cfg, "data")
    ds = _load_dataset(data)
    reps = int(cfg["repetitions"])
    if reps < 3:
        raise ConfigError("bench needs at least 3 repetitions")
    H = int(cfg["horizon"])
    rows = []
    rows.append(evaluation.bench_timing(evaluation.IdentityModel(), ds, H, reps, windows=int(cfg["windows"])))
    for s in cfg["models"] or []:
        m = _with_dt(load_model(s), ds.dt)
        rows.append(evaluation.bench_timing(m, ds, H, reps, windows=int(cfg["windows"])))
    train = _split(ds, float(cfg["train_fraction"]))
    fitters = {
        "koopman": lambda: koopman.edmdc_fit(train, seed=int(cfg["seed"])),
        "di": lambda: dynamics.di_fit(train),
    }
    for name in [f for f in str(cfg["fit"]).split(",") if f]:
        if name not in fitters:
            raise ConfigError(f"cannot fit {name!r} in-session (choose from {sorted(fitters)})")
        t0 = time.perf_counter()
        m = fitters[name]()
        log.info("fitted %s in %.2fs", name, time.perf_counter() - t0)
        rows.append(evaluation.bench_timing(m, ds, H, reps, fit=fitters[name], windows=int(cfg["windows"])))
    lines = [f"{'model':<12} {'H':>5} {'rollout_s':>12} {'spread_s':>10} {'per_step_s':>12} {'fit_s':>10}"]
    for r in rows:
        fit = "-" if r.fit_median is None else f"{r.fit_median:.4f}"
        lines.append(
            f"{r.model:<12} {r.H:>5} {r.rollout_median:>12.6f} {r.rollout_spread:>10.6f} {r.per_step:>12.3e} {fit:>10}"
        )
    env = evaluation.environment_description()
    lines.append("environment: " + ", ".join(f"{k}={v}" for k, v in env.items()))
    text = "\n".join(lines) + "\n"
    base = _out(args, cfg["stem"])
    with open(base + ".txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    _write_json(base + ".json", {"provenance": provenance("bench", cfg, [data]),
                                 "rows": [r.__dict__ for r in rows]})
    print(text, end="")
    return base + ".txt"


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "fit-koopman": cmd_fit_koopman,
    "fit-di": cmd_fit_di,
    "fit-residual": cmd_fit_residual,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a flag given before the subcommand from being reset by
    # the subparser's own default
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option values")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="uvsysid", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"uvsysid {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="simulate a synthetic dataset")
    s.add_argument("--params", help="Fossen parameter file (default: packaged placeholder)")
    s.add_argument("--duration", type=float)
    s.add_argument("--rate", type=float)
    s.add_argument("--noise", type=float)
    s.add_argument("--segments", type=int)
    s.add_argument("--excitation", choices=sorted(dynamics.EXCITATION_PRESETS))
    s.add_argument("--output")

    s = sub.add_parser("ingest", parents=[common], help="clean and resample a raw log")
    s.add_argument("input", nargs="?")
    s.add_argument("--schema")
    s.add_argument("--rate", type=float)
    s.add_argument("--gap-periods", type=float)
    s.add_argument("--derive-twists", action="store_true", default=None)
    s.add_argument("--output")

    s = sub.add_parser("fit-koopman", parents=[common], help="identify an EDMDc model")
    s.add_argument("data", nargs="?")
    s.add_argument("--K", "-K", type=int, dest="K")
    s.add_argument("--gamma", type=float)
    s.add_argument("--lambda", type=float, dest="lambda")
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--relift", action="store_true", default=None)
    s.add_argument("--output")

    s = sub.add_parser("fit-di", parents=[common], help="fit the double-integrator baseline")
    s.add_argument("data", nargs="?")
    s.add_argument("--lambda", type=float, dest="lambda")
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--output")

    s = sub.add_parser("fit-residual", parents=[common], help="train the residual twist corrector")
    s.add_argument("data", nargs="?")
    s.add_argument("--params", help="nominal Fossen parameter file (default: packaged placeholder)")
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--lr-gamma", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--huber-form", choices=residual.HUBER_FORMS)
    s.add_argument("--reduction", choices=residual.REDUCTIONS)
    s.add_argument("--selection", choices=residual.SELECTIONS, help="loss used to pick the returned weights")
    s.add_argument("--output")

    s = sub.add_parser("eval", parents=[common], help="endpoint RMSE table for one or more models")
    s.add_argument("data", nargs="?")
    s.add_argument("models", nargs="*", default=None, help="model files, parameter files or 'identity'")
    s.add_argument("--horizons")
    s.add_argument("--split", choices=["all", "train", "test"])
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--plot", action="store_true", default=None)
    s.add_argument("--stem")

    s = sub.add_parser("bench", parents=[common], help="rollout and fit timings")
    s.add_argument("data", nargs="?")
    s.add_argument("models", nargs="*", default=None)
    s.add_argument("--horizon", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--fit", help="comma-separated list of models to fit in-session (koopman, di)")
    s.add_argument("--windows", type=int)
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--stem")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if getattr(args, "models", None) == []:
        args.models = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](args, cfg)
    except SysIdError as exc:
        print(f"uvsysid {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"uvsysid {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
