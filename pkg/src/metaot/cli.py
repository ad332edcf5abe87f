"""Command-line entry points: train, evaluate, interpolate and color transfer.

Every command reads a flat ``key = value`` config file (optional) and then
applies ``--key value`` overrides. Exit codes: 0 success, 2 config error,
3 data error, 4 numerical failure.
"""
import argparse
import csv
import dataclasses
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synth
from .dataio import load_checkpoint, read_idx, read_pgm, read_ppm, save_checkpoint, write_ppm
from .discrete import (
    MetaConfig,
    WarmStartModel,
    benchmark,
    init_warm_start,
    predict_f,
    summarize,
    train_meta,
    write_benchmark_csv,
)
from .errors import ConfigError, FormatError, InvalidWeights, MetaOTError, NonFiniteGradient, \
    NumericalOverflow
from .hyper import HyperConfig, HyperModel, hyper_predict, init_hyper, meta_icnn_train
from .icnn import W2gnConfig, color_transfer, dual_value, init_pair, normalized_dual, transport, \
    w2gn_train
from .measures import displacement_interpolation, grid_points, image_to_measure, \
    squared_euclidean_cost
from .nn.rng import make_rng
from .sinkhorn import EntropicProblem, g_from_f, sinkhorn

TASKS = ("mnist", "sphere", "dirichlet", "color", "gaussian")
# geodesic costs between ~200 scattered atoms are far coarser than pixel costs
TASK_EPSILON = {"sphere": 0.1}


@dataclass
class RunConfig:
    task: str = "dirichlet"
    seed: int = 0
    out: str = "run"
    # solver
    epsilon: float = 1e-2
    tol: float = 1e-3
    max_iter: int = 5000
    # discrete meta model
    iters: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    schedule: str = "cosine"
    hidden: tuple = (256, 256)
    grid: int = 12
    concentration: float = 1.0
    images: str = ""
    test_images: str = ""
    max_images: int = 0
    supply_raster: str = ""
    demand_raster: str = ""
    n_supply: int = 200
    n_demand: int = 200
    instances: int = 100
    checkpoint: str = ""
    # interpolation
    image_a: str = ""
    image_b: str = ""
    steps: int = 5
    # color / W2GN
    icnn_hidden: tuple = (64, 64)
    gamma: float = 3.0
    meta_batch: int = 8
    inner_batch: int = 256
    w2gn_batch: int = 1024
    n_images: int = 8
    image_size: int = 32
    pairs: int = 5
    finetune_iters: tuple = (1000, 2000)
    ref_iters: int = 2000
    eval_every: int = 50
    eval_samples: int = 4096
    gaussian_mean: tuple = (1.0, -0.5)
    gaussian_std: tuple = (2.0, 0.5)


_POSITIVE = {"epsilon", "tol", "max_iter", "batch_size", "lr", "grid", "concentration",
             "n_supply", "n_demand", "instances", "meta_batch", "inner_batch", "w2gn_batch",
             "image_size", "pairs", "ref_iters", "eval_every", "eval_samples", "hidden",
             "icnn_hidden", "finetune_iters", "gaussian_std"}
_NONNEGATIVE = {"seed", "iters", "max_images", "gamma", "n_images"}


def _parse_value(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from exc


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment. Returns raw string values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_config(raw):
    """Typed, validated RunConfig from raw string values; unknown keys are rejected."""
    defaults = RunConfig()
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _parse_value(k, v, getattr(defaults, k)) for k, v in raw.items()}
    if "epsilon" not in values:
        values["epsilon"] = TASK_EPSILON.get(values.get("task"), defaults.epsilon)
    cfg = dataclasses.replace(defaults, **values)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}")
    for name in _POSITIVE | _NONNEGATIVE:
        value = getattr(cfg, name)
        items = value if isinstance(value, tuple) else (value,)
        if isinstance(value, tuple) and not value:
            raise ConfigError(f"{name} must not be empty")
        for v in items:
            if not np.isfinite(v) or (v <= 0 if name in _POSITIVE else v < 0):
                raise ConfigError(f"{name} must be {'positive' if name in _POSITIVE else 'nonnegative'}")
    if cfg.schedule not in ("constant", "cosine"):
        raise ConfigError("schedule must be constant or cosine")
    if cfg.steps < 2:
        raise ConfigError("steps must be at least 2")
    if len(cfg.gaussian_mean) != len(cfg.gaussian_std):
        raise ConfigError("gaussian_mean and gaussian_std differ in length")


def format_config(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


# Task construction

def _load_images(path, limit):
    images = read_idx(path)
    if images.ndim != 3:
        raise FormatError("image IDX file must hold a (count, rows, cols) array")
    return images[:limit] if limit else images


def discrete_task(cfg, split="train"):
    """MetaTaskSpec for the configured task; ``split='test'`` prefers ``test_images``."""
    if cfg.task == "dirichlet":
        return synth.dirichlet_task(cfg.grid, cfg.epsilon, cfg.concentration)
    if cfg.task == "mnist":
        path = cfg.test_images if split == "test" and cfg.test_images else cfg.images
        if not path:
            raise ConfigError("task mnist needs images")
        return synth.image_task(_load_images(path, cfg.max_images), cfg.epsilon)
    if cfg.task == "sphere":
        supply = read_pgm(cfg.supply_raster) if cfg.supply_raster else synth.uniform_raster()
        demand = read_pgm(cfg.demand_raster) if cfg.demand_raster else \
            synth.blob_raster(make_rng(cfg.seed, "raster"))
        return synth.sphere_task(supply, demand, make_rng(cfg.seed, "supports"),
                                 cfg.n_supply, cfg.n_demand, cfg.epsilon)
    raise ConfigError(f"task {cfg.task} is not a discrete task")


def _color_images(cfg, split):
    """Sorted PPMs from ``images`` (or ``test_images``), else procedural images."""
    folder = cfg.test_images if split == "test" and cfg.test_images else cfg.images
    if folder:
        paths = sorted(Path(folder).glob("*.ppm"))
        if cfg.max_images:
            paths = paths[:cfg.max_images]
        images = [read_ppm(p) for p in paths]
    else:
        rng = make_rng(cfg.seed, "images", split)
        images = [synth.procedural_image(rng, cfg.image_size, cfg.image_size)
                  for _ in range(cfg.n_images)]
    if len(images) < 2:
        raise InvalidWeights("color tasks need at least two images")
    return images


def _prepare_out(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return Path(cfg.out)


def _write_loss(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])


# Commands

def cmd_train_discrete(cfg):
    task = discrete_task(cfg, "train")
    out = _prepare_out(cfg)
    rng = make_rng(cfg.seed, "train")
    model = init_warm_start(rng, task.m, task.n, cfg.hidden, task.epsilon)
    config = MetaConfig(iters=cfg.iters, batch_size=cfg.batch_size, lr=cfg.lr, hidden=cfg.hidden,
                        schedule=cfg.schedule)
    model, history = train_meta(task, config, rng, model=model)
    save_checkpoint(out / "model.motk", model)
    _write_loss(out / "loss.csv", history)
    (out / "config.txt").write_text(format_config(cfg))
    print(f"trained {cfg.iters} iterations; final loss {history[-1] if history else float('nan'):.6g}")
    return 0


def _load_model(path, kind):
    if not path:
        raise ConfigError("checkpoint is required")
    model = load_checkpoint(path)
    if not isinstance(model, kind):
        raise ConfigError(f"checkpoint holds a {type(model).__name__}, expected {kind.__name__}")
    return model


def cmd_eval_discrete(cfg):
    task = discrete_task(cfg, "test")
    model = _load_model(cfg.checkpoint, WarmStartModel)
    if (model.m, model.n) != (task.m, task.n):
        raise ConfigError(f"checkpoint sizes {(model.m, model.n)} do not match task "
                          f"{(task.m, task.n)}")
    out = _prepare_out(cfg)
    A, B = task.sample(make_rng(cfg.seed, "test"), cfg.instances)
    problems = [task.problem(a, b) for a, b in zip(A, B)]
    records = benchmark(model, problems, tol=cfg.tol, max_iter=cfg.max_iter)
    write_benchmark_csv(records, out / "benchmark.csv")
    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "arm", "iteration", "marginal_error"])
        for r in records:
            for k, e in enumerate(r.error_trace):
                w.writerow([r.instance_id, r.arm, k, repr(float(e))])
    s = summarize(records)
    print(f"instances {s['instances']}")
    print(f"median iterations default {s['median_iterations_default']:g} "
          f"meta {s['median_iterations_meta']:g}")
    print(f"median initial error default {s['median_init_error_default']:.4g} "
          f"meta {s['median_init_error_meta']:.4g}")
    print(f"meta starts closer on {s['meta_init_better']}/{s['instances']}")
    return 0


def rasterize(measure, h, w):
    """Bin each atom's mass to its nearest pixel center on an ``h x w`` grid."""
    atoms = np.asarray(measure.atoms)
    rows = np.clip(np.floor(atoms[:, 0] * h).astype(np.int64), 0, h - 1)
    cols = np.clip(np.floor(atoms[:, 1] * w).astype(np.int64), 0, w - 1)
    grid = np.zeros(h * w)
    np.add.at(grid, rows * w + cols, measure.weights)
    return grid.reshape(h, w)


def interpolation_frames(grid_a, grid_b, steps, epsilon=1e-2, tol=1e-3, max_iter=5000,
                         model=None):
    """Rasterized displacement interpolation frames (mass grids) between two images.

    Without a model, zero pixels are dropped. A warm-start model needs the
    fixed full-grid support, so every pixel is then kept with a small floor.
    """
    grid_a = np.asarray(grid_a, dtype=np.float64)
    grid_b = np.asarray(grid_b, dtype=np.float64)
    if grid_a.shape != grid_b.shape:
        raise InvalidWeights("images must have the same shape")
    h, w = grid_a.shape
    if model is None:
        mu, nu = image_to_measure(grid_a), image_to_measure(grid_b)
        X, Y, a, b = mu.atoms, nu.atoms, mu.weights, nu.weights
        f0 = None
    else:
        if (model.m, model.n) != (h * w, h * w):
            raise ConfigError("checkpoint does not match the image size")
        a, b = synth.image_weights(np.stack([grid_a, grid_b]))
        X = Y = grid_points(h, w)
    problem = EntropicProblem.from_cost(a, b, squared_euclidean_cost(X, Y), epsilon)
    if model is not None:
        f0 = predict_f(model, a, b)
    g0 = None if f0 is None else g_from_f(problem, f0)
    result = sinkhorn(problem, f0, g0, max_iter=max_iter, tol=tol)
    frames = []
    for k in range(steps):
        t = k / (steps - 1)
        frames.append(rasterize(displacement_interpolation(result.coupling, X, Y, t), h, w))
    return frames, result


def cmd_interpolate(cfg):
    if not cfg.image_a or not cfg.image_b:
        raise ConfigError("interpolate needs image_a and image_b")
    grid_a = read_pgm(cfg.image_a).grid
    grid_b = read_pgm(cfg.image_b).grid
    model = _load_model(cfg.checkpoint, WarmStartModel) if cfg.checkpoint else None
    frames, result = interpolation_frames(grid_a, grid_b, cfg.steps, cfg.epsilon, cfg.tol,
                                          cfg.max_iter, model)
    out = _prepare_out(cfg)
    for k, frame in enumerate(frames):
        peak = frame.max()
        write_ppm(out / f"frame_{k}.ppm", np.repeat((frame / peak)[..., None], 3, axis=2))
    print(f"sinkhorn iterations {result.iterations}; wrote {len(frames)} frames")
    return 0


def _hyper_config(cfg):
    return HyperConfig(iters=cfg.iters, meta_batch=cfg.meta_batch, inner_batch=cfg.inner_batch,
                       lr=cfg.lr, schedule=cfg.schedule)


def _w2gn_config(cfg, iters):
    return W2gnConfig(iters=iters, batch_size=cfg.w2gn_batch, lr=cfg.lr)


def cmd_train_color(cfg):
    if cfg.task == "gaussian":
        return _fit_gaussian(cfg)
    if cfg.task != "color":
        raise ConfigError("train-color needs task color or gaussian")
    images = _color_images(cfg, "train")
    tasks = synth.ordered_pairs(images)
    out = _prepare_out(cfg)
    rng = make_rng(cfg.seed, "train")
    hyper = init_hyper(rng, tasks[0].summary_a.size, 3, cfg.icnn_hidden, gamma=cfg.gamma)
    hyper, history = meta_icnn_train(hyper, synth.task_pool_sampler(tasks), _hyper_config(cfg),
                                     rng)
    save_checkpoint(out / "model.motk", hyper)
    _write_loss(out / "loss.csv", history)
    (out / "config.txt").write_text(format_config(cfg))
    print(f"trained on {len(tasks)} ordered pairs for {cfg.iters} iterations")
    return 0


def _fit_gaussian(cfg):
    d = len(cfg.gaussian_mean)
    source = synth.DiagonalGaussian(np.zeros(d), np.ones(d))
    target = synth.DiagonalGaussian(np.array(cfg.gaussian_mean), np.array(cfg.gaussian_std))
    out = _prepare_out(cfg)
    rng = make_rng(cfg.seed, "train")
    pair = init_pair(rng, d, cfg.icnn_hidden, cfg.gamma)
    pair, history = w2gn_train(pair, source.sample, target.sample, _w2gn_config(cfg, cfg.iters),
                               rng)
    save_checkpoint(out / "model.motk", pair)
    _write_loss(out / "loss.csv", history)
    x = source.sample(make_rng(cfg.seed, "test"), cfg.eval_samples)
    exact = synth.gaussian_brenier(source, target, x)
    err = np.mean(np.sum((transport(pair, x) - exact) ** 2, axis=1))
    base = np.mean(np.sum((x - exact) ** 2, axis=1))
    print(f"relative squared map error {err / base:.4g}")
    return 0


def fine_tune_trace(pair, task, cfg, iters, rng, x_eval, y_eval):
    """W2GN from ``pair``; dual values at iteration 0 and every ``eval_every`` steps."""
    trace = [(0, dual_value(pair, x_eval, y_eval))]
    snapshots = {}
    marks = set(cfg.finetune_iters) | {iters}

    def callback(i, p):
        step = i + 1
        if step % cfg.eval_every == 0 or step in marks:
            trace.append((step, dual_value(p, x_eval, y_eval)))
        if step in marks:
            snapshots[step] = p.copy()

    if iters:
        w2gn_train(pair, task.sample_a, task.sample_b, _w2gn_config(cfg, iters), rng, callback)
    return trace, snapshots


def first_reaching(trace, target):
    """First recorded iteration whose dual value is at most ``target`` (None if never)."""
    for step, value in trace:
        if value <= target:
            return step
    return None


def evaluate_color_pair(hyper, task, cfg, pair_id):
    """Rows for one held-out pair plus the predicted and fine-tuned pairs."""
    eval_rng = make_rng(cfg.seed, "eval", pair_id)
    x_eval, y_eval = task.sample_a(eval_rng, cfg.eval_samples), task.sample_b(eval_rng,
                                                                              cfg.eval_samples)
    t0 = time.perf_counter()
    pred = hyper_predict(hyper, task.summary_a, task.summary_b)
    pred_seconds = time.perf_counter() - t0
    init = hyper_predict(_untrained(hyper), task.summary_a, task.summary_b)
    ft_iters = max(cfg.finetune_iters)
    t0 = time.perf_counter()
    cold_trace, cold_snaps = fine_tune_trace(init, task, cfg, max(cfg.ref_iters, ft_iters),
                                             make_rng(cfg.seed, "cold", pair_id), x_eval, y_eval)
    cold_seconds = (time.perf_counter() - t0) / max(cfg.ref_iters, ft_iters)
    t0 = time.perf_counter()
    meta_trace, meta_snaps = fine_tune_trace(pred, task, cfg, ft_iters,
                                             make_rng(cfg.seed, "finetune", pair_id), x_eval,
                                             y_eval)
    meta_seconds = (time.perf_counter() - t0) / max(ft_iters, 1)
    v_init = cold_trace[0][1]
    v_ref = min(v for _, v in cold_trace)
    rows = []

    def row(method, iters, value, seconds):
        rows.append([pair_id, method, iters, repr(value),
                     repr(float(normalized_dual(value, v_init, v_ref))), f"{seconds:.6e}"])

    row("meta", 0, meta_trace[0][1], pred_seconds)
    for k in cfg.finetune_iters:
        row("meta+w2gn", k, dict(meta_trace)[k], pred_seconds + k * meta_seconds)
    for k in cfg.finetune_iters:
        row("w2gn", k, dict(cold_trace)[k], k * cold_seconds)
    target = dict(cold_trace)[min(cfg.finetune_iters)]
    reach = first_reaching(meta_trace, target)
    summary = {"pair_id": pair_id, "normalized_prediction": normalized_dual(
        meta_trace[0][1], v_init, v_ref), "iterations_to_cold": reach}
    return rows, summary, pred, meta_snaps[ft_iters] if ft_iters else pred


def _untrained(hyper):
    """The same hypernetwork with a zero last decoder layer: predicts the reference init."""
    h = hyper.copy()
    h.decoder.weights[-1][:] = 0
    h.decoder.biases[-1][:] = 0
    return h


DUAL_COLUMNS = ["pair_id", "method", "iterations", "dual_value", "normalized_dual", "seconds"]


def cmd_eval_color(cfg):
    if cfg.task != "color":
        raise ConfigError("eval-color needs task color")
    hyper = _load_model(cfg.checkpoint, HyperModel)
    images = _color_images(cfg, "test")
    tasks = synth.ordered_pairs(images)[:cfg.pairs]
    out = _prepare_out(cfg)
    all_rows, summaries = [], []
    for k, task in enumerate(tasks):
        rows, summary, pred, tuned = evaluate_color_pair(hyper, task, cfg, k)
        all_rows += rows
        summaries.append(summary)
        write_ppm(out / f"pair_{k}_source.ppm", task.image_a)
        write_ppm(out / f"pair_{k}_target.ppm", task.image_b)
        write_ppm(out / f"pair_{k}_meta.ppm", color_transfer(task.image_a, pred))
        write_ppm(out / f"pair_{k}_finetuned.ppm", color_transfer(task.image_a, tuned))
    with open(out / "dual_values.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DUAL_COLUMNS)
        w.writerows(all_rows)
    preds = [s["normalized_prediction"] for s in summaries]
    reach = [np.inf if s["iterations_to_cold"] is None else s["iterations_to_cold"]
             for s in summaries]
    print(f"pairs {len(tasks)}")
    print(f"median normalized dual of prediction {np.median(preds):.4f}")
    print(f"median fine-tune iterations to reach cold {min(cfg.finetune_iters)}: "
          f"{np.median(reach):g}")
    return 0


COMMANDS = {
    "train-discrete": cmd_train_discrete,
    "eval-discrete": cmd_eval_discrete,
    "interpolate": cmd_interpolate,
    "train-color": cmd_train_color,
    "eval-color": cmd_eval_color,
}


def _parser():
    p = argparse.ArgumentParser(prog="metaot", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    for f in dataclasses.fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None)
    return p


def load_run_config(argv):
    args = _parser().parse_args(argv)
    raw = {}
    if args.config:
        try:
            raw.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name)
        if value is not None:
            raw[f.name] = value
    return args.command, build_config(raw)


def main(argv=None):
    try:
        command, cfg = load_run_config(argv)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteGradient, NumericalOverflow, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (MetaOTError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
