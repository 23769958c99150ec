"""Experiment orchestration CLI.

Subcommands reproduce the full pipeline from a config file:

    nslab gen-data      render datasets and test videos
    nslab train         train autoencoder realizations per setup
    nslab analyze       AveNonSmooth of originals vs reconstructions
    nslab fit-channels  SMP propagation fits, regressions, Monte Carlo
    nslab report        aggregate, validate, and manifest all tables

Every command is a pure function of (config, input files, master seed);
reruns are byte-identical. Exit codes: 0 success, 2 config error, 3 missing
or corrupt input, 4 numeric failure.
"""

import argparse
import csv
import hashlib
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

import nslab
from nslab.channels import (
    ChannelStack,
    ConvChannelModel,
    fit_maxpool_channel,
    fit_relu_channel,
    linreg_r2,
    monte_carlo_pipeline,
    pearson,
    predict_conv_smp,
    save_channel_params,
    wasserstein1,
    window_max,
)
from nslab.config import ExperimentConfig, load_config
from nslab.engine import TrainConfig, load_checkpoint, save_checkpoint, train_autoencoder
from nslab.errors import (
    ConfigError,
    FormatError,
    MissingInputError,
    NumericError,
    ShapeError,
)
from nslab.idx import load_idx_images, write_idx_images
from nslab.nonsmooth import ave_nonsmooth
from nslab.probe import layer_smp_map, reconstruct_video, trace_forward
from nslab.rng import derive_rng
from nslab.synthgen import (
    EllipsoidSpec,
    LightPath,
    VideoSequence,
    generate_ellipsoid_dataset,
    generate_light_path_video,
    generate_noise_trajectory_video,
    generate_rotation_dataset,
    load_templates,
    random_light_path,
)

SCHEMAS = {
    "losses.csv": ["setup", "realization", "epoch", "train_mse", "val_mse"],
    "avenonsmooth.csv": ["setup", "realization", "video", "value"],
    "smp_pairs": ["boundary", "node_c", "node_r", "node_col", "x", "y"],
    "r2_summary.csv": ["layer", "mode", "slope", "intercept", "r2"],
    "pearson.csv": ["layer", "value", "n"],
    "wasserstein.csv": ["layer", "wasserstein1", "real_mean", "ratio"],
    "mc_hist.csv": ["bin_lo", "bin_hi", "predicted_fraction", "real_fraction"],
}

PROBE_BOUNDARIES = [
    "conv2:in", "conv2:out", "act2:out", "pool2:out",
    "tconv1:in", "tconv1:out", "tconv2:in", "tconv2:out", "tconv3:in", "tconv3:out",
]


# ---------------------------------------------------------------- layout

def train_idx_path(config):
    return config.out_dir / "datasets" / "train-images.idx"


def val_idx_path(config):
    return config.out_dir / "datasets" / "val-images.idx"


def video_dir(config, k: int):
    return config.out_dir / "videos" / f"video_{k:03d}"


def checkpoint_path(config, setup: str, realization: int):
    return config.out_dir / "checkpoints" / f"{setup}_r{realization:02d}.nsmn"


def ellipsoid_spec(config) -> EllipsoidSpec:
    return EllipsoidSpec(
        a=config.semi_a, b=config.semi_b, c=config.semi_c,
        resolution=config.resolution, window=config.window,
    )


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _require(paths) -> list:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingInputError(
            "missing required inputs:\n  " + "\n  ".join(missing), missing
        )
    return [Path(p) for p in paths]


def _run_tasks(worker, tasks, jobs: int):
    """Ordered task execution, optionally across processes. Results always
    come back in task order so downstream writes are deterministic."""
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def _train_seed(config, setup: str, realization: int) -> int:
    return int(derive_rng(config.seed, "train", setup, realization).integers(2**63))


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(config: ExperimentConfig) -> int:
    out = config.out_dir
    (out / "datasets").mkdir(parents=True, exist_ok=True)
    if config.dataset == "ellipsoid":
        spec = ellipsoid_spec(config)
        train = generate_ellipsoid_dataset(
            config.train_images, config.seed, spec,
            coord_range=config.light_range, light_z=config.light_z, stream="train",
        )
        val = generate_ellipsoid_dataset(
            config.val_images, config.seed, spec,
            coord_range=config.light_range, light_z=config.light_z, stream="val",
        )
        write_idx_images(train_idx_path(config), train)
        write_idx_images(val_idx_path(config), val)
        span = config.light_range - 1.0  # default path runs corner to corner
        default = LightPath(
            (-span, -span, config.light_z), (span, span, config.light_z), step=config.step
        )
        generate_light_path_video(default, spec).save(video_dir(config, 0))
        for k in range(1, config.videos):
            path = random_light_path(
                config.seed, k, step=config.step,
                coord_range=config.light_range, light_z=config.light_z,
            )
            generate_light_path_video(path, spec).save(video_dir(config, k))
    else:
        templates = load_templates(
            config.idx_images, config.idx_labels, config.digit,
            config.templates, config.seed, config.resolution,
        )
        train = generate_rotation_dataset(
            templates, config.angles_per_template, config.seed, stream="train"
        )
        val = generate_rotation_dataset(
            templates, config.val_angles_per_template, config.seed, stream="val"
        )
        write_idx_images(train_idx_path(config), train)
        write_idx_images(val_idx_path(config), val)
        for k in range(config.videos):
            video = generate_noise_trajectory_video(
                templates[k % len(templates)], config.seed,
                n_frames=config.noise_frames, stream=k,
            )
            video.save(video_dir(config, k))
    print(f"gen-data: {config.train_images} train / {config.val_images} val images, "
          f"{config.videos} videos -> {out}")
    return 0


# ---------------------------------------------------------------- train

def _train_worker(args):
    (train_path, val_path, setup, realization, seed, epochs, batch_size, lr,
     ckpt_path) = args
    train = load_idx_images(train_path)
    val = load_idx_images(val_path)
    cfg = TrainConfig(setup=setup, epochs=epochs, batch_size=batch_size, lr=lr)
    ckpt = train_autoencoder(train, val, cfg, seed)
    Path(ckpt_path).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, ckpt_path)
    return setup, realization, ckpt.epoch, ckpt.val_loss, ckpt.history


def cmd_train(config: ExperimentConfig) -> int:
    _require([train_idx_path(config), val_idx_path(config)])
    tasks = [
        (
            str(train_idx_path(config)), str(val_idx_path(config)), setup, r,
            _train_seed(config, setup, r), config.epochs, config.batch_size,
            config.learning_rate, str(checkpoint_path(config, setup, r)),
        )
        for setup in config.setups
        for r in range(config.realizations)
    ]
    results = _run_tasks(_train_worker, tasks, config.jobs)
    rows = []
    for setup, realization, best_epoch, best_val, history in results:
        for epoch, train_mse, val_mse in history:
            rows.append((setup, realization, epoch, train_mse, val_mse))
        print(f"train: {setup} r{realization:02d} best epoch {best_epoch} "
              f"val MSE {best_val:.6f}")
    _write_csv(config.out_dir / "checkpoints" / "losses.csv",
               SCHEMAS["losses.csv"], rows)
    return 0


# ---------------------------------------------------------------- analyze

def _analyze_worker(args):
    ckpt_path, vdir, setup, realization, video_idx = args
    net = load_checkpoint(ckpt_path).network()
    video = VideoSequence.load(vdir)
    recon = reconstruct_video(net, video)
    return setup, realization, video_idx, ave_nonsmooth(recon)


def cmd_analyze(config: ExperimentConfig) -> int:
    ckpts = [
        checkpoint_path(config, setup, r)
        for setup in config.setups
        for r in range(config.realizations)
    ]
    vdirs = [video_dir(config, k) for k in range(config.videos)]
    _require(ckpts + vdirs)
    rows = []
    for k, vdir in enumerate(vdirs):
        rows.append(("original", -1, k, ave_nonsmooth(VideoSequence.load(vdir))))
    tasks = [
        (str(checkpoint_path(config, setup, r)), str(video_dir(config, k)), setup, r, k)
        for setup in config.setups
        for r in range(config.realizations)
        for k in range(config.videos)
    ]
    rows.extend(_run_tasks(_analyze_worker, tasks, config.jobs))
    _write_csv(config.out_dir / "analysis" / "avenonsmooth.csv",
               SCHEMAS["avenonsmooth.csv"], rows)
    by_setup = {}
    for setup, _r, _k, value in rows:
        by_setup.setdefault(setup, []).append(value)
    for setup, values in by_setup.items():
        print(f"analyze: {setup} mean AveNonSmooth {np.mean(values):.3e} "
              f"over {len(values)} videos")
    return 0


# ---------------------------------------------------------------- fit-channels

def _probe_worker(args):
    ckpt_path, vdir = args
    net = load_checkpoint(ckpt_path).network()
    video = VideoSequence.load(vdir)
    maps = layer_smp_map(trace_forward(net, video, boundaries=PROBE_BOUNDARIES))
    return {b: m.values for b, m in maps.items()}


def _pearson_pairs(weights, x_map):
    """(|W|, input SMP) pairs over every output node's receptive field,
    padding positions excluded."""
    from numpy.lib.stride_tricks import sliding_window_view

    k = weights.shape[-1]
    p = (k - 1) // 2
    xp = np.pad(x_map, ((0, 0), (p, p), (p, p)), constant_values=np.nan)
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C_in, H, W, k, k)
    w_b = np.abs(weights)[:, :, None, None, :, :]  # (C_out, C_in, 1, 1, k, k)
    x_b = np.broadcast_to(windows[None], (weights.shape[0], *windows.shape))
    ws = np.broadcast_to(w_b, x_b.shape).ravel()
    xs = x_b.ravel()
    keep = ~np.isnan(xs)
    return ws[keep], xs[keep]


def _node_rows(boundary, x_values, y_values):
    """smp_pairs rows for per-node (C, H, W) predictor/response maps."""
    c, h, w = y_values.shape
    ci, ri, qi = np.unravel_index(np.arange(y_values.size), (c, h, w))
    xs = x_values.ravel()
    ys = y_values.ravel()
    return [
        (boundary, int(ci[i]), int(ri[i]), int(qi[i]), float(xs[i]), float(ys[i]))
        for i in range(y_values.size)
    ]


def _location_rows(boundary, x_values, y_values):
    """smp_pairs rows for per-location (H, W) maps; channel index is -1."""
    h, w = y_values.shape
    ri, qi = np.unravel_index(np.arange(y_values.size), (h, w))
    xs = x_values.ravel()
    ys = y_values.ravel()
    return [
        (boundary, -1, int(ri[i]), int(qi[i]), float(xs[i]), float(ys[i]))
        for i in range(y_values.size)
    ]


def cmd_fit_and_predict(config: ExperimentConfig) -> int:
    if "relu_maxpool" not in config.setups:
        raise ConfigError("fit-channels requires the relu_maxpool setup")
    realizations = range(config.realizations)
    ckpts = [checkpoint_path(config, "relu_maxpool", r) for r in realizations]
    vdirs = [video_dir(config, k) for k in range(config.probe_videos)]
    _require(ckpts + vdirs)
    channels_dir = config.out_dir / "channels"
    channels_dir.mkdir(parents=True, exist_ok=True)

    nets = [load_checkpoint(p).network() for p in ckpts]
    tasks = [(str(ckpts[r]), str(vdirs[v]))
             for r in realizations for v in range(config.probe_videos)]
    probe_maps = _run_tasks(_probe_worker, tasks, config.jobs)

    tconv_names = ("tconv1", "tconv2", "tconv3")
    pooled = {("conv2", "actual"): ([], []), ("conv2", "expected"): ([], [])}
    for name in tconv_names:
        pooled[(name, "actual")] = ([], [])
        pooled[(name, "expected")] = ([], [])
    relu_x, relu_y = [], []
    pool_x, pool_y = [], []
    pearson_w, pearson_x = [], []
    mc_inputs = []  # (realization, conv2:in map, real pool2:out map)

    # per-realization calibration pairs for the Monte Carlo conv stage
    cal_pairs = {r: ([], []) for r in realizations}

    task_idx = 0
    for r in realizations:
        net = nets[r]
        conv2_idx = net.spec.layer_index("conv", 2)
        layer_models = {
            name: (layer_models_for(net, name, "actual"),
                   layer_models_for(net, name, "expected"))
            for name in ("conv2",) + tconv_names
        }
        conv2_kernel = net.params[f"W{conv2_idx}"]
        for v in range(config.probe_videos):
            maps = probe_maps[task_idx]
            task_idx += 1
            rows = []
            # conv/tconv relations are compared at the per-location
            # channel-mean level, the level at which the expectation model
            # is defined; node_c is -1 for those rows
            for name in ("conv2",) + tconv_names:
                x_map = maps[f"{name}:in"]
                y_map = maps[f"{name}:out"]
                y_mean = y_map.mean(axis=0)
                actual_model, expected_model = layer_models[name]
                pred_actual = predict_conv_smp(x_map, actual_model)
                if name == "conv2":
                    cal_pairs[r][0].append(pred_actual.ravel())
                    cal_pairs[r][1].append(y_map.ravel())
                pred_actual_mean = pred_actual.mean(axis=0)
                rows.extend(_location_rows(f"{name}:out/actual", pred_actual_mean, y_mean))
                pooled[(name, "actual")][0].append(pred_actual_mean.ravel())
                pooled[(name, "actual")][1].append(y_mean.ravel())
                pred_expected = predict_conv_smp(x_map, expected_model)
                rows.extend(_location_rows(f"{name}:out/expected", pred_expected, y_mean))
                pooled[(name, "expected")][0].append(pred_expected.ravel())
                pooled[(name, "expected")][1].append(y_mean.ravel())
            rows.extend(_node_rows("act2:out/relu", maps["conv2:out"], maps["act2:out"]))
            relu_x.append(maps["conv2:out"].ravel())
            relu_y.append(maps["act2:out"].ravel())
            pool_in = window_max(maps["act2:out"])
            rows.extend(_node_rows("pool2:out/maxpool", pool_in, maps["pool2:out"]))
            pool_x.append(pool_in.ravel())
            pool_y.append(maps["pool2:out"].ravel())
            pw, px = _pearson_pairs(conv2_kernel, maps["conv2:in"])
            pearson_w.append(pw)
            pearson_x.append(px)
            mc_inputs.append((r, maps["conv2:in"], maps["pool2:out"]))
            _write_csv(channels_dir / f"smp_pairs_r{r:02d}_v{v:03d}.csv",
                       SCHEMAS["smp_pairs"], rows)

    # regressions; a layer without recorded events yields a NaN row, not a crash
    r2_rows = []
    for (layer, mode), (xs, ys) in pooled.items():
        try:
            res = linreg_r2(np.concatenate(xs), np.concatenate(ys))
            r2_rows.append((layer, mode, res.slope, res.intercept, res.r2))
            print(f"fit-channels: {layer} [{mode}] R^2 = {res.r2:.3f}")
        except NumericError as exc:
            r2_rows.append((layer, mode, float("nan"), float("nan"), float("nan")))
            print(f"fit-channels: {layer} [{mode}] degenerate ({exc})")
    r2_rows.sort(key=lambda row: (row[0], row[1]))
    _write_csv(channels_dir / "r2_summary.csv", SCHEMAS["r2_summary.csv"], r2_rows)

    # channel fits on pooled pairs
    relu_x = np.concatenate(relu_x)
    relu_y = np.concatenate(relu_y)
    eps_zero = config.eps_zero_frac * max(relu_x.max(), relu_y.max())
    relu_params = fit_relu_channel(relu_x, relu_y, eps_zero)
    save_channel_params(relu_params, channels_dir / "relu_params.txt")
    pool_x = np.concatenate(pool_x)
    pool_y = np.concatenate(pool_y)
    pool_params = fit_maxpool_channel(pool_x, pool_y, a=config.pool_split)
    save_channel_params(pool_params, channels_dir / "maxpool_params.txt")
    print(f"fit-channels: relu theta={relu_params.theta:.3f} sigma={relu_params.sigma:.4g}; "
          f"maxpool pi0={pool_params.pi0:.3f}")

    # weight-independence check
    try:
        corr = pearson(np.concatenate(pearson_w), np.concatenate(pearson_x))
        print(f"fit-channels: Pearson(|W|, input SMP) = {corr:.3f}")
    except NumericError as exc:
        corr = float("nan")
        print(f"fit-channels: Pearson degenerate ({exc})")
    _write_csv(channels_dir / "pearson.csv", SCHEMAS["pearson.csv"],
               [("conv2", corr, int(sum(len(w) for w in pearson_w)))])

    # Monte Carlo prediction of the conv2 -> act2 -> pool2 block; the conv
    # stage uses the fitted linear model (per-realization calibration)
    predicted = []
    real = []
    try:
        calibrated = {}
        for r in realizations:
            model = layer_models_for(nets[r], "conv2", "actual")
            try:
                cal = linreg_r2(np.concatenate(cal_pairs[r][0]),
                                np.concatenate(cal_pairs[r][1]))
                model.cal_slope = cal.slope
                model.cal_intercept = cal.intercept
            except NumericError:
                pass  # no events recorded: keep the raw structural sum
            calibrated[r] = model
        for r, x_map, real_out in mc_inputs:
            stack = ChannelStack(conv=calibrated[r], relu=relu_params, pool=pool_params)
            samples = monte_carlo_pipeline(
                x_map, stack, config.mc_trials, derive_rng(config.seed, "mc", r)
            )
            predicted.append(samples.ravel())
            real.append(real_out.ravel())
        predicted = np.concatenate(predicted)
        real = np.concatenate(real)
        w1 = wasserstein1(predicted, real)
    except NumericError as exc:
        predicted = np.zeros(1)
        real = np.zeros(1)
        w1 = float("nan")
        print(f"fit-channels: Monte Carlo skipped ({exc})")
    real_mean = float(real.mean())
    ratio = w1 / real_mean if real_mean > 0 else float("nan")
    _write_csv(channels_dir / "wasserstein.csv", SCHEMAS["wasserstein.csv"],
               [("pool2", w1, real_mean, ratio)])
    print(f"fit-channels: Wasserstein-1 {w1:.4g} vs real mean {real_mean:.4g} "
          f"(ratio {ratio:.2f})")

    lo = 0.0
    hi = max(predicted.max(), real.max()) or 1.0
    edges = np.linspace(lo, hi, 41)
    pred_hist, _ = np.histogram(predicted, bins=edges)
    real_hist, _ = np.histogram(real, bins=edges)
    hist_rows = [
        (float(edges[i]), float(edges[i + 1]),
         float(pred_hist[i] / predicted.size), float(real_hist[i] / real.size))
        for i in range(len(edges) - 1)
    ]
    _write_csv(channels_dir / "mc_hist.csv", SCHEMAS["mc_hist.csv"], hist_rows)
    return 0


def layer_models_for(net, name: str, mode: str) -> ConvChannelModel:
    tag = "conv" if name.startswith("conv") else "tconv"
    idx = net.spec.layer_index(tag, int(name[-1]))
    return ConvChannelModel.from_layer(net.spec.layers[idx], net.params[f"W{idx}"], mode)


# ---------------------------------------------------------------- report

def _schema_for(path: Path):
    if path.name.startswith("smp_pairs"):
        return SCHEMAS["smp_pairs"]
    return SCHEMAS.get(path.name)


def _validate_csv(path: Path) -> int:
    schema = _schema_for(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"empty table {path}", 0)
        if schema is not None and header != schema:
            raise FormatError(f"schema violation in {path}: header {header}", 0)
        n = 0
        for row in reader:
            if len(row) != len(header):
                raise FormatError(
                    f"schema violation in {path}: row {n + 2} has {len(row)} "
                    f"columns, expected {len(header)}", 0,
                )
            n += 1
    return n


def cmd_report(config: ExperimentConfig) -> int:
    out = config.out_dir
    expected = [
        out / "checkpoints" / "losses.csv",
        out / "analysis" / "avenonsmooth.csv",
        out / "channels" / "r2_summary.csv",
        out / "channels" / "pearson.csv",
        out / "channels" / "wasserstein.csv",
        out / "channels" / "mc_hist.csv",
        out / "channels" / "relu_params.txt",
        out / "channels" / "maxpool_params.txt",
    ]
    _require(expected)
    tables = sorted(
        [p for p in expected if p.suffix == ".csv"]
        + sorted((out / "channels").glob("smp_pairs_*.csv"))
    )
    lines = [f"tool_version={nslab.__version__}", f"config_hash={config.config_hash()}"]
    for table in tables:
        rows = _validate_csv(table)
        digest = hashlib.sha256(table.read_bytes()).hexdigest()
        lines.append(f"table={table.relative_to(out)} rows={rows} sha256={digest}")
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"report: {len(tables)} tables -> {report_dir / 'manifest.txt'}")
    return 0


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "fit-channels": cmd_fit_and_predict,
    "predict": cmd_fit_and_predict,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=str, default=None, help="INI config file")
        cmd.add_argument("--seed", type=int, default=None, help="master seed override")
        cmd.add_argument("--out", type=str, default=None,
                         help="output directory (NSLAB_OUT overrides)")
        cmd.add_argument("--paper-scale", action="store_true",
                         help="restore full experiment sizes")
        cmd.add_argument("--jobs", type=int, default=None, help="parallel workers")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = {"kind": args.command, "seed": args.seed, "jobs": args.jobs}
    if args.out is not None:
        overrides["out"] = args.out
    env_out = os.environ.get("NSLAB_OUT")
    if env_out:
        overrides["out"] = env_out
    if args.paper_scale:
        overrides["paper_scale"] = True
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingInputError, FormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ShapeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
