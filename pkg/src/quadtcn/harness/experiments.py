"""Experiment commands: train, eval, scaling, ablate, errdist and synth.

Each command takes an :class:`ExperimentConfig`, writes CSV files into
``config.out`` and returns the text it printed, so tests can exercise the
commands without a subprocess.
"""

from __future__ import annotations

import glob
import statistics
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import hybrid as hyb
from ..dataset import (
    NormStats,
    SynthSpec,
    fit_norm_stats,
    interpolate_uniform,
    load_telemetry,
    make_windows,
    save_telemetry,
    split_dataset,
    synth_trajectories,
    window_arrays,
)
from ..errors import CheckpointError, ConfigError, DataError
from ..physics import PhysicsParams, identify_params, physics_rollout
from ..tcn import TCN, ArrayDataset, NetworkConfig, fit, predict
from ..tcn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from . import reports
from .config import HYBRID_VARIANTS, ExperimentConfig

CHECKPOINT_NAME = "checkpoint.bin"
PREDICT_CHUNK = 512


# ---------------------------------------------------------------------------
# Data


def load_trajectories(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        spec = SynthSpec(amplitude=d.amplitude, f_min=d.f_min, f_max=d.f_max, perturbation=d.perturbation)
        return synth_trajectories(cfg.physics, d.n_trajectories, d.duration, seed=cfg.seed, spec=spec)
    paths = sorted(glob.glob(d.files))
    if not paths:
        raise DataError(f"no telemetry files match {d.files!r}")
    return [interpolate_uniform(load_telemetry(p), d.rate) for p in paths]


def load_split(cfg: ExperimentConfig):
    return split_dataset(load_trajectories(cfg), cfg.test_fraction, cfg.seed)


def windows_for(cfg: ExperimentConfig, trajs, stride: int):
    wins = make_windows(trajs, cfg.past_steps, cfg.future_steps, stride)
    if not wins:
        raise DataError(f"trajectories are shorter than P + F = {cfg.past_steps + cfg.future_steps} samples")
    return wins


def model_physics(cfg: ExperimentConfig, train) -> PhysicsParams:
    if not cfg.identify_physics:
        return cfg.physics
    return identify_params(train, cfg.physics, dt=cfg.dt).params


# ---------------------------------------------------------------------------
# Model construction and training


def train_e2e(cfg: ExperimentConfig, train, network: NetworkConfig | None = None, log=None):
    network = network or cfg.network
    stats = fit_norm_stats(train)
    X, Y = window_arrays(windows_for(cfg, train, cfg.stride), stats, network.dtype)
    model = TCN(network)
    cb = None if log is None else (lambda epoch, loss: log(f"epoch {epoch + 1} loss {loss:.6g}"))
    losses = fit(ArrayDataset(X, Y), model, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed, cb)
    return model, stats, losses


def hybrid_config(cfg: ExperimentConfig, params: PhysicsParams) -> tuple[hyb.HybridConfig, float]:
    """Component configs for the configured hybrid variant, with the budget gap (0 when fixed)."""
    variant = HYBRID_VARIANTS[cfg.model]
    h = cfg.hybrid
    base = cfg.network
    changes = {}
    if h.num_blocks:
        changes["num_blocks"] = h.num_blocks
    if h.kernel_size:
        changes["kernel_size"] = h.kernel_size
    history = cfg.hybrid_history
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if h.channels == "auto":
            template = base.replace(**changes) if changes else base
            motor, accel, gap = hyb.match_parameter_budget(base, variant, history, template=template)
        else:
            shaped = base.replace(channels=int(h.channels), **changes)
            motor = hyb.component_config(shaped, history, hyb.MOTOR_OUT) if variant != "accel" else None
            accel = hyb.component_config(shaped, history, hyb.ACCEL_OUT) if variant != "motor" else None
            gap = 0.0
    return hyb.HybridConfig(variant, motor, accel, params, cfg.dt), gap


def build_checkpoint(cfg: ExperimentConfig, log=None):
    """Train the configured model; returns ``(Checkpoint, losses)``."""
    train, _ = load_split(cfg)
    params = model_physics(cfg, train)
    meta = replace(cfg, physics=params).to_flat()
    if cfg.model == "physics":
        return Checkpoint("physics", {}, meta, {}), []
    if cfg.model == "e2e-tcn":
        model, stats, losses = train_e2e(cfg, train, log=log)
        return Checkpoint("e2e-tcn", {"e2e": model}, meta, stats.as_arrays()), losses
    hcfg, gap = hybrid_config(cfg, params)
    stats = fit_norm_stats(train)
    comps, losses = hyb.train_hybrid(train, hcfg, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed,
                                     stride=cfg.hybrid.train_stride, stats=stats)
    aux = dict(stats.as_arrays())
    for name, comp in comps.items():
        aux[f"{name}.out_mean"] = comp.out_mean
        aux[f"{name}.out_std"] = comp.out_std
    meta["hybrid.budget_gap"] = reports.fmt(gap)
    meta["hybrid.training"] = "teacher-forced single-step targets"
    flat_losses = [sum(vals) for vals in zip(*losses.values())] if losses else []
    nets = {name: comp.model for name, comp in comps.items()}
    return Checkpoint(hcfg.kind, nets, meta, aux), flat_losses


def config_from_checkpoint(ckpt: Checkpoint) -> ExperimentConfig:
    flat = {k: v for k, v in ckpt.metadata.items() if k not in ("hybrid.budget_gap", "hybrid.training")}
    try:
        return ExperimentConfig.from_flat(flat)
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint carries an invalid experiment config: {exc}") from None


# ---------------------------------------------------------------------------
# Prediction


class Predictor:
    """Multi-step predictions for a list of windows, shape ``(N, F, 6)``."""

    def __init__(self, kind: str, cfg: ExperimentConfig, ckpt: Checkpoint | None = None):
        self.kind = kind
        self.cfg = cfg
        self.ckpt = ckpt
        self.stats = NormStats.from_arrays(ckpt.aux) if ckpt is not None and ckpt.aux else None
        variants = {tag: v for v, tag in hyb.KIND_TAGS.items()}
        if kind in variants:
            self.components = {
                name: hyb.TCNComponent(model, self.stats, ckpt.aux[f"{name}.out_mean"], ckpt.aux[f"{name}.out_std"])
                for name, model in ckpt.networks.items()
            }
            nets = {name: model.config for name, model in ckpt.networks.items()}
            self.hcfg = hyb.HybridConfig(variants[kind], nets.get("motor"), nets.get("accel"), cfg.physics, cfg.dt)

    def __call__(self, windows) -> np.ndarray:
        if not windows:
            raise DataError("empty test set")
        X_p = np.stack([w.X_p for w in windows])
        U_p = np.stack([w.U_p for w in windows])
        U_f = np.stack([w.U_f for w in windows])
        if self.kind == "zoh":
            return np.repeat(X_p[:, -1:, 6:12], U_f.shape[1], axis=1)
        if self.kind == "physics":
            return _chunked(lambda s: physics_rollout(X_p[s, -1], U_f[s], self.cfg.dt, self.cfg.physics), len(X_p))
        if self.kind == "e2e-tcn":
            model = self.ckpt.networks["e2e"]
            if model.config.future_steps != U_f.shape[1] or model.config.past_steps != X_p.shape[1]:
                raise ConfigError("window shape does not match the network's past/future steps")
            X, _ = window_arrays(windows, self.stats, model.config.dtype)
            out = predict(model, X).astype(float)
            return self.stats.denormalize_labels(out, axis=1).transpose(0, 2, 1)
        return _chunked(lambda s: hyb.hybrid_rollout(X_p[s], U_p[s], U_f[s], self.hcfg, self.components), len(X_p))


def _chunked(fn, n):
    return np.concatenate([fn(slice(i, i + PREDICT_CHUNK)) for i in range(0, n, PREDICT_CHUNK)])


def labels(windows) -> np.ndarray:
    return np.stack([w.Y_f for w in windows])


# ---------------------------------------------------------------------------
# Commands


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stderr(msg):
    print(msg, file=sys.stderr)


def cmd_train(cfg: ExperimentConfig, log=_stderr) -> str:
    out = _out_dir(cfg)
    ckpt, losses = build_checkpoint(cfg, log=log)
    save_checkpoint(out / CHECKPOINT_NAME, ckpt)
    (out / "loss.csv").write_text(reports.csv_text(["epoch", "train_loss"],
                                                   [[i + 1, loss] for i, loss in enumerate(losses)]))
    n_params = sum(m.num_parameters() for m in ckpt.networks.values())
    final = reports.fmt(losses[-1]) if losses else "-"
    return reports.aligned(["model", "parameters", "epochs", "final loss"],
                           [[ckpt.kind, n_params, len(losses), final]])


def _resolve(cfg: ExperimentConfig, checkpoint, expected_kind=None):
    if checkpoint is None:
        if cfg.model != "physics":
            raise ConfigError(f"model {cfg.model!r} needs a checkpoint (run train first or pass --checkpoint)")
        return cfg, Predictor("physics", cfg)
    ckpt = load_checkpoint(checkpoint, expected_kind)
    stored = config_from_checkpoint(ckpt).with_overrides(out=cfg.out)
    return stored, Predictor(ckpt.kind, stored, ckpt)


def evaluate(cfg: ExperimentConfig, predictor: Predictor, horizon: int | None = None, label: str | None = None):
    _, test = load_split(cfg)
    wins = windows_for(cfg, test, cfg.eval_stride)
    pred, truth = predictor(wins), labels(wins)
    if horizon is not None:
        if not 1 <= horizon <= cfg.future_steps:
            raise ConfigError(f"horizon {horizon} exceeds the configured F = {cfg.future_steps}")
        pred, truth = pred[:, :horizon], truth[:, :horizon]
    return reports.HorizonReport.from_predictions(label or predictor.kind, pred, truth, cfg.dt), wins, pred, truth


def cmd_eval(cfg: ExperimentConfig, checkpoint=None, horizon=None, baseline: bool = False) -> str:
    cfg, predictor = _resolve(cfg, checkpoint)
    out = _out_dir(cfg)
    report, *_ = evaluate(cfg, predictor, horizon)
    (out / f"eval_{report.model}.csv").write_text(report.to_csv())
    text = report.table()
    if baseline:
        zoh, *_ = evaluate(cfg, Predictor("zoh", cfg), horizon, label="zero-order-hold")
        (out / "eval_zero-order-hold.csv").write_text(zoh.to_csv())
        text += "\n" + zoh.table().split("\n\n")[0].rstrip("\n") + "\n"
    return text


def forward_rate(model: TCN, passes: int, seed: int = 0) -> float:
    """Forward passes per second: inverse median wall time of timed batch-1 evals."""
    cfg = model.config
    x = np.random.default_rng(seed).standard_normal((1, cfg.input_channels, cfg.seq_len)).astype(cfg.dtype)
    model(x)
    times = []
    for _ in range(passes):
        t = time.perf_counter()
        model(x)
        times.append(time.perf_counter() - t)
    return 1.0 / max(statistics.median(times), 1e-12)


def cmd_scaling(cfg: ExperimentConfig, layers=None, log=_stderr) -> str:
    layers = tuple(layers or cfg.scaling_layers)
    if len(layers) < 2:
        raise ConfigError("scaling needs at least two layer counts")
    out = _out_dir(cfg)
    train, test = load_split(cfg)
    wins = windows_for(cfg, test, cfg.eval_stride)
    truth = labels(wins)
    steps = [s for s in (45, 90) if s <= cfg.future_steps] or [cfg.future_steps]
    rows = []
    for n in layers:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            net = cfg.network.replace(num_blocks=n)
        log(f"scaling: {n} blocks")
        model, stats, _ = train_e2e(cfg, train, net, log=log)
        ckpt = Checkpoint("e2e-tcn", {"e2e": model}, {}, stats.as_arrays())
        rep = reports.HorizonReport.from_predictions("e2e-tcn", Predictor("e2e-tcn", cfg, ckpt)(wins), truth, cfg.dt)
        fps = forward_rate(model, cfg.timing_passes, cfg.seed)
        rows.append([n, model.num_parameters(), fps] + [v for s in steps for v in rep.at(s)])
    header = ["layers", "parameters", "fps"] + [f"{q}_mse_step{s}" for s in steps for q in ("vel", "rate")]
    (out / "scaling.csv").write_text(reports.csv_text(header, rows))
    shown = [[r[0], r[1], f"{r[2]:.1f}"] + [reports.fmt(v) for v in r[3:]] for r in rows]
    text = reports.aligned(header, shown)
    ref_header = ["layers", "parameters", "fps (GPU)", "vel_mse_step45", "rate_mse_step45",
                  "vel_mse_step90", "rate_mse_step90"]
    text += "\n" + reports.aligned(ref_header, [[str(c) for c in r] for r in reports.reference_scaling_rows()])
    return text


def ablation_grid(base: NetworkConfig, dropout: float) -> list[tuple[str, NetworkConfig]]:
    neutral = dict(use_batchnorm=True, dropout_rate=0.0, shortened_gradient=False, loss_kind="L2")
    rows = [
        ("none", dict(use_batchnorm=False)),
        ("BN", {}),
        ("BN+Drop", dict(dropout_rate=dropout)),
        ("BN+SG", dict(shortened_gradient=True)),
        ("BN+WL2", dict(loss_kind="WL2")),
        ("BN+L1", dict(loss_kind="L1")),
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [(name, base.replace(**{**neutral, **sw})) for name, sw in rows]


def cmd_ablate(cfg: ExperimentConfig, log=_stderr) -> str:
    out = _out_dir(cfg)
    train, test = load_split(cfg)
    wins = windows_for(cfg, test, cfg.eval_stride)
    truth = labels(wins)
    F = cfg.future_steps
    rows = []
    for name, net in ablation_grid(cfg.network, cfg.ablation_dropout):
        log(f"ablation: {name}")
        model, stats, _ = train_e2e(cfg, train, net, log=log)
        ckpt = Checkpoint("e2e-tcn", {"e2e": model}, {}, stats.as_arrays())
        rep = reports.HorizonReport.from_predictions(name, Predictor("e2e-tcn", cfg, ckpt)(wins), truth, cfg.dt)
        rows.append([name, str(net.use_batchnorm).lower(), net.dropout_rate, str(net.shortened_gradient).lower(),
                     net.loss_kind, float(rep.vel_mse.mean()), float(rep.rate_mse.mean()), *rep.at(F)])
    header = ["row", "batchnorm", "dropout", "shortened_gradient", "loss", "vel_mse", "rate_mse",
              f"vel_mse_step{F}", f"rate_mse_step{F}"]
    (out / "ablation.csv").write_text(reports.csv_text(header, rows))
    text = reports.aligned(header, [[r[0], r[1], reports.fmt(r[2]), r[3], r[4]] + [reports.fmt(v) for v in r[5:]]
                                    for r in rows])
    text += "\n" + reports.aligned(["row", "vel_mse", "rate_mse"],
                                   [[str(c) for c in r] for r in reports.reference_ablation_rows()])
    return text


def window_covariates(traj, t0: int, past: int, future: int, dt: float) -> list[float]:
    """Mean position speed, mean command rate and roll/pitch variance over a window's span."""
    X = traj.states[t0 - past + 1:t0 + future + 1]
    U = traj.controls[t0 - past + 1:t0 + future + 1]
    pos_rate = float(np.linalg.norm(np.diff(X[:, 3:6], axis=0), axis=1).mean() / dt)
    cmd_rate = float(np.linalg.norm(np.diff(U, axis=0), axis=1).mean() / dt)
    return [pos_rate, cmd_rate, float(X[:, 0].var()), float(X[:, 1].var())]


def cmd_errdist(cfg: ExperimentConfig, checkpoint=None) -> str:
    cfg, predictor = _resolve(cfg, checkpoint)
    out = _out_dir(cfg)
    report, wins, pred, truth = evaluate(cfg, predictor)
    _, test = load_split(cfg)

    box_rows = []
    for which, err in (("vel", report.vel_err), ("rate", report.rate_err)):
        pct = report.percentiles(which)
        for i in range(report.horizon):
            b = reports.box_stats(err[:, i])
            box_rows.append([which, i + 1, b["median"], b["q1"], b["q3"], b["whisker_lo"], b["whisker_hi"],
                             b["max"], *pct[i]])
    box_header = ["quantity", "step", "median", "q1", "q3", "whisker_lo", "whisker_hi", "max",
                  "p50", "p75", "p90", "p99", "p100"]
    (out / "errdist.csv").write_text(reports.csv_text(box_header, box_rows))

    score = report.vel_err.mean(axis=1)
    k = reports.outlier_count(len(wins))
    order = np.argsort(-score, kind="stable")[:k]
    names = ["wx", "wy", "wz", "vx", "vy", "vz"]
    dump = []
    cov_rows = []
    for idx in order:
        w = wins[idx]
        for s in range(pred.shape[1]):
            dump.append([int(idx), w.traj_id, w.t0, s + 1, *pred[idx, s], *truth[idx, s]])
        cov_rows.append([int(idx), w.traj_id, w.t0, score[idx],
                         *window_covariates(test[w.traj_id], w.t0, cfg.past_steps, cfg.future_steps, cfg.dt)])
    dump_header = ["window", "traj_id", "t0", "step"] + [f"pred_{n}" for n in names] + [f"true_{n}" for n in names]
    (out / "outliers.csv").write_text(reports.csv_text(dump_header, dump))
    all_cov = np.array([window_covariates(test[w.traj_id], w.t0, cfg.past_steps, cfg.future_steps, cfg.dt)
                        for w in wins])
    mean_rows = [["outliers", *np.mean([r[4:] for r in cov_rows], axis=0)], ["all", *all_cov.mean(axis=0)]]
    cov_header = ["window", "traj_id", "t0", "score", "pos_rate", "cmd_rate", "roll_var", "pitch_var"]
    (out / "outlier_covariates.csv").write_text(reports.csv_text(cov_header, cov_rows))

    steps = reports.summary_steps(report.horizon)
    rows = []
    for which in ("vel", "rate"):
        pct = report.percentiles(which)
        for s in steps:
            rows.append([which, s] + [reports.fmt(v) for v in pct[s - 1]])
    text = reports.aligned(["quantity", "step", "p50", "p75", "p90", "p99", "max"], rows)
    text += "\n" + reports.aligned(["group", "pos_rate", "cmd_rate", "roll_var", "pitch_var"],
                                   [[r[0]] + [reports.fmt(v) for v in r[1:]] for r in mean_rows])
    text += f"\n{k} of {len(wins)} windows dumped as outliers\n"
    return text


def cmd_synth(cfg: ExperimentConfig, n: int | None = None, duration: float | None = None) -> str:
    out = _out_dir(cfg)
    d = cfg.data
    spec = SynthSpec(amplitude=d.amplitude, f_min=d.f_min, f_max=d.f_max, perturbation=d.perturbation)
    trajs = synth_trajectories(cfg.physics, n or d.n_trajectories, duration or d.duration, seed=cfg.seed, spec=spec)
    rows = []
    for i, traj in enumerate(trajs):
        path = out / f"synth_{i:03d}.csv"
        save_telemetry(traj, path, comment=f"synthetic flight {i}, seed {cfg.seed}")
        rows.append([path.name, len(traj), f"{traj.duration:.2f}"])
    return reports.aligned(["file", "samples", "duration_s"], rows)
