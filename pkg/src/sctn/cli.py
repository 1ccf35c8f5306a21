"""Command-line front end.

Subcommands: synth, prepare, train, evaluate, predict, ablate, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric error.
All randomness is governed by --seed; identical flags and seed produce
byte-identical primary outputs.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import ablation as ablation_mod
from . import checkpoint, config as config_mod, data as data_mod, metrics, model, optim
from .autodiff import finite_difference_check
from .errors import DataError, NumericError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="sctn", description="trajectory prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_required=False):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--profile", choices=("desk", "paper"))
        p.add_argument("--neighbors", type=int, help="agent channel count N")
        p.add_argument("--se", choices=("on", "off"), help="channel attention toggle")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        if data_required is not None:
            p.add_argument("--data", type=Path, required=data_required,
                           help="input CSV (prepare) or segment cache")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic segment cache"))
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--kind", choices=("linear", "turn", "interaction"), default=None)

    p = common(sub.add_parser("prepare", help="CSV track log -> segment cache"),
               data_required=True)
    p.add_argument("--units", choices=("feet", "meters"))

    common(sub.add_parser("train", help="train on a segment cache"), data_required=True)

    p = common(sub.add_parser("evaluate", help="metrics report on the test split"),
               data_required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = common(sub.add_parser("predict", help="dump trajectories for one segment"),
               data_required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--segment", type=int, default=0)

    common(sub.add_parser("ablate", help="neighbour x SE ablation grid"),
           data_required=True)

    common(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    return parser


def _resolve(args):
    overrides = dict(
        profile=getattr(args, "profile", None),
        seed=getattr(args, "seed", None),
        n_agents=getattr(args, "neighbors", None),
        epochs=getattr(args, "epochs", None),
        batch_size=getattr(args, "batch", None),
        units=getattr(args, "units", None),
        synth_count=getattr(args, "count", None),
        synth_kind=getattr(args, "kind", None),
    )
    if getattr(args, "se", None) is not None:
        overrides["se_enabled"] = args.se == "on"
    file_values = config_mod.parse_config_file(args.config) if args.config else None
    return config_mod.resolve(file_values, overrides)


def _prepare_out(args, cfg):
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.txt").write_text(config_mod.echo(cfg))


def _cmd_synth(args, cfg):
    samples = data_mod.synthesize_scenes(
        cfg["synth_count"], kind=cfg["synth_kind"], seed=cfg["seed"],
        n_agents=cfg["synth_agents"], noise=cfg["synth_noise"])
    split = data_mod.split_dataset(samples, seed=cfg["seed"], fractions=(
        cfg["train_fraction"], cfg["val_fraction"], cfg["test_fraction"]))
    checkpoint.save_segment_cache(args.out / "segments.sctn", split)
    print(f"wrote {len(samples)} synthetic segments to {args.out / 'segments.sctn'}")
    return 0


def _cmd_prepare(args, cfg):
    records = data_mod.parse_trajectory_csv(args.data, units=cfg["units"])
    records = data_mod.resample(records, factor=2)
    samples = data_mod.build_segments(records, cfg["n_agents"],
                                      stride=cfg["stride"],
                                      source_file=str(args.data))
    split = data_mod.split_dataset(samples, seed=cfg["seed"], fractions=(
        cfg["train_fraction"], cfg["val_fraction"], cfg["test_fraction"]))
    checkpoint.save_segment_cache(args.out / "segments.sctn", split)
    print(f"wrote {len(samples)} segments to {args.out / 'segments.sctn'}")
    return 0


def _infer_n_agents(split):
    return split.all_samples()[0].scene.n_agents


def _cmd_train(args, cfg):
    split = checkpoint.load_segment_cache(args.data)
    mcfg = config_mod.model_config_from(cfg, n_agents=_infer_n_agents(split))
    weights = model.ModelWeights(mcfg)
    result = optim.train(split.train, split.validation, weights, mcfg,
                         epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                         seed=cfg["seed"], lr=cfg["lr"],
                         log=lambda r: print(
                             f"epoch {r['epoch']}: train {r['train_loss']:.6f} "
                             f"val {r['val_loss']:.6f} ({r['wall_ms']:.0f} ms)"))
    weights.load_state_dict(result.best_state)
    checkpoint.save_model_checkpoint(args.out / "model.sctn", weights)
    with open(args.out / "run_log.csv", "w") as fh:
        fh.write("epoch,train_loss,val_loss,wall_ms\n")
        for r in result.trace:
            fh.write(f"{r['epoch']},{r['train_loss']:.9f},"
                     f"{r['val_loss']:.9f},{r['wall_ms']:.3f}\n")
    print(f"best validation loss {result.best_val_loss:.6f}; "
          f"checkpoint at {args.out / 'model.sctn'}")
    return 0


def _cmd_evaluate(args, cfg):
    split = checkpoint.load_segment_cache(args.data)
    weights = checkpoint.load_model_checkpoint(args.checkpoint)
    samples = split.test or split.all_samples()
    report = metrics.evaluate(weights, samples, weights.config)
    csv_text = report.to_csv(include_reference=True)
    (args.out / "metrics.csv").write_text(csv_text)
    print(csv_text, end="")
    return 0


def _cmd_predict(args, cfg):
    split = checkpoint.load_segment_cache(args.data)
    samples = split.all_samples()
    if not 0 <= args.segment < len(samples):
        raise UsageError(f"--segment {args.segment} outside 0..{len(samples) - 1}")
    weights = checkpoint.load_model_checkpoint(args.checkpoint)
    mcfg = weights.config
    sample = samples[args.segment]
    scene = sample.scene
    pred = model.predict(scene, weights, mcfg)
    lines = ["segment_id,agent,role,t,x,y"]

    def emit(points, role, t0):
        for agent in range(scene.n_agents):
            if not scene.channel_mask[agent]:
                continue
            for i in range(points.shape[1]):
                x, y = data_mod.denormalize_points(points[agent, i], scene.origin)
                lines.append(f"{args.segment},{agent},{role},{t0 + i},{x:.6f},{y:.6f}")

    emit(scene.observed(mcfg.t_obs), "obs", 0)
    emit(scene.future(mcfg.t_obs), "gt", mcfg.t_obs)
    emit(pred, "pred", mcfg.t_obs)
    text = "\n".join(lines) + "\n"
    (args.out / "trajectories.csv").write_text(text)
    print(f"wrote trajectory dump to {args.out / 'trajectories.csv'}")
    return 0


def _cmd_ablate(args, cfg):
    split = checkpoint.load_segment_cache(args.data)
    samples = split.all_samples()
    counts = [int(tok) for tok in cfg["ablation_neighbors"].split(",") if tok.strip()]
    acfg = ablation_mod.AblationConfig(
        neighbor_counts=counts, epochs=cfg["ablation_epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"])
    base = config_mod.model_config_from(cfg)
    cells = ablation_mod.ablate(acfg, samples, base)
    text = ablation_mod.grid_csv(cells)
    (args.out / "ablation.csv").write_text(text)
    print(text, end="")
    failed = [c for c in cells if not c.ok]
    if failed:
        print(f"{len(failed)} of {len(cells)} cells failed", file=sys.stderr)
    return 0


def _cmd_gradcheck(args, cfg):
    mcfg = model.ModelConfig(**model.TOY_DIMS)
    weights = model.ModelWeights(mcfg)
    samples = data_mod.synthesize_scenes(1, kind="linear", seed=cfg["seed"],
                                         n_agents=mcfg.n_agents)
    scene = _toy_scene(samples[0].scene, mcfg)
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    for name, param in weights.registry.items():
        def f(_p, _name=name):
            loss = optim.l2_loss(
                model.teacher_forced_forward(scene, weights, mcfg, training=False),
                scene.future(mcfg.t_obs), scene.channel_mask)
            return loss
        err = finite_difference_check(f, param, step=1e-3, sample=8, rng=rng)
        worst = max(worst, err)
    print(f"max relative gradient error: {worst:.3e}")
    if worst >= 1e-4:
        raise NumericError(f"gradient check failed: {worst:.3e} >= 1e-4")
    return 0


def _toy_scene(scene, mcfg):
    window = mcfg.t_obs + mcfg.t_pred
    return model.Scene(positions=scene.positions[:, :window],
                       channel_mask=scene.channel_mask,
                       target_index=scene.target_index, origin=scene.origin)


_COMMANDS = {
    "synth": _cmd_synth,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        cfg = _resolve(args)
        _prepare_out(args, cfg)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
