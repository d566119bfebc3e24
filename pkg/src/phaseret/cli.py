"""Command-line entry point for reproducible experiments.

Subcommands: ``demo-swap``, ``solve``, ``train``, ``eval``, ``bench``,
``ablate``.  Every run resolves its configuration (built-in defaults, then a
config file, then command-line flags), writes the result to ``run.json``
inside the output directory, and exits 0 only if all requested artifacts were
written.  ``--threads 1`` pins the BLAS pools for bit-reproducible runs.

The data root holds the standard IDX files, one directory per dataset
(``mnist/``, ``emnist/``, ``fashion-mnist/``, ``kmnist/``); it comes from
``--data-root`` or the ``PHASERET_DATA`` environment variable.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, nn
from .cascade import (
    TrainConfig,
    build_cascade,
    load_checkpoint,
    reconstruct_many,
    save_checkpoint,
    spec_for_method,
    train_cascade,
)
from .evaluation import evaluate, mse as mse_metric
from .measurement import swap_demo
from .numerics import decompose, fft2, hermitian_part
from .solvers import SolverParams, solve_dataset

CLASSICAL = ("hio", "raar", "er")
LEARNED = ("mlp", "cpr", "cpr-fs")
DEFAULT_BETAS = {"hio": 0.8, "raar": 0.87, "er": 0.8}


def _data_root(value):
    root = value or os.environ.get("PHASERET_DATA") or "data"
    return Path(root)


def _load_config_file(path):
    """Config files are flat key=value lines; a run.json from an earlier run
    (with its nested "config" object) is accepted too."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        blob = json.loads(text)
        return blob.get("config", blob)
    config = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _coerce(value, like):
    if like is None or isinstance(value, type(like)):
        return value
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    return type(like)(value)


def _resolve(defaults, file_config, cli_values):
    """defaults < config file < explicitly-passed CLI flags."""
    resolved = dict(defaults)
    for key, value in (file_config or {}).items():
        key = key.replace("-", "_")
        if key in resolved:
            resolved[key] = _coerce(value, defaults.get(key))
        else:
            resolved[key] = value
    for key, value in cli_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _write_run_record(out_dir, command, config):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "version": __version__,
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)


def _display_magnitude(omega):
    disp = np.log1p(np.asarray(omega))
    peak = disp.max()
    return disp / peak if peak > 0 else disp


def _display_phase(phi):
    return (np.asarray(phi) + np.pi) / (2.0 * np.pi)


def _dataset_losses(dataset, q):
    """MSE everywhere; Fashion-MNIST swaps in MAE for the final stage."""
    if dataset == "fashion-mnist":
        return (nn.MSE,) * (q - 1) + (nn.MAE,)
    return (nn.MSE,) * q


def _evaluate_and_write(recs, origs, method, dataset, out_dir, grid_name):
    report = evaluate(recs, origs)
    row = data.report_row(method, dataset, report)
    data.write_report([row], out_dir / "report.json", out_dir / "report.csv")
    count = min(64, len(recs))
    data.write_image_grid(list(recs[:count]), 8, out_dir / "grids" / f"{grid_name}.png")
    data.write_image_grid(list(origs[:count]), 8, out_dir / "grids" / "originals.png")
    print(
        f"{method} on {dataset}: mse={report.mean_mse:.4f} "
        f"mae={report.mean_mae:.4f} ssim={report.mean_ssim:.4f} "
        f"(ci95 mse {report.ci95_mse:.4f}, n={report.count})"
    )
    return report


def cmd_demo_swap(config):
    out_dir = Path(config["out"])
    dataset = data.load_dataset(config["dataset"], _data_root(config["data_root"]), "test")
    index = int(config["index"])
    if not 0 <= index < len(dataset):
        raise ValueError(f"index {index} out of range for {len(dataset)} test images")
    x = dataset.images[index]
    result = swap_demo(x, seed=int(config["seed"]))
    omega, phi = decompose(hermitian_part(fft2(x)))

    mse_phase = mse_metric(x, result.x_random_phase)
    mse_mag = mse_metric(x, result.x_random_magnitude)
    panels = [
        x,
        _display_magnitude(omega),
        _display_phase(result.phase_used),
        np.clip(result.x_random_phase, 0.0, 1.0),
        _display_phase(phi),
        _display_magnitude(result.magnitude_used),
        np.clip(result.x_random_magnitude, 0.0, 1.0),
    ]
    data.write_image_grid(panels, 7, out_dir / "grids" / "demo_swap.png")
    with open(out_dir / "demo.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "dataset": config["dataset"],
                "index": index,
                "mse_random_phase": mse_phase,
                "mse_random_magnitude": mse_mag,
            },
            fh,
            indent=1,
        )
    print(
        f"swap demo ({config['dataset']}[{index}]): "
        f"mse with random phase {mse_phase:.4f}, with random magnitude {mse_mag:.4f}"
    )
    _write_run_record(out_dir, "demo-swap", config)
    return 0


def cmd_solve(config):
    method = config["method"]
    if method not in CLASSICAL:
        raise ValueError(f"solve expects one of {CLASSICAL}, got {method!r}")
    out_dir = Path(config["out"])
    dataset = data.load_dataset(config["dataset"], _data_root(config["data_root"]), "test")
    images = data.subset(dataset.images, int(config["subset"]), int(config["seed"]))
    omegas = np.abs(np.fft.fft2(images, axes=(-2, -1)))

    beta = config["beta"] if config["beta"] is not None else DEFAULT_BETAS[method]
    params = SolverParams(
        beta=float(beta),
        iterations=int(config["iters"]),
        restarts=int(config["restarts"]),
        seed=int(config["seed"]),
        clip_output=bool(config["clip"]),
    )
    results = solve_dataset(method, omegas, params)
    recs = np.stack([r.reconstruction for r in results])
    _evaluate_and_write(
        recs, images, method, config["dataset"], out_dir, "reconstructions"
    )
    _write_run_record(out_dir, "solve", config)
    return 0


def _train_one(config, images, dataset_name, out_dir, q=None, announce=""):
    method = config["method"] if q is None else "cpr-fs"
    q_arg = int(config["q"]) if (q is None and config.get("q")) else q
    losses = _dataset_losses(dataset_name, q_arg or (5 if method != "mlp" else 1))
    spec = spec_for_method(
        method,
        q=q_arg,
        losses=losses,
        input_size=images.shape[-1],
        width=int(config["width"]) if config.get("width") else None,
    )
    model = build_cascade(
        spec,
        seed=int(config["seed"]),
        dropout_rate=float(config["dropout"]),
        learning_rate=float(config["lr"]),
    )
    train_config = TrainConfig(
        epochs=int(config["epochs"]),
        batch_size=int(config["batch_size"]),
        learning_rate=float(config["lr"]),
        seed=int(config["seed"]),
        val_fraction=float(config["val_fraction"]),
    )

    ckpt_dir = out_dir / "checkpoints"
    history_path = out_dir / "history.json"

    def on_epoch_end(model_, history_):
        save_checkpoint(model_, ckpt_dir / "latest")
        with open(history_path, "w", encoding="utf-8") as fh:
            json.dump(history_, fh, indent=1)
        losses_str = " ".join(f"{v:.5f}" for v in history_["train_loss"][-1])
        total = model_.epoch - len(history_["val_mse"]) + train_config.epochs
        val = history_["val_mse"][-1]
        val_str = f"{val:.5f}" if val is not None else "n/a"
        print(
            f"{announce}epoch {model_.epoch}/{total}: "
            f"stage losses [{losses_str}] val mse {val_str}"
        )

    history = train_cascade(model, images, train_config, on_epoch_end=on_epoch_end)
    save_checkpoint(model, ckpt_dir / "final")
    return model, history


def cmd_train(config):
    method = config["method"]
    if method not in LEARNED:
        raise ValueError(f"train expects one of {LEARNED}, got {method!r}")
    out_dir = Path(config["out"])
    dataset = data.load_dataset(config["dataset"], _data_root(config["data_root"]), "train")
    images = data.subset(dataset.images, int(config["subset"]), int(config["seed"]))
    _train_one(config, images, config["dataset"], out_dir)
    _write_run_record(out_dir, "train", config)
    return 0


def cmd_eval(config):
    out_dir = Path(config["out"])
    if not config.get("checkpoint"):
        raise ValueError("eval needs --checkpoint (a directory written by train)")
    model = load_checkpoint(config["checkpoint"])
    dataset = data.load_dataset(config["dataset"], _data_root(config["data_root"]), "test")
    images = data.subset(dataset.images, int(config["subset"]), int(config["seed"]))
    omegas = np.abs(np.fft.fft2(images, axes=(-2, -1)))
    recs = reconstruct_many(model, omegas)
    method = {1: "mlp"}.get(model.spec.q, "cpr-fs" if len(set(model.spec.scales)) == 1 else "cpr")
    _evaluate_and_write(recs, images, method, config["dataset"], out_dir, "reconstructions")
    _write_run_record(out_dir, "eval", config)
    return 0


def cmd_bench(config):
    out_dir = Path(config["out"])
    dataset = data.load_dataset(config["dataset"], _data_root(config["data_root"]), "test")
    images = data.subset(dataset.images, int(config["subset"]), int(config["seed"]))
    omegas = np.abs(np.fft.fft2(images, axes=(-2, -1)))

    rows = []
    for entry in str(config["methods"]).split(","):
        entry = entry.strip()
        if not entry:
            continue
        name, _, ckpt = entry.partition("=")
        if name in CLASSICAL:
            params = SolverParams(
                beta=DEFAULT_BETAS[name],
                iterations=int(config["iters"]),
                restarts=int(config["restarts"]),
                seed=int(config["seed"]),
            )
            results = solve_dataset(name, omegas, params)
            recs = np.stack([r.reconstruction for r in results])
        elif ckpt:
            recs = reconstruct_many(load_checkpoint(ckpt), omegas)
        else:
            raise ValueError(
                f"bench method {entry!r}: learned methods need a checkpoint, "
                f"written as name=path"
            )
        report = evaluate(recs, images)
        rows.append(data.report_row(name, config["dataset"], report))
        print(
            f"{name}: mse={report.mean_mse:.4f} mae={report.mean_mae:.4f} "
            f"ssim={report.mean_ssim:.4f}"
        )
        count = min(64, len(recs))
        data.write_image_grid(list(recs[:count]), 8, out_dir / "grids" / f"{name}.png")
    if not rows:
        raise ValueError("bench needs at least one method")
    data.write_report(rows, out_dir / "report.json", out_dir / "report.csv")
    _write_run_record(out_dir, "bench", config)
    return 0


def cmd_ablate(config):
    out_dir = Path(config["out"])
    root = _data_root(config["data_root"])
    train_images = data.subset(
        data.load_dataset(config["dataset"], root, "train").images,
        int(config["subset"]),
        int(config["seed"]),
    )
    test_images = data.subset(
        data.load_dataset(config["dataset"], root, "test").images,
        int(config["test_subset"]),
        int(config["seed"]),
    )
    test_omegas = np.abs(np.fft.fft2(test_images, axes=(-2, -1)))

    if config.get("qs"):
        q_values = sorted({int(v) for v in str(config["qs"]).split(",")})
    else:
        q_values = list(range(1, int(config["max_q"]) + 1))

    rows = []
    for q in q_values:
        q_dir = out_dir / f"q{q}"
        model, _ = _train_one(config, train_images, config["dataset"], q_dir,
                              q=q, announce=f"[q={q}] ")
        recs = reconstruct_many(model, test_omegas)
        report = evaluate(recs, test_images)
        rows.append(data.report_row(f"cpr-fs-q{q}", config["dataset"], report))
        print(
            f"q={q}: test mse {report.mean_mse:.5f} "
            f"(ci95 {report.ci95_mse:.5f}, ssim {report.mean_ssim:.4f})"
        )
    data.write_report(rows, out_dir / "report.json", out_dir / "ablation.csv")
    _write_run_record(out_dir, "ablate", config)
    return 0


def _add_common(parser, out_default):
    parser.add_argument("--out", default=None, help=f"output directory (default {out_default})")
    parser.add_argument("--data-root", dest="data_root", default=None,
                        help="dataset root (default $PHASERET_DATA or ./data)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None,
                        help="key=value config file or a previous run.json")
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS threads (1 for bit-reproducible runs)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phaseret",
        description="Phase retrieval workbench: solvers, cascade training, evaluation",
    )
    parser.add_argument("--version", action="version", version=f"phaseret {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-swap", help="magnitude/phase swap demonstration")
    _add_common(p, "runs/demo-swap")
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--index", type=int, default=None, help="test image index")

    p = sub.add_parser("solve", help="classical solver over the test split")
    _add_common(p, "runs/solve")
    p.add_argument("--method", default=None, choices=CLASSICAL)
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--subset", type=int, default=None, help="test subset size (0 = full)")
    p.add_argument("--no-clip", dest="clip", action="store_false", default=None)

    p = sub.add_parser("train", help="train a cascade (mlp = single stage)")
    _add_common(p, "runs/train")
    p.add_argument("--method", default=None, choices=LEARNED)
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--q", type=int, default=None, help="stages for cpr-fs")
    p.add_argument("--width", type=int, default=None, help="hidden width override")
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.add_argument("--subset", type=int, default=None, help="train subset size (0 = full)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p, "runs/eval")
    p.add_argument("--checkpoint", default=None, required=False)
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--subset", type=int, default=None)

    p = sub.add_parser("bench", help="run several methods, one combined table")
    _add_common(p, "runs/bench")
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--methods", default=None,
                   help="comma list: hio,raar,er and learned name=checkpoint")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--subset", type=int, default=None)

    p = sub.add_parser("ablate", help="cascade-depth sweep (full-scale stages)")
    _add_common(p, "runs/ablate")
    p.add_argument("--dataset", default=None, choices=sorted(data.DATASETS))
    p.add_argument("--max-q", dest="max_q", type=int, default=None)
    p.add_argument("--qs", default=None, help="explicit comma list of stage counts")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.add_argument("--subset", type=int, default=None, help="train subset size")
    p.add_argument("--test-subset", dest="test_subset", type=int, default=None)

    return parser


DEFAULTS = {
    "demo-swap": {
        "out": "runs/demo-swap", "data_root": None, "seed": 0, "threads": None,
        "dataset": "mnist", "index": 0,
    },
    "solve": {
        "out": "runs/solve", "data_root": None, "seed": 0, "threads": None,
        "dataset": "mnist", "method": "hio", "iters": 1000, "restarts": 3,
        "beta": None, "subset": 0, "clip": True,
    },
    "train": {
        "out": "runs/train", "data_root": None, "seed": 0, "threads": None,
        "dataset": "mnist", "method": "cpr", "epochs": 100, "batch_size": 64,
        "lr": 1e-4, "q": None, "width": None, "dropout": 0.2,
        "val_fraction": 0.1, "subset": 0,
    },
    "eval": {
        "out": "runs/eval", "data_root": None, "seed": 0, "threads": None,
        "dataset": "mnist", "checkpoint": None, "subset": 0,
    },
    "bench": {
        "out": "runs/bench", "data_root": None, "seed": 0, "threads": None,
        "dataset": "mnist", "methods": "hio,raar", "iters": 1000, "restarts": 3,
        "subset": 0,
    },
    "ablate": {
        "out": "runs/ablate", "data_root": None, "seed": 0, "threads": None,
        "dataset": "emnist", "max_q": 5, "qs": None, "epochs": 50,
        "batch_size": 64, "lr": 1e-4, "width": None, "dropout": 0.2,
        "val_fraction": 0.1, "subset": 10000, "test_subset": 0,
    },
}

COMMANDS = {
    "demo-swap": cmd_demo_swap,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_file = args.pop("config", None)
    file_config = _load_config_file(config_file) if config_file else {}
    config = _resolve(DEFAULTS[command], file_config, args)

    try:
        threads = config.get("threads")
        if threads:
            import threadpoolctl

            with threadpoolctl.threadpool_limits(int(threads)):
                return COMMANDS[command](config)
        return COMMANDS[command](config)
    except Exception as exc:  # noqa: BLE001 - single-line cause, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
