"""Cascaded reconstruction model and its stage-wise training loop.

A cascade is an ordered list of dense sub-networks.  Stage 1 maps the
flattened (normalized) magnitude to an image at scale ``scales[0]``; every
later stage receives the magnitude concatenated with the previous stage's
reconstruction and predicts the image at its own scale, the last one at full
resolution.  Training updates one stage at a time: the loss of stage p never
touches the parameters of earlier stages, and the reconstruction passed down
the chain is the one computed before the stage's own update.

Magnitudes are divided by the image side length before entering any network;
raw magnitudes carry a DC entry up to n^2, which destabilizes dense layers.
The constant is recorded in checkpoints.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .validation import as_image, as_image_stack

CHECKPOINT_VERSION = 1
_TENSOR_MAGIC = b"PFTENSOR"

# disjoint seed streams for the validation split and the dropout masks
_SPLIT_STREAM = 101
_DROPOUT_STREAM = 202

# per-stage output sides and hidden widths for the five-stage defaults
CPR_SCALES = (7, 12, 17, 22, 28)
CPR_WIDTHS = (1136, 1336, 1536, 1736, 1936)
FULL_SCALE_WIDTH = 1936


@dataclass(frozen=True)
class CascadeSpec:
    """Architecture description: ``q`` stages, per-stage output sides
    (non-decreasing, ending at ``input_size``), hidden widths and losses."""

    scales: tuple
    widths: tuple
    losses: tuple
    input_size: int = 28
    hidden_layers_per_stage: int = 3

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "losses", tuple(self.losses))
        if not self.scales:
            raise ValueError("cascade needs at least one stage")
        if len(self.widths) != self.q or len(self.losses) != self.q:
            raise ValueError(
                f"scales/widths/losses lengths disagree: "
                f"{len(self.scales)}/{len(self.widths)}/{len(self.losses)}"
            )
        if any(a > b for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be non-decreasing, got {self.scales}")
        if self.scales[-1] != self.input_size:
            raise ValueError(
                f"final scale {self.scales[-1]} must equal input size {self.input_size}"
            )
        if any(s < 1 for s in self.scales) or any(w < 1 for w in self.widths):
            raise ValueError("scales and widths must be positive")
        for kind in self.losses:
            if kind not in nn.LOSS_KINDS:
                raise ValueError(f"unknown loss kind {kind!r}")

    @property
    def q(self):
        return len(self.scales)

    def stage_input_dim(self, p):
        """Input width of stage ``p`` (0-based): the flattened magnitude plus,
        from stage 2 on, the previous stage's flattened output."""
        base = self.input_size**2
        return base if p == 0 else base + self.scales[p - 1] ** 2

    @classmethod
    def cpr(cls, losses=None, input_size=28):
        losses = tuple(losses) if losses else (nn.MSE,) * len(CPR_SCALES)
        return cls(CPR_SCALES, CPR_WIDTHS, losses, input_size=input_size)

    @classmethod
    def cpr_fs(cls, q=5, losses=None, input_size=28):
        losses = tuple(losses) if losses else (nn.MSE,) * q
        return cls((input_size,) * q, (FULL_SCALE_WIDTH,) * q, losses, input_size=input_size)

    @classmethod
    def mlp(cls, loss=nn.MSE, input_size=28):
        """Degenerate single-stage cascade: the plain MLP baseline."""
        return cls((input_size,), (FULL_SCALE_WIDTH,), (loss,), input_size=input_size)

    def to_dict(self):
        return {
            "q": self.q,
            "scales": list(self.scales),
            "widths": list(self.widths),
            "losses": list(self.losses),
            "input_size": self.input_size,
            "hidden_layers_per_stage": self.hidden_layers_per_stage,
        }

    @classmethod
    def from_dict(cls, d):
        spec = cls(
            tuple(d["scales"]),
            tuple(d["widths"]),
            tuple(d["losses"]),
            input_size=int(d["input_size"]),
            hidden_layers_per_stage=int(d["hidden_layers_per_stage"]),
        )
        if "q" in d and int(d["q"]) != spec.q:
            raise ValueError(f"manifest q={d['q']} disagrees with {spec.q} scales")
        return spec


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.1
    dropout_rate: float = 0.2
    loss_overrides: tuple | None = None

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


class CascadeModel:
    """Spec plus one DenseNet and one Adam state per stage."""

    def __init__(self, spec, nets, adam, seed=0, epoch=0):
        self.spec = spec
        self.nets = nets
        self.adam = adam
        self.seed = seed
        self.epoch = epoch
        self.input_scale = float(spec.input_size)

    def normalize_magnitudes(self, omegas):
        flat = np.asarray(omegas, dtype=np.float64) / self.input_scale
        return flat.reshape(flat.shape[0], -1).astype(np.float32)

    def forward_chain(self, om_flat, train=False, rng=None):
        """Run all stages; returns the per-stage flattened outputs."""
        outputs = []
        prev = None
        for p, net in enumerate(self.nets):
            inp = om_flat if p == 0 else np.concatenate([om_flat, prev], axis=1)
            prev = net.forward(inp, train=train, rng=rng)
            outputs.append(prev)
        return outputs


def build_cascade(spec, seed=0, dropout_rate=0.2, learning_rate=1e-4, dtype=np.float32):
    """Initialize every stage: 3 hidden blocks at the stage width, then the
    sigmoid output block sized ``scale**2``."""
    nets = []
    adam = []
    seeds = np.random.SeedSequence(seed).spawn(spec.q)
    for p in range(spec.q):
        nets.append(
            nn.make_mlp(
                spec.stage_input_dim(p),
                spec.widths[p],
                spec.scales[p] ** 2,
                hidden_layers=spec.hidden_layers_per_stage,
                dropout_rate=dropout_rate,
                rng=np.random.default_rng(seeds[p]),
                dtype=dtype,
            )
        )
        adam.append(nn.AdamState(learning_rate=learning_rate))
    return CascadeModel(spec, nets, adam, seed=seed)


def downsample_nn(x, n_p):
    """Nearest-neighbor downsampling with center-aligned sampling: output
    pixel (r, c) copies source pixel (floor((r+0.5)n/n_p), floor((c+0.5)n/n_p))."""
    img = as_image(x)
    n = img.shape[0]
    n_p = int(n_p)
    if not 1 <= n_p <= n:
        raise ValueError(f"target side {n_p} out of range [1, {n}]")
    if n_p == n:
        return img.copy()
    idx = np.floor((np.arange(n_p) + 0.5) * n / n_p).astype(int)
    return img[np.ix_(idx, idx)]


def _downsample_batch(images, n_p):
    n = images.shape[-1]
    if n_p == n:
        return images
    idx = np.floor((np.arange(n_p) + 0.5) * n / n_p).astype(int)
    return images[:, idx[:, None], idx[None, :]]


def _epoch_permutation(n_items, seed, epoch):
    rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
    return rng.permutation(n_items)


def train_cascade(model, images, config, val_images=None, on_epoch_end=None):
    """Stage-wise training per the cascade's update rule.

    Magnitudes are computed from the batch on the fly.  For each stage p the
    targets are the nearest-neighbor downsampled originals at the stage
    scale; the stage is updated with its own loss while everything upstream
    stays frozen.  When ``val_images`` is None a ``config.val_fraction``
    split is carved from ``images`` deterministically.

    Returns a history dict with per-stage mean training loss and validation
    MSE (registration-free) per epoch.
    """
    config.validate()
    images = as_image_stack(images)
    if images.shape[-1] != model.spec.input_size:
        raise ValueError(
            f"images are {images.shape[-1]}x{images.shape[-1]} but the model "
            f"expects {model.spec.input_size}"
        )
    if val_images is None:
        n_val = int(len(images) * config.val_fraction)
        if n_val > 0:
            perm = np.random.default_rng(
                np.random.SeedSequence((config.seed, _SPLIT_STREAM))
            ).permutation(len(images))
            val_images = images[perm[:n_val]]
            images = images[perm[n_val:]]
        else:
            val_images = images[:0]
    else:
        val_images = as_image_stack(val_images)

    losses = config.loss_overrides or model.spec.losses
    if len(losses) != model.spec.q:
        raise ValueError(f"need {model.spec.q} losses, got {len(losses)}")
    for state in model.adam:
        state.learning_rate = config.learning_rate

    q = model.spec.q
    history = {"train_loss": [], "val_mse": []}
    for epoch in range(config.epochs):
        # per-epoch streams keyed by the model's epoch counter, so training
        # resumed from a checkpoint replays the run it interrupted
        dropout_rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, _DROPOUT_STREAM, model.epoch + 1))
        )
        order = _epoch_permutation(len(images), config.seed, model.epoch + 1)
        stage_loss = np.zeros(q)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = images[order[start : start + config.batch_size]]
            omegas = np.abs(np.fft.fft2(batch, axes=(-2, -1)))
            om_flat = model.normalize_magnitudes(omegas)
            prev = None
            for p in range(q):
                target = _downsample_batch(batch, model.spec.scales[p])
                target = target.reshape(len(batch), -1).astype(np.float32)
                inp = om_flat if p == 0 else np.concatenate([om_flat, prev], axis=1)
                out = model.nets[p].forward(inp, train=True, rng=dropout_rng)
                value, grad = nn.loss_and_grad(losses[p], out, target)
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"non-finite loss {value} at epoch {model.epoch + 1}, "
                        f"stage {p + 1}, batch starting at {start}"
                    )
                model.nets[p].backward(grad)
                nn.adam_step(model.nets[p], model.adam[p])
                prev = out  # pre-update output, per the stage-wise rule
                stage_loss[p] += value
            n_batches += 1
        model.epoch += 1
        history["train_loss"].append((stage_loss / max(n_batches, 1)).tolist())
        history["val_mse"].append(
            validation_mse(model, val_images) if len(val_images) else None
        )
        if on_epoch_end is not None:
            on_epoch_end(model, history)
    return history


def validation_mse(model, images, batch_size=512):
    """Plain MSE of the final stage against the originals, no registration."""
    if len(images) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        recs = reconstruct_many(model, np.abs(np.fft.fft2(batch, axes=(-2, -1))))
        total += float(((recs - batch) ** 2).mean(axis=(-2, -1)).sum())
    return total / len(images)


def reconstruct(model, omega):
    """Inference on one magnitude; returns (final image, all stage images)."""
    omega = as_image(omega, name="omega")
    if omega.shape[0] != model.spec.input_size:
        raise ValueError(
            f"omega is {omega.shape[0]}x{omega.shape[0]} but the model "
            f"expects {model.spec.input_size}"
        )
    outputs = model.forward_chain(model.normalize_magnitudes(omega[None]))
    images = [
        out[0].astype(np.float64).reshape(s, s)
        for out, s in zip(outputs, model.spec.scales)
    ]
    return images[-1], images


def reconstruct_many(model, omegas, batch_size=1024):
    """Batched inference; returns an (N, n, n) float64 stack."""
    omegas = np.asarray(omegas, dtype=np.float64)
    if omegas.ndim == 2:
        omegas = omegas[None]
    n = model.spec.input_size
    out = np.empty((len(omegas), n, n))
    for start in range(0, len(omegas), batch_size):
        chunk = omegas[start : start + batch_size]
        final = model.forward_chain(model.normalize_magnitudes(chunk))[-1]
        out[start : start + len(chunk)] = final.astype(np.float64).reshape(-1, n, n)
    return out


def _write_tensor(path, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(arr.tobytes())


def _read_tensor(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _TENSOR_MAGIC:
            raise ValueError(f"{path}: bad tensor magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(count * 4)
        if len(payload) != count * 4:
            raise ValueError(f"{path}: truncated payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def _model_arrays(model):
    """Every array in the checkpoint as (filename stem, array), stage-major."""
    items = []
    for p, (net, state) in enumerate(zip(model.nets, model.adam), start=1):
        for key, param in net.param_items():
            items.append((f"stage{p}.{key}", param))
            if key in state.m:
                items.append((f"stage{p}.{key}.adam_m", state.m[key]))
                items.append((f"stage{p}.{key}.adam_v", state.v[key]))
        for key, arr in net.state_items():
            items.append((f"stage{p}.{key}", arr))
    return items


def save_checkpoint(model, path):
    """Write ``manifest.json`` plus one PFTENSOR file per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "epoch": model.epoch,
        "seed": model.seed,
        "normalization": model.input_scale,
        "adam": [
            {
                "t": state.t,
                "learning_rate": state.learning_rate,
                "beta1": state.beta1,
                "beta2": state.beta2,
                "epsilon": state.epsilon,
            }
            for state in model.adam
        ],
        "tensors": [name for name, _ in _model_arrays(model)],
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    for name, arr in _model_arrays(model):
        _write_tensor(path / f"{name}.bin", arr)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint directory, verifying shapes."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {manifest.get('format_version')}"
        )
    spec = CascadeSpec.from_dict(manifest["spec"])
    model = build_cascade(spec, seed=manifest.get("seed", 0))
    model.epoch = int(manifest["epoch"])
    model.input_scale = float(manifest["normalization"])

    for state, entry in zip(model.adam, manifest["adam"]):
        state.t = int(entry["t"])
        state.learning_rate = float(entry["learning_rate"])
        state.beta1 = float(entry["beta1"])
        state.beta2 = float(entry["beta2"])
        state.epsilon = float(entry["epsilon"])

    stored = set(manifest["tensors"])
    for p, (net, state) in enumerate(zip(model.nets, model.adam), start=1):
        for key, param in net.param_items():
            name = f"stage{p}.{key}"
            loaded = _read_tensor(path / f"{name}.bin")
            if loaded.shape != param.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {loaded.shape} does not match "
                    f"model shape {param.shape}"
                )
            param[...] = loaded
            if f"{name}.adam_m" in stored:
                state.m[key] = _read_tensor(path / f"{name}.adam_m.bin")
                state.v[key] = _read_tensor(path / f"{name}.adam_v.bin")
        for key, arr in net.state_items():
            loaded = _read_tensor(path / f"stage{p}.{key}.bin")
            if loaded.shape != arr.shape:
                raise ValueError(f"stage{p}.{key}: shape mismatch in checkpoint")
            arr[...] = loaded
    return model


def spec_for_method(method, q=None, losses=None, input_size=28, width=None):
    """Map a method name (mlp, cpr, cpr-fs) to its architecture.

    ``width`` replaces every stage's hidden width (desk-scale override);
    otherwise the five-stage defaults apply.
    """
    method = method.lower()
    if method == "mlp":
        spec = CascadeSpec.mlp(loss=(losses[0] if losses else nn.MSE), input_size=input_size)
    elif method == "cpr":
        if q not in (None, 5):
            raise ValueError("the five-stage variant is fixed at q=5; use cpr-fs for other q")
        spec = CascadeSpec.cpr(losses=losses, input_size=input_size)
    elif method in ("cpr-fs", "cpr_fs"):
        spec = CascadeSpec.cpr_fs(q=q or 5, losses=losses, input_size=input_size)
    else:
        raise ValueError(f"unknown cascade method {method!r}")
    if width is not None:
        spec = CascadeSpec(
            spec.scales, (int(width),) * spec.q, spec.losses,
            input_size=spec.input_size,
            hidden_layers_per_stage=spec.hidden_layers_per_stage,
        )
    return spec
