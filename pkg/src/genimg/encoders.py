"""Image encoder, genetic encoders and projection heads.

All networks are small MLPs built on :mod:`genimg.autodiff`. Parameters live
in one flat ``name -> Tensor`` mapping on :class:`ContrastiveModel` so the
optimizer and the checkpoint format can treat them uniformly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DimensionError

HIDDEN_VARIANTS = ("None", "H1", "H12")
CHECKPOINT_FORMAT = "genimg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    image_input_dim: int
    genetic_input_dims: list
    hidden_variant: str = "H1"
    hidden_width: int = 2048
    repr_dim: int = 2048
    proj_dim: int = 128
    modality_names: list = field(default_factory=list)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.genetic_input_dims = [int(d) for d in self.genetic_input_dims]
        if self.hidden_variant not in HIDDEN_VARIANTS:
            raise ConfigError(f"hidden_variant must be one of {HIDDEN_VARIANTS}, got {self.hidden_variant!r}")
        if self.repr_dim <= 0 or self.proj_dim <= 0 or self.hidden_width <= 0:
            raise ConfigError("repr_dim, proj_dim and hidden_width must be positive")
        if len(self.genetic_input_dims) < 1:
            raise ConfigError("at least one genetic modality is required")
        if any(d <= 0 for d in self.genetic_input_dims) or self.image_input_dim <= 0:
            raise ConfigError("input dimensions must be positive")
        if not self.modality_names:
            self.modality_names = [f"g{m}" for m in range(len(self.genetic_input_dims))]
        if len(self.modality_names) != len(self.genetic_input_dims):
            raise ConfigError("modality_names and genetic_input_dims differ in length")

    @property
    def n_modalities(self):
        return len(self.genetic_input_dims)

    def genetic_repr_dim(self, m):
        return self.genetic_input_dims[m] if self.hidden_variant == "None" else self.repr_dim


class ContrastiveModel:
    """Parameters and forward passes for every encoder and projection head.

    Naming scheme: ``img.*`` image encoder, ``gen{m}.*`` genetic encoder of
    modality ``m``, ``proj.img.*`` / ``proj.gen{m}.*`` projection heads.
    Batchnorm running statistics are kept in ``buffers`` and are not trained.
    """

    def __init__(self, config: EncoderConfig, seed: int = 42):
        self.config = config
        self.params = {}
        self.buffers = {}
        self.training = True
        rng = np.random.default_rng(seed)
        c = config
        self._linear(rng, "img.fc1", c.image_input_dim, c.hidden_width)
        self._batchnorm("img.bn1", c.hidden_width)
        self._linear(rng, "img.fc2", c.hidden_width, c.repr_dim)
        for m, dim in enumerate(c.genetic_input_dims):
            n_blocks = {"None": 0, "H1": 1, "H12": 2}[c.hidden_variant]
            fan_in = dim
            for k in range(n_blocks):
                self._linear(rng, f"gen{m}.fc{k + 1}", fan_in, c.repr_dim)
                self._batchnorm(f"gen{m}.bn{k + 1}", c.repr_dim)
                fan_in = c.repr_dim
        self._head(rng, "proj.img", c.repr_dim)
        for m in range(c.n_modalities):
            self._head(rng, f"proj.gen{m}", c.genetic_repr_dim(m))

    def _linear(self, rng, name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{name}.weight"] = ad.Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        self.params[f"{name}.bias"] = ad.Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)

    def _batchnorm(self, name, width):
        self.params[f"{name}.gamma"] = ad.Tensor(np.ones(width), requires_grad=True)
        self.params[f"{name}.beta"] = ad.Tensor(np.zeros(width), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(width)
        self.buffers[f"{name}.running_var"] = np.ones(width)

    def _head(self, rng, name, fan_in):
        self._linear(rng, f"{name}.fc1", fan_in, self.config.repr_dim)
        self._linear(rng, f"{name}.fc2", self.config.repr_dim, self.config.proj_dim)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self, prefix=""):
        return sum(p.data.size for name, p in self.params.items() if name.startswith(prefix))

    def _apply_linear(self, x, name):
        return ad.matmul(x, self.params[f"{name}.weight"]) + self.params[f"{name}.bias"]

    def _apply_bn(self, x, name):
        return ad.batchnorm1d(
            x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
            training=self.training, momentum=self.config.bn_momentum, eps=self.config.bn_eps,
        )

    @staticmethod
    def _check_width(x, expected, what):
        if x.ndim != 2 or x.shape[1] != expected:
            raise DimensionError(f"{what}: expected input of width {expected}, got shape {x.shape}")

    def encode_image(self, x):
        x = ad.as_tensor(x)
        self._check_width(x, self.config.image_input_dim, "encode_image")
        h = self._apply_linear(x, "img.fc1").relu()
        h = self._apply_bn(h, "img.bn1")
        return self._apply_linear(h, "img.fc2")

    def encode_genetics(self, x, m):
        """Hidden blocks are Linear -> ReLU -> Batchnorm1d; variant None is the identity."""
        x = ad.as_tensor(x)
        self._check_width(x, self.config.genetic_input_dims[m], f"encode_genetics[{m}]")
        n_blocks = {"None": 0, "H1": 1, "H12": 2}[self.config.hidden_variant]
        h = x
        for k in range(n_blocks):
            h = self._apply_linear(h, f"gen{m}.fc{k + 1}").relu()
            h = self._apply_bn(h, f"gen{m}.bn{k + 1}")
        return h

    def project(self, h, modality):
        """``modality`` is ``"img"`` or a genetic modality index."""
        h = ad.as_tensor(h)
        name = "proj.img" if modality == "img" else f"proj.gen{modality}"
        self._check_width(h, self.params[f"{name}.fc1.weight"].shape[0], f"project[{modality}]")
        return self._apply_linear(self._apply_linear(h, f"{name}.fc1").relu(), f"{name}.fc2")

    def embed_image(self, x):
        return self.project(self.encode_image(x), "img")

    def embed_genetics(self, x, m):
        return self.project(self.encode_genetics(x, m), m)

    def state_arrays(self):
        out = {name: p.data for name, p in self.params.items()}
        out.update({f"buffer:{name}": b for name, b in self.buffers.items()})
        return out


def genetic_encoder_param_count(input_dim, repr_dim, variant):
    """Closed-form trainable parameter count of one genetic encoder."""
    if variant == "None":
        return 0
    first = input_dim * repr_dim + repr_dim + 2 * repr_dim
    if variant == "H1":
        return first
    return first + repr_dim * repr_dim + repr_dim + 2 * repr_dim


def save_checkpoint(model, path, metadata=None):
    arrays = {}
    for name, arr in model.state_arrays().items():
        arrays[name] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "metadata": metadata or {},
        "arrays": arrays,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Returns ``(model, metadata)``; the model is put in eval mode."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = ContrastiveModel(EncoderConfig(**doc["config"]), seed=0)
    missing = set(model.state_arrays()) - set(doc["arrays"])
    if missing:
        raise DataError(f"{path}: checkpoint lacks arrays {sorted(missing)}")
    for name, entry in doc["arrays"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if name.startswith("buffer:"):
            key = name[len("buffer:"):]
            if model.buffers[key].shape != arr.shape:
                raise DataError(f"{path}: buffer {key} has shape {arr.shape}")
            model.buffers[key] = arr
        else:
            if model.params[name].shape != arr.shape:
                raise DataError(f"{path}: parameter {name} has shape {arr.shape}")
            model.params[name] = ad.Tensor(arr, requires_grad=True)
    return model.eval(), doc["metadata"]
