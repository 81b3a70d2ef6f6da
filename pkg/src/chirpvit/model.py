"""Vision transformer regression model with low-rank adapted attention.

The image is cut into non-overlapping square patches, each flattened and
linearly projected to the embedding width (the unfold form of a strided
convolution).  A learned CLS token is prepended, position embeddings are
added, and the sequence runs through pre-norm encoder layers:

    x = x + attn(LN(x) * g1 + b1)
    x = x + ffn(LN(x) * g2 + b2)

Residual connections are used even though some transformer descriptions
leave them implicit; without them a deep encoder does not train.  The
attention Q and V projections carry low-rank adapters (delta = B @ A scaled
by alpha/rank, B zero at init so a fresh model matches its adapter-free
twin exactly), K and the output projection stay plain.  The regression
head reads the CLS row through two ReLU layers down to 3 outputs.  A
tanh pooler is built and evaluated for architectural completeness but
feeds the head only when ``head_on_pooler`` is set.

Parameters live in a flat name -> Tensor dict so checkpoints, optimizer
state, and freeze lists all share one naming scheme.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat_rows, get_default_dtype, no_grad
from .data import NormalizationStats
from .errors import CheckpointError, ConfigurationError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1
TRAIN_MODES = ("full", "lora_finetune")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 1
    ffn_dim: int | None = None          # defaults to 4 * embed_dim
    lora_rank: int = 8
    lora_alpha: float = 8.0
    head_dims: tuple[int, int] | None = None  # defaults to (D/3, D/6), rounded
    dropout_p: float = 0.0
    use_cls_token: bool = True
    head_on_pooler: bool = False

    def validate(self) -> None:
        if self.image_size < self.patch_size or self.image_size % self.patch_size:
            raise ConfigurationError(
                f"image_size {self.image_size} must be a positive multiple of "
                f"patch_size {self.patch_size}")
        if self.embed_dim < 1 or self.num_layers < 1:
            raise ConfigurationError("embed_dim and num_layers must be >= 1")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads "
                f"{self.num_heads}")
        if self.lora_rank < 1:
            raise ConfigurationError(f"lora_rank must be >= 1, got {self.lora_rank}")
        if self.dropout_p != 0.0:
            raise ConfigurationError(
                f"dropout_p is fixed at 0.0 here, got {self.dropout_p}")
        h1, h2 = self.resolved_head_dims()
        if h1 < 1 or h2 < 1:
            raise ConfigurationError(f"head_dims must be >= 1, got {(h1, h2)}")

    def resolved_ffn_dim(self) -> int:
        return 4 * self.embed_dim if self.ffn_dim is None else self.ffn_dim

    def resolved_head_dims(self) -> tuple[int, int]:
        if self.head_dims is not None:
            return tuple(self.head_dims)
        # 768 -> (256, 128) at full width, shrunk in proportion otherwise
        return (int(np.rint(self.embed_dim / 3)), int(np.rint(self.embed_dim / 6)))

    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def seq_len(self) -> int:
        return self.num_patches() + (1 if self.use_cls_token else 0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["head_dims"] is not None:
            d["head_dims"] = list(d["head_dims"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("head_dims") is not None:
            d["head_dims"] = tuple(d["head_dims"])
        return cls(**d)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) with tails beyond 2 std resampled until inside."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


class Linear:
    """y = x @ W.T + b with W shaped (out, in)."""

    def __init__(self, W: Tensor, b: Tensor):
        self.W = W
        self.b = b

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W.transpose() + self.b


class LoraLinear:
    """Base linear plus a scaled low-rank delta: y = xW^T + b + s (xA^T)B^T."""

    def __init__(self, W: Tensor, b: Tensor, A: Tensor, B: Tensor, scale: float):
        self.W = W
        self.b = b
        self.A = A
        self.B = B
        self.scale = scale

    def __call__(self, x: Tensor) -> Tensor:
        base = x @ self.W.transpose() + self.b
        delta = (x @ self.A.transpose()) @ self.B.transpose()
        return base + delta * self.scale


def lora_forward(x: Tensor, layer: LoraLinear) -> Tensor:
    return layer(x)


class EncoderLayer:
    def __init__(self, ln1_g, ln1_b, q, k, v, out, ln2_g, ln2_b, fc1, fc2):
        self.ln1_g = ln1_g
        self.ln1_b = ln1_b
        self.q = q
        self.k = k
        self.v = v
        self.out = out
        self.ln2_g = ln2_g
        self.ln2_b = ln2_b
        self.fc1 = fc1
        self.fc2 = fc2


def attention_forward(x: Tensor, layer: EncoderLayer, num_heads: int = 1,
                      return_weights: bool = False):
    """Scaled dot-product attention over the token axis.

    Per head: softmax(Q K^T / sqrt(d_k)) V with d_k = D / num_heads, then the
    output projection.  With one head this stays in 3-D; the multi-head path
    reshapes to (B, h, M, d_k).
    """
    B, M, D = x.shape
    if D % num_heads:
        raise ShapeError(f"width {D} not divisible by {num_heads} heads")
    q = layer.q(x)
    k = layer.k(x)
    v = layer.v(x)
    d_k = D // num_heads
    inv = 1.0 / np.sqrt(d_k)
    if num_heads == 1:
        scores = (q @ k.transpose()) * inv
        weights = scores.softmax_lastdim()          # (B, M, M)
        ctx = weights @ v
    else:
        def split(t):
            return t.reshape(B, M, num_heads, d_k).transpose(1, 2)  # (B,h,M,dk)
        qh, kh, vh = split(q), split(k), split(v)
        scores = (qh @ kh.transpose()) * inv
        weights = scores.softmax_lastdim()          # (B, h, M, M)
        ctx = (weights @ vh).transpose(1, 2).reshape(B, M, D)
    out = layer.out(ctx)
    if return_weights:
        return out, weights.data
    return out


class ViTModel:
    def __init__(self, config: ModelConfig, seed: int | None = 0):
        """Build all parameters; ``seed=None`` makes a zero-filled shell.

        Draw order is fixed (patch embed, CLS, positions, layers in index
        order, pooler, head) so a seed pins every weight.
        """
        config.validate()
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = None if seed is None else np.random.default_rng(seed)
        dt = get_default_dtype()

        def add(name, shape, init):
            if rng is None or init == "zeros":
                arr = np.zeros(shape)
            elif init == "ones":
                arr = np.ones(shape)
            elif init == "trunc":
                # weight std follows 1/sqrt(fan_in) so activation scale stays
                # roughly unit at any embed_dim; a fixed 0.02 only behaves at
                # 768-wide layers and makes narrow models untrainably flat.
                # The 3-d embedding params (cls token, position code) need to
                # make tokens separable by position from the first step, or
                # the regressor starts inside a constant-output saddle that
                # costs most of the epoch budget to leave; 0.3 puts the
                # positional signal on the same footing as patch content.
                std = 1.0 / np.sqrt(shape[-1]) if len(shape) == 2 else 0.3
                arr = _trunc_normal(rng, shape, std)
            elif init == "lora_a":
                arr = rng.normal(0.0, 1.0 / config.lora_rank, size=shape)
            else:
                raise ValueError(init)
            t = Tensor(arr.astype(dt), requires_grad=True)
            self.params[name] = t
            return t

        D = config.embed_dim
        p = config.patch_size
        F = config.resolved_ffn_dim()
        r = config.lora_rank
        h1, h2 = config.resolved_head_dims()

        add("patch_embed.W", (D, 3 * p * p), "trunc")
        add("patch_embed.b", (D,), "zeros")
        if config.use_cls_token:
            add("cls_token", (1, 1, D), "trunc")
        add("pos_embed", (1, config.seq_len(), D), "trunc")
        self.layers: list[EncoderLayer] = []
        scale = config.lora_alpha / r
        for i in range(config.num_layers):
            pre = f"layers.{i}."
            ln1_g = add(pre + "ln1.g", (D,), "ones")
            ln1_b = add(pre + "ln1.b", (D,), "zeros")
            q = LoraLinear(add(pre + "attn.q.W", (D, D), "trunc"),
                           add(pre + "attn.q.b", (D,), "zeros"),
                           add(pre + "attn.q.A", (r, D), "lora_a"),
                           add(pre + "attn.q.B", (D, r), "zeros"), scale)
            k = Linear(add(pre + "attn.k.W", (D, D), "trunc"),
                       add(pre + "attn.k.b", (D,), "zeros"))
            v = LoraLinear(add(pre + "attn.v.W", (D, D), "trunc"),
                           add(pre + "attn.v.b", (D,), "zeros"),
                           add(pre + "attn.v.A", (r, D), "lora_a"),
                           add(pre + "attn.v.B", (D, r), "zeros"), scale)
            out = Linear(add(pre + "attn.out.W", (D, D), "trunc"),
                         add(pre + "attn.out.b", (D,), "zeros"))
            ln2_g = add(pre + "ln2.g", (D,), "ones")
            ln2_b = add(pre + "ln2.b", (D,), "zeros")
            fc1 = Linear(add(pre + "ffn.fc1.W", (F, D), "trunc"),
                         add(pre + "ffn.fc1.b", (F,), "zeros"))
            fc2 = Linear(add(pre + "ffn.fc2.W", (D, F), "trunc"),
                         add(pre + "ffn.fc2.b", (D,), "zeros"))
            self.layers.append(EncoderLayer(ln1_g, ln1_b, q, k, v, out,
                                            ln2_g, ln2_b, fc1, fc2))
        self.pooler = Linear(add("pooler.W", (D, D), "trunc"),
                             add("pooler.b", (D,), "zeros"))
        self.head_fc1 = Linear(add("head.fc1.W", (h1, D), "trunc"),
                               add("head.fc1.b", (h1,), "zeros"))
        self.head_fc2 = Linear(add("head.fc2.W", (h2, h1), "trunc"),
                               add("head.fc2.b", (h2,), "zeros"))
        self.head_out = Linear(add("head.out.W", (3, h2), "trunc"),
                               add("head.out.b", (3,), "zeros"))

    # ---- forward ------------------------------------------------------------

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, S, S) pixels -> (B, M, 3 p^2) flattened patch rows."""
        images = np.asarray(images)
        S = self.config.image_size
        if images.ndim != 4 or images.shape[1:] != (3, S, S):
            raise ShapeError(
                f"expected images shaped (B, 3, {S}, {S}), got {images.shape}")
        B = images.shape[0]
        p = self.config.patch_size
        g = S // p
        pat = images.reshape(B, 3, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(pat).reshape(B, g * g, 3 * p * p)

    def embed(self, images: np.ndarray) -> Tensor:
        """Patch projection + optional CLS prepend + position embeddings."""
        pat = Tensor(self.patchify(images))
        x = pat @ self.params["patch_embed.W"].transpose() + self.params["patch_embed.b"]
        if self.config.use_cls_token:
            B = x.shape[0]
            cls = self.params["cls_token"].broadcast_to((B, 1, self.config.embed_dim))
            x = concat_rows(cls, x)
        return x + self.params["pos_embed"]

    def forward(self, images: np.ndarray) -> Tensor:
        """Normalized (B, 3) predictions."""
        x = self.embed(images)
        for layer in self.layers:
            a_in = x.layer_norm() * layer.ln1_g + layer.ln1_b
            x = x + attention_forward(a_in, layer, self.config.num_heads)
            f_in = x.layer_norm() * layer.ln2_g + layer.ln2_b
            x = x + layer.fc2(layer.fc1(f_in).gelu())
        if self.config.use_cls_token:
            rep = x[:, 0, :]
        else:
            rep = x.mean(axis=1)
        pooled = self.pooler(rep).tanh()
        head_in = pooled if self.config.head_on_pooler else rep
        h = self.head_fc1(head_in).relu()
        h = self.head_fc2(h).relu()
        return self.head_out(h)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Inference-only forward; returns a plain (B, 3) array."""
        with no_grad():
            return self.forward(images).data

    # ---- parameter management ----------------------------------------------

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def clone(self) -> "ViTModel":
        other = ViTModel(self.config, seed=None)
        for name, t in self.params.items():
            other.params[name].data = t.data.copy()
        return other

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def patch_embed(images: np.ndarray, model: ViTModel) -> Tensor:
    return model.embed(images)


def trainable_parameters(model: ViTModel, mode: str,
                         include_pooler: bool = False) -> dict[str, Tensor]:
    """Name -> tensor map of what the optimizer may update.

    ``full`` trains everything; ``lora_finetune`` trains only the adapter A/B
    matrices and the regression head, optionally also the pooler.
    """
    if mode not in TRAIN_MODES:
        raise ConfigurationError(f"mode must be one of {TRAIN_MODES}, got {mode!r}")
    if mode == "full":
        return dict(model.params)
    picked = {}
    for name, t in model.params.items():
        is_lora = name.endswith(".A") or name.endswith(".B")
        is_head = name.startswith("head.")
        is_pooler = name.startswith("pooler.")
        if is_lora or is_head or (include_pooler and is_pooler):
            picked[name] = t
    return picked


def merge_lora_(model: ViTModel) -> ViTModel:
    """Fold every adapter into its base weight (W += s B A) and zero B."""
    scale = model.config.lora_alpha / model.config.lora_rank
    for i in range(model.config.num_layers):
        for proj in ("q", "v"):
            pre = f"layers.{i}.attn.{proj}."
            W = model.params[pre + "W"]
            A = model.params[pre + "A"]
            B = model.params[pre + "B"]
            W.data = W.data + scale * (B.data @ A.data)
            B.data = np.zeros_like(B.data)
    return model


# ---- checkpoints ------------------------------------------------------------

def save_checkpoint(path, model: ViTModel, stats: NormalizationStats | None = None,
                    metadata: dict | None = None) -> None:
    """Single-file .npz: one array per parameter plus a JSON header array."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "dtype": np.dtype(next(iter(model.params.values())).data.dtype).name,
        "stats": None if stats is None else stats.to_dict(),
        "metadata": metadata or {},
    }
    arrays = {"param/" + k: v.data for k, v in model.params.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[ViTModel, NormalizationStats | None, dict]:
    """Rebuild (model, stats, metadata); any structural mismatch is an error."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "__meta__" not in npz.files:
                raise CheckpointError(f"{path} has no metadata record")
            meta = json.loads(str(npz["__meta__"]))
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {meta.get('format_version')}")
            config = ModelConfig.from_dict(meta["config"])
            model = ViTModel(config, seed=None)
            stored = {n[len("param/"):]: npz[n] for n in npz.files
                      if n.startswith("param/")}
            expected = set(model.params)
            if set(stored) != expected:
                missing = sorted(expected - set(stored))
                extra = sorted(set(stored) - expected)
                raise CheckpointError(
                    f"parameter set mismatch in {path}: missing {missing}, "
                    f"unexpected {extra}")
            for name, arr in stored.items():
                t = model.params[name]
                if arr.shape != t.data.shape:
                    raise CheckpointError(
                        f"shape mismatch for {name}: checkpoint {arr.shape}, "
                        f"model {t.data.shape}")
                t.data = np.array(arr, dtype=np.dtype(meta["dtype"]))
    except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    stats = None if meta["stats"] is None else NormalizationStats.from_dict(meta["stats"])
    return model, stats, meta["metadata"]
