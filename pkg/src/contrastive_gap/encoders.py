"""Tiny twin feed-forward encoders and the synthetic data they consume.

The encoders stand in for the image/text towers: a tanh MLP followed by row
normalization. At default initialization their outputs sit in a narrow cone
(random biases give every unit a fixed offset shared by all inputs), which is
the cone effect the gap experiments rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from contrastive_gap.embedding_space import EmbeddingSet, ZERO_NORM
from contrastive_gap.errors import ZeroVector

Array = NDArray[np.float64]

DEFAULT_HIDDEN = (64, 64)
FEATURE_DIM = 32
# mean pairwise cosine of fresh outputs is ~0.85 at this scale (d >= 64)
BIAS_SCALE = 0.3


@dataclass
class TinyEncoder:
    """Affine layers with tanh in between and unit-norm outputs.

    ``weights[i]`` has shape (out, in), ``biases[i]`` shape (out,).
    """

    weights: list[Array]
    biases: list[Array]
    seed: int | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output "
                                 f"{self.weights[i - 1].shape[0]}")
        if self.output_dim < 2:
            raise ValueError("output dimension must be >= 2")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[Array]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (shared references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> TinyEncoder:
        return TinyEncoder([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> TinyEncoder:
        enc = cls([np.asarray(layer["w"], dtype=np.float64) for layer in obj["layers"]],
                  [np.asarray(layer["b"], dtype=np.float64) for layer in obj["layers"]],
                  obj.get("seed"))
        if enc.dims != list(obj["dims"]):
            raise ValueError(f"checkpoint dims {obj['dims']} do not match layers {enc.dims}")
        return enc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> TinyEncoder:
        return cls.from_dict(json.loads(Path(path).read_text()))


def encoder_init(dims: list[int] | tuple[int, ...], seed: int,
                 bias_scale: float = BIAS_SCALE) -> TinyEncoder:
    """Random encoder with Uniform(+-1/sqrt(fan_in)) weights and N(0, bias_scale^2) biases.

    The bias draw is what produces the cone: every hidden unit gets a fixed
    offset, so outputs share a common direction set by the seed.
    """
    if len(dims) < 2:
        raise ValueError("dims must list at least an input and an output size")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(bias_scale * rng.standard_normal(fan_out))
    return TinyEncoder(weights, biases, seed)


def default_dims(output_dim: int, feature_dim: int = FEATURE_DIM) -> list[int]:
    return [feature_dim, *DEFAULT_HIDDEN, output_dim]


@dataclass
class ForwardCache:
    inputs: Array
    activations: list[Array]  # post-tanh output of every hidden layer
    raw: Array                # final affine output, before normalization
    norms: Array
    out: Array


def forward_cached(enc: TinyEncoder, batch: ArrayLike) -> ForwardCache:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != enc.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input dim {enc.input_dim}")
    h = x
    acts = []
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        z = h @ w.T + b
        if i == last:
            break
        h = np.tanh(z)
        acts.append(h)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector(f"encoder output row {int(np.argmin(norms))} has vanishing norm")
    return ForwardCache(x, acts, z, norms, z / norms[:, None])


def forward(enc: TinyEncoder, batch: ArrayLike, modality="generic") -> EmbeddingSet:
    """Embed a batch of feature vectors onto the unit sphere."""
    return EmbeddingSet(forward_cached(enc, batch).out, modality)


def backward(enc: TinyEncoder, batch: ArrayLike, upstream: ArrayLike,
             cache: ForwardCache | None = None) -> list[Array]:
    """Backpropagate ``upstream`` (dL/d output rows) to every parameter.

    Returns gradients in the same ``[W0, b0, W1, b1, ...]`` order as
    :meth:`TinyEncoder.params`.
    """
    if cache is None:
        cache = forward_cached(enc, batch)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.out.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache.out.shape}")
    u = cache.out
    # Jacobian of z -> z/|z| is (I - u u^T)/|z|
    g = (g - np.einsum("ij,ij->i", g, u)[:, None] * u) / cache.norms[:, None]
    grads: list[Array] = []
    inputs = [cache.inputs] + cache.activations
    for i in range(len(enc.weights) - 1, -1, -1):
        h_in = inputs[i]
        grads.append(g.sum(axis=0))
        grads.append(g.T @ h_in)
        if i:
            g = (g @ enc.weights[i]) * (1.0 - h_in * h_in)
    grads.reverse()
    return grads


def cone_stats(emb: EmbeddingSet | Array) -> tuple[float, float]:
    """Mean pairwise cosine over unordered pairs, and the centroid norm.

    Both approach 1 for a narrow cone and 0 for points spread over the sphere.
    """
    x = emb.rows if isinstance(emb, EmbeddingSet) else np.asarray(emb)
    n = x.shape[0]
    if n < 2:
        raise ValueError("cone statistics need at least two rows")
    s = x.sum(axis=0)
    # sum over j != k of <x_j, x_k> = |sum|^2 - sum |x_j|^2
    off = float(s @ s - np.einsum("ij,ij->", x, x))
    return off / (n * (n - 1)), float(np.linalg.norm(s / n))


@dataclass
class SyntheticDataset:
    """Paired feature vectors for the twin encoders.

    ``image_features[j]`` feeds encoder A and ``text_features[j]`` encoder B.
    """

    image_features: Array
    text_features: Array
    kind: str = "identical"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image_features.shape[0] != self.text_features.shape[0]:
            raise ValueError("image and text feature counts differ")

    def __len__(self) -> int:
        return self.image_features.shape[0]

    def subset(self, idx: ArrayLike) -> tuple[Array, Array]:
        return self.image_features[idx], self.text_features[idx]


def identical_pairs(m: int, seed: int, feature_dim: int = FEATURE_DIM) -> SyntheticDataset:
    """Same-modality data: each positive pair is two copies of one Gaussian vector."""
    x = np.random.default_rng(seed).standard_normal((m, feature_dim))
    return SyntheticDataset(x, x.copy(), "identical", {"m": m, "seed": seed, "feature_dim": feature_dim})


def random_text_map(seed: int, feature_dim: int = FEATURE_DIM) -> Array:
    """Fixed random linear map from image-side to text-side features."""
    # (seed, 1) keeps this stream apart from a sample stream seeded with the same int
    rng = np.random.default_rng([seed, 1])
    return rng.standard_normal((feature_dim, feature_dim)) / np.sqrt(feature_dim)


def linear_pairs(m: int, seed: int, noise: float = 0.1, feature_dim: int = FEATURE_DIM,
                 map_seed: int | None = None) -> SyntheticDataset:
    """Cross-"modality" data: text features are a fixed linear map of the image features plus noise.

    ``map_seed`` pins the linear map separately so train and eval splits can
    share it while drawing different samples.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, feature_dim))
    g = random_text_map(seed if map_seed is None else map_seed, feature_dim)
    y = x @ g.T + noise * rng.standard_normal((m, feature_dim))
    return SyntheticDataset(x, y, "linear", {"m": m, "seed": seed, "noise": noise,
                                             "feature_dim": feature_dim, "map_seed": map_seed})
