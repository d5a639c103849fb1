"""Seeded generation of paired image/text Gaussian datasets.

Every sample carries a binary label ``y`` and a binary attribute ``a`` that
agrees with ``y`` with probability ``p_spu``.  A two-dimensional latent
``z = [z_inv, z_spu]`` is drawn around means determined by ``(y, a)`` and is
embedded into the image and text ambient spaces through per-dataset
orthonormal dictionaries, plus isotropic observation noise.

Two parametrization modes are supported:

* ``Def1``        -- the spurious latent is centered at ``mu_spu * a``.
* ``TheoremExact`` -- the spurious latent is centered at ``a`` itself;
  ``mu_spu`` then enters only through the idealized alignment weight
  ``2 * mu_spu * p_spu - 1`` used by the closed-form classifier.

All randomness is driven by ``numpy.random.Generator`` streams derived from
a single 64-bit seed, with chunked sub-streams so that results never depend
on worker count.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace, asdict

import numpy as np

from .errors import ConfigError, ParseError

LATENT_DIM = 2

# Fixed sub-stream tags; chunked draws use spawn_key=(tag, chunk_index).
STREAM_DICT_IMAGE = 0
STREAM_DICT_TEXT = 1
STREAM_SAMPLES = 2
STREAM_TEST = 3

CHUNK = 16384


class Mode(str, enum.Enum):
    DEF1 = "Def1"
    THEOREM_EXACT = "TheoremExact"


def substream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Deterministic generator for sub-stream (tag, index) of a root seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, index))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class GenerativeConfig:
    """All knobs of the paired-Gaussian generator plus training hyperparameters."""

    mu_inv: float = 1.0
    mu_spu: float = 1.0
    sigma_inv: float = 1.0
    sigma_spu: float = 0.5
    sigma_xi: float = 0.1
    p_spu: float = 0.9
    n: int = 10_000
    d_I: int = 64
    d_T: int = 64
    latent_dim: int = LATENT_DIM
    h: int = 2
    rho: float = 1.0
    mode: Mode = Mode.DEF1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.latent_dim != LATENT_DIM:
            raise ConfigError(f"latent_dim is fixed to {LATENT_DIM}, got {self.latent_dim}")
        if not 0.5 <= self.p_spu <= 1.0:
            raise ConfigError(f"p_spu must lie in [0.5, 1.0], got {self.p_spu}")
        for name in ("sigma_inv", "sigma_spu", "sigma_xi"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.d_I < LATENT_DIM or self.d_T < LATENT_DIM:
            raise ConfigError(
                f"ambient dims must be >= {LATENT_DIM}, got d_I={self.d_I}, d_T={self.d_T}"
            )
        if self.h < LATENT_DIM:
            raise ConfigError(f"h must be >= {LATENT_DIM}, got {self.h}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.mode is Mode.THEOREM_EXACT and self.mu_inv != 1.0:
            raise ConfigError(
                f"TheoremExact mode requires mu_inv = 1, got {self.mu_inv}"
            )

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenerativeConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ParseError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParseError(f"bad config object: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "GenerativeConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ParseError("config JSON must be an object")
        return cls.from_json_dict(d)


@dataclass(frozen=True)
class Dictionary:
    """Ambient embedding with orthonormal columns, shape (d, 2)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[1] != LATENT_DIM:
            raise ConfigError(f"dictionary must be (d, {LATENT_DIM}), got {e.shape}")
        gram = e.T @ e
        if np.max(np.abs(gram - np.eye(LATENT_DIM))) > 1e-10:
            raise ConfigError("dictionary columns are not orthonormal")

    @property
    def d(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class PairedSample:
    x_image: np.ndarray
    x_text: np.ndarray
    label: int
    attribute: int
    z: np.ndarray


def _dictionary_from_rng(d: int, rng: np.random.Generator) -> Dictionary:
    raw = rng.standard_normal((d, LATENT_DIM))
    u = raw[:, 0] / np.linalg.norm(raw[:, 0])
    v = raw[:, 1] - (u @ raw[:, 1]) * u
    v = v / np.linalg.norm(v)
    return Dictionary(np.column_stack([u, v]))


def make_dictionary(d: int, seed: int) -> Dictionary:
    """Draw a d x 2 matrix with orthonormal columns, deterministically.

    Two standard-normal vectors are drawn from the seed and Gram-Schmidt
    orthonormalized.
    """
    if d < LATENT_DIM:
        raise ConfigError(f"dictionary dimension must be >= {LATENT_DIM}, got {d}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    return _dictionary_from_rng(d, rng)


def _latent_means(config: GenerativeConfig, y: np.ndarray, a: np.ndarray) -> np.ndarray:
    if config.mode is Mode.THEOREM_EXACT:
        return np.column_stack([y.astype(float), a.astype(float)])
    return np.column_stack([config.mu_inv * y, config.mu_spu * a])


def sample_latents(config: GenerativeConfig, rng: np.random.Generator, size: int):
    """Vectorized draw of (z, y, a) triples.

    y is uniform on {-1, +1}; a equals y with probability p_spu and -y
    otherwise; z is Gaussian around the mode-dependent means.
    """
    y = rng.integers(0, 2, size=size) * 2 - 1
    flip = rng.random(size) < config.p_spu
    a = np.where(flip, y, -y)
    g = rng.standard_normal((size, LATENT_DIM))
    z = _latent_means(config, y, a)
    z[:, 0] += config.sigma_inv * g[:, 0]
    z[:, 1] += config.sigma_spu * g[:, 1]
    return z, y, a


def sample_latent(config: GenerativeConfig, rng: np.random.Generator):
    """Single (z, y, a) draw; see :func:`sample_latents`."""
    z, y, a = sample_latents(config, rng, 1)
    return z[0], int(y[0]), int(a[0])


def embed(z: np.ndarray, dictionary: Dictionary, sigma_xi: float,
          rng: np.random.Generator) -> np.ndarray:
    """x = D z + xi with xi ~ N(0, sigma_xi^2 / d * I_d), row-wise."""
    x = z @ dictionary.entries.T
    if sigma_xi > 0:
        d = dictionary.d
        x = x + rng.standard_normal(x.shape) * (sigma_xi / math.sqrt(d))
    return x


def sample_batch(config: GenerativeConfig, dict_image: Dictionary,
                 dict_text: Dictionary, rng: np.random.Generator, size: int):
    """One chunk of paired samples embedded with the given dictionaries.

    Returns (x_image, x_text, y, a, z). Draw order is fixed so results are
    reproducible from the generator state alone.
    """
    z, y, a = sample_latents(config, rng, size)
    x_image = embed(z, dict_image, config.sigma_xi, rng)
    x_text = embed(z, dict_text, config.sigma_xi, rng)
    return x_image, x_text, y, a, z


def _chunked_batches(config: GenerativeConfig, dict_image: Dictionary,
                     dict_text: Dictionary, seed: int, total: int, tag: int):
    """Generate `total` samples in fixed chunks with per-chunk sub-seeds."""
    parts = []
    for chunk_index, start in enumerate(range(0, total, CHUNK)):
        size = min(CHUNK, total - start)
        rng = substream(seed, tag, chunk_index)
        parts.append(sample_batch(config, dict_image, dict_text, rng, size))
    x_image = np.concatenate([p[0] for p in parts])
    x_text = np.concatenate([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    a = np.concatenate([p[3] for p in parts])
    z = np.concatenate([p[4] for p in parts])
    return x_image, x_text, y, a, z


def dataset_dictionaries(config: GenerativeConfig, seed: int):
    """The pair of dictionaries a dataset with this (config, seed) uses."""
    rng_i = substream(seed, STREAM_DICT_IMAGE)
    rng_t = substream(seed, STREAM_DICT_TEXT)
    dict_image = _dictionary_from_rng(config.d_I, rng_i)
    dict_text = _dictionary_from_rng(config.d_T, rng_t)
    return dict_image, dict_text


@dataclass(frozen=True)
class SyntheticDataset:
    """An immutable seeded collection of paired samples.

    Arrays are stored column-batched for vectorized math; `PairedSample`
    views are available through indexing and the `samples` property.
    """

    config: GenerativeConfig
    seed: int
    x_image: np.ndarray
    x_text: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    latents: np.ndarray
    dict_image: Dictionary
    dict_text: Dictionary

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> PairedSample:
        return PairedSample(
            x_image=self.x_image[i],
            x_text=self.x_text[i],
            label=int(self.labels[i]),
            attribute=int(self.attributes[i]),
            z=self.latents[i],
        )

    @property
    def samples(self) -> list[PairedSample]:
        return [self[i] for i in range(len(self))]

    def to_csv(self, path) -> None:
        """Dump rows: sample_index, y, a, z_inv, z_spu, x_I coords, x_T coords."""
        header = ["sample_index", "y", "a", "z_inv", "z_spu"]
        header += [f"x_I_{j}" for j in range(self.config.d_I)]
        header += [f"x_T_{j}" for j in range(self.config.d_T)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                row = [i, int(self.labels[i]), int(self.attributes[i]),
                       repr(float(self.latents[i, 0])), repr(float(self.latents[i, 1]))]
                row += [repr(float(v)) for v in self.x_image[i]]
                row += [repr(float(v)) for v in self.x_text[i]]
                writer.writerow(row)


def sample_dataset(config: GenerativeConfig, seed: int) -> SyntheticDataset:
    """Draw a full dataset: fresh dictionaries plus config.n embedded samples.

    Deterministic in (config, seed); chunk sub-seeds make the output
    independent of how generation work is scheduled.
    """
    dict_image, dict_text = dataset_dictionaries(config, seed)
    x_image, x_text, y, a, z = _chunked_batches(
        config, dict_image, dict_text, seed, config.n, STREAM_SAMPLES
    )
    return SyntheticDataset(
        config=config,
        seed=seed,
        x_image=x_image,
        x_text=x_text,
        labels=y,
        attributes=a,
        latents=z,
        dict_image=dict_image,
        dict_text=dict_text,
    )


def sample_ood_batches(config: GenerativeConfig, dict_image: Dictionary,
                       dict_text: Dictionary, seed: int, total: int):
    """Draw `total` test samples from the p_spu = 1/2 distribution, using
    the provided (already-fitted) dictionaries."""
    return _chunked_batches(
        ood_config(config), dict_image, dict_text, seed, total, STREAM_TEST
    )


def ood_config(config: GenerativeConfig) -> GenerativeConfig:
    """The test distribution: identical config with p_spu = 1/2."""
    return replace(config, p_spu=0.5)


def ood_dataset(config: GenerativeConfig, dict_image: Dictionary,
                dict_text: Dictionary, seed: int, total: int) -> SyntheticDataset:
    """Test dataset view over :func:`sample_ood_batches` draws."""
    x_image, x_text, y, a, z = sample_ood_batches(
        config, dict_image, dict_text, seed, total
    )
    return SyntheticDataset(
        config=replace(ood_config(config), n=total),
        seed=seed,
        x_image=x_image,
        x_text=x_text,
        labels=y,
        attributes=a,
        latents=z,
        dict_image=dict_image,
        dict_text=dict_text,
    )
