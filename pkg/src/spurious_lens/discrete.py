"""Desk-scale discrete shortcut-learning experiment.

Samples are noisy object one-hots concatenated with color one-hots.  Two
training routes are compared: a plain supervised k-way classifier over the
full feature vector, and a contrastive stand-in that jointly classifies
object and color with separate linear heads (a perfect language side makes
the contrastive task equivalent to that pair of classification tasks).
Zero-shot prediction always reads the object head alone.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, InsufficientDataError, NonconvergenceError, ParseError
from .synthetic import substream

# Bias strength of the reversed test split toward the swapped color.
REV_BIAS = 0.9

# Sub-stream tags (shared substream() keyspace with the Gaussian sampler;
# kept disjoint from its 0-3 range).
_TAG_TRAIN = 10
_TAG_RAND = 11
_TAG_REV = 12
_TAG_INIT_SUP = 20
_TAG_INIT_CON = 21

# Step-size halvings allowed within one descent step before giving up.
_MAX_HALVINGS = 40


class Split(str, enum.Enum):
    TRAIN = "Train"
    RAND = "Rand"
    REV = "Rev"


_SPLIT_TAGS = {Split.TRAIN: _TAG_TRAIN, Split.RAND: _TAG_RAND, Split.REV: _TAG_REV}


@dataclass(frozen=True)
class DiscreteConfig:
    """Generator and experiment knobs for the discrete dataset.

    Classes ``biased_classes`` carry their ``biased_colors`` with
    probability p_spu in the training split; all other class/color pairs
    are uniform.  The object one-hot equals the true class with
    probability p_inv, otherwise a uniformly chosen wrong class.
    """

    num_classes: int
    p_inv: float
    p_spu: float
    n_train: int
    num_colors: int | None = None
    biased_classes: tuple[int, int] = (0, 1)
    biased_colors: tuple[int, int] = (0, 1)
    feature_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        k = self.num_classes
        if k < 2:
            raise ConfigError(f"num_classes must be >= 2, got {k}")
        if self.num_colors is None:
            object.__setattr__(self, "num_colors", k)
        object.__setattr__(self, "biased_classes", tuple(self.biased_classes))
        object.__setattr__(self, "biased_colors", tuple(self.biased_colors))
        c = self.num_colors
        if c < k:
            raise ConfigError(f"num_colors must be >= num_classes, got {c} < {k}")
        if not 1.0 / k < self.p_inv <= 1.0:
            raise ConfigError(f"p_inv must lie in (1/k, 1], got {self.p_inv}")
        if not 1.0 / c <= self.p_spu <= 1.0:
            raise ConfigError(f"p_spu must lie in [1/num_colors, 1], got {self.p_spu}")
        if self.n_train < 1:
            raise ConfigError(f"n_train must be positive, got {self.n_train}")
        if self.feature_noise < 0:
            raise ConfigError(f"feature_noise must be >= 0, got {self.feature_noise}")
        if len(set(self.biased_classes)) != 2 or not all(
            0 <= i < k for i in self.biased_classes
        ):
            raise ConfigError(f"biased_classes must be two distinct classes, got {self.biased_classes}")
        if len(set(self.biased_colors)) != 2 or not all(
            0 <= i < c for i in self.biased_colors
        ):
            raise ConfigError(f"biased_colors must be two distinct colors, got {self.biased_colors}")

    @property
    def feature_dim(self) -> int:
        return self.num_classes + self.num_colors

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["biased_classes"] = list(self.biased_classes)
        d["biased_colors"] = list(self.biased_colors)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "DiscreteConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParseError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("biased_classes", "biased_colors"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParseError(f"bad config object: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DiscreteConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ParseError("config JSON must be an object")
        return cls.from_json_dict(d)


@dataclass(frozen=True)
class DiscreteSample:
    features: np.ndarray
    object_label: int
    color_label: int


@dataclass(frozen=True)
class DiscreteDataset:
    """Column-batched discrete samples; indexes like a list of DiscreteSample."""

    config: DiscreteConfig
    split: Split
    seed: int
    features: np.ndarray
    object_labels: np.ndarray
    color_labels: np.ndarray

    def __len__(self) -> int:
        return self.object_labels.shape[0]

    def __getitem__(self, i: int) -> DiscreteSample:
        return DiscreteSample(
            features=self.features[i],
            object_label=int(self.object_labels[i]),
            color_label=int(self.color_labels[i]),
        )

    @property
    def samples(self) -> list[DiscreteSample]:
        return [self[i] for i in range(len(self))]


def _uniform_excluding(rng: np.random.Generator, high: int, excluded: np.ndarray) -> np.ndarray:
    """Uniform draw from [0, high) excluding, per-row, one index."""
    draw = rng.integers(0, high - 1, size=excluded.shape[0])
    return draw + (draw >= excluded)


def _sample_colors(config: DiscreteConfig, split: Split, y: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    c = config.num_colors
    n = y.shape[0]
    colors = rng.integers(0, c, size=n)
    if split is Split.RAND:
        return colors
    if split is Split.TRAIN:
        bias_target = {cls: col for cls, col in zip(config.biased_classes, config.biased_colors)}
        strength = config.p_spu
    else:
        swapped = (config.biased_colors[1], config.biased_colors[0])
        bias_target = {cls: col for cls, col in zip(config.biased_classes, swapped)}
        strength = REV_BIAS
    coins = rng.random(n)
    alt = rng.integers(0, c - 1, size=n)
    for cls, col in bias_target.items():
        mask = y == cls
        hit = mask & (coins < strength)
        colors[hit] = col
        miss = mask & ~hit
        # stay away from the biased color so P(biased color) is exactly the
        # bias strength
        colors[miss] = alt[miss] + (alt[miss] >= col)
    return colors


def sample_discrete_dataset(config: DiscreteConfig, split: Split | str,
                            seed: int, size: int | None = None) -> DiscreteDataset:
    """Draw one split; deterministic in (config, split, seed, size).

    size defaults to config.n_train.  Labels are uniform over classes; the
    object block is the class one-hot with probability p_inv and a wrong
    class's one-hot otherwise, then perturbed by feature_noise; the color
    block is an exact one-hot drawn per the split's bias rule.
    """
    split = Split(split)
    n = config.n_train if size is None else size
    if n < 1:
        raise ConfigError(f"dataset size must be positive, got {n}")
    k = config.num_classes
    rng = substream(seed, _SPLIT_TAGS[split])
    y = rng.integers(0, k, size=n)
    keep = rng.random(n) < config.p_inv
    wrong = _uniform_excluding(rng, k, y)
    shown = np.where(keep, y, wrong)
    colors = _sample_colors(config, split, y, rng)
    features = np.zeros((n, config.feature_dim))
    features[np.arange(n), shown] = 1.0
    if config.feature_noise > 0:
        features[:, :k] += config.feature_noise * rng.standard_normal((n, k))
    features[np.arange(n), k + colors] = 1.0
    return DiscreteDataset(
        config=config,
        split=split,
        seed=seed,
        features=features,
        object_labels=y,
        color_labels=colors,
    )


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or not np.all(np.isfinite(w)):
            raise ConfigError("classifier weights must be a finite 2-D matrix")

    def zero_shot_logits(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.weights.T

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.zero_shot_logits(features).argmax(axis=1)


@dataclass(frozen=True)
class DualHeadClassifier:
    """Separate linear heads for the object task and the color task."""

    object_head: np.ndarray
    color_head: np.ndarray

    def __post_init__(self):
        for name in ("object_head", "color_head"):
            w = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, w)
            if w.ndim != 2 or not np.all(np.isfinite(w)):
                raise ConfigError(f"{name} must be a finite 2-D matrix")
        if self.object_head.shape[1] != self.color_head.shape[1]:
            raise ConfigError("heads must share the feature dimension")

    def zero_shot_logits(self, features: np.ndarray) -> np.ndarray:
        """Label scores; only the object head participates."""
        return np.atleast_2d(features) @ self.object_head.T

    def color_logits(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.color_head.T

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.zero_shot_logits(features).argmax(axis=1)


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(data, DiscreteDataset):
        return data.features, data.object_labels, data.color_labels
    samples = list(data)
    if not samples:
        raise InsufficientDataError("training data is empty")
    features = np.stack([s.features for s in samples])
    objects = np.array([s.object_label for s in samples])
    colors = np.array([s.color_label for s in samples])
    return features, objects, colors


def ce_loss(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean multinomial cross-entropy of linear logits."""
    return _ce_loss_grad(np.asarray(weights, dtype=float),
                         np.atleast_2d(features), np.asarray(labels))[0]


def ce_gradient(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of :func:`ce_loss` with respect to the weight matrix."""
    return _ce_loss_grad(np.asarray(weights, dtype=float),
                         np.atleast_2d(features), np.asarray(labels))[1]


def _ce_loss_grad(weights: np.ndarray, x: np.ndarray, labels: np.ndarray):
    n = x.shape[0]
    logits = x @ weights.T
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    z = exp.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    loss = float(np.mean(np.log(z[:, 0]) - logits[idx, labels]))
    p = exp / z
    p[idx, labels] -= 1.0
    return loss, p.T @ x / n


def _descend(loss_grad, w0: np.ndarray, epochs: int, step_size: float) -> np.ndarray:
    """Full-batch GD with step halving; loss never increases between epochs."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if step_size <= 0:
        raise ConfigError(f"step_size must be > 0, got {step_size}")
    w = w0
    loss, grad = loss_grad(w)
    step = step_size
    for epoch in range(1, epochs + 1):
        for _ in range(_MAX_HALVINGS):
            candidate = w - step * grad
            cand_loss, cand_grad = loss_grad(candidate)
            if cand_loss <= loss:
                w, loss, grad = candidate, cand_loss, cand_grad
                break
            step *= 0.5
        else:
            raise NonconvergenceError(
                f"loss would not decrease after {_MAX_HALVINGS} step halvings "
                f"(epoch {epoch})",
                step=epoch,
            )
    return w


def _init(shape: tuple[int, int], rng: np.random.Generator | None) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    return 0.01 * rng.standard_normal(shape)


def train_supervised(data, epochs: int = 400, step_size: float = 2.0,
                     rng: np.random.Generator | None = None) -> LinearClassifier:
    """k-way logistic regression over the full feature vector, full-batch GD."""
    features, objects, _ = _as_arrays(data)
    k = int(objects.max()) + 1
    if isinstance(data, DiscreteDataset):
        k = data.config.num_classes
    w0 = _init((k, features.shape[1]), rng)
    weights = _descend(lambda w: _ce_loss_grad(w, features, objects),
                       w0, epochs, step_size)
    return LinearClassifier(weights)


def train_contrastive_perfect(data, epochs: int = 400, step_size: float = 2.0,
                              rng: np.random.Generator | None = None) -> DualHeadClassifier:
    """Joint object + color classification over shared fixed features.

    The two cross-entropies add with equal weight and the heads share no
    parameters, so the object head follows exactly the supervised
    trajectory up to the shared step-size schedule.
    """
    features, objects, colors = _as_arrays(data)
    k = int(objects.max()) + 1
    c = int(colors.max()) + 1
    if isinstance(data, DiscreteDataset):
        k = data.config.num_classes
        c = data.config.num_colors
    d = features.shape[1]
    w0 = np.vstack([_init((k, d), rng), _init((c, d), rng)])

    def loss_grad(w):
        lo, go = _ce_loss_grad(w[:k], features, objects)
        lc, gc = _ce_loss_grad(w[k:], features, colors)
        return lo + lc, np.vstack([go, gc])

    weights = _descend(loss_grad, w0, epochs, step_size)
    return DualHeadClassifier(object_head=weights[:k], color_head=weights[k:])


@dataclass(frozen=True)
class SplitReport:
    """Zero-shot accuracies of one trained model over the test splits.

    acc_rest is None when there are no classes beyond the biased pair.
    """

    method: str
    acc_rand_biased: float
    acc_rev_biased: float
    acc_rest: float | None

    def __post_init__(self):
        for name in ("acc_rand_biased", "acc_rev_biased", "acc_rest"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


def evaluate_splits(model, config: DiscreteConfig, n_test: int, seed: int,
                    method: str | None = None) -> SplitReport:
    """Biased-class accuracy on Rand and Rev, remaining-class accuracy on Rand."""
    if n_test < 1:
        raise ConfigError(f"n_test must be positive, got {n_test}")
    if method is None:
        method = "contrastive" if isinstance(model, DualHeadClassifier) else "supervised"
    rand = sample_discrete_dataset(config, Split.RAND, seed, size=n_test)
    rev = sample_discrete_dataset(config, Split.REV, seed, size=n_test)
    biased = np.array(config.biased_classes)

    def masked_acc(split: DiscreteDataset, mask: np.ndarray) -> float | None:
        if not mask.any():
            return None
        pred = model.predict(split.features[mask])
        return float((pred == split.object_labels[mask]).mean())

    rand_biased = np.isin(rand.object_labels, biased)
    rev_biased = np.isin(rev.object_labels, biased)
    acc_rest = None
    if config.num_classes > 2:
        acc_rest = masked_acc(rand, ~rand_biased)
    return SplitReport(
        method=method,
        acc_rand_biased=masked_acc(rand, rand_biased),
        acc_rev_biased=masked_acc(rev, rev_biased),
        acc_rest=acc_rest,
    )


@dataclass(frozen=True)
class MethodSummary:
    """Mean and population std of each SplitReport column over seeds."""

    method: str
    n_seeds: int
    rand_mean: float
    rand_std: float
    rev_mean: float
    rev_std: float
    rest_mean: float | None
    rest_std: float | None

    def to_json_dict(self) -> dict:
        return asdict(self)


def _summarize(method: str, reports: list[SplitReport]) -> MethodSummary:
    rand = np.array([r.acc_rand_biased for r in reports])
    rev = np.array([r.acc_rev_biased for r in reports])
    rest_vals = [r.acc_rest for r in reports]
    has_rest = all(v is not None for v in rest_vals)
    return MethodSummary(
        method=method,
        n_seeds=len(reports),
        rand_mean=float(rand.mean()),
        rand_std=float(rand.std()),
        rev_mean=float(rev.mean()),
        rev_std=float(rev.std()),
        rest_mean=float(np.mean(rest_vals)) if has_rest else None,
        rest_std=float(np.std(rest_vals)) if has_rest else None,
    )


def run_discrete_experiment(config: DiscreteConfig, n_seeds: int,
                            n_test: int = 4000, epochs: int = 400,
                            step_size: float = 2.0
                            ) -> tuple[list[MethodSummary], list[SplitReport]]:
    """Train both methods over n_seeds seeds and aggregate per column.

    Seeds run at config.seed + index.  Both methods are evaluated on the
    same test draws per seed; initializations use separate sub-streams so
    the two otherwise-identical object problems do not start bit-equal.
    """
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    per_seed: list[SplitReport] = []
    sup_reports: list[SplitReport] = []
    con_reports: list[SplitReport] = []
    for index in range(n_seeds):
        seed = config.seed + index
        train_data = sample_discrete_dataset(config, Split.TRAIN, seed)
        sup = train_supervised(
            train_data, epochs, step_size, rng=substream(seed, _TAG_INIT_SUP)
        )
        con = train_contrastive_perfect(
            train_data, epochs, step_size, rng=substream(seed, _TAG_INIT_CON)
        )
        sup_reports.append(evaluate_splits(sup, config, n_test, seed, "supervised"))
        con_reports.append(evaluate_splits(con, config, n_test, seed, "contrastive"))
    per_seed = sup_reports + con_reports
    summaries = [
        _summarize("supervised", sup_reports),
        _summarize("contrastive", con_reports),
    ]
    return summaries, per_seed


def experiment_grid(base: DiscreteConfig, num_classes: tuple[int, ...],
                    p_invs: tuple[float, ...], p_spus: tuple[float, ...]) -> list[DiscreteConfig]:
    """Cartesian sweep of (k, p_inv, p_spu) around a base config."""
    configs = []
    for k in num_classes:
        for p_inv in p_invs:
            for p_spu in p_spus:
                configs.append(replace(
                    base, num_classes=k, num_colors=max(base.num_colors or k, k),
                    p_inv=p_inv, p_spu=p_spu,
                ))
    return configs
