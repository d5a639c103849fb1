"""Bilinear image-text alignment: loss, minimizers, zero-shot inference.

The contrastive objective used here is linear in the alignment matrix
``M = W_I^T W_T`` plus a quadratic penalty, so its unique stationary point
has a closed form.  A plain gradient-descent optimizer is kept alongside as
an independent route to the same matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, NonconvergenceError, ShapeError
from .synthetic import Dictionary, GenerativeConfig, SyntheticDataset


@dataclass(frozen=True)
class AlignmentMatrix:
    """The learned bilinear form scoring image rows against text columns."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2:
            raise ShapeError(f"alignment matrix must be 2-D, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ShapeError("alignment matrix has non-finite entries")

    @property
    def shape(self):
        return self.entries.shape

    def to_csv(self, path) -> None:
        """Row-major dump with a leading dims header."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["d_I", "d_T"])
            writer.writerow(list(self.entries.shape))
            for row in self.entries:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "AlignmentMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or rows[0] != ["d_I", "d_T"]:
            raise ShapeError("alignment CSV must start with a d_I,d_T header")
        d_i, d_t = int(rows[1][0]), int(rows[1][1])
        data = np.array([[float(v) for v in row] for row in rows[2:]])
        if data.shape != (d_i, d_t):
            raise ShapeError(
                f"alignment CSV body {data.shape} does not match header ({d_i}, {d_t})"
            )
        return cls(data)


@dataclass(frozen=True)
class PromptEmbedding:
    label: int
    vector: np.ndarray


@dataclass(frozen=True)
class SubgroupReport:
    """Zero-shot accuracy split by whether the attribute matches the label.

    A subgroup with no samples reports None rather than 0 for its accuracy.
    """

    acc_overall: float
    acc_aligned: float | None
    acc_conflicting: float | None
    n_aligned: int
    n_conflicting: int

    def to_json_dict(self) -> dict:
        return {
            "acc_overall": self.acc_overall,
            "acc_aligned": self.acc_aligned,
            "acc_conflicting": self.acc_conflicting,
            "n_aligned": self.n_aligned,
            "n_conflicting": self.n_conflicting,
        }


def _check_dims(M: AlignmentMatrix, dataset: SyntheticDataset) -> None:
    want = (dataset.config.d_I, dataset.config.d_T)
    if M.shape != want:
        raise ShapeError(f"alignment matrix shape {M.shape} does not match data dims {want}")


def _data_term(dataset: SyntheticDataset) -> np.ndarray:
    """Constant matrix C with contrastive data loss <C, M>_F.

    Averaging the pairwise (mismatched minus matched) similarities over all
    ordered pairs collapses to C = (sum_I sum_T^T - n * X_I^T X_T) / (n(n-1)).
    """
    n = len(dataset)
    sum_i = dataset.x_image.sum(axis=0)
    sum_t = dataset.x_text.sum(axis=0)
    matched = dataset.x_image.T @ dataset.x_text
    return (np.outer(sum_i, sum_t) - n * matched) / (n * (n - 1))


def clip_loss(M: AlignmentMatrix, dataset: SyntheticDataset, rho: float) -> float:
    """Average mismatched-minus-matched similarity plus (rho/2) ||M||_F^2."""
    if len(dataset) < 2:
        raise InsufficientDataError("contrastive loss needs at least 2 pairs")
    _check_dims(M, dataset)
    data = float(np.vdot(_data_term(dataset), M.entries))
    return data + 0.5 * rho * float(np.sum(M.entries ** 2))


def clip_loss_gradient(M: AlignmentMatrix, dataset: SyntheticDataset, rho: float) -> np.ndarray:
    """Exact gradient of :func:`clip_loss` with respect to M."""
    if len(dataset) < 2:
        raise InsufficientDataError("contrastive loss needs at least 2 pairs")
    _check_dims(M, dataset)
    return _data_term(dataset) + rho * M.entries


def empirical_minimizer(dataset: SyntheticDataset, rho: float) -> AlignmentMatrix:
    """Closed-form unique minimizer of the regularized contrastive loss.

    Equals (1/rho) * [(n-1) * sum_i x_I^i x_T^i^T - sum_{i != j} x_I^i x_T^j^T]
    / (n(n-1)); the loss gradient vanishes there.
    """
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    if len(dataset) < 2:
        raise InsufficientDataError("minimizer needs at least 2 pairs")
    return AlignmentMatrix(-_data_term(dataset) / rho)


def latent_alignment_target(config: GenerativeConfig) -> np.ndarray:
    """The 2x2 latent-space matrix the trained alignment converges to.

    The diagonal carries the latent second moments at unit means and the
    off-diagonal carries the spurious coupling weight 2*mu_spu*p_spu - 1.
    """
    w = 2.0 * config.mu_spu * config.p_spu - 1.0
    return np.array([
        [1.0 + config.sigma_inv ** 2, w],
        [w, 1.0 + config.sigma_spu ** 2],
    ])


def population_alignment_target(config: GenerativeConfig) -> np.ndarray:
    """Latent second-moment matrix E[z z^T] for general means.

    Coincides with :func:`latent_alignment_target` when mu_inv = mu_spu = 1;
    both are reported so the gap between the two readings stays visible.
    """
    return np.array([
        [config.mu_inv ** 2 + config.sigma_inv ** 2,
         config.mu_inv * config.mu_spu * (2.0 * config.p_spu - 1.0)],
        [config.mu_inv * config.mu_spu * (2.0 * config.p_spu - 1.0),
         config.mu_spu ** 2 + config.sigma_spu ** 2],
    ])


def asymptotic_minimizer(config: GenerativeConfig, dict_image: Dictionary,
                         dict_text: Dictionary) -> AlignmentMatrix:
    """Idealized alignment (1/rho) * D_I A D_T^T with A the latent target."""
    core = latent_alignment_target(config)
    return AlignmentMatrix(
        dict_image.entries @ core @ dict_text.entries.T / config.rho
    )


def alignment_gap(M: AlignmentMatrix, config: GenerativeConfig,
                  dict_image: Dictionary, dict_text: Dictionary) -> float:
    """Relative Frobenius distance of rho*M from its asymptotic target."""
    core = latent_alignment_target(config)
    target = dict_image.entries @ core @ dict_text.entries.T
    return float(
        np.linalg.norm(config.rho * M.entries - target) / np.linalg.norm(core)
    )


def population_alignment_gap(M: AlignmentMatrix, config: GenerativeConfig,
                             dict_image: Dictionary, dict_text: Dictionary) -> float:
    """Like :func:`alignment_gap` but against the general-means target."""
    core = population_alignment_target(config)
    target = dict_image.entries @ core @ dict_text.entries.T
    return float(
        np.linalg.norm(config.rho * M.entries - target) / np.linalg.norm(core)
    )


def gradient_descent_minimizer(dataset: SyntheticDataset, rho: float,
                               steps: int, step_size: float) -> AlignmentMatrix:
    """Full-batch gradient descent on :func:`clip_loss` from M = 0.

    Raises NonconvergenceError (naming the step) if the loss increases for
    10 consecutive steps.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if step_size <= 0:
        raise ConfigError(f"step_size must be > 0, got {step_size}")
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho}")
    data = _data_term(dataset)
    m = np.zeros_like(data)

    def loss(mat):
        return float(np.vdot(data, mat)) + 0.5 * rho * float(np.sum(mat ** 2))

    prev = loss(m)
    rising = 0
    for step in range(1, steps + 1):
        m = m - step_size * (data + rho * m)
        cur = loss(m)
        if cur > prev:
            rising += 1
            if rising >= 10:
                raise NonconvergenceError(
                    f"loss increased for 10 consecutive steps (at step {step})",
                    step=step,
                )
        else:
            rising = 0
        prev = cur
    return AlignmentMatrix(m)


def prompt_embedding(dict_text: Dictionary, label: int) -> PromptEmbedding:
    """Noiseless text embedding of the label-only prompt.

    The prompt's latent is [label, 0]: it names the object and says nothing
    about the background, so its spurious coordinate is zero.
    """
    if label not in (-1, 1):
        raise ConfigError(f"prompt label must be -1 or +1, got {label}")
    vector = dict_text.entries @ np.array([float(label), 0.0])
    return PromptEmbedding(label=label, vector=vector)


def _prompt_pair(prompts) -> tuple[PromptEmbedding, PromptEmbedding]:
    by_label = {p.label: p for p in prompts}
    if set(by_label) != {-1, 1}:
        raise ConfigError("prompts must cover exactly the labels -1 and +1")
    return by_label[1], by_label[-1]


def zero_shot_scores(M: AlignmentMatrix, x_image: np.ndarray, prompts) -> np.ndarray:
    """Alignment scores of image rows against the (+1, -1) prompts."""
    pos, neg = _prompt_pair(prompts)
    x = np.atleast_2d(np.asarray(x_image, dtype=float))
    if x.shape[1] != M.shape[0] or pos.vector.shape[0] != M.shape[1]:
        raise ShapeError(
            f"image dim {x.shape[1]} / prompt dim {pos.vector.shape[0]} "
            f"do not match alignment shape {M.shape}"
        )
    p = np.column_stack([pos.vector, neg.vector])
    return x @ (M.entries @ p)


def zero_shot_predict_batch(M: AlignmentMatrix, x_image: np.ndarray, prompts) -> np.ndarray:
    """Vectorized label prediction; exact ties resolve to +1."""
    scores = zero_shot_scores(M, x_image, prompts)
    return np.where(scores[:, 0] >= scores[:, 1], 1, -1)


def zero_shot_predict(M: AlignmentMatrix, x_image: np.ndarray, prompts) -> int:
    """Label whose prompt scores highest for one image; ties go to +1."""
    if np.asarray(x_image).ndim != 1:
        raise ShapeError("zero_shot_predict expects a single image vector")
    return int(zero_shot_predict_batch(M, x_image, prompts)[0])


def subgroup_accuracy(M: AlignmentMatrix, testset: SyntheticDataset, prompts) -> SubgroupReport:
    """Accuracy overall and split over the a == y and a != y subgroups."""
    if len(testset) == 0:
        raise InsufficientDataError("testset is empty")
    pred = zero_shot_predict_batch(M, testset.x_image, prompts)
    correct = pred == testset.labels
    aligned = testset.attributes == testset.labels
    n_aligned = int(aligned.sum())
    n_conflicting = int((~aligned).sum())
    acc_aligned = float(correct[aligned].mean()) if n_aligned else None
    acc_conflicting = float(correct[~aligned].mean()) if n_conflicting else None
    return SubgroupReport(
        acc_overall=float(correct.mean()),
        acc_aligned=acc_aligned,
        acc_conflicting=acc_conflicting,
        n_aligned=n_aligned,
        n_conflicting=n_conflicting,
    )
