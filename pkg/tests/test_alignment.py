import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spurious_lens import (
    AlignmentMatrix,
    ConfigError,
    GenerativeConfig,
    InsufficientDataError,
    NonconvergenceError,
    ShapeError,
    alignment_gap,
    asymptotic_minimizer,
    clip_loss,
    clip_loss_gradient,
    empirical_minimizer,
    gradient_descent_minimizer,
    latent_alignment_target,
    make_dictionary,
    ood_dataset,
    population_alignment_target,
    prompt_embedding,
    sample_dataset,
    subgroup_accuracy,
    zero_shot_predict,
    zero_shot_predict_batch,
)


def naive_pairwise_loss(M, dataset, rho):
    """Literal double-sum definition, kept as an independent oracle."""
    n = len(dataset)
    scores = dataset.x_image @ M.entries @ dataset.x_text.T
    first = sum(scores[i, j] - scores[i, i]
                for i in range(n) for j in range(n) if i != j)
    second = sum(scores[j, i] - scores[i, i]
                 for i in range(n) for j in range(n) if i != j)
    penalty = rho / 2 * float(np.sum(M.entries ** 2))
    return (first + second) / (2 * n * (n - 1)) + penalty


def small_dataset(seed=0, n=25, d_i=4, d_t=3, rho=1.0):
    cfg = GenerativeConfig(n=n, d_I=d_i, d_T=d_t, rho=rho, sigma_xi=0.1)
    return sample_dataset(cfg, seed=seed)


def random_matrix(shape, seed):
    return AlignmentMatrix(np.random.default_rng(seed).standard_normal(shape))


class TestLoss:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_pairwise_oracle(self, seed):
        ds = small_dataset(seed=seed)
        M = random_matrix((4, 3), seed)
        assert clip_loss(M, ds, 1.3) == pytest.approx(
            naive_pairwise_loss(M, ds, 1.3), abs=1e-12)

    def test_zero_matrix_loss_is_zero(self):
        ds = small_dataset()
        assert clip_loss(AlignmentMatrix(np.zeros((4, 3))), ds, 2.0) == 0.0

    def test_shape_mismatch_rejected(self):
        ds = small_dataset()
        with pytest.raises(ShapeError):
            clip_loss(random_matrix((5, 3), 0), ds, 1.0)

    def test_single_pair_rejected(self):
        ds = small_dataset(n=2)
        one = type(ds)(
            config=ds.config, seed=ds.seed,
            x_image=ds.x_image[:1], x_text=ds.x_text[:1],
            labels=ds.labels[:1], attributes=ds.attributes[:1],
            latents=ds.latents[:1],
            dict_image=ds.dict_image, dict_text=ds.dict_text,
        )
        with pytest.raises(InsufficientDataError):
            clip_loss(random_matrix((4, 3), 0), one, 1.0)

    def test_non_finite_matrix_rejected(self):
        with pytest.raises(ShapeError):
            AlignmentMatrix(np.array([[np.nan, 0.0]]))


class TestGradient:
    def test_matches_central_finite_differences(self):
        ds = small_dataset(seed=3, n=40, d_i=5, d_t=4)
        M = random_matrix((5, 4), 7)
        grad = clip_loss_gradient(M, ds, 0.8)
        eps = 1e-6
        fd = np.zeros_like(grad)
        for i in range(5):
            for j in range(4):
                bump = np.zeros((5, 4))
                bump[i, j] = eps
                hi = clip_loss(AlignmentMatrix(M.entries + bump), ds, 0.8)
                lo = clip_loss(AlignmentMatrix(M.entries - bump), ds, 0.8)
                fd[i, j] = (hi - lo) / (2 * eps)
        assert np.linalg.norm(grad - fd) / np.linalg.norm(grad) < 1e-5

    def test_vanishes_at_closed_form_minimizer(self):
        ds = small_dataset(seed=1)
        M = empirical_minimizer(ds, 1.7)
        grad = clip_loss_gradient(M, ds, 1.7)
        assert np.max(np.abs(grad)) < 1e-12


class TestMinimizers:
    def test_closed_form_beats_perturbations(self):
        ds = small_dataset(seed=2)
        M = empirical_minimizer(ds, 1.0)
        base = clip_loss(M, ds, 1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            other = AlignmentMatrix(M.entries + 0.1 * rng.standard_normal(M.shape))
            assert clip_loss(other, ds, 1.0) > base

    def test_rejects_nonpositive_rho(self):
        ds = small_dataset()
        with pytest.raises(ConfigError):
            empirical_minimizer(ds, 0.0)

    def test_one_step_descent_with_matched_rate_is_exact(self):
        # the objective is quadratic in M, so step 1/rho lands on the optimum
        ds = small_dataset(seed=5, n=60, d_i=6, d_t=6, rho=0.7)
        closed = empirical_minimizer(ds, 0.7)
        gd = gradient_descent_minimizer(ds, 0.7, steps=1, step_size=1.0 / 0.7)
        rel = (np.linalg.norm(gd.entries - closed.entries)
               / np.linalg.norm(closed.entries))
        assert rel < 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_many_small_steps_converge(self, seed):
        ds = small_dataset(seed=seed, n=50, d_i=5, d_t=4, rho=1.2)
        closed = empirical_minimizer(ds, 1.2)
        gd = gradient_descent_minimizer(ds, 1.2, steps=80, step_size=0.4 / 1.2)
        rel = (np.linalg.norm(gd.entries - closed.entries)
               / np.linalg.norm(closed.entries))
        assert rel < 1e-6

    def test_oversized_step_raises_after_ten_increases(self):
        ds = small_dataset(seed=6)
        with pytest.raises(NonconvergenceError) as info:
            gradient_descent_minimizer(ds, 1.0, steps=100, step_size=3.0)
        assert info.value.step == 10

    @pytest.mark.parametrize("kwargs", [
        {"steps": 0, "step_size": 0.1},
        {"steps": 5, "step_size": 0.0},
        {"steps": 5, "step_size": -1.0},
    ])
    def test_rejects_bad_hyperparameters(self, kwargs):
        ds = small_dataset()
        with pytest.raises(ConfigError):
            gradient_descent_minimizer(ds, 1.0, **kwargs)


class TestTargets:
    def test_latent_target_entries(self):
        cfg = GenerativeConfig(sigma_inv=1.0, sigma_spu=0.5, mu_spu=2.0,
                               p_spu=0.95, mode="TheoremExact")
        A = latent_alignment_target(cfg)
        assert A[0, 0] == pytest.approx(2.0)
        assert A[1, 1] == pytest.approx(1.25)
        assert A[0, 1] == A[1, 0] == pytest.approx(2 * 2.0 * 0.95 - 1)

    def test_population_target_matches_latent_target_at_unit_means(self):
        cfg = GenerativeConfig(mu_inv=1.0, mu_spu=1.0, p_spu=0.8)
        assert np.allclose(latent_alignment_target(cfg),
                           population_alignment_target(cfg))

    def test_population_target_is_second_moment(self):
        cfg = GenerativeConfig(mu_inv=1.5, mu_spu=2.0, sigma_inv=0.7,
                               sigma_spu=0.3, p_spu=0.9, n=200_000)
        ds = sample_dataset(cfg, seed=0)
        emp = ds.latents.T @ ds.latents / len(ds)
        assert np.allclose(emp, population_alignment_target(cfg), atol=0.02)

    def test_asymptotic_minimizer_shape_and_scale(self):
        cfg = GenerativeConfig(d_I=6, d_T=5, rho=2.0)
        di, dt = make_dictionary(6, 0), make_dictionary(5, 1)
        M = asymptotic_minimizer(cfg, di, dt)
        assert M.shape == (6, 5)
        expected = di.entries @ latent_alignment_target(cfg) @ dt.entries.T / 2.0
        assert np.allclose(M.entries, expected)

    def test_gap_zero_at_target_and_positive_off_target(self):
        cfg = GenerativeConfig(d_I=6, d_T=5, rho=0.5)
        di, dt = make_dictionary(6, 0), make_dictionary(5, 1)
        M = asymptotic_minimizer(cfg, di, dt)
        assert alignment_gap(M, cfg, di, dt) == pytest.approx(0.0, abs=1e-12)
        off = AlignmentMatrix(M.entries + 0.1)
        assert alignment_gap(off, cfg, di, dt) > 0

    def test_empirical_gap_shrinks_with_n(self):
        cfg_small = GenerativeConfig(n=1000, sigma_xi=0.01)
        cfg_big = GenerativeConfig(n=16_000, sigma_xi=0.01)
        gaps = []
        for cfg in (cfg_small, cfg_big):
            meds = []
            for seed in (0, 1, 2):
                ds = sample_dataset(cfg, seed)
                M = empirical_minimizer(ds, cfg.rho)
                meds.append(alignment_gap(M, cfg, ds.dict_image, ds.dict_text))
            gaps.append(float(np.median(meds)))
        assert gaps[1] < gaps[0]


class TestZeroShot:
    def setup_method(self):
        self.cfg = GenerativeConfig(d_I=6, d_T=6)
        self.di = make_dictionary(6, 0)
        self.dt = make_dictionary(6, 1)
        self.M = asymptotic_minimizer(self.cfg, self.di, self.dt)
        self.prompts = (prompt_embedding(self.dt, 1), prompt_embedding(self.dt, -1))

    def test_prompt_vector_is_label_scaled_first_atom(self):
        pos = prompt_embedding(self.dt, 1)
        neg = prompt_embedding(self.dt, -1)
        assert np.allclose(pos.vector, self.dt.entries[:, 0])
        assert np.allclose(neg.vector, -self.dt.entries[:, 0])

    def test_prompt_rejects_other_labels(self):
        for bad in (0, 2, -2):
            with pytest.raises(ConfigError):
                prompt_embedding(self.dt, bad)

    def test_prompts_must_cover_both_labels(self):
        p1 = prompt_embedding(self.dt, 1)
        with pytest.raises(ConfigError):
            zero_shot_predict(self.M, np.zeros(6), (p1, p1))

    def test_tie_resolves_to_positive(self):
        assert zero_shot_predict(self.M, np.zeros(6), self.prompts) == 1

    def test_batch_agrees_with_single(self):
        x = np.random.default_rng(3).standard_normal((20, 6))
        batch = zero_shot_predict_batch(self.M, x, self.prompts)
        singles = [zero_shot_predict(self.M, row, self.prompts) for row in x]
        assert list(batch) == singles

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        scale=st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_prediction_invariant_to_matrix_scale(self, seed, scale):
        x = np.random.default_rng(seed).standard_normal(6)
        scaled = AlignmentMatrix(scale * self.M.entries)
        assert (zero_shot_predict(self.M, x, self.prompts)
                == zero_shot_predict(scaled, x, self.prompts))

    def test_predicts_sign_of_invariant_latent_when_noiseless(self):
        cfg = GenerativeConfig(d_I=6, d_T=6, sigma_xi=0.0, sigma_spu=0.0,
                               sigma_inv=0.0, n=100)
        ds = sample_dataset(cfg, seed=2)
        # spurious weight is positive but the invariant column dominates
        pred = zero_shot_predict_batch(
            asymptotic_minimizer(cfg, ds.dict_image, ds.dict_text),
            ds.x_image,
            (prompt_embedding(ds.dict_text, 1), prompt_embedding(ds.dict_text, -1)),
        )
        acc = (pred == ds.labels).mean()
        assert acc == 1.0


class TestSubgroups:
    def test_counts_and_weighted_mean_identity(self):
        cfg = GenerativeConfig(n=4000)
        ds = sample_dataset(cfg, seed=0)
        test = ood_dataset(cfg, ds.dict_image, ds.dict_text, 0, 4000)
        M = empirical_minimizer(ds, cfg.rho)
        prompts = (prompt_embedding(ds.dict_text, 1),
                   prompt_embedding(ds.dict_text, -1))
        rep = subgroup_accuracy(M, test, prompts)
        assert rep.n_aligned + rep.n_conflicting == len(test)
        recombined = (rep.acc_aligned * rep.n_aligned
                      + rep.acc_conflicting * rep.n_conflicting) / len(test)
        assert rep.acc_overall == pytest.approx(recombined, abs=1e-12)

    def test_empty_subgroup_reports_none(self):
        cfg = GenerativeConfig(n=300, p_spu=1.0)
        ds = sample_dataset(cfg, seed=1)
        M = empirical_minimizer(ds, cfg.rho)
        prompts = (prompt_embedding(ds.dict_text, 1),
                   prompt_embedding(ds.dict_text, -1))
        rep = subgroup_accuracy(M, ds, prompts)
        assert rep.n_conflicting == 0
        assert rep.acc_conflicting is None
        assert rep.acc_overall == rep.acc_aligned

    def test_json_dict_field_names(self):
        cfg = GenerativeConfig(n=500)
        ds = sample_dataset(cfg, seed=3)
        M = empirical_minimizer(ds, cfg.rho)
        prompts = (prompt_embedding(ds.dict_text, 1),
                   prompt_embedding(ds.dict_text, -1))
        d = subgroup_accuracy(M, ds, prompts).to_json_dict()
        assert set(d) == {"acc_overall", "acc_aligned", "acc_conflicting",
                          "n_aligned", "n_conflicting"}


class TestMatrixCsv:
    def test_round_trip_is_exact(self, tmp_path):
        M = random_matrix((5, 3), 11)
        path = tmp_path / "m.csv"
        M.to_csv(path)
        assert np.array_equal(AlignmentMatrix.from_csv(path).entries, M.entries)

    def test_rejects_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(ShapeError):
            AlignmentMatrix.from_csv(path)

    def test_rejects_dims_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("d_I,d_T\n2,2\n1.0,2.0\n")
        with pytest.raises(ShapeError):
            AlignmentMatrix.from_csv(path)
