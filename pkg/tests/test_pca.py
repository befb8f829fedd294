import numpy as np
import pytest

from facereact.core import flatten
from facereact.exceptions import (
    ArtifactFormatError,
    DegenerateDataError,
    DimensionError,
    FitError,
)
from facereact.pca import ExpressionSpacePCA, NoiseSpec, select_rank

from seqtools import make_sequence, random_sequence


def dense_covariance_eig(data):
    """Independent oracle: full D x D covariance eigendecomposition (1/M)."""
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / data.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    return evals[order], evecs[:, order]


def principal_angles(basis_a, basis_b):
    """Angles between the column spaces of two orthonormal bases."""
    svals = np.linalg.svd(basis_a.T @ basis_b, compute_uv=False)
    return np.arccos(np.clip(svals, -1.0, 1.0))


def fit_toy_model(rng, m=20, n_frames=2, n_kp=2, rank=None, threshold=0.95):
    """Toy training set at D = n_frames * n_kp * 3 (small enough for the oracle)."""
    dim = n_frames * n_kp * 3
    if rank is None:
        data = rng.normal(size=(m, dim))
    else:
        basis = np.linalg.qr(rng.normal(size=(dim, rank)))[0]
        data = rng.normal(size=(m, rank)) @ basis.T + rng.normal(size=dim)
    seqs = [make_sequence(row.reshape(n_frames, n_kp, 3)) for row in data]
    model = ExpressionSpacePCA(variance_threshold=threshold).fit(seqs)
    return model, data, seqs


class TestRankSelection:
    def test_hand_computed_spectrum(self):
        # Cumulative fractions: 0.5, 0.8, 0.95, 1.0 -> first >= 0.95 is k=3.
        evals = np.array([0.5, 0.3, 0.15, 0.05])
        assert select_rank(evals, total=1.0, threshold=0.95) == 3

    def test_boundary_hit_exactly(self):
        evals = np.array([0.95, 0.05])
        assert select_rank(evals, total=1.0, threshold=0.95) == 1

    def test_threshold_one_keeps_everything(self):
        evals = np.array([0.6, 0.3, 0.1])
        assert select_rank(evals, total=1.0, threshold=1.0) == 3

    def test_tiny_threshold_keeps_one(self):
        evals = np.array([0.6, 0.3, 0.1])
        assert select_rank(evals, total=1.0, threshold=0.05) == 1

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            select_rank(np.array([1.0]), total=1.0, threshold=0.0)


class TestSnapshotFit:
    def test_matches_dense_oracle_small_d(self, rng):
        model, data, _ = fit_toy_model(rng, m=20, n_frames=2, n_kp=2, threshold=1.0)
        oracle_evals, oracle_vecs = dense_covariance_eig(data)
        k = model.k_star_
        assert np.max(np.abs(model.eigenvalues_ - oracle_evals[:k])) < 1e-8
        angles = principal_angles(model.components_.T, oracle_vecs[:, :k])
        assert np.max(angles) < 1e-6

    def test_rank_one_data(self, rng):
        dim = 12
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        offsets = rng.normal(size=(15, 1))
        data = 5.0 + offsets * direction
        seqs = [make_sequence(row.reshape(2, 2, 3)) for row in data]
        model = ExpressionSpacePCA().fit(seqs)
        assert model.k_star_ == 1
        dot = float(model.components_[0] @ direction)
        assert abs(abs(dot) - 1.0) < 1e-6

    def test_nonzero_eigenvalue_count_bounded_by_samples(self, rng):
        seqs = [random_sequence(rng, n_frames=60, n_kp=146) for _ in range(20)]
        model = ExpressionSpacePCA(variance_threshold=1.0).fit(seqs)
        assert model.k_star_ <= 19
        assert model.dim_ == 26280

    def test_components_orthonormal(self, rng):
        model, _, _ = fit_toy_model(rng, m=12, n_frames=2, n_kp=3, threshold=1.0)
        gram = model.components_ @ model.components_.T
        assert np.max(np.abs(gram - np.eye(model.k_star_))) < 1e-6

    def test_eigenvalues_sorted_nonnegative(self, rng):
        model, _, _ = fit_toy_model(rng, m=10, threshold=1.0)
        assert np.all(np.diff(model.eigenvalues_) <= 1e-12)
        assert np.all(model.eigenvalues_ >= 0)

    def test_retained_fraction_minimal(self, rng):
        model, data, _ = fit_toy_model(rng, m=25, n_frames=3, n_kp=2, threshold=0.8)
        fractions = np.cumsum(model.eigenvalues_) / model.total_eigensum_
        assert fractions[-1] >= 0.8 - 1e-12
        if model.k_star_ > 1:
            assert fractions[-2] < 0.8

    def test_total_eigensum_counts_discarded_mass(self, rng):
        model, data, _ = fit_toy_model(rng, m=15, threshold=0.5)
        oracle_evals, _ = dense_covariance_eig(data)
        assert model.total_eigensum_ == pytest.approx(np.sum(oracle_evals), rel=1e-10)
        assert np.sum(model.eigenvalues_) < model.total_eigensum_

    def test_errors(self, rng):
        single = [random_sequence(rng, n_frames=2, n_kp=2)]
        with pytest.raises(FitError):
            ExpressionSpacePCA().fit(single)
        mismatched = [
            random_sequence(rng, n_frames=2, n_kp=2),
            random_sequence(rng, n_frames=3, n_kp=2),
        ]
        with pytest.raises(DimensionError):
            ExpressionSpacePCA().fit(mismatched)
        constant = make_sequence(np.ones((2, 2, 3)))
        with pytest.raises(DegenerateDataError):
            ExpressionSpacePCA().fit([constant, constant, constant])

    def test_sklearn_params_round_trip(self):
        model = ExpressionSpacePCA(variance_threshold=0.9, sigma=0.2)
        params = model.get_params()
        assert params == {"variance_threshold": 0.9, "sigma": 0.2}
        model.set_params(sigma=0.3)
        assert model.sigma == 0.3


class TestProjection:
    def test_mean_input_projects_to_mean(self, rng):
        model, _, seqs = fit_toy_model(rng, m=10)
        mean_seq = seqs[0].with_coords(model.mean_)
        out = model.project(mean_seq)
        assert np.allclose(flatten(out), model.mean_, atol=1e-12)
        assert np.allclose(model.coefficients(mean_seq), 0.0, atol=1e-12)

    def test_in_span_input_is_fixed_point(self, rng):
        model, _, seqs = fit_toy_model(rng, m=10, threshold=1.0)
        coeffs = rng.normal(size=model.k_star_)
        vec = model.mean_ + model.components_.T @ coeffs
        seq = seqs[0].with_coords(vec)
        out = model.project(seq)
        assert np.max(np.abs(flatten(out) - vec)) < 1e-6

    def test_idempotent(self, rng):
        model, _, seqs = fit_toy_model(rng, m=10, threshold=0.9)
        for seq in seqs[:5]:
            once = model.project(seq)
            twice = model.project(once)
            assert np.max(np.abs(flatten(twice) - flatten(once))) < 1e-9

    def test_full_rank_reconstructs_training_samples(self, rng):
        model, data, seqs = fit_toy_model(rng, m=8, threshold=1.0)
        for seq, row in zip(seqs, data):
            out = model.project(seq)
            assert np.max(np.abs(flatten(out) - row)) < 1e-5

    def test_reconstruction_error_monotone_in_rank(self, rng):
        _, data, seqs = fit_toy_model(rng, m=14, n_frames=3, n_kp=2, threshold=1.0)
        full = ExpressionSpacePCA(variance_threshold=1.0).fit(seqs)
        errors = []
        for k in range(1, full.k_star_ + 1):
            comps = full.components_[:k]
            centered = data - full.mean_
            recon = centered @ comps.T @ comps
            errors.append(float(np.mean((centered - recon) ** 2)))
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    def test_timestamps_copied_from_input(self, rng):
        model, _, _ = fit_toy_model(rng, m=6)
        query = random_sequence(rng, n_frames=2, n_kp=2, fps=30.0)
        out = model.project(query)
        assert np.array_equal(out.timestamps, query.timestamps)

    def test_dimension_mismatch_rejected(self, rng):
        model, _, _ = fit_toy_model(rng, m=6, n_frames=2, n_kp=2)
        with pytest.raises(DimensionError):
            model.project(random_sequence(rng, n_frames=2, n_kp=3))

    def test_transform_maps_list(self, rng):
        model, _, seqs = fit_toy_model(rng, m=6)
        outs = model.transform(seqs[:3])
        assert len(outs) == 3


class TestRespond:
    def test_sigma_zero_equals_project_bitwise(self, rng):
        model, _, seqs = fit_toy_model(rng, m=10)
        for seq in seqs[:3]:
            a = flatten(model.respond(seq, sigma=0.0))
            b = flatten(model.project(seq))
            assert np.array_equal(a, b)

    def test_seeded_runs_reproducible(self, rng):
        model, _, seqs = fit_toy_model(rng, m=10)
        out1 = model.respond(seqs[0], sigma=0.3, rng=np.random.default_rng(7))
        out2 = model.respond(seqs[0], sigma=0.3, rng=np.random.default_rng(7))
        assert np.array_equal(flatten(out1), flatten(out2))

    def test_noise_spec_carries_seed(self):
        spec = NoiseSpec(sigma=0.2, rng_seed=11)
        a = spec.make_rng().normal(size=4)
        b = spec.make_rng().normal(size=4)
        assert np.array_equal(a, b)
        with pytest.raises(ValueError):
            NoiseSpec(sigma=-0.1)

    def test_coefficient_deviation_variance_matches_analytic(self, rng):
        # Monte-Carlo oracle: Var(noisy_j - clean_j) must equal sigma^2 * lambda_j.
        model, _, seqs = fit_toy_model(rng, m=12, threshold=1.0)
        sigma = 0.1
        trials = 10_000
        gen = np.random.default_rng(99)
        devs = np.empty((trials, model.k_star_))
        for i in range(trials):
            clean, noisy = model.respond_coefficients(seqs[0], sigma=sigma, rng=gen)
            devs[i] = noisy - clean
        msd = np.mean(devs**2, axis=0)
        expected = sigma**2 * model.eigenvalues_
        assert np.max(np.abs(msd / expected - 1.0)) < 0.05

    def test_respond_matches_reconstructed_noisy_coefficients(self, rng):
        model, _, seqs = fit_toy_model(rng, m=9)
        _, noisy = model.respond_coefficients(
            seqs[1], sigma=0.4, rng=np.random.default_rng(5)
        )
        via_coeffs = model.reconstruct(noisy, seqs[1])
        direct = model.respond(seqs[1], sigma=0.4, rng=np.random.default_rng(5))
        assert np.array_equal(flatten(via_coeffs), flatten(direct))

    def test_mean_input_sigma_zero_gives_zero_coefficients(self, rng):
        model, _, seqs = fit_toy_model(rng, m=9)
        mean_seq = seqs[0].with_coords(model.mean_)
        clean, noisy = model.respond_coefficients(mean_seq, sigma=0.0)
        assert np.allclose(clean, 0.0, atol=1e-12)
        assert np.allclose(noisy, 0.0, atol=1e-12)

    def test_training_coefficients_within_loose_bound(self, rng):
        model, _, seqs = fit_toy_model(rng, m=20, threshold=1.0)
        m = 20
        bound = 3.0 * np.sqrt(model.eigenvalues_ * m)
        within = []
        for seq in seqs:
            coeffs = model.coefficients(seq)
            within.append(np.abs(coeffs) <= bound)
        assert np.mean(np.concatenate(within)) > 0.9

    def test_mean_squared_displacement_matches_total_noise_power(self, rng):
        model, _, seqs = fit_toy_model(rng, m=12, threshold=1.0)
        sigma = 0.25
        gen = np.random.default_rng(31)
        trials = 4000
        sq = np.empty(trials)
        base = flatten(model.project(seqs[2]))
        for i in range(trials):
            out = flatten(model.respond(seqs[2], sigma=sigma, rng=gen))
            sq[i] = np.sum((out - base) ** 2)
        expected = sigma**2 * np.sum(model.eigenvalues_)
        assert np.mean(sq) == pytest.approx(expected, rel=0.1)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, rng):
        model, _, seqs = fit_toy_model(rng, m=10)
        path = tmp_path / "space.esm"
        model.save(path)
        loaded = ExpressionSpacePCA.load(path)
        assert np.array_equal(loaded.mean_, model.mean_)
        assert np.array_equal(loaded.components_, model.components_)
        assert np.array_equal(loaded.eigenvalues_, model.eigenvalues_)
        assert loaded.k_star_ == model.k_star_
        assert loaded.total_eigensum_ == model.total_eigensum_
        assert loaded.window_ == model.window_ and loaded.n_kp_ == model.n_kp_
        out_a = flatten(loaded.project(seqs[0]))
        out_b = flatten(model.project(seqs[0]))
        assert np.array_equal(out_a, out_b)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.esm"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ArtifactFormatError):
            ExpressionSpacePCA.load(path)

    def test_truncated_rejected(self, tmp_path, rng):
        model, _, _ = fit_toy_model(rng, m=6)
        path = tmp_path / "trunc.esm"
        model.save(path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ArtifactFormatError):
            ExpressionSpacePCA.load(path)

    def test_describe_reports_header(self, rng):
        model, _, _ = fit_toy_model(rng, m=6)
        info = model.describe()
        assert info["kind"] == "expression-space"
        assert info["dim"] == model.dim_
        assert 0.95 - 1e-9 <= info["retained_fraction"] <= 1.0 + 1e-9
