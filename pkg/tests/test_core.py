import numpy as np
import pytest

from llgmm.core import (
    CoefficientEstimate,
    DimensionMismatchError,
    EstimatorConfig,
    FunctionalDataset,
    Grid,
    ParseError,
    ValidationError,
    load_dataset,
    load_estimate,
    quadrature_weights,
    trapezoid_integrate,
    write_dataset,
    write_estimate,
)


def midpoint_grid(r):
    return Grid((np.arange(1, r + 1) - 0.5) / r)


class TestGrid:
    def test_spacings_prepend_origin(self):
        g = Grid([0.2, 0.5, 0.9])
        assert np.allclose(g.spacings, [0.2, 0.3, 0.4])
        assert g.spacings.sum() == pytest.approx(0.9)

    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            Grid([0.3, 0.1, 0.2])

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            Grid([0.1, 0.1, 0.2])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            Grid([0.1, 1.2])
        with pytest.raises(ValidationError):
            Grid([-0.1, 0.5])

    def test_needs_two_points(self):
        with pytest.raises(ValidationError):
            Grid([0.5])


class TestTrapezoid:
    def test_constant_on_grid_reaching_one(self):
        g = Grid(np.linspace(0.01, 1.0, 100))
        assert trapezoid_integrate(np.ones(100), g) == pytest.approx(1.0, abs=1e-12)

    def test_linear_on_midpoint_grid(self):
        g = midpoint_grid(200)
        val = trapezoid_integrate(g.points, g)
        # leading panel s1^2 plus exact interior trapezoid (s_r^2 - s_1^2)/2
        assert val == pytest.approx(0.49750625, abs=1e-12)
        assert abs(val - 0.5) < 3e-3

    def test_full_period_sine(self):
        g = midpoint_grid(200)
        assert abs(trapezoid_integrate(np.sin(2 * np.pi * g.points), g)) < 1e-2

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            trapezoid_integrate(np.ones(5), midpoint_grid(10))

    def test_linearity(self):
        rng = np.random.default_rng(5)
        g = Grid(np.sort(rng.uniform(0.01, 1.0, 40)))
        f1, f2 = rng.normal(size=(2, 40))
        a, b = 2.7, -1.3
        lhs = trapezoid_integrate(a * f1 + b * f2, g)
        rhs = a * trapezoid_integrate(f1, g) + b * trapezoid_integrate(f2, g)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_positivity(self):
        rng = np.random.default_rng(6)
        g = Grid(np.sort(rng.uniform(0.01, 1.0, 30)))
        assert trapezoid_integrate(rng.uniform(0, 5, 30), g) >= 0.0

    def test_weights_sum_to_right_endpoint(self):
        g = midpoint_grid(50)
        assert quadrature_weights(g).sum() == pytest.approx(g.points[-1], abs=1e-14)


class TestDatasetValidation:
    def test_nonfinite_rejected(self):
        g = midpoint_grid(4)
        y = np.ones((2, 4))
        y[0, 1] = np.nan
        with pytest.raises(ValidationError):
            FunctionalDataset(grid=g, responses=y, covariates=np.ones((2, 1)))

    def test_row_mismatch(self):
        g = midpoint_grid(4)
        with pytest.raises(DimensionMismatchError):
            FunctionalDataset(grid=g, responses=np.ones((3, 4)), covariates=np.ones((2, 1)))

    def test_subset_keeps_ids(self):
        g = midpoint_grid(3)
        ds = FunctionalDataset(
            grid=g, responses=np.arange(12.0).reshape(4, 3),
            covariates=np.ones((4, 1)), ids=("a", "b", "c", "d"),
        )
        sub = ds.subset([2, 0])
        assert sub.ids == ("c", "a")
        assert np.array_equal(sub.responses[0], ds.responses[2])


class TestEstimatorConfig:
    def test_defaults_valid(self):
        cfg = EstimatorConfig()
        assert cfg.cv_folds == 5 and cfg.fve == 0.99 and cfg.bandwidth_shrink == 0.75

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"bandwidth_grid": ()},
            {"bandwidth_grid": (0.1, -0.2)},
            {"cv_folds": 1},
            {"fve": 1.0},
            {"bandwidth_shrink": 0.0},
            {"variance_floor": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValidationError):
            EstimatorConfig(**kwargs)


class TestFileIO:
    def _toy(self):
        g = Grid([0.1, 0.5, 0.9])
        return FunctionalDataset(
            grid=g,
            responses=np.array([[1.0, 2.0, 3.0], [0.5, -0.25, 1.0 / 3.0]]),
            covariates=np.array([[1.5], [-2.0]]),
            ids=("s1", "s2"),
        )

    def test_dataset_round_trip(self, tmp_path):
        ds = self._toy()
        cov, resp = str(tmp_path / "c.csv"), str(tmp_path / "r.csv")
        write_dataset(ds, cov, resp)
        back = load_dataset(cov, resp)
        assert back.ids == ds.ids
        assert np.max(np.abs(back.responses - ds.responses)) <= 1e-12
        assert np.max(np.abs(back.covariates - ds.covariates)) <= 1e-12
        assert np.max(np.abs(back.grid.points - ds.grid.points)) <= 1e-12

    def test_toy_dimensions(self, tmp_path):
        cov = tmp_path / "c.csv"
        resp = tmp_path / "r.csv"
        cov.write_text("id,x1\na,1.0\nb,2.0\n")
        resp.write_text("id,0.25,0.5,0.75\na,1,2,3\nb,4,5,6\n")
        ds = load_dataset(str(cov), str(resp))
        assert ds.n_subjects == 2 and ds.grid.size == 3 and ds.n_covariates == 1

    def test_unsorted_grid_header(self, tmp_path):
        cov = tmp_path / "c.csv"
        resp = tmp_path / "r.csv"
        cov.write_text("id,x1\na,1.0\nb,2.0\n")
        resp.write_text("id,0.3,0.1,0.2\na,1,2,3\nb,4,5,6\n")
        with pytest.raises(ParseError):
            load_dataset(str(cov), str(resp))

    def test_nonfinite_cell(self, tmp_path):
        cov = tmp_path / "c.csv"
        resp = tmp_path / "r.csv"
        cov.write_text("id,x1\na,NaN\nb,2.0\n")
        resp.write_text("id,0.25,0.5,0.75\na,1,2,3\nb,4,5,6\n")
        with pytest.raises(ParseError):
            load_dataset(str(cov), str(resp))

    def test_missing_id(self, tmp_path):
        cov = tmp_path / "c.csv"
        resp = tmp_path / "r.csv"
        cov.write_text("id,x1\na,1.0\nb,2.0\n")
        resp.write_text("id,0.25,0.5,0.75\na,1,2,3\nzz,4,5,6\n")
        with pytest.raises(ParseError):
            load_dataset(str(cov), str(resp))

    def test_ragged_row(self, tmp_path):
        cov = tmp_path / "c.csv"
        resp = tmp_path / "r.csv"
        cov.write_text("id,x1\na,1.0\nb,2.0\n")
        resp.write_text("id,0.25,0.5,0.75\na,1,2\nb,4,5,6\n")
        with pytest.raises(ParseError):
            load_dataset(str(cov), str(resp))

    def test_estimate_round_trip_and_header(self, tmp_path):
        g = Grid([0.2, 0.4, 0.8])
        est = CoefficientEstimate(
            grid=g,
            beta=np.array([[1.0, -2.0], [1.0 / 3.0, 0.125], [2.5, 1e-7]]),
            dbeta_scaled=np.array([[0.1, 0.2], [0.3, -0.4], [0.5, 0.6]]),
            bandwidth=0.2,
        )
        path = str(tmp_path / "est.csv")
        write_estimate(est, path)
        header = open(path).readline().strip()
        assert header == "s,beta_1,beta_2,dbeta_1,dbeta_2"
        back = load_estimate(path, bandwidth=0.2)
        assert np.max(np.abs(back.beta - est.beta)) <= 1e-12
        assert np.max(np.abs(back.dbeta_scaled - est.dbeta_scaled)) <= 1e-12

    def test_estimate_rejects_invalid_before_write(self, tmp_path):
        g = Grid([0.2, 0.4])
        with pytest.raises(ValidationError):
            CoefficientEstimate(
                grid=g, beta=np.full((2, 1), np.inf),
                dbeta_scaled=np.zeros((2, 1)), bandwidth=0.1,
            )

    def test_unwritable_path(self):
        g = Grid([0.2, 0.4])
        est = CoefficientEstimate(
            grid=g, beta=np.zeros((2, 1)), dbeta_scaled=np.zeros((2, 1)), bandwidth=0.1
        )
        with pytest.raises(Exception):
            write_estimate(est, "/no/such/dir/est.csv")
