import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uqpe.data import (
    BasisExpansion, Dataset, build_basis, evaluate_basis, evaluate_basis_derivative, ingest_csv,
)
from uqpe.errors import DegenerateBasisError, DimensionError, EmptyDataError, SchemaError


def _basis(terms, scales, p, treatment=0):
    v = [-1] + [j for j, _ in terms]
    d = [0] + [k for _, k in terms]
    return BasisExpansion(np.array(v), np.array(d), np.array([1.0, *scales]), p, treatment)


# -- ingestion ---------------------------------------------------------------

def test_ingest_listwise_deletion(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,d,c\n1.0,0.5,2\n,0.1,3\n3.0,0.7,NA\n4.0,0.2,1\n")
    ds = ingest_csv(f, "y", "d", ["c"])
    assert ds.n == 2 and ds.n_dropped == 2
    np.testing.assert_array_equal(ds.outcome, [1.0, 4.0])
    np.testing.assert_array_equal(ds.treatment, [0.5, 0.2])
    assert ds.column_names == ("d", "c")


def test_ingest_three_rows_one_missing(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,d\n1,2\n,3\n5,6\n")
    ds = ingest_csv(f, "y", "d")
    assert (ds.n, ds.n_dropped) == (2, 1)


def test_ingest_missing_treatment_column(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,x\n1,2\n3,4\n")
    with pytest.raises(SchemaError):
        ingest_csv(f, "y", "days")


def test_ingest_no_complete_rows(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,d\nNA,1\n2,\n")
    with pytest.raises(EmptyDataError):
        ingest_csv(f, "y", "d")


def test_ingest_42_controls(tmp_path):
    # treatment plus 41 further columns gives 42 covariates, the real-data shape
    rng = np.random.default_rng(1)
    names = ["wage", "days"] + [f"c{k}" for k in range(41)]
    data = rng.standard_normal((30, len(names)))
    f = tmp_path / "jc.csv"
    f.write_text(",".join(names) + "\n" + "\n".join(",".join(f"{v!r}" for v in r.tolist()) for r in data) + "\n")
    ds = ingest_csv(f, "wage", "days")
    assert ds.p == 42 and ds.treatment_index == 0
    np.testing.assert_allclose(ds.treatment, data[:, 1])


def test_ingest_duplicate_treatment_control_ignored(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,d,c\n1,2,3\n4,5,7\n")
    ds = ingest_csv(f, "y", "d", ["d", "c"])
    assert ds.p == 2


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        Dataset(np.zeros(3), np.zeros((3, 2)), treatment_index=2)
    ds = Dataset(np.arange(3.0), np.ones((3, 1)))
    with pytest.raises(ValueError):
        ds.outcome[0] = 1.0


# -- dictionary ----------------------------------------------------------------

def test_basis_dimension_and_order(dgp1_small):
    b = build_basis(dgp1_small)
    assert b.dimension == 3 * dgp1_small.p + 1
    assert b.terms[0] == (-1, 0)
    assert b.terms[1:4] == [(0, 1), (1, 1), (2, 1)]
    ds = Dataset(np.arange(5.0), np.random.default_rng(0).standard_normal((5, 2)))
    assert build_basis(ds).dimension == 7


def test_basis_dimension_simulation_design(dgp1_full):
    assert build_basis(dgp1_full).dimension == 301


def test_basis_unit_variance(dgp1_small):
    b = build_basis(dgp1_small)
    H = b.matrix(dgp1_small.covariates)
    np.testing.assert_allclose(np.var(H[:, 1:], axis=0, ddof=1), 1.0, atol=1e-10)
    assert np.all(b.scale_factors > 0)
    assert b.scale_factors[0] == 1.0


def test_constant_column_rejected():
    X = np.column_stack([np.arange(6.0), np.full(6, 5.0)])
    with pytest.raises(DegenerateBasisError, match="x2"):
        build_basis(Dataset(np.arange(6.0), X))


def test_evaluate_basis_examples():
    b = _basis([(0, 2)], [4.0], 1)
    np.testing.assert_allclose(evaluate_basis(b, [2.0]), [1.0, 1.0])
    z = evaluate_basis(_basis([(0, 1), (1, 3)], [2.0, 3.0], 2), [0.0, 0.0])
    np.testing.assert_array_equal(z, [1.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        evaluate_basis(b, [1.0, 2.0])


def test_evaluate_derivative_examples():
    assert evaluate_basis_derivative(_basis([(0, 2)], [1.0], 1), [2.0])[1] == 4.0
    assert evaluate_basis_derivative(_basis([(0, 3)], [2.0], 1), [3.0])[1] == 13.5
    d = evaluate_basis_derivative(_basis([(1, 2), (0, 1)], [1.0, 1.0], 2), [1.5, 2.0])
    np.testing.assert_array_equal(d, [0.0, 0.0, 1.0])
    # switching the treatment coordinate moves the nonzero derivative
    d = evaluate_basis_derivative(_basis([(1, 2), (0, 1)], [1.0, 1.0], 2), [1.5, 2.0],
                                  treatment_index=1)
    np.testing.assert_array_equal(d, [0.0, 4.0, 0.0])


def test_basis_roundtrip(dgp1_small):
    b = build_basis(dgp1_small)
    b2 = BasisExpansion.from_dict(b.to_dict())
    X = dgp1_small.covariates[:5]
    np.testing.assert_array_equal(b.matrix(X), b2.matrix(X))


@given(arrays(float, 3, elements=st.floats(-50, 50)))
def test_derivative_matches_finite_difference(x):
    b = _basis([(0, 1), (1, 1), (2, 1), (0, 2), (1, 2), (0, 3), (2, 3)],
               [0.7, 1.3, 2.0, 1.1, 3.0, 5.0, 0.4], 3)
    step = 1e-5
    up, dn = x.copy(), x.copy()
    up[0] += step
    dn[0] -= step
    fd = (evaluate_basis(b, up) - evaluate_basis(b, dn)) / (2 * step)
    exact = evaluate_basis_derivative(b, x)
    np.testing.assert_allclose(fd, exact, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(x[0]) ** 2))


@given(st.permutations([1, 2, 3]), arrays(float, 4, elements=st.floats(-5, 5)))
def test_permutation_consistency(perm, x):
    # relabel the non-treatment columns and the term descriptors the same way
    rng = np.random.default_rng(3)
    terms = [(j, d) for d in (1, 2, 3) for j in range(4)]
    scales = rng.uniform(0.5, 2.0, len(terms))
    mapping = {0: 0, 1: perm[0], 2: perm[1], 3: perm[2]}
    b = _basis(terms, scales, 4)
    b_perm = _basis([(mapping[j], d) for j, d in terms], scales, 4)
    x_perm = np.empty(4)
    for old, new in mapping.items():
        x_perm[new] = x[old]
    np.testing.assert_array_equal(evaluate_basis(b, x), evaluate_basis(b_perm, x_perm))
