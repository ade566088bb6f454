import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcast.data import StudentTParams
from dualcast.objectives import (
    ContrastiveConfig,
    contrastive_loss,
    contrastive_loss_from_logits,
    mse_mae,
    similarity_logits,
    studentt_nll,
    total_loss,
)



class StudentTHelper:
    @staticmethod
    def nll(y, mu, s, nu):
        t = lambda v: torch.tensor([float(v)], dtype=torch.float64)
        return studentt_nll(StudentTParams(t(mu), t(s), t(nu)), t(y)).item()


def _mp_nll(y, mu, s, nu):
    y, mu, s, nu = map(mpmath.mpf, (y, mu, s, nu))
    z2 = ((y - mu) / s) ** 2
    return -(
        mpmath.loggamma((nu + 1) / 2)
        - mpmath.loggamma(nu / 2)
        - mpmath.log(mpmath.sqrt(nu * mpmath.pi) * s)
        - (nu + 1) / 2 * mpmath.log(1 + z2 / nu)
    )


# Frozen from an mpmath evaluation at 50 digits.
@pytest.mark.parametrize(
    "y,mu,s,nu,expected",
    [
        (0.0, 0.0, 1.0, 3.0, 1.00088884962351),
        (1.0, 0.0, 1.0, 3.0, 1.57625299452707),
        (2.5, 1.0, 2.0, 5.0, 1.98159597478944),
    ],
)
def test_nll_frozen_values(y, mu, s, nu, expected):
    assert StudentTHelper.nll(y, mu, s, nu) == pytest.approx(expected, abs=1e-10)


def test_nll_against_mpmath_grid():
    rng = np.random.default_rng(0)
    for _ in range(100):
        y, mu = rng.normal(scale=3, size=2)
        s = float(np.exp(rng.uniform(-3, 3)))
        nu = float(2 + np.exp(rng.uniform(-5, 5)))
        assert StudentTHelper.nll(y, mu, s, nu) == pytest.approx(float(_mp_nll(y, mu, s, nu)), rel=1e-9, abs=1e-9)


def test_nll_gaussian_limit():
    assert StudentTHelper.nll(0, 0, 1, 1e8) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(2.1, 50), st.floats(0.01, 100))
def test_nll_scale_equivariance(z, s, nu, c):
    # Rescaling y, mu, sigma by c shifts the NLL by log c.
    assert StudentTHelper.nll(c * z * s, 0, c * s, nu) == pytest.approx(
        StudentTHelper.nll(z * s, 0, s, nu) + math.log(c), abs=1e-9
    )


def test_nll_rejects_nonfinite_target():
    p = StudentTParams(torch.zeros(1), torch.ones(1), torch.full((1,), 3.0))
    with pytest.raises(ValueError):
        studentt_nll(p, torch.tensor([float("nan")]))


def test_nll_averages_over_steps():
    p = StudentTParams(torch.zeros(2, 3, dtype=torch.float64), torch.ones(2, 3, dtype=torch.float64),
                       torch.full((2, 3), 3.0, dtype=torch.float64))
    y = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], dtype=torch.float64)
    assert studentt_nll(p, y).item() == pytest.approx((4 * 1.00088884962351 + 2 * 1.57625299452707) / 6, abs=1e-10)


def test_contrastive_batch_of_one_is_zero():
    assert contrastive_loss(torch.randn(1, 8), torch.randn(1, 8)).item() == pytest.approx(0.0, abs=1e-7)


def test_contrastive_uniform_pair():
    assert contrastive_loss_from_logits(torch.zeros(2, 2, dtype=torch.float64))[0].item() == pytest.approx(2 * math.log(2))
    B = 7
    assert contrastive_loss_from_logits(torch.zeros(B, B, dtype=torch.float64))[0].item() == pytest.approx(2 * math.log(B))


def test_contrastive_saturates():
    # Antipodal pairs give the largest logit gap, 2 / temperature.
    e = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
    assert contrastive_loss(e, e).item() < 1e-6
    assert contrastive_loss_from_logits(100 * torch.eye(4, dtype=torch.float64))[0].item() < 1e-6


def test_contrastive_symmetric_in_swap():
    a, b = torch.randn(5, 8, dtype=torch.float64), torch.randn(5, 8, dtype=torch.float64)
    assert contrastive_loss(a, b).item() == pytest.approx(contrastive_loss(b, a).item(), abs=1e-12)


def test_contrastive_row_and_column_terms():
    logits = torch.randn(4, 4, dtype=torch.float64)
    total, rows, cols = contrastive_loss_from_logits(logits)
    ref_r = torch.nn.functional.cross_entropy(logits, torch.arange(4))
    ref_c = torch.nn.functional.cross_entropy(logits.T, torch.arange(4))
    assert rows.item() == pytest.approx(ref_r.item()) and cols.item() == pytest.approx(ref_c.item())
    assert total.item() == pytest.approx(rows.item() + cols.item())


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_contrastive_decreases_with_diagonal_boost(B, seed):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(B, B, generator=g, dtype=torch.float64)
    boosted = logits + 0.5 * torch.eye(B, dtype=torch.float64)
    assert contrastive_loss_from_logits(boosted)[0] < contrastive_loss_from_logits(logits)[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_similarity_rescale_invariant(c, seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(4, 8, generator=g, dtype=torch.float64)
    b = torch.randn(4, 8, generator=g, dtype=torch.float64)
    assert torch.allclose(similarity_logits(a, b), similarity_logits(c * a, b), atol=1e-9)


def test_temperature_applied():
    a = torch.eye(2, dtype=torch.float64)
    assert similarity_logits(a, a, ContrastiveConfig(temperature=0.5))[0, 0].item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0.0)


def test_contrastive_errors():
    with pytest.raises(ValueError):
        contrastive_loss(torch.zeros(0, 4), torch.zeros(0, 4))
    with pytest.raises(ValueError):
        contrastive_loss_from_logits(torch.zeros(2, 3))


def test_total_loss():
    f, c = torch.tensor(1.5), torch.tensor(0.25)
    assert total_loss(f, c).item() == 1.75
    assert total_loss(f, c, use_contrastive=False).item() == 1.5
    assert total_loss(f, None).item() == 1.5


def test_mse_mae_example():
    assert mse_mae([[1.0, 2.0], [3.0, 4.0]], [[0.0, 0.0], [3.0, 6.0]]) == (2.25, 1.25)
    assert mse_mae([0.0, 3.0], [1.0, 1.0]) == (2.5, 1.5)


def test_mse_mae_errors():
    with pytest.raises(ValueError):
        mse_mae([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mse_mae([], [])
