import numpy as np
import pytest

from tgvn.cg import CGConfig
from tgvn.operators import ForwardOp, SamplingMask
from tgvn.plugins import RefinementSpec, SideMapSpec
from tgvn.projector import ProjectorSpec, approx_project
from tgvn.solver import (
    CascadeConfig,
    NonFiniteError,
    StepParams,
    cascade_step,
    denormalize_complex,
    normalize_complex,
    run_cascade,
)

from conftest import crandn, small_op

TIGHT = CGConfig(max_iters=200, tol=1e-10)


def random_problem(seed, n_coils=2):
    rng = np.random.default_rng(seed)
    op = small_op(seed=seed, n_coils=n_coils)
    k = op.forward(crandn(rng, *op.shape))
    s = crandn(rng, *op.shape)
    return rng, op, k, s


def test_zero_steps_returns_zero_filled():
    _, op, k, _ = random_problem(0)
    x, trace = run_cascade(CascadeConfig(T=0), op, k)
    np.testing.assert_array_equal(x, op.adjoint(k))
    assert len(trace.iterates) == 1 and len(trace.dc_residuals) == 1 and trace.guidance_norms == []


def test_zero_init():
    _, op, k, _ = random_problem(0)
    x, trace = run_cascade(CascadeConfig(T=1, eta=1.0, init="zero"), op, k)
    assert np.all(trace.iterates[0] == 0)
    np.testing.assert_allclose(x, op.adjoint(k), atol=1e-14)
    with pytest.raises(ValueError):
        CascadeConfig(T=1, init="random")


def test_single_varnet_step_formula():
    rng, op, k, _ = random_problem(1)
    x0 = op.adjoint(k) + crandn(rng, *op.shape)
    ref = RefinementSpec("tikhonov", lam=0.2)
    got = cascade_step(x0, k, None, op, StepParams(0.7, 0.0, ref, SideMapSpec()))
    expected = x0 - 0.7 * op.adjoint(op.forward(x0) - k) - 0.2 * x0
    np.testing.assert_allclose(got, expected, atol=1e-13)


def test_single_tgvn_step_formula():
    rng, op, k, s = random_problem(2)
    x0 = crandn(rng, *op.shape)
    spec = ProjectorSpec(1 / 3, "cg", TIGHT)
    got = cascade_step(x0, k, s, op, StepParams(0.5, 0.3, RefinementSpec(), SideMapSpec()), "tgvn", spec)
    expected = x0 - 0.5 * op.adjoint(op.forward(x0) - k) - 0.3 * approx_project(op, 1 / 3, x0 - s, TIGHT)
    np.testing.assert_allclose(got, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_tgvn_with_zero_mu_is_varnet(seed):
    _, op, k, s = random_problem(seed)
    rng = np.random.default_rng(seed + 100)
    T = int(rng.integers(1, 5))
    eta = tuple(rng.uniform(0, 1.5, T))
    ref = RefinementSpec("conv", kernel=0.05 * crandn(rng, 3, 3))
    a, _ = run_cascade(CascadeConfig(T, "varnet", eta=eta, refinement=ref), op, k)
    b, _ = run_cascade(CascadeConfig(T, "tgvn", eta=eta, mu=0.0, refinement=ref), op, k, s)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_noproj_equals_tgvn_with_identity_projector():
    # an exact projector whose threshold exceeds every singular value is the identity
    _, op, k, s = random_problem(3)
    cfg = CascadeConfig(3, "tgvn", eta=0.8, mu=0.4, delta=2.0, projector="exact")
    a, _ = run_cascade(cfg, op, k, s)
    b, _ = run_cascade(cfg.replace(mode="noproj"), op, k, s)
    assert np.max(np.abs(a - b)) <= 1e-8


def test_phase_equivariance():
    _, op, k, s = random_problem(4)
    cfg = CascadeConfig(3, "tgvn", eta=0.9, mu=0.5, cg=TIGHT, refinement=RefinementSpec("tikhonov", lam=0.1))
    x, _ = run_cascade(cfg, op, k, s)
    phase = np.exp(0.7j)
    y, _ = run_cascade(cfg, op, phase * k, phase * s)
    np.testing.assert_allclose(y, phase * x, atol=1e-10)


def test_deterministic():
    _, op, k, s = random_problem(5)
    cfg = CascadeConfig(4, "tgvn", eta=1.0, mu=0.2)
    a, ta = run_cascade(cfg, op, k, s)
    b, tb = run_cascade(cfg, op, k, s)
    assert np.array_equal(a, b) and ta.dc_residuals == tb.dc_residuals


def test_trace_lengths_and_guidance():
    _, op, k, s = random_problem(6)
    _, trace = run_cascade(CascadeConfig(3, "noproj", eta=1.0, mu=0.1), op, k, s)
    assert len(trace.iterates) == 4 and len(trace.dc_residuals) == 4
    assert len(trace.guidance_norms) == 3 and all(g > 0 for g in trace.guidance_norms)


def test_oracle_sidemap_drives_towards_truth():
    rng = np.random.default_rng(7)
    op = small_op(seed=7, n_coils=2)
    truth = crandn(rng, *op.shape)
    k = op.forward(truth)
    cfg = CascadeConfig(20, "tgvn", eta=1.0, mu=1.0, sidemap=SideMapSpec.oracle(truth), cg=TIGHT)
    x, _ = run_cascade(cfg, op, k)
    assert np.linalg.norm(x - truth) < 1e-3 * np.linalg.norm(truth)


def test_landweber_single_coil_residual_monotone():
    mask = SamplingMask(np.arange(16) % 2 == 0)
    op = ForwardOp.single_coil((16, 16), mask)
    rng = np.random.default_rng(0)
    k = op.forward(crandn(rng, 16, 16))
    _, trace = run_cascade(CascadeConfig(50, "varnet", eta=1.0), op, k)
    r = np.asarray(trace.dc_residuals)
    assert np.all(np.diff(r) <= 1e-12 * np.linalg.norm(k)) and r[-1] < 1e-6


def test_validation_errors():
    _, op, k, s = random_problem(8)
    with pytest.raises(ValueError):
        CascadeConfig(T=-1)
    with pytest.raises(ValueError):
        CascadeConfig(2, eta=(1.0,))
    with pytest.raises(ValueError):
        CascadeConfig(2, eta=-1.0)
    with pytest.raises(ValueError):
        CascadeConfig(2, mode="admm")
    with pytest.raises(ValueError):
        run_cascade(CascadeConfig(1, "tgvn"), op, k)
    with pytest.raises(ValueError):
        run_cascade(CascadeConfig(1), op, k[:, :-1])


def test_nonfinite_detection():
    _, op, k, s = random_problem(9)
    ref = RefinementSpec("tikhonov", lam=1e308)
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError) as err:
        run_cascade(CascadeConfig(3, refinement=ref), op, k * 1e10)
    assert err.value.step == 0


@pytest.mark.parametrize("seed", range(10))
def test_whitening_contract(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.1, 3) * crandn(rng, 12, 9) + 0.5 * rng.standard_normal() * np.real(crandn(rng, 12, 9))
    img += complex(*rng.normal(size=2))
    out, state = normalize_complex(img)
    chans = np.stack([out.real.ravel(), out.imag.ravel()])
    assert np.max(np.abs(chans.mean(axis=1))) <= 1e-10
    cov = np.cov(chans, bias=True)
    assert np.max(np.abs(cov - np.eye(2))) <= 1e-8
    assert np.max(np.abs(denormalize_complex(out, state) - img)) <= 1e-10


def test_whitening_degenerate_channel():
    img = np.linspace(0, 1, 20).reshape(4, 5).astype(complex)  # imaginary channel constant
    out, state = normalize_complex(img)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(denormalize_complex(out, state), img, atol=1e-10)


def test_normalized_refinement_roundtrip():
    # a refinement that returns its input is unaffected by the whitening wrapper
    _, op, k, _ = random_problem(10)
    ref = RefinementSpec("conv", kernel=np.ones((1, 1)))
    a, _ = run_cascade(CascadeConfig(2, eta=0.5, refinement=ref, normalize_refinement=True), op, k)
    b, _ = run_cascade(CascadeConfig(2, eta=0.5, refinement=ref), op, k)
    np.testing.assert_allclose(a, b, atol=1e-10)
