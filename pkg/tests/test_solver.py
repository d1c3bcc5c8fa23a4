import json

import numpy as np
import pytest

from hessbound import equations as eq
from hessbound.errors import ConeViolation
from hessbound.exprs import FieldExpr
from hessbound.geometry import DiscreteManifold, ScalarField, operators
from hessbound.solver import (
    SolveConfig,
    continuation_solve,
    linearize,
    newton_solve,
    perturbed_guess,
    smooth_noise,
)

SCHOUTEN_U = "0.25*(x1**2+x2**2)+0.03*cos(3*x1+1)*sin(2*x2+0.5)"
SPHERE_U = "0.2*sin(2*x1+0.3)*cos(x2)+0.1*x1*x2"


def schouten_problem(N=16, mode="discrete"):
    m = DiscreteManifold.euclidean_domain(4, N, 1.0, dims=2)
    fe = FieldExpr(SCHOUTEN_U, m)
    star = ScalarField(fe.values(), m) if mode == "discrete" else fe
    return eq.manufacture(eq.schouten_quotient_spec(m, 2), star)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(residual_tol=0)
    with pytest.raises(ValueError):
        SolveConfig(linear_solver="cg")
    with pytest.raises(ValueError):
        SolveConfig(backtrack=1.0)


def test_exact_start_converges_immediately():
    spec, u = schouten_problem()
    rep = newton_solve(spec, u)
    assert rep.converged and rep.iterations == 0


def test_noisy_start_recovers_manufactured_solution():
    spec, u = schouten_problem(32, mode="analytic")
    rep = newton_solve(spec, perturbed_guess(u, 0.1, seed=1))
    assert rep.converged and rep.iterations <= 25
    assert rep.residual_history[-1] < 1e-10
    assert all(b < a for a, b in zip(rep.residual_history, rep.residual_history[1:]))
    assert rep.min_cone_margin_seen > 0
    # analytic manufacture: the distance to u* is the O(h^4) stencil error
    assert np.max(np.abs(rep.final_u.values - u.values)) < 1e-6


def test_iterative_solver_matches_direct():
    spec, u = schouten_problem()
    u0 = perturbed_guess(u, 0.1, seed=2)
    a = newton_solve(spec, u0, SolveConfig(linear_solver="direct"))
    b = newton_solve(spec, u0, SolveConfig(linear_solver="bicgstab"))
    assert a.converged and b.converged
    assert np.max(np.abs(a.final_u.values - b.final_u.values)) < 1e-10


def test_off_cone_start_names_node():
    m = DiscreteManifold.euclidean_domain(2, 12, 2.0)
    spec, _ = eq.manufacture(eq.gauss_flat_spec(m), ScalarField(0.5 * (m.coords**2).sum(-1), m))
    bad = ScalarField(-0.5 * (m.coords**2).sum(-1), m)
    with pytest.raises(ConeViolation) as info:
        newton_solve(spec, bad)
    assert info.value.index is not None and "node" in str(info.value)


def test_iteration_limit_gives_report():
    spec, u = schouten_problem()
    rep = newton_solve(spec, perturbed_guess(u, 0.1, seed=2), SolveConfig(max_iters=1))
    assert not rep.converged
    assert rep.reason == "iteration limit reached"
    doc = json.loads(rep.to_text())
    assert doc["status"] == "not converged" and "final_u" not in doc


def test_jacobian_matches_directional_differences():
    m = DiscreteManifold.sphere_chart(2, 16, 0.9)
    spec, u = eq.manufacture(eq.gauss_sphere_spec(m), ScalarField(FieldExpr(SPHERE_U, m).values(), m))
    u = u + 0.002 * smooth_noise(m, seed=5)
    J, r, info = linearize(spec, u)
    assert info["min_eig"] > 0
    free = m.free_mask
    v = np.zeros(m.shape)
    v[free] = smooth_noise(m, seed=9)[free]

    def res(eps):
        return eq.residual(spec, u + eps * v).values[free]

    # Richardson-extrapolated central difference
    d1 = (res(1e-4) - res(-1e-4)) / 2e-4
    d2 = (res(2e-4) - res(-2e-4)) / 4e-4
    fd = (4 * d1 - d2) / 3
    lin = J @ v[free]
    assert np.max(np.abs(lin - fd)) / np.max(np.abs(fd)) < 1e-5
    assert np.all(J @ np.zeros(J.shape[1]) == 0)


def test_linear_operator_principal_part_is_scaled_laplacian():
    m = DiscreteManifold.euclidean_domain(2, 10, 1.0)
    B = np.broadcast_to(np.eye(2), m.shape + (2, 2)).copy()
    spec = eq.laplace_spec(m, B=B)
    u = ScalarField(0.1 * (m.coords**2).sum(-1), m)
    J, _, _ = linearize(spec, u)
    op = operators(m)
    lap = (op.second_matrix(0, 0) + op.second_matrix(1, 1)) / 2
    flat = np.flatnonzero(m.free_mask.ravel())
    assert abs(J - lap.tocsr()[flat][:, flat]).max() < 1e-12


def test_continuation_endpoint_matches_direct():
    spec1, u1 = schouten_problem()
    u0 = perturbed_guess(u1, 0.1, seed=3)
    coef0 = eq.manufactured_f(spec1, u0)
    coef1 = spec1.coef_grid
    family = lambda tau: spec1.with_coef((1 - tau) * coef0 + tau * coef1)  # noqa: E731
    cont = continuation_solve(family, u0, 4)
    direct = newton_solve(spec1, u0)
    assert cont.converged and cont.taus == [0.25, 0.5, 0.75, 1.0]
    assert np.max(np.abs(cont.final_u.values - direct.final_u.values)) < 1e-9
    single = continuation_solve(lambda tau: spec1, u1, 1)
    assert single.converged and single.iterations == 0


def test_noise_is_seeded_and_vanishes_on_boundary():
    m = DiscreteManifold.euclidean_domain(2, 16, 1.0)
    a = smooth_noise(m, seed=4)
    assert np.array_equal(a, smooth_noise(m, seed=4))
    assert not np.array_equal(a, smooth_noise(m, seed=5))
    assert np.all(a[m.boundary_mask] == 0) and np.max(np.abs(a)) == 1.0
