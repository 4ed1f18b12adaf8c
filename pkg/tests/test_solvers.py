"""Tests for the solver registry and the divergence guard shared by the backends."""

import numpy as np
import pytest

from estimation.errors import SolverDivergence
from estimation.penalized import PenalizedProblem, solve_penalized
from solvers import available_solvers, get_solver
from solvers.base import COEF_BOUND, BaseSolver, recession_due
from solvers.coordinate import CoordinateDescentSolver
from solvers.proximal import ProximalGradientSolver


def test_registry_lists_both_backends():
    solvers = available_solvers()
    assert set(solvers) == {"proximal", "coordinate"}
    assert all(solvers.values())


def test_get_solver_by_name():
    assert isinstance(get_solver("proximal"), ProximalGradientSolver)
    assert isinstance(get_solver("coordinate"), CoordinateDescentSolver)


@pytest.mark.parametrize("name", [None, "", "newton"])
def test_unknown_or_empty_name_falls_back_to_proximal(name):
    assert get_solver(name).name == "proximal"


def test_description_is_first_docstring_line():
    assert get_solver("coordinate").description.startswith("Cyclic coordinate descent")


def test_divergence_guard():
    prob = PenalizedProblem.logistic(np.ones((3, 1)), [0.0, 1.0, 0.0])
    BaseSolver.check_divergence(prob, np.zeros(1), 0.5)
    with pytest.raises(SolverDivergence):
        BaseSolver.check_divergence(prob, np.array([2 * COEF_BOUND]), 0.5)
    with pytest.raises(SolverDivergence):
        BaseSolver.check_divergence(prob, np.zeros(1), float("nan"))


def separated_exp_problem(lam=0.0):
    # Every target row has a larger feature than every source row: the
    # exp-linear loss decreases without bound along (1, 1).
    X = np.column_stack([np.ones(8), np.r_[np.full(4, -1.0), np.full(4, 1.0)]])
    s = np.r_[np.ones(4), np.zeros(4)]
    return PenalizedProblem.exp_linear(X, pos=2.0 * s, neg=2.0 * (1.0 - s), lam=lam)


@pytest.mark.parametrize("backend", ["proximal", "coordinate"])
def test_separated_exp_linear_problem_diverges(backend):
    with pytest.raises(SolverDivergence) as exc:
        solve_penalized(separated_exp_problem(), backend=backend, max_iter=200)
    assert exc.value.loss_kind == "exp_linear"


def test_recession_check_flags_only_unbounded_problems():
    with pytest.raises(SolverDivergence):
        BaseSolver.check_recession(separated_exp_problem(lam=0.5), np.zeros(2))
    # Once the penalty outgrows the linear gain of every direction the problem is bounded.
    BaseSolver.check_recession(separated_exp_problem(lam=2.5), np.zeros(2))

    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(40), rng.standard_normal((40, 3))])
    s = np.r_[np.ones(20), np.zeros(20)]
    BaseSolver.check_recession(PenalizedProblem.exp_linear(X, pos=2.0 * s, neg=2.0 * (1 - s)), np.zeros(4))
    BaseSolver.check_recession(PenalizedProblem.logistic(X, s), np.zeros(4))


def test_recession_schedule_doubles_and_waits_for_large_coefficients():
    large = np.array([0.0, 20.0])
    assert [i for i in range(1, 500) if recession_due(i, large)] == [25, 50, 100, 200, 400]
    assert not recession_due(25, np.array([0.0, 5.0]))
