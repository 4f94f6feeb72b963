"""Estimator-style wrapper around the adaptive solver.

``fit`` takes a problem (a benchmark name or a :class:`ProblemSpec`) and
runs the adaptive loop; ``predict`` evaluates the discrete solution at
points and ``transform`` returns its gradient there.
"""
from __future__ import annotations

import inspect

import numpy as np

from .adapt import adaptive_solve
from .bench.problems import ProblemSpec, get_problem
from .fem.norms import dg_error, evaluate

__all__ = ["NotFittedError", "AdaptiveSolver"]


class NotFittedError(RuntimeError):
    pass


class AdaptiveSolver:
    def __init__(self, p=1, tol=1e-3, gamma=0.5, eta0=0.05, alpha0=10.0, delta0=None, max_iter=30,
                 max_dofs=None, n0=None):
        self.p = p
        self.tol = tol
        self.gamma = gamma
        self.eta0 = eta0
        self.alpha0 = alpha0
        self.delta0 = delta0
        self.max_iter = max_iter
        self.max_dofs = max_dofs
        self.n0 = n0

    # parameters -------------------------------------------------------
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep=True) -> dict:
        return {n: getattr(self, n) for n in self._param_names()}

    def set_params(self, **params):
        valid = self._param_names()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _validate(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("p must be a positive integer")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.eta0 < 0.5:
            raise ValueError("eta0 must lie in (0, 1/2)")
        if self.tol <= 0 or self.alpha0 <= 0:
            raise ValueError("tol and alpha0 must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    # fitting ----------------------------------------------------------
    def fit(self, problem, y=None):
        self._validate()
        pr = get_problem(problem) if isinstance(problem, str) else problem
        if not isinstance(pr, ProblemSpec):
            raise TypeError("problem must be a benchmark name or a ProblemSpec")
        rec = adaptive_solve(pr.domain, int(self.p), pr.f, pr.g, pr.g_grad, pr.exact, tol=self.tol,
                             gamma=self.gamma, eta0=self.eta0, alpha0=self.alpha0, max_iter=self.max_iter,
                             max_dofs=self.max_dofs, n0=self.n0 or pr.n0, delta0=self.delta0)
        self.problem_ = pr
        self.record_ = rec
        self.space_ = rec.dofs
        self.coef_ = rec.U
        self.n_dofs_ = rec.dofs.n_dofs
        self.estimator_ = rec.rows[-1].estimator
        self.n_iter_ = len(rec.rows)
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit first")

    def _points(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"expected points of shape (n, 2), got {X.shape}")
        return X

    def predict(self, X) -> np.ndarray:
        """Solution values at the rows of ``X`` (NaN outside the domain)."""
        self._check_fitted()
        return evaluate(self.space_, self.space_.prolong @ self.coef_, self._points(X), der=0)["v"]

    def transform(self, X) -> np.ndarray:
        """Solution gradients at the rows of ``X``, shape ``(n, 2)``."""
        self._check_fitted()
        ev = evaluate(self.space_, self.space_.prolong @ self.coef_, self._points(X))
        return np.c_[ev["gx"], ev["gy"]]

    def score(self, problem=None, y=None) -> float:
        """Negative DG error against the exact solution of the fitted problem."""
        self._check_fitted()
        if self.problem_.exact is None:
            raise ValueError("the problem has no exact solution to score against")
        u, grad = self.problem_.exact
        return -dg_error(self.space_, self.coef_, u, grad, self.alpha0)["total"]
