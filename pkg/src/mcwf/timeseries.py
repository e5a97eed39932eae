"""Observables on the sampling grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

COLUMNS = ("re_a", "im_a", "n", "var_n")


@dataclass
class TimeSeries:
    """Real-valued series on a uniform grid ``u * Dt``.

    ``values`` maps column names to arrays of the grid's length.
    """

    grid: np.ndarray
    values: dict

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 1:
            raise ContractError("grid must be a non-empty 1-D array")
        if self.grid.size > 1:
            steps = np.diff(self.grid)
            if np.any(steps <= 0):
                raise ContractError("grid must be strictly increasing")
            if np.max(np.abs(steps - steps.mean())) > 1e-9 * max(abs(steps.mean()), 1.0):
                raise ContractError("grid must be uniform")
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        for k, v in self.values.items():
            if v.shape != self.grid.shape:
                raise ContractError(f"column {k} does not match the grid")

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_expectations(cls, grid, expectations: dict) -> "TimeSeries":
        """Standard columns from complex ``<a>``, ``<n>``, ``<n2>`` (+ extras)."""
        vals = {}
        if "a" in expectations:
            vals["re_a"] = np.real(expectations["a"])
            vals["im_a"] = np.imag(expectations["a"])
        if "n" in expectations:
            vals["n"] = np.real(expectations["n"])
            if "n2" in expectations:
                vals["var_n"] = np.real(expectations["n2"]) - vals["n"] ** 2
        for k, v in expectations.items():
            if k not in ("a", "n", "n2"):
                vals[k] = np.real(v)
        return cls(grid, vals)
