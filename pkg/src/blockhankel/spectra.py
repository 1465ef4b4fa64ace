"""Spectral density models and their autocovariance sequences.

Each row ``m`` of the block-Hankel model is a stationary sequence with
spectral density ``S_m`` on ``[0, 1]`` and autocovariance

    r_m(k) = int_0^1 S_m(nu) exp(2 i pi nu k) dnu.

White, AR(1) and raised-cosine densities have closed-form ``r``; tabulated
densities are integrated with the periodic trapezoid rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FAMILIES = ("white", "ar1", "raised-cosine", "tabulated")

DEFAULT_QUADRATURE_POINTS = 4096
VALIDATION_GRID = 1024


class SpecError(ValueError):
    """Invalid density or ensemble description."""


@dataclass(frozen=True)
class SpectralDensity:
    """A positive periodic spectral density.

    Build instances with :func:`white`, :func:`ar1`, :func:`raised_cosine`
    or :func:`tabulated` rather than directly.
    """

    family: str
    sigma2: float = 1.0
    a: float = 0.0
    beta: float = 0.0
    nu: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown density family {self.family!r}")
        if self.family == "white" and not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise SpecError(f"white density needs sigma2 > 0, got {self.sigma2}")
        if self.family == "ar1" and not -1.0 < self.a < 1.0:
            raise SpecError(f"ar1 coefficient must lie in (-1, 1), got {self.a}")
        if self.family == "raised-cosine" and not 0.0 <= self.beta < 1.0:
            raise SpecError(f"raised-cosine amplitude must lie in [0, 1), got {self.beta}")
        if self.family == "tabulated":
            nu = np.asarray(self.nu, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if nu.ndim != 1 or nu.shape != vals.shape or nu.size < 2:
                raise SpecError("tabulated density needs matching nu/values lists of length >= 2")
            if nu[0] != 0.0 or nu[-1] != 1.0 or np.any(np.diff(nu) <= 0):
                raise SpecError("tabulated nu grid must increase strictly from 0 to 1")
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise SpecError("tabulated density must be strictly positive and finite")
            if vals[0] != vals[-1]:
                raise SpecError("tabulated density must take equal values at nu=0 and nu=1")

    @property
    def closed_form(self) -> bool:
        return self.family != "tabulated"

    def to_dict(self) -> dict:
        if self.family == "white":
            return {"family": "white", "sigma2": self.sigma2}
        if self.family == "ar1":
            return {"family": "ar1", "a": self.a}
        if self.family == "raised-cosine":
            return {"family": "raised-cosine", "beta": self.beta}
        return {"family": "tabulated", "nu": list(self.nu), "values": list(self.values)}


def white(sigma2: float = 1.0) -> SpectralDensity:
    return SpectralDensity("white", sigma2=float(sigma2))


def ar1(a: float) -> SpectralDensity:
    return SpectralDensity("ar1", a=float(a))


def raised_cosine(beta: float) -> SpectralDensity:
    return SpectralDensity("raised-cosine", beta=float(beta))


def tabulated(nu: Sequence[float], values: Sequence[float]) -> SpectralDensity:
    return SpectralDensity(
        "tabulated",
        nu=tuple(float(v) for v in nu),
        values=tuple(float(v) for v in values),
    )


def density_from_dict(entry: dict) -> SpectralDensity:
    """Parse one ``{family: ..., <params>}`` mapping from a config file."""
    entry = dict(entry)
    try:
        family = entry.pop("family")
    except KeyError:
        raise SpecError("density entry is missing key 'family'") from None
    allowed = {
        "white": {"sigma2"},
        "ar1": {"a"},
        "raised-cosine": {"beta"},
        "tabulated": {"nu", "values"},
    }.get(family)
    if allowed is None:
        raise SpecError(f"unknown density family {family!r}")
    unknown = set(entry) - allowed
    if unknown:
        raise SpecError(f"unknown keys for {family} density: {sorted(unknown)}")
    if family == "white":
        return white(entry.get("sigma2", 1.0))
    if family == "ar1":
        if "a" not in entry:
            raise SpecError("ar1 density is missing key 'a'")
        return ar1(entry["a"])
    if family == "raised-cosine":
        if "beta" not in entry:
            raise SpecError("raised-cosine density is missing key 'beta'")
        return raised_cosine(entry["beta"])
    for key in ("nu", "values"):
        if key not in entry:
            raise SpecError(f"tabulated density is missing key {key!r}")
    return tabulated(entry["nu"], entry["values"])


def eval_density(model: SpectralDensity, nu):
    """Evaluate ``S(nu)``; accepts scalars or arrays of frequencies in ``[0, 1]``."""
    nu_arr = np.asarray(nu, dtype=float)
    if np.any(nu_arr < 0) or np.any(nu_arr > 1):
        raise ValueError("frequencies must lie in [0, 1]")
    if model.family == "white":
        out = np.full_like(nu_arr, model.sigma2)
    elif model.family == "ar1":
        a = model.a
        out = (1 - a * a) / np.abs(1 - a * np.exp(2j * np.pi * nu_arr)) ** 2
    elif model.family == "raised-cosine":
        out = 1 + model.beta * np.cos(2 * np.pi * nu_arr)
    else:
        out = np.interp(nu_arr, model.nu, model.values)
    return float(out) if out.ndim == 0 else out


def _tabulated_grid(model: SpectralDensity, points: int) -> np.ndarray:
    return np.interp(np.arange(points) / points, model.nu, model.values)


def autocovariance(model: SpectralDensity, k, quadrature_points: int | None = None):
    """Autocovariance ``r(k)`` for an integer lag or an integer array of lags.

    Closed-form families are exact. Tabulated densities use the periodic
    trapezoid rule on ``quadrature_points`` nodes (at least ``4 max|k| + 64``).
    """
    lags = np.asarray(k)
    if not np.issubdtype(lags.dtype, np.integer):
        if np.any(lags != np.round(lags)):
            raise ValueError("lags must be integers")
        lags = lags.astype(np.int64)
    if model.family == "white":
        out = np.where(lags == 0, model.sigma2, 0.0).astype(complex)
    elif model.family == "ar1":
        out = (model.a ** np.abs(lags)).astype(complex)
    elif model.family == "raised-cosine":
        out = np.where(lags == 0, 1.0, np.where(np.abs(lags) == 1, model.beta / 2, 0.0)).astype(complex)
    else:
        return trapezoid_autocovariance(model, lags, quadrature_points)
    return complex(out) if out.ndim == 0 else out


def trapezoid_autocovariance(model: SpectralDensity, k, quadrature_points: int | None = None):
    """Quadrature route for ``r(k)``, usable for every family (cross-checks)."""
    lags = np.asarray(k).astype(np.int64)
    kmax = int(np.max(np.abs(lags))) if lags.size else 0
    minimum = 4 * kmax + 64
    if quadrature_points is None:
        quadrature_points = max(DEFAULT_QUADRATURE_POINTS, minimum)
    elif quadrature_points < minimum:
        raise ValueError(f"need at least {minimum} quadrature points for lag {kmax}")
    grid = np.arange(quadrature_points) / quadrature_points
    if model.family == "tabulated":
        samples = _tabulated_grid(model, quadrature_points)
    else:
        samples = eval_density(model, grid)
    # ifft carries the 1/P weight and the exp(+2 i pi nu k) kernel
    coeffs = np.fft.ifft(samples)
    out = coeffs[np.mod(lags, quadrature_points)]
    return complex(out) if out.ndim == 0 else out


def lag_sequence(model: SpectralDensity, max_lag: int) -> np.ndarray:
    """``r(k)`` for ``k = -max_lag, ..., max_lag`` (length ``2 max_lag + 1``)."""
    return np.asarray(autocovariance(model, np.arange(-max_lag, max_lag + 1)), dtype=complex)


@dataclass(frozen=True)
class EnsembleSpec:
    """Dimensions and per-row densities of a block-Hankel ensemble."""

    M: int
    L: int
    N: int
    densities: tuple[SpectralDensity, ...]
    c_N: float = field(init=False)

    def __post_init__(self):
        for name in ("M", "L", "N"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise SpecError(f"{name} must be a positive integer, got {value!r}")
        object.__setattr__(self, "densities", tuple(self.densities))
        if len(self.densities) != self.M:
            raise SpecError(f"expected {self.M} densities, got {len(self.densities)}")
        object.__setattr__(self, "c_N", self.M * self.L / self.N)

    @classmethod
    def repeat(cls, M: int, L: int, N: int, density: SpectralDensity) -> "EnsembleSpec":
        return cls(M, L, N, (density,) * M)

    @classmethod
    def cycle(cls, M: int, L: int, N: int, densities: Sequence[SpectralDensity]) -> "EnsembleSpec":
        return cls(M, L, N, tuple(densities[m % len(densities)] for m in range(M)))

    def resized(self, M: int, L: int, N: int) -> "EnsembleSpec":
        """Same density pattern (cycled) at new dimensions."""
        return EnsembleSpec.cycle(M, L, N, self.densities)

    @property
    def all_white(self) -> bool:
        return all(d.family == "white" for d in self.densities)

    def lag_matrix(self, max_lag: int) -> np.ndarray:
        """``(M, 2 max_lag + 1)`` array of ``r_m(k)``, ``k = -max_lag..max_lag``."""
        cache: dict[SpectralDensity, np.ndarray] = {}
        rows = []
        for d in self.densities:
            if d not in cache:
                cache[d] = lag_sequence(d, max_lag)
            rows.append(cache[d])
        return np.vstack(rows)

    def to_dict(self) -> dict:
        return {"M": self.M, "L": self.L, "N": self.N, "densities": [d.to_dict() for d in self.densities]}


def spec_from_dict(data: dict) -> EnsembleSpec:
    """Build an :class:`EnsembleSpec` from a parsed config mapping.

    Accepted keys: ``M``, ``L``, ``N`` and exactly one of ``densities`` (a
    list of M entries), ``repeat`` (one entry for every row) or ``cycle`` (a
    list reused cyclically over the rows).
    """
    if not isinstance(data, dict):
        raise SpecError("ensemble config must be a mapping")
    unknown = set(data) - {"M", "L", "N", "densities", "repeat", "cycle"}
    if unknown:
        raise SpecError(f"unknown config keys: {sorted(unknown)}")
    for key in ("M", "L", "N"):
        if key not in data:
            raise SpecError(f"missing config key {key!r}")
    M, L, N = data["M"], data["L"], data["N"]
    given = [key for key in ("densities", "repeat", "cycle") if key in data]
    if len(given) != 1:
        raise SpecError("config needs exactly one of 'densities', 'repeat' or 'cycle'")
    if given[0] == "repeat":
        return EnsembleSpec.repeat(M, L, N, density_from_dict(data["repeat"]))
    entries = data[given[0]]
    if not isinstance(entries, list) or not entries:
        raise SpecError(f"'{given[0]}' must be a non-empty list")
    dens = [density_from_dict(e) for e in entries]
    if given[0] == "cycle":
        return EnsembleSpec.cycle(M, L, N, dens)
    return EnsembleSpec(M, L, N, tuple(dens))


def load_spec(path) -> EnsembleSpec:
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    return spec_from_dict(data)


@dataclass
class ValidationReport:
    grid_min: np.ndarray
    grid_max: np.ndarray
    correlation_sum: float
    lag_cutoff: int
    passed: bool
    failures: list[str]

    @property
    def failed_rows(self) -> list[int]:
        return [int(f.split()[1]) for f in self.failures if f.startswith("row ")]


def validate_ensemble(
    spec: EnsembleSpec,
    lag_cutoff: int | None = None,
    upper_bound: float = np.inf,
    lower_bound: float = 0.0,
    sum_bound: float = np.inf,
) -> ValidationReport:
    """Check positivity/boundedness of the densities and the summability condition.

    ``correlation_sum`` is ``sum_{|n| <= cutoff} ((1/M) sum_m |r_m(n)|^2)^(1/2)``.
    Rows whose grid minimum is not above ``lower_bound`` are reported as
    ``"row <m> ..."`` with 0-based ``m``.
    """
    if lag_cutoff is None:
        lag_cutoff = spec.N + spec.L
    if lag_cutoff < spec.N + spec.L:
        raise ValueError("lag_cutoff must be at least N + L")
    grid = np.linspace(0.0, 1.0, VALIDATION_GRID)
    mins, maxs = [], []
    failures = []
    for m, d in enumerate(spec.densities):
        vals = np.atleast_1d(eval_density(d, grid))
        mins.append(vals.min())
        maxs.append(vals.max())
        if not np.all(np.isfinite(vals)) or vals.min() <= lower_bound:
            failures.append(f"row {m} density minimum {vals.min():.6g} not above {lower_bound}")
        elif vals.max() > upper_bound:
            failures.append(f"row {m} density maximum {vals.max():.6g} exceeds {upper_bound}")
    r = spec.lag_matrix(lag_cutoff)
    total = float(np.sum(np.sqrt(np.mean(np.abs(r) ** 2, axis=0))))
    if total > sum_bound:
        failures.append(f"correlation sum {total:.6g} exceeds {sum_bound}")
    return ValidationReport(np.array(mins), np.array(maxs), total, lag_cutoff, not failures, failures)


def correlation_diag(spec: EnsembleSpec, k: int) -> np.ndarray:
    """The M x M diagonal matrix ``diag(r_1(k), ..., r_M(k))``."""
    return np.diag([autocovariance(d, k) for d in spec.densities]).astype(complex)


def grid_extrema(model: SpectralDensity) -> tuple[float, float]:
    vals = np.atleast_1d(eval_density(model, np.linspace(0.0, 1.0, VALIDATION_GRID)))
    return float(vals.min()), float(vals.max())
