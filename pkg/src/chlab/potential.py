"""Double-well potentials, their derivatives and derived constants."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import NumericalFailure

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """An even double-well potential with minima at +-1.

    ``g`` is the energy density and ``g1``..``g3`` its first three derivatives,
    all vectorised over numpy arrays. ``c_g`` is the exponential rate
    ``sqrt(g2(1))``.
    """

    label: str
    g: ArrayFn
    g1: ArrayFn
    g2: ArrayFn
    g3: ArrayFn
    c_g: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.c_g):
            object.__setattr__(self, "c_g", float(np.sqrt(self.g2(np.array(1.0)))))

    def scaled(self, factor: float, label: str | None = None) -> "Potential":
        """Return ``factor * G`` (used for homogeneity checks)."""
        return Potential(
            label=label or f"{self.label}*{factor:g}",
            g=lambda u: factor * self.g(u),
            g1=lambda u: factor * self.g1(u),
            g2=lambda u: factor * self.g2(u),
            g3=lambda u: factor * self.g3(u),
        )

    @property
    def bifurcation_length(self) -> float:
        """Shortest Dirichlet interval carrying a nontrivial optimal profile."""
        curv = -float(self.g2(np.array(0.0)))
        if curv <= 0:
            return 0.0
        return math.pi / math.sqrt(curv)


def canonical_quartic() -> Potential:
    """G(u) = (1 - u^2)^2 / 4."""

    def g(u):
        u = np.asarray(u, dtype=float)
        return 0.25 * (1.0 - u * u) ** 2

    def g1(u):
        u = np.asarray(u, dtype=float)
        return u * (u - 1.0) * (u + 1.0)

    def g2(u):
        u = np.asarray(u, dtype=float)
        return 3.0 * u * u - 1.0

    def g3(u):
        return 6.0 * np.asarray(u, dtype=float)

    return Potential(label="quartic", g=g, g1=g1, g2=g2, g3=g3, c_g=math.sqrt(2.0))


_REGISTRY: dict[str, Callable[[], Potential]] = {"quartic": canonical_quartic}


def register(label: str, factory: Callable[[], Potential]) -> None:
    _REGISTRY[label] = factory


def get_potential(label: str) -> Potential:
    try:
        return _REGISTRY[label]()
    except KeyError:
        raise KeyError(f"unknown potential {label!r}; known: {sorted(_REGISTRY)}") from None


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    worst_value: float
    worst_at: float | None = None


@dataclass
class ValidationReport:
    label: str
    checks: list[CheckOutcome]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckOutcome:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate(p: Potential, sample_count: int = 64) -> ValidationReport:
    """Check the standing assumptions on ``p`` on a uniform grid over [-2, 2].

    Failures are collected in the report, never raised.
    """
    if sample_count < 16:
        raise ValueError("sample_count must be >= 16")
    u = np.linspace(-2.0, 2.0, 4 * sample_count + 1)
    checks = []

    wells = np.abs(p.g(np.array([-1.0, 1.0])))
    checks.append(CheckOutcome("zero_at_wells", bool(wells.max() <= 1e-12), float(wells.max()),
                               float([-1.0, 1.0][int(np.argmax(wells))])))

    off = u[np.abs(np.abs(u) - 1.0) > 1e-9]
    gv = p.g(off)
    i = int(np.argmin(gv))
    checks.append(CheckOutcome("positive_off_wells", bool(gv[i] > 0), float(gv[i]), float(off[i])))

    odd = np.abs(p.g(u) - p.g(-u))
    i = int(np.argmax(odd))
    checks.append(CheckOutcome("even", bool(odd[i] <= 1e-12), float(odd[i]), float(u[i])))

    unit = u[(u >= 0) & (u <= 1)]
    g1u = p.g1(unit)
    i = int(np.argmax(g1u))
    checks.append(CheckOutcome("g1_nonpositive_on_unit", bool(g1u[i] <= 1e-12), float(g1u[i]), float(unit[i])))

    g2one = float(p.g2(np.array(1.0)))
    checks.append(CheckOutcome("g2_positive_at_one", g2one > 0, g2one, 1.0))

    cg_err = abs(p.c_g ** 2 - g2one)
    checks.append(CheckOutcome("cg_squared", bool(cg_err <= 1e-10), cg_err, 1.0))

    h = 1e-4
    fd_err = 0.0
    fd_at = None
    for lower, upper in ((p.g, p.g1), (p.g1, p.g2), (p.g2, p.g3)):
        err = np.abs((lower(u + h) - lower(u - h)) / (2 * h) - upper(u))
        j = int(np.argmax(err))
        if err[j] > fd_err:
            fd_err, fd_at = float(err[j]), float(u[j])
    checks.append(CheckOutcome("derivatives_fd", fd_err <= 1e-6, fd_err, fd_at))
    return ValidationReport(p.label, checks)


def kink_energy(p: Potential) -> float:
    """Energy c0 = int_{-1}^{1} sqrt(2 G(u)) du of one transition layer on the line."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(lambda s: math.sqrt(max(2.0 * float(p.g(s)), 0.0)),
                                      -1.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
        except integrate.IntegrationWarning as exc:
            raise NumericalFailure(f"kink energy quadrature did not converge: {exc}") from exc
    if not np.isfinite(val) or err > 1e-8 * abs(val):
        raise NumericalFailure(f"kink energy quadrature error {err:g} too large")
    return val
