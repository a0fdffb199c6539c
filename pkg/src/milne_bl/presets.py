"""Named analytic families for boundary data, sources and curvature profiles.

Each factory takes keyword parameters (as they appear in a run config) and
returns a vectorised callable or a :class:`CurvatureProfile`.
"""

from __future__ import annotations

import numpy as np

from .geometry import CurvatureProfile


def _datum_constant(value: float = 1.0):
    value = float(value)
    return value


def _datum_sin_phi(amplitude: float = 1.0):
    return lambda phi, psi: amplitude * np.sin(phi)


def _datum_cos_phi_sin_psi(amplitude: float = 1.0):
    return lambda phi, psi: amplitude * np.cos(phi) * np.sin(psi)


def _datum_sqrt_abs_phi(amplitude: float = 1.0):
    """|phi|^{1/2}: continuous but not Lipschitz at grazing."""
    return lambda phi, psi: amplitude * np.sqrt(np.abs(phi)) + 0.0 * psi


DATUMS = {
    "zero": lambda: 0.0,
    "constant": _datum_constant,
    "sin_phi": _datum_sin_phi,
    "cos_phi_sin_psi": _datum_cos_phi_sin_psi,
    "sqrt_abs_phi": _datum_sqrt_abs_phi,
}


def _source_exp_decay(amplitude: float = 1.0, rate: float = 1.0):
    """S = amplitude * exp(-rate * eta), isotropic."""
    return lambda eta, phi, psi: amplitude * np.exp(-rate * eta) + 0.0 * phi * psi


def _source_exp_decay_sin_phi(amplitude: float = 1.0, rate: float = 1.0):
    return lambda eta, phi, psi: amplitude * np.exp(-rate * eta) * np.sin(phi) + 0.0 * psi


SOURCES = {
    "none": lambda: None,
    "exp_decay": _source_exp_decay,
    "exp_decay_sin_phi": _source_exp_decay_sin_phi,
}

CURVATURES = {
    "constant": CurvatureProfile.constant,
    "classical": CurvatureProfile.classical,
    "modulated": CurvatureProfile.modulated,
}


def _build(table: dict, kind: str, spec):
    if isinstance(spec, str):
        spec = {"preset": spec}
    spec = dict(spec)
    name = spec.pop("preset", None)
    if name not in table:
        raise ValueError(f"unknown {kind} preset {name!r}; choose from {sorted(table)}")
    try:
        return table[name](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind} preset {name!r}: {exc}") from None


def datum(spec):
    return _build(DATUMS, "datum", spec)


def source(spec):
    return _build(SOURCES, "source", spec)


def curvature(spec) -> CurvatureProfile:
    return _build(CURVATURES, "curvature", spec)
