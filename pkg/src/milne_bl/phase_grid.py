"""Tensor phase grid on [0, L] x (-pi/2, pi/2) x [-pi, pi) and grid functionals.

The polar angle is discretised with Gauss-Legendre nodes in ``s = sin(phi)``
on each half range, so ``ds = cos(phi) dphi`` absorbs the Jacobian and no
node sits on the grazing value ``s = 0``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    eta_nodes: np.ndarray
    phi_nodes: np.ndarray
    psi_nodes: np.ndarray
    w_phi: np.ndarray
    w_psi: np.ndarray
    w_eta: np.ndarray

    def __post_init__(self):
        for name in ("eta_nodes", "phi_nodes", "psi_nodes", "w_phi", "w_psi", "w_eta"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(np.diff(self.eta_nodes) <= 0) or self.eta_nodes[0] != 0.0:
            raise ValueError("eta nodes must start at 0 and increase strictly")
        phi, w = self.phi_nodes, self.w_phi
        if not (np.allclose(phi, -phi[::-1], rtol=0, atol=1e-15) and np.array_equal(w, w[::-1])):
            raise ValueError("phi nodes must come in +/- pairs with equal weights")
        if np.any(phi == 0.0) or np.any(np.abs(phi) >= np.pi / 2):
            raise ValueError("phi nodes must avoid 0 and +/- pi/2")

    @classmethod
    def build(
        cls,
        L: float,
        n_eta: int = 256,
        n_phi: int = 32,
        n_psi: int = 16,
        ratio: float = 1.15,
        n_graded: int | None = None,
    ) -> "PhaseGrid":
        """Graded eta nodes, Gauss nodes in sin(phi) and uniform psi nodes.

        Parameters
        ----------
        L : float
            Slab length.
        n_eta : int
            Number of eta nodes including both end points.
        n_phi : int
            Total number of polar nodes (even; ``n_phi/2`` per half range).
        n_psi : int
            Number of azimuthal nodes (multiple of 4 so that psi -> -psi and
            psi -> pi - psi map the grid onto itself).
        ratio : float
            Growth factor of consecutive eta steps in the graded layer.
        n_graded : int, optional
            Number of graded steps; defaults to ``min(30, (n_eta - 1) // 3)``.
        """
        if n_phi % 2 or n_phi < 2:
            raise ValueError("n_phi must be a positive even number")
        if n_psi % 4 or n_psi < 4:
            raise ValueError("n_psi must be a positive multiple of 4")
        if n_eta < 3:
            raise ValueError("need at least 3 eta nodes")
        eta, w_eta = graded_eta_nodes(L, n_eta, ratio, n_graded)
        x, wx = np.polynomial.legendre.leggauss(n_phi // 2)
        s_pos = 0.5 * (x + 1.0)
        w_pos = 0.5 * wx
        s = np.concatenate([-s_pos[::-1], s_pos])
        w_s = np.concatenate([w_pos[::-1], w_pos])
        phi = np.arcsin(s)
        # psi: uniform periodic grid, trapezoid weights
        psi = -np.pi + 2.0 * np.pi * np.arange(n_psi) / n_psi
        w_psi = np.full(n_psi, 2.0 * np.pi / n_psi)
        return cls(eta, phi, psi, w_s, w_psi, w_eta)

    # -- convenience views -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.eta_nodes.size, self.phi_nodes.size, self.psi_nodes.size)

    @property
    def L(self) -> float:
        return float(self.eta_nodes[-1])

    @property
    def sin_phi(self) -> np.ndarray:
        return np.sin(self.phi_nodes)

    @property
    def cos_phi(self) -> np.ndarray:
        return np.cos(self.phi_nodes)

    @property
    def angular_weights(self) -> np.ndarray:
        """(n_phi, n_psi) weights for ∫∫ (.) cos(phi) dphi dpsi."""
        return np.outer(self.w_phi, self.w_psi)

    @property
    def mirror(self) -> np.ndarray:
        """Index map phi_k -> -phi_k."""
        return np.arange(self.phi_nodes.size)[::-1]

    def metadata(self) -> dict:
        return {
            "eta_nodes": self.eta_nodes.tolist(),
            "phi_nodes": self.phi_nodes.tolist(),
            "psi_nodes": self.psi_nodes.tolist(),
            "w_eta": self.w_eta.tolist(),
            "w_phi": self.w_phi.tolist(),
            "w_psi": self.w_psi.tolist(),
        }

    def same_as(self, other: "PhaseGrid") -> bool:
        if self is other:
            return True
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("eta_nodes", "phi_nodes", "psi_nodes", "w_phi", "w_psi", "w_eta")
        )

    def sample(self, fn: Callable) -> "Field":
        """Evaluate ``fn(eta, phi, psi)`` (broadcasting) on all nodes."""
        e, p, q = np.meshgrid(self.eta_nodes, self.phi_nodes, self.psi_nodes, indexing="ij")
        vals = np.broadcast_to(np.asarray(fn(e, p, q), dtype=float), self.shape)
        return Field(np.array(vals), self)


def graded_eta_nodes(L: float, n: int, ratio: float = 1.15, n_graded: int | None = None):
    """Nodes on [0, L]: geometric steps growing by ``ratio`` then a uniform tail.

    Returns the nodes and the composite trapezoid weights.
    """
    if L <= 0:
        raise ValueError("slab length must be positive")
    k = min(30, (n - 1) // 3) if n_graded is None else int(n_graded)
    k = max(0, min(k, n - 1))
    geo = ratio ** -np.arange(k, 0, -1, dtype=float)  # smallest first, last < 1
    rel = np.concatenate([geo, np.ones(n - 1 - k)])
    steps = rel * (L / rel.sum())
    eta = np.concatenate([[0.0], np.cumsum(steps)])
    eta[-1] = L
    w = np.zeros(n)
    w[:-1] += 0.5 * steps
    w[1:] += 0.5 * steps
    return eta, w


class Field:
    """Scalar samples over a :class:`PhaseGrid`, indexed (eta, phi, psi)."""

    __slots__ = ("values", "grid")

    def __init__(self, values, grid: PhaseGrid):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("field contains non-finite entries")
        self.values = values
        self.grid = grid

    @classmethod
    def constant(cls, grid: PhaseGrid, c: float) -> "Field":
        return cls(np.full(grid.shape, float(c)), grid)

    def _check(self, other: "Field"):
        if not self.grid.same_as(other.grid):
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.values + other.values, self.grid)
        return Field(self.values + other, self.grid)

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.values - other.values, self.grid)
        return Field(self.values - other, self.grid)

    def __mul__(self, c):
        return Field(self.values * c, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(-self.values, self.grid)

    # -- serialisation -------------------------------------------------------
    def to_csv(self, path, config_hash: str = "", extra: dict | None = None) -> None:
        """Write ``eta,phi,psi,value`` rows plus a ``.json`` metadata sidecar."""
        g = self.grid
        e, p, q = np.meshgrid(g.eta_nodes, g.phi_nodes, g.psi_nodes, indexing="ij")
        rows = np.column_stack([e.ravel(), p.ravel(), q.ravel(), self.values.ravel()])

        def write_csv(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eta", "phi", "psi", "value"])
            for r in rows:
                w.writerow([repr(float(x)) for x in r])

        atomic_write(path, write_csv)
        meta = {"grid": g.metadata(), "config_hash": config_hash, "shape": list(g.shape)}
        if extra:
            meta.update(extra)
        atomic_write(str(path) + ".json", lambda fh: json.dump(meta, fh, indent=1, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "Field":
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        gm = meta["grid"]
        grid = PhaseGrid(
            np.array(gm["eta_nodes"]),
            np.array(gm["phi_nodes"]),
            np.array(gm["psi_nodes"]),
            np.array(gm["w_phi"]),
            np.array(gm["w_psi"]),
            np.array(gm["w_eta"]),
        )
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(data[:, 3].reshape(grid.shape), grid)


def atomic_write(path, writer, mode: str = "w") -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def grid_hash(grid: PhaseGrid) -> str:
    h = hashlib.sha256()
    for k in ("eta_nodes", "phi_nodes", "psi_nodes", "w_phi", "w_psi", "w_eta"):
        h.update(np.ascontiguousarray(getattr(grid, k)).tobytes())
    return h.hexdigest()[:16]


# -- functionals -------------------------------------------------------------


def bar(f: Field) -> np.ndarray:
    """Angular average (1/4pi) ∫∫ f cos(phi) dphi dpsi at every eta node."""
    return np.einsum("ijk,j,k->i", f.values, f.grid.w_phi, f.grid.w_psi) / FOUR_PI


def inner(f: Field, g: Field, eta_index=None):
    """<f, g>(eta) = ∫∫ f g cos(phi) dphi dpsi; all eta nodes if index is None."""
    f._check(g)
    vals = np.einsum("ijk,ijk,j,k->i", f.values, g.values, f.grid.w_phi, f.grid.w_psi)
    return vals if eta_index is None else float(vals[eta_index])


def moment(f: Field, weight: np.ndarray, eta_index=None):
    """<weight, f>(eta) for a weight given on the (phi, psi) nodes."""
    weight = np.broadcast_to(weight, f.grid.shape[1:])
    vals = np.einsum("ijk,jk,j,k->i", f.values, weight, f.grid.w_phi, f.grid.w_psi)
    return vals if eta_index is None else float(vals[eta_index])


@dataclass(frozen=True)
class Norms:
    l2_total: float
    linf_total: float
    l2_at: np.ndarray
    linf_at: np.ndarray


def norms(f: Field) -> Norms:
    """Weighted L2 (with cos(phi) Jacobian) and sup norms, per eta and total."""
    g = f.grid
    l2_at = np.sqrt(np.einsum("ijk,j,k->i", f.values**2, g.w_phi, g.w_psi))
    linf_at = np.abs(f.values).max(axis=(1, 2))
    return Norms(
        l2_total=float(np.sqrt(np.dot(g.w_eta, l2_at**2))),
        linf_total=float(linf_at.max()),
        l2_at=l2_at,
        linf_at=linf_at,
    )


def p_flux(f: Field, eta_index: int = 0, outgoing: bool = True):
    """Half-range flux functional P[f] = -(1/4pi) ∫∫_{sin(phi)<0} f sin(phi) cos(phi).

    With ``outgoing=False`` the integral runs over ``sin(phi) > 0`` instead
    (the sign is chosen so that P[1] = 1/4 in both cases).
    """
    g = f.grid
    s = g.sin_phi
    mask = s < 0 if outgoing else s > 0
    ws = np.where(mask, np.abs(s) * g.w_phi, 0.0)
    val = np.einsum("jk,j,k->", f.values[eta_index], ws, g.w_psi) / FOUR_PI
    return float(val)


def d_eta(f: Field) -> np.ndarray:
    """Second-order finite differences in eta on the non-uniform nodes."""
    return np.gradient(f.values, f.grid.eta_nodes, axis=0, edge_order=2)


def d_phi(f: Field) -> np.ndarray:
    """Second-order finite differences in phi on the non-uniform nodes."""
    return np.gradient(f.values, f.grid.phi_nodes, axis=1, edge_order=2)


def d_psi(f: Field) -> np.ndarray:
    """Spectral derivative in the periodic psi direction."""
    n = f.grid.psi_nodes.size
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return np.real(np.fft.ifft(1j * k * np.fft.fft(f.values, axis=2), axis=2))
