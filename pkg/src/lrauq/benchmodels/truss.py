"""Planar pin-jointed truss solved by the direct stiffness method.

Geometry is read from JSON: node coordinates, elements ``[i, j, group]``,
supports, load nodes with a unit direction, and the monitored node and
direction. The model inputs are ordered as

    (A_1 .. A_G, E_1 .. E_G, P_1 .. P_L)

with one area and one modulus per section group and one magnitude per load.
Because the stiffness is linear in every group's ``E A``, the reduced
per-group matrices are assembled once and combined for each sample.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..probcore import DomainError, InputModel, Marginal

SOLVE_CHUNK = 4096
EQUILIBRIUM_RTOL = 1e-9


class MechanismError(ValueError):
    """The supported structure is kinematically unstable."""


def truss_input_model() -> InputModel:
    """Lognormal sections and moduli, Gumbel loads for the default truss."""
    marg = [
        Marginal.lognormal(0.002, 0.10, "A1"),
        Marginal.lognormal(0.001, 0.10, "A2"),
        Marginal.lognormal(210_000.0, 0.10, "E1"),
        Marginal.lognormal(210_000.0, 0.10, "E2"),
    ]
    marg += [Marginal.gumbel(50.0, 0.15 * 50.0, f"P{k}") for k in range(1, 7)]
    return InputModel(marg)


class TrussModel:
    def __init__(self, nodes, elements, supports, loads, monitor, n_groups: int | None = None,
                 modulus_scale: float = 1.0, description: str = ""):
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must be a list of (x, y) pairs")
        el = np.asarray(elements, dtype=int)
        if el.ndim != 2 or el.shape[1] != 3:
            raise ValueError("elements must be [node_i, node_j, group] triples")
        self.elements = el
        self.n_groups = int(el[:, 2].max()) + 1 if n_groups is None else int(n_groups)
        if el[:, :2].min() < 0 or el[:, :2].max() >= len(self.nodes):
            raise ValueError("element references an unknown node")
        if el[:, 2].min() < 0 or el[:, 2].max() >= self.n_groups:
            raise ValueError("element references an unknown section group")
        self.modulus_scale = float(modulus_scale)
        self.description = description
        self.supports = list(supports)
        self.loads = list(loads)
        self.monitor = dict(monitor)

        n_dof = 2 * len(self.nodes)
        fixed = set()
        for s in self.supports:
            for axis in s["fix"]:
                fixed.add(2 * int(s["node"]) + "xy".index(axis))
        self.free = np.array(sorted(set(range(n_dof)) - fixed), dtype=int)
        pos = {d: k for k, d in enumerate(self.free)}

        group_k = np.zeros((self.n_groups, n_dof, n_dof))
        for i, j, g in el:
            d = self.nodes[j] - self.nodes[i]
            length = float(np.hypot(*d))
            if length == 0:
                raise ValueError(f"element ({i}, {j}) has zero length")
            c = np.concatenate([-d, d]) / length
            dofs = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1]
            group_k[g][np.ix_(dofs, dofs)] += np.outer(c, c) / length
        self.group_stiffness = group_k[:, self.free][:, :, self.free]

        self.load_matrix = np.zeros((len(self.free), len(self.loads)))
        for k, ld in enumerate(self.loads):
            direction = np.asarray(ld.get("direction", (0.0, -1.0)), dtype=float)
            for a in range(2):
                dof = 2 * int(ld["node"]) + a
                if direction[a] and dof in pos:
                    self.load_matrix[pos[dof], k] = direction[a]
        mdof = 2 * int(self.monitor["node"]) + "xy".index(self.monitor.get("direction", "y"))
        if mdof not in pos:
            raise ValueError("monitored degree of freedom is fixed by a support")
        self.monitor_index = pos[mdof]

        unit = self.group_stiffness.sum(axis=0)
        s = np.linalg.svd(unit, compute_uv=False)
        if s.size == 0 or s[-1] <= 1e-12 * s[0]:
            raise MechanismError("stiffness matrix is singular: the truss is a mechanism")

    @classmethod
    def from_dict(cls, d: dict) -> TrussModel:
        return cls(d["nodes"], d["elements"], d["supports"], d["loads"], d["monitor"],
                   d.get("n_groups"), d.get("modulus_scale", 1.0), d.get("description", ""))

    @classmethod
    def from_json(cls, path) -> TrussModel:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> TrussModel:
        text = resources.files("lrauq.data").joinpath("truss_23bar.json").read_text()
        return cls.from_dict(json.loads(text))

    @property
    def n_inputs(self) -> int:
        return 2 * self.n_groups + len(self.loads)

    def _split(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"truss takes {self.n_inputs} inputs, got {x.shape[1]}")
        g = self.n_groups
        area, modulus, loads = x[:, :g], x[:, g:2 * g], x[:, 2 * g:]
        if np.any(area <= 0) or np.any(modulus <= 0):
            raise DomainError("section areas and moduli must be positive")
        return area * modulus * self.modulus_scale, loads

    def stiffness(self, x) -> np.ndarray:
        """Reduced stiffness matrices, shape ``(n, n_free, n_free)``."""
        ea, _ = self._split(x)
        return np.einsum("ng,gij->nij", ea, self.group_stiffness)

    def solve(self, x, check: bool = False) -> np.ndarray:
        """Free-DOF displacements for each input row."""
        ea, loads = self._split(x)
        out = np.empty((ea.shape[0], len(self.free)))
        for s in range(0, ea.shape[0], SOLVE_CHUNK):
            k = np.einsum("ng,gij->nij", ea[s:s + SOLVE_CHUNK], self.group_stiffness)
            f = loads[s:s + SOLVE_CHUNK] @ self.load_matrix.T
            d = np.linalg.solve(k, f[..., None])[..., 0]
            if check:
                resid = np.linalg.norm(np.einsum("nij,nj->ni", k, d) - f, axis=1)
                scale = np.maximum(np.linalg.norm(f, axis=1), np.finfo(float).tiny)
                if np.any(resid > EQUILIBRIUM_RTOL * scale):
                    raise RuntimeError("equilibrium residual exceeds tolerance")
            out[s:s + SOLVE_CHUNK] = d
        return out

    def __call__(self, x) -> np.ndarray:
        """Magnitude of the monitored displacement for each input row."""
        return np.abs(self.solve(x)[:, self.monitor_index])


def truss_deflection(x) -> np.ndarray:
    """Midspan deflection [m] of the default 23-bar truss."""
    return _default()(x)


_DEFAULT: TrussModel | None = None


def _default() -> TrussModel:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = TrussModel.default()
    return _DEFAULT
