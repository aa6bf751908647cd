"""Recombining k-ary lattice and node-level fields.

A node of layer ``t`` is identified by its level ``j`` in ``0 .. (k-1)*t``.
Branch ``s`` (``s = 0 .. k-1``) leads from ``(t, j)`` to ``(t+1, j+s)``, so
paths that pick the same multiset of branches recombine.  Each layer holds
``(k-1)*t + 1`` nodes and every node event has the probability of reaching it
along equiprobable branches.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class LatticeError(ValueError):
    """Invalid lattice parameters or mismatched field shapes."""


def layer_size(k: int, t: int) -> int:
    return (k - 1) * t + 1


def total_nodes(k: int, T: int) -> int:
    # ((k-1) T / 2 + 1)(T + 1), kept in integer arithmetic
    return ((k - 1) * T * (T + 1)) // 2 + T + 1


@dataclass(frozen=True)
class Lattice:
    """Immutable recombining lattice with ``k`` branches per node.

    Attributes
    ----------
    k : int
        Branching factor, at least 2.
    T : int
        Final time index, at least 1.
    """

    k: int
    T: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise LatticeError(f"branching factor k must be an integer >= 2, got {self.k}")
        if int(self.T) != self.T or self.T < 1:
            raise LatticeError(f"horizon T must be an integer >= 1, got {self.T}")

    # -- topology -----------------------------------------------------------
    def size(self, t: int) -> int:
        """Number of nodes in layer ``t``."""
        self._check_t(t)
        return layer_size(self.k, t)

    @property
    def n_nodes(self) -> int:
        return total_nodes(self.k, self.T)

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = [layer_size(self.k, t) for t in range(self.T + 1)]
        return np.concatenate([[0], np.cumsum(sizes)])

    @property
    def layers(self) -> list[np.ndarray]:
        """Global node ids per layer, in canonical (ascending level) order."""
        o = self.offsets
        return [np.arange(o[t], o[t + 1]) for t in range(self.T + 1)]

    def node_id(self, t: int, j: int) -> int:
        self._check_node(t, j)
        return int(self.offsets[t] + j)

    def node(self, gid: int) -> tuple[int, int]:
        """Inverse of :meth:`node_id`."""
        if not 0 <= gid < self.n_nodes:
            raise LatticeError(f"node id {gid} out of range")
        t = int(np.searchsorted(self.offsets, gid, side="right") - 1)
        return t, int(gid - self.offsets[t])

    def children(self, t: int, j: int) -> list[tuple[int, int]]:
        self._check_node(t, j)
        if t == self.T:
            return []
        return [(t + 1, j + s) for s in range(self.k)]

    def parents(self, t: int, j: int) -> list[tuple[int, int]]:
        self._check_node(t, j)
        if t == 0:
            return []
        lo = max(0, j - self.k + 1)
        hi = min(j, (self.k - 1) * (t - 1))
        return [(t - 1, i) for i in range(lo, hi + 1)]

    # -- probabilities ------------------------------------------------------
    @cached_property
    def _probs(self) -> list[np.ndarray]:
        out = [np.ones(1)]
        kernel = np.full(self.k, 1.0 / self.k)
        for _ in range(self.T):
            out.append(np.convolve(out[-1], kernel))
        for p in out:
            p.setflags(write=False)
        return out

    def prob(self, t: int) -> np.ndarray:
        """Node probabilities of layer ``t`` (read-only array)."""
        self._check_t(t)
        return self._probs[t]

    def path_probability(self) -> float:
        """Probability of one elementary path through the lattice."""
        return float(self.k) ** (-self.T)

    # -- transition operators ----------------------------------------------
    @cached_property
    def _edges(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        out = []
        for t in range(self.T):
            n = layer_size(self.k, t)
            parent = np.repeat(np.arange(n), self.k)
            child = parent + np.tile(np.arange(self.k), n)
            p = self._probs[t][parent]
            w = p / (self.k * self._probs[t + 1][child])
            out.append((parent, child, w))
        return out

    def edges(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges from layer ``t`` to ``t+1``.

        Returns ``(parent, child, weight)`` where ``weight`` is the share
        ``p(n) / sum_{parents of child} p`` of the parent in the child's
        conditional expectation.  Weights of the edges into one child sum to 1.
        """
        if not 0 <= t < self.T:
            raise LatticeError(f"no edges leave layer {t}")
        return self._edges[t]

    @cached_property
    def _aggregation(self) -> list[sp.csr_matrix]:
        mats = []
        for t in range(self.T):
            parent, child, w = self._edges[t]
            shape = (layer_size(self.k, t + 1), layer_size(self.k, t))
            mats.append(sp.csr_matrix((w, (child, parent)), shape=shape))
        return mats

    def aggregation(self, t: int) -> sp.csr_matrix:
        """Sparse matrix mapping a layer-``t`` field to its layer-``t+1`` average.

        Entry ``[c, n]`` is the weight of parent ``n`` in child ``c``.
        """
        self.edges(t)
        return self._aggregation[t]

    @cached_property
    def _branching(self) -> list[sp.csr_matrix]:
        mats = []
        for t in range(self.T):
            parent, child, _ = self._edges[t]
            shape = (layer_size(self.k, t), layer_size(self.k, t + 1))
            mats.append(sp.csr_matrix((np.full(parent.size, 1.0 / self.k), (parent, child)), shape=shape))
        return mats

    def child_mean(self, t: int, values: np.ndarray) -> np.ndarray:
        """Conditional expectation at layer ``t`` of a layer-``t+1`` field."""
        self.edges(t)
        return self._branching[t] @ np.asarray(values, dtype=float)

    # -- helpers -------------------------------------------------------------
    def _check_t(self, t: int) -> None:
        if not 0 <= t <= self.T:
            raise LatticeError(f"time {t} outside 0..{self.T}")

    def _check_node(self, t: int, j: int) -> None:
        self._check_t(t)
        if not 0 <= j < layer_size(self.k, t):
            raise LatticeError(f"level {j} outside layer {t}")

    def summary_rows(self) -> list[dict]:
        rows = []
        for t in range(self.T + 1):
            p = self.prob(t)
            rows.append({"t": t, "nodes": p.size, "prob_sum": float(p.sum()),
                         "prob_min": float(p.min()), "prob_max": float(p.max())})
        return rows

    def to_csv(self, path) -> None:
        """Write a per-layer summary: node count and probability statistics."""
        rows = self.summary_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.items()})


def build_lattice(k: int, T: int) -> Lattice:
    """Build the recombining lattice with ``k`` branches and horizon ``T``."""
    lat = Lattice(k, T)
    lat._probs  # computed once, cached
    return lat


@dataclass
class NodeField:
    """Values attached to the nodes of layers ``t_start .. t_end``.

    ``values[i]`` belongs to layer ``t_start + i`` and has shape ``(N_t,)`` or
    ``(N_t, d)``.
    """

    lattice: Lattice
    t_start: int
    values: list
    unit: str = ""
    name: str = ""

    def __post_init__(self):
        self.values = [np.asarray(v, dtype=float) for v in self.values]
        for i, v in enumerate(self.values):
            t = self.t_start + i
            if v.ndim == 0 or v.shape[0] != self.lattice.size(t):
                raise LatticeError(
                    f"field {self.name!r}: layer {t} has {v.shape[0] if v.ndim else 0} values, "
                    f"expected {self.lattice.size(t)}")

    @property
    def t_end(self) -> int:
        return self.t_start + len(self.values) - 1

    def __getitem__(self, t: int) -> np.ndarray:
        if not self.t_start <= t <= self.t_end:
            raise LatticeError(f"field {self.name!r} undefined at layer {t}")
        return self.values[t - self.t_start]

    def __setitem__(self, t: int, v) -> None:
        v = np.asarray(v, dtype=float)
        if v.shape != self[t].shape:
            raise LatticeError(f"shape {v.shape} does not match layer {t} shape {self[t].shape}")
        self.values[t - self.t_start] = v

    def times(self) -> range:
        return range(self.t_start, self.t_end + 1)

    def mean(self, t: int) -> np.ndarray:
        """Probability-weighted layer mean."""
        return self.lattice.prob(t) @ self[t]

    def copy(self) -> "NodeField":
        return NodeField(self.lattice, self.t_start, [v.copy() for v in self.values], self.unit, self.name)


def propagate(lattice: Lattice, t: int, parent_values, g: Callable = None,
              parent_aux: Optional[Sequence] = None, child_aux: Optional[Sequence] = None) -> np.ndarray:
    """Carry a layer-``t`` field to layer ``t+1`` by conditional expectation.

    The value at child ``c`` is ``sum_n w(n, c) * g(y_n, *parent_aux_n, *child_aux_c)``
    over the parents ``n`` of ``c``, where ``w`` are the weights returned by
    :meth:`Lattice.edges`.  With ``g=None`` the parent values are averaged.

    Parameters
    ----------
    parent_values : array (N_t,) or (N_t, d)
    g : callable, optional
        Vectorised over edges: receives arrays with one row per edge.
    parent_aux, child_aux : sequences of arrays indexed by parent / child node.
    """
    parent, child, w = lattice.edges(t)
    y = np.asarray(parent_values, dtype=float)
    if y.shape[0] != lattice.size(t):
        raise LatticeError(f"parent field has {y.shape[0]} rows, layer {t} has {lattice.size(t)}")
    args = [y[parent]]
    for a in parent_aux or ():
        a = np.asarray(a, dtype=float)
        if a.shape[0] != lattice.size(t):
            raise LatticeError(f"parent auxiliary field has {a.shape[0]} rows, layer {t} has {lattice.size(t)}")
        args.append(a[parent])
    for a in child_aux or ():
        a = np.asarray(a, dtype=float)
        if a.shape[0] != lattice.size(t + 1):
            raise LatticeError(f"child auxiliary field has {a.shape[0]} rows, layer {t + 1} has {lattice.size(t + 1)}")
        args.append(a[child])
    edge_vals = args[0] if g is None else np.asarray(g(*args), dtype=float)
    if edge_vals.shape[0] != parent.size:
        raise LatticeError("stage map must return one row per edge")
    out = np.zeros((lattice.size(t + 1),) + edge_vals.shape[1:])
    np.add.at(out, child, (w.reshape((-1,) + (1,) * (edge_vals.ndim - 1))) * edge_vals)
    return out


def node_probabilities(lattice: Lattice) -> NodeField:
    """Node probabilities as a scalar field over all layers."""
    return NodeField(lattice, 0, [lattice.prob(t) for t in range(lattice.T + 1)], name="probability")
