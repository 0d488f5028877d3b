"""Action-unit knowledge hypergraph: incidence loading, degree normalization,
and the HGNN convolution.

Vertices are action units, hyperedges are expression classes. Propagation
uses D_v^{-1/2} H D_e^{-1} H^T D_v^{-1/2}, which is symmetric and PSD with
spectral norm <= 1, so features never blow up through the stack. Dense
matrices throughout: the graphs here have tens of vertices at most.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

DEFAULT_RESOURCE = "au_expression_graph.txt"


@dataclass(frozen=True)
class Hypergraph:
    incidence: Array  # (n_vertices, n_edges), entries in {0, 1}
    vertex_names: tuple[str, ...]
    edge_names: tuple[str, ...]

    @property
    def n_vertices(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_edges(self) -> int:
        return self.incidence.shape[1]


def _validate(h: Array, vertex_names, edge_names) -> Hypergraph:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"incidence must be 2-D, got shape {h.shape}")
    if not np.isin(h, (0.0, 1.0)).all():
        raise ValueError("incidence entries must be 0 or 1")
    vertex_names = tuple(vertex_names)
    edge_names = tuple(edge_names)
    if len(vertex_names) != h.shape[0] or len(edge_names) != h.shape[1]:
        raise ValueError("label counts do not match incidence shape")
    if len(set(vertex_names)) != len(vertex_names):
        raise ValueError("duplicate vertex names")
    if len(set(edge_names)) != len(edge_names):
        raise ValueError("duplicate edge names")
    v_deg = h.sum(axis=1)
    e_deg = h.sum(axis=0)
    for name, deg in zip(vertex_names, v_deg):
        if deg < 1:
            raise ValueError(f"vertex {name!r} belongs to no edge; its normalization is undefined")
    for name, deg in zip(edge_names, e_deg):
        if deg < 1:
            raise ValueError(f"edge {name!r} contains no vertex; its normalization is undefined")
    h.setflags(write=False)
    return Hypergraph(incidence=h, vertex_names=vertex_names, edge_names=edge_names)


def parse_incidence(text: str) -> Hypergraph:
    """Parse either the row-per-vertex table or the JSON matrix literal."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        try:
            return _validate(doc["incidence"], doc["vertices"], doc["edges"])
        except KeyError as missing:
            raise ValueError(f"JSON incidence document missing key {missing}") from None

    edge_names: list[str] | None = None
    vertex_names: list[str] = []
    rows: list[list[str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"line {lineno}: expected 'name: members', got {raw!r}")
        name, members = line.split(":", 1)
        name = name.strip()
        if name == "classes":
            if edge_names is not None:
                raise ValueError(f"line {lineno}: duplicate classes header")
            edge_names = members.split()
            continue
        if edge_names is None:
            raise ValueError("incidence table must start with a 'classes:' header")
        vertex_names.append(name)
        rows.append(members.split())

    if edge_names is None:
        raise ValueError("incidence table must start with a 'classes:' header")
    h = np.zeros((len(vertex_names), len(edge_names)))
    index = {e: j for j, e in enumerate(edge_names)}
    for i, members in enumerate(rows):
        for member in members:
            if member not in index:
                raise ValueError(
                    f"vertex {vertex_names[i]!r} references unknown class {member!r}"
                )
            h[i, index[member]] = 1.0
    return _validate(h, vertex_names, edge_names)


def load_incidence(path: str | Path) -> Hypergraph:
    return parse_incidence(Path(path).read_text(encoding="utf-8"))


def default_hypergraph() -> Hypergraph:
    """The packaged prototypical action-unit / expression table."""
    text = resources.files("nirfex.resources").joinpath(DEFAULT_RESOURCE).read_text("utf-8")
    return parse_incidence(text)


def degrees(g: Hypergraph) -> tuple[Array, Array]:
    """Vertex and hyperedge degree vectors (diagonals of D_v, D_e)."""
    return g.incidence.sum(axis=1), g.incidence.sum(axis=0)


def propagation_matrix(g: Hypergraph) -> Array:
    """D_v^{-1/2} H D_e^{-1} H^T D_v^{-1/2}, symmetrized against roundoff."""
    d_v, d_e = degrees(g)
    h = g.incidence
    scaled = h / np.sqrt(d_v)[:, None]
    p = (scaled / d_e[None, :]) @ scaled.T
    return (p + p.T) / 2.0


def hgnn_conv(
    e_in: Tensor | Array,
    g: Hypergraph,
    theta: Tensor | Array,
    final_layer: bool = False,
) -> Tensor:
    """One HGNN layer: propagate vertex features, mix with theta, ReLU.

    The final layer omits the ReLU so the downstream sigmoid sees signed
    logits rather than values pinned to [0.5, 1).
    """
    e_in = ad.as_tensor(e_in)
    theta = ad.as_tensor(theta, like=e_in)
    if e_in.shape[-2] != g.n_vertices:
        raise ValueError(
            f"feature rows {e_in.shape[-2]} do not match vertex count {g.n_vertices}"
        )
    if e_in.shape[-1] != theta.shape[0]:
        raise ValueError(
            f"feature width {e_in.shape[-1]} does not match theta rows {theta.shape[0]}"
        )
    prop = Tensor(propagation_matrix(g).astype(e_in.dtype))
    out = ad.matmul(ad.matmul(prop, e_in), theta)
    return out if final_layer else ad.relu(out)
