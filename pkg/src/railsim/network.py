"""Rail network graph and spectral station/line embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

EMBED_DIM = 8
TRIVIAL_EIGENVALUE = 1e-9


class NetworkError(ValueError):
    pass


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RailNetwork:
    stations: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    adjacency: np.ndarray
    lines: dict[str, tuple[str, ...]] = field(default_factory=dict)
    station_embedding: dict[str, np.ndarray] | None = None
    line_embedding: dict[str, np.ndarray] | None = None

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.stations)}

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def embedding_matrix(self) -> np.ndarray:
        """Station embeddings stacked in station order, shape (n, 8)."""
        if self.station_embedding is None:
            raise NetworkError("spectral embedding has not been computed")
        return np.stack([self.station_embedding[s] for s in self.stations])


def build_network(stations, edges, lines=None) -> RailNetwork:
    stations = tuple(str(s) for s in stations)
    if not stations:
        raise NetworkError("empty station list")
    if len(set(stations)) != len(stations):
        dup = sorted({s for s in stations if stations.count(s) > 1})
        raise NetworkError(f"duplicate station id(s): {dup}")
    idx = {s: i for i, s in enumerate(stations)}

    adj = np.zeros((len(stations), len(stations)))
    canon = set()
    for a, b in edges:
        a, b = str(a), str(b)
        for s in (a, b):
            if s not in idx:
                raise NetworkError(f"dangling edge endpoint {s!r} in edge ({a}, {b})")
        if a == b:
            raise NetworkError(f"self-loop on {a!r}")
        adj[idx[a], idx[b]] = adj[idx[b], idx[a]] = 1.0
        canon.add((a, b) if idx[a] < idx[b] else (b, a))

    line_map = {}
    for name, members in (lines or {}).items():
        members = tuple(str(s) for s in members)
        for s in members:
            if s not in idx:
                raise NetworkError(f"line {name!r} references unknown station {s!r}")
        line_map[str(name)] = members

    return RailNetwork(stations, frozenset(canon), adj, line_map)


def normalized_laplacian(network: RailNetwork) -> np.ndarray:
    """I - D^-1/2 A D^-1/2; isolated nodes keep their identity row."""
    adj = network.adjacency
    if adj.size == 0:
        raise NetworkError("empty network")
    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.eye(len(deg)) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a dense symmetric matrix.

    Returns eigenvalues in ascending order and the matching eigenvectors as
    columns. Converges when every off-diagonal magnitude is below ``tol``.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(a.diagonal()))
        if off.max() < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    else:
        off = np.abs(a - np.diag(a.diagonal()))
        if off.max() >= tol:
            raise EigenSolverError(
                f"Jacobi did not converge in {max_sweeps} sweeps (max off-diagonal {off.max():.3e})"
            )

    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _fix_sign(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            out[:, j] = -col
    return out


def spectral_basis(network: RailNetwork, k: int = EMBED_DIM):
    """Eigenpairs retained for the embedding, before row normalisation.

    Returns ``(eigenvalues, vectors)`` where ``vectors`` has one column per
    retained non-trivial eigenvector (at most ``k`` columns).
    """
    if network.n_stations < 2:
        raise NetworkError("spectral embedding needs at least 2 stations")
    lap = normalized_laplacian(network)
    w, v = jacobi_eigh(lap)
    keep = np.flatnonzero(w >= TRIVIAL_EIGENVALUE)[:k]
    return w[keep], _fix_sign(v[:, keep])


def spectral_embedding(network: RailNetwork, k: int = EMBED_DIM) -> RailNetwork:
    _, basis = spectral_basis(network, k)
    coords = np.zeros((network.n_stations, k))
    coords[:, : basis.shape[1]] = basis
    norms = np.linalg.norm(coords, axis=1)
    nz = norms > 1e-12
    coords[nz] /= norms[nz, None]
    coords[~nz] = 0.0

    station_emb = {s: coords[i].copy() for i, s in enumerate(network.stations)}
    net = replace(network, station_embedding=station_emb)
    line_emb = {name: line_embedding(net, name) for name, members in net.lines.items() if members}
    return replace(net, line_embedding=line_emb)


def line_embedding(network: RailNetwork, line: str) -> np.ndarray:
    if network.station_embedding is None:
        raise NetworkError("spectral embedding has not been computed")
    if line not in network.lines:
        raise NetworkError(f"unknown line {line!r}")
    members = network.lines[line]
    if not members:
        raise NetworkError(f"line {line!r} has no stations")
    return np.mean([network.station_embedding[s] for s in members], axis=0)


def read_network(path) -> RailNetwork:
    """Parse the sectioned text format ([stations], [edges], [lines])."""
    stations, edges, lines = [], [], {}
    section = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if text.startswith("[") and text.endswith("]"):
            section = text[1:-1].strip().lower()
            if section not in ("stations", "edges", "lines"):
                raise NetworkError(f"{path}:{lineno}: unknown section [{section}]")
            continue
        if section == "stations":
            stations.append(text)
        elif section == "edges":
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 2:
                raise NetworkError(f"{path}:{lineno}: edge must be 'id,id'")
            edges.append(tuple(parts))
        elif section == "lines":
            name, sep, rest = text.partition(":")
            if not sep:
                raise NetworkError(f"{path}:{lineno}: line must be 'line_id: a,b,c'")
            lines[name.strip()] = [p.strip() for p in rest.split(",") if p.strip()]
        else:
            raise NetworkError(f"{path}:{lineno}: content outside a section")
    return build_network(stations, edges, lines)


def write_network(network: RailNetwork, path) -> None:
    out = ["[stations]", *network.stations, "", "[edges]"]
    idx = network.index
    for a, b in sorted(network.edges, key=lambda e: (idx[e[0]], idx[e[1]])):
        out.append(f"{a},{b}")
    out += ["", "[lines]"]
    for name, members in network.lines.items():
        out.append(f"{name}: {','.join(members)}")
    Path(path).write_text("\n".join(out) + "\n")
