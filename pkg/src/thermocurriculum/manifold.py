"""Task-space geometry over a friction-tensor field.

The field is sampled on a regular grid of task parameters and interpolated
multilinearly in between.  Curricula are either graph geodesics (Dijkstra
over cardinal moves on the grid) or shot by integrating the geodesic ODE.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, ConvergenceError, DegenerateMetricError
from .friction import friction_exact, scalar_field
from .maxent_solver import policy_chain, solve_soft_avg, stationary_distribution
from .mdp_core import TabularMdp

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class LambdaGrid:
    ranges: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    resolution: tuple = (41, 41)

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        res = tuple(int(n) for n in np.broadcast_to(self.resolution, (len(ranges),)))
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "resolution", res)
        if any(n < 2 for n in res):
            raise ConfigError("grid resolution must be at least 2 per axis")
        if any(not hi > lo for lo, hi in ranges):
            raise ConfigError("grid ranges must be non-degenerate")

    @property
    def dim(self) -> int:
        return len(self.ranges)

    @property
    def axes(self) -> list:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.resolution)]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.ranges, self.resolution)])

    def nodes(self):
        return itertools.product(*(range(n) for n in self.resolution))

    def point(self, idx) -> np.ndarray:
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])

    def nearest(self, lam) -> tuple:
        lam = np.asarray(lam, dtype=float)
        idx = np.rint((lam - [lo for lo, _ in self.ranges]) / self.spacing).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, np.array(self.resolution) - 1))

    def contains(self, lam, pad: float = 0.0) -> bool:
        lam = np.asarray(lam, dtype=float)
        return all(lo + pad - 1e-12 <= x <= hi - pad + 1e-12 for x, (lo, hi) in zip(lam, self.ranges))


@dataclass(frozen=True)
class Protocol:
    """Time-ordered task parameters ``points[k]`` at ``times[k]``."""

    times: np.ndarray
    points: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or len(t) != len(x) or len(t) == 0:
            raise ConfigError("protocol needs matching, non-empty times and points")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("protocol times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)

    def __len__(self):
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def rescaled(self, duration: float) -> "Protocol":
        """Same path with times stretched affinely onto ``[0, duration]``."""
        if len(self) == 1:
            return self
        t = (self.times - self.times[0]) / self.duration * duration
        return Protocol(t, self.points.copy(), dict(self.info))

    def reversed(self) -> "Protocol":
        t = self.times[-1] - self.times[::-1] + self.times[0]
        return Protocol(t, self.points[::-1].copy(), dict(self.info))

    def to_csv(self, path):
        dim = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"lambda{i + 1}" for i in range(dim)])
            for t, x in zip(self.times, self.points):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path) -> "Protocol":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


class AnalyticMetric:
    """Metric given by a callable ``metric_fn(lam) -> (L, L)`` on a box."""

    def __init__(self, metric_fn, ranges):
        self.metric_fn = metric_fn
        self.ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)

    @property
    def dim(self):
        return len(self.ranges)

    def metric(self, lam) -> np.ndarray:
        return np.asarray(self.metric_fn(np.asarray(lam, dtype=float)), dtype=float)

    def contains(self, lam, pad: float = 0.0) -> bool:
        return all(lo + pad - 1e-12 <= x <= hi - pad + 1e-12 for x, (lo, hi) in zip(lam, self.ranges))


@dataclass(eq=False)
class FrictionField:
    """Friction tensors at every node of a ``LambdaGrid``.

    ``zeta`` has shape ``resolution + (L, L)``; ``theta`` and ``residuals``
    hold per-node solver metadata.
    """

    grid: LambdaGrid
    zeta: np.ndarray
    theta: np.ndarray | None = None
    residuals: np.ndarray | None = None

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=float)
        L = self.grid.dim
        if self.zeta.shape != tuple(self.grid.resolution) + (L, L):
            raise ConfigError(f"field shape {self.zeta.shape} does not match grid {self.grid.resolution}")
        flat = self.zeta.reshape(tuple(self.grid.resolution) + (L * L,))
        self._interp = RegularGridInterpolator(self.grid.axes, flat, method="linear")

    @property
    def dim(self):
        return self.grid.dim

    @property
    def ranges(self):
        return self.grid.ranges

    def contains(self, lam, pad: float = 0.0) -> bool:
        return self.grid.contains(lam, pad)

    def metric(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if not self.contains(lam):
            raise ConfigError(f"point {lam.tolist()} outside the field")
        lam = np.clip(lam, [lo for lo, _ in self.ranges], [hi for _, hi in self.ranges])
        return self._interp(lam[None, :])[0].reshape(self.dim, self.dim)

    def node_metric(self, idx) -> np.ndarray:
        return self.zeta[tuple(idx)]

    def log_trace(self, sigma: float = 0.1, log_first: bool = False):
        return scalar_field(self.zeta, self.grid.spacing, sigma, log_first)

    def to_csv(self, path, sigma: float = 0.1):
        """One row per node: coordinates, upper-triangle tensor entries, log-trace columns."""
        raw, smooth = self.log_trace(sigma)
        L = self.dim
        pairs = [(i, j) for i in range(L) for j in range(i, L)]
        axes = self.grid.axes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"lambda{i + 1}" for i in range(L)]
                       + [f"zeta{i + 1}{j + 1}" for i, j in pairs]
                       + ["logtrace_raw", "logtrace_smoothed"])
            for idx in self.grid.nodes():
                z = self.zeta[idx]
                row = [ax[i] for ax, i in zip(axes, idx)] + [z[i, j] for i, j in pairs]
                row += [raw[idx], smooth[idx]]
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FrictionField":
        with open(path) as fh:
            header = next(csv.reader(fh))
        L = sum(h.startswith("lambda") for h in header)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        axes = [np.unique(data[:, k]) for k in range(L)]
        grid = LambdaGrid(tuple((ax[0], ax[-1]) for ax in axes), tuple(len(ax) for ax in axes))
        zeta = np.zeros(tuple(grid.resolution) + (L, L))
        idx = tuple(np.searchsorted(ax, data[:, k]) for k, ax in enumerate(axes))
        col = L
        for i in range(L):
            for j in range(i, L):
                zeta[idx + (i, j)] = data[:, col]
                zeta[idx + (j, i)] = data[:, col]
                col += 1
        return cls(grid, zeta)


class ExactMetric:
    """Friction tensor evaluated exactly (solve + stationary + lag sum) at any task point.

    Results are cached per point, so repeated queries along a protocol are cheap.
    """

    def __init__(self, mdp: TabularMdp, alpha: float = 0.2, T: int = 2000, beta: float = 1.0,
                 ranges=None):
        self.mdp = mdp
        self.alpha = alpha
        self.T = T
        self.beta = beta
        self.ranges = tuple(ranges) if ranges is not None else ((-np.inf, np.inf),) * mdp.n_features
        self._cache = {}

    @property
    def dim(self):
        return self.mdp.n_features

    def contains(self, lam, pad: float = 0.0) -> bool:
        return all(lo + pad <= x <= hi - pad for x, (lo, hi) in zip(lam, self.ranges))

    def metric(self, lam) -> np.ndarray:
        key = tuple(float(x) for x in np.asarray(lam, dtype=float))
        if key not in self._cache:
            self._cache[key] = _node_friction((self.mdp, np.array(key), self.alpha, self.T, self.beta))[0]
        return self._cache[key]


def _node_friction(args):
    mdp, lam, alpha, T, beta = args
    sol = solve_soft_avg(mdp, lam, alpha)
    M = policy_chain(mdp, sol.policy)
    rho = stationary_distribution(M)
    ft = friction_exact(mdp, sol, rho, T=T, beta=beta, chain=M)
    return ft.zeta, sol.theta, max(sol.residual, rho.residual)


def build_metric_field(
    mdp: TabularMdp,
    grid: LambdaGrid,
    alpha: float = 0.2,
    T: int = 2000,
    beta: float = 1.0,
    threads: int | None = 1,
) -> FrictionField:
    """Solve, find the stationary distribution and the friction tensor at every grid node."""
    if grid.dim != mdp.n_features:
        raise ConfigError(f"grid dimension {grid.dim} != feature dimension {mdp.n_features}")
    nodes = list(grid.nodes())
    jobs = [(mdp, grid.point(idx), alpha, T, beta) for idx in nodes]
    threads = threads or os.cpu_count() or 1
    results = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_node_friction, job) for job in jobs]
            for idx, fut in zip(nodes, futures):
                try:
                    results.append(fut.result())
                except ConvergenceError as exc:
                    raise ConvergenceError(f"node {idx} failed: {exc}", exc.residual, idx) from exc
    else:
        for idx, job in zip(nodes, jobs):
            try:
                results.append(_node_friction(job))
            except ConvergenceError as exc:
                raise ConvergenceError(f"node {idx} failed: {exc}", exc.residual, idx) from exc
    shape = tuple(grid.resolution)
    L = grid.dim
    zeta = np.array([r[0] for r in results]).reshape(shape + (L, L))
    theta = np.array([r[1] for r in results]).reshape(shape)
    residuals = np.array([r[2] for r in results]).reshape(shape)
    return FrictionField(grid, zeta, theta, residuals)


def edge_length(field: FrictionField, u, v) -> float:
    """Riemannian length of the grid edge u-v using the endpoint-averaged metric."""
    d = field.grid.point(v) - field.grid.point(u)
    g = 0.5 * (field.node_metric(u) + field.node_metric(v))
    return float(np.sqrt(max(d @ g @ d, 0.0)))


def _neighbours(idx, resolution, diagonal):
    dim = len(idx)
    if diagonal:
        steps = [s for s in itertools.product((-1, 0, 1), repeat=dim) if any(s)]
    else:
        steps = []
        for k in range(dim):
            for sgn in (-1, 1):
                s = [0] * dim
                s[k] = sgn
                steps.append(tuple(s))
    for s in steps:
        nb = tuple(i + d for i, d in zip(idx, s))
        if all(0 <= i < n for i, n in zip(nb, resolution)):
            yield nb


def shortest_node_path(field: FrictionField, start, end, diagonal: bool = False):
    """Dijkstra over grid nodes; returns ``(node_path, cost)``.

    The heap orders by (cost, node index), so equal-cost ties resolve to the
    lexicographically smallest node.
    """
    res = tuple(field.grid.resolution)
    start, end = tuple(start), tuple(end)
    dist = {start: 0.0}
    prev = {start: None}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == end:
            break
        for v in _neighbours(u, res, diagonal):
            if v in done:
                continue
            nd = d + edge_length(field, u, v)
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if end not in done:
        raise ConvergenceError(f"no path between nodes {start} and {end}")
    path = [end]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1], dist[end]


def staircase_nodes(grid: LambdaGrid, start, end) -> list:
    """Cardinal-move node path hugging the straight segment between two nodes.

    At each step the move along the axis whose fractional progress lags the
    most is taken, so the staircase never strays more than one cell from the line.
    """
    start, end = np.asarray(start, dtype=int), np.asarray(end, dtype=int)
    delta = end - start
    total = np.abs(delta)
    done = np.zeros_like(total)
    path = [tuple(int(i) for i in start)]
    cur = start.copy()
    while np.any(done < total):
        frac = np.where(total > 0, (done + 0.5) / np.maximum(total, 1), np.inf)
        k = int(np.argmin(frac))
        cur[k] += np.sign(delta[k])
        done[k] += 1
        path.append(tuple(int(i) for i in cur))
    return path


def node_path_cost(field: FrictionField, nodes) -> float:
    return float(sum(edge_length(field, u, v) for u, v in zip(nodes[:-1], nodes[1:])))


def path_length(field, points) -> float:
    """Metric length of a polyline, each segment using its endpoint-averaged metric."""
    pts = np.asarray(points, dtype=float)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        g = 0.5 * (field.metric(a) + field.metric(b))
        total += np.sqrt(max(d @ g @ d, 0.0))
    return float(total)


def constant_speed_reparam(points, field, n_steps: int) -> Protocol:
    """Resample a polyline so the metric speed is constant over unit total time.

    Knot ``k`` is reached at time (metric length up to k) / (total length);
    ``n_steps + 1`` samples are taken uniformly in time, moving linearly
    within each segment.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        return Protocol(np.zeros(1), pts[:1], {"knot_times": [0.0]})
    if n_steps < len(pts) - 1:
        raise ConfigError("n_steps must be at least the number of path segments")
    seg = np.array([np.sqrt(max((b - a) @ (0.5 * (field.metric(a) + field.metric(b))) @ (b - a), 0.0))
                    for a, b in zip(pts[:-1], pts[1:])])
    total = seg.sum()
    if total <= 0:
        # metrically flat along the whole path: fall back to uniform time per segment
        seg = np.ones(len(seg))
        total = seg.sum()
    knots = np.concatenate([[0.0], np.cumsum(seg) / total])
    knots[-1] = 1.0
    t = np.linspace(0.0, 1.0, n_steps + 1)
    out = np.array([np.interp(t, knots, pts[:, k]) for k in range(pts.shape[1])]).T
    return Protocol(t, out, {"knot_times": knots.tolist(), "metric_length": float(np.sum(seg) if total else 0.0)})


def geodesic_graph(field: FrictionField, lam_start, lam_end, n_steps: int = 100,
                   diagonal: bool = False) -> Protocol:
    """Graph geodesic between (grid-snapped) endpoints, reparameterized to constant metric speed."""
    start = field.grid.nearest(lam_start)
    end = field.grid.nearest(lam_end)
    nodes, cost = shortest_node_path(field, start, end, diagonal)
    pts = np.array([field.grid.point(n) for n in nodes])
    proto = constant_speed_reparam(pts, field, max(n_steps, len(pts) - 1))
    proto.info.update({"nodes": [list(n) for n in nodes], "cost": cost})
    return proto


def christoffel_fd(field, lam, h: float | None = None) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j]`` from central differences of the metric.

    ``Gamma^k_ij = 1/2 g^{kl} (d_i g_lj + d_j g_li - d_l g_ij)``.
    """
    lam = np.asarray(lam, dtype=float)
    L = len(lam)
    if h is None:
        h = float(np.min(field.grid.spacing)) if hasattr(field, "grid") else 1e-4
    g = field.metric(lam)
    if np.linalg.cond(g) > MAX_CONDITION:
        raise DegenerateMetricError(f"metric is singular at {lam.tolist()}")
    g_inv = np.linalg.inv(g)
    dg = np.empty((L, L, L))  # dg[m] = d g / d lam_m
    for m in range(L):
        e = np.zeros(L)
        e[m] = h
        dg[m] = (field.metric(lam + e) - field.metric(lam - e)) / (2 * h)
    # lower[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
    lower = np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg
    gamma = 0.5 * np.einsum("kl,lij->kij", g_inv, lower)
    return 0.5 * (gamma + gamma.transpose(0, 2, 1))


def _geodesic_rhs(field, h, state):
    L = len(state) // 2
    x, v = state[:L], state[L:]
    gamma = christoffel_fd(field, x, h)
    return np.concatenate([v, -np.einsum("kij,i,j->k", gamma, v, v)])


def metric_speed(field, lam, vel) -> float:
    vel = np.asarray(vel, dtype=float)
    return float(np.sqrt(max(vel @ field.metric(lam) @ vel, 0.0)))


def geodesic_shoot(field, lam0, vel0, dt: float, n_steps: int, h: float | None = None) -> Protocol:
    """Integrate the geodesic equation with classical RK4 from ``(lam0, vel0)``.

    Stops early (``info['exited'] = True``) if the next sample would leave
    the region where the central differences of step ``h`` are defined.
    """
    lam0 = np.asarray(lam0, dtype=float)
    if h is None:
        h = float(np.min(field.grid.spacing)) if hasattr(field, "grid") else 1e-4
    if not field.contains(lam0, pad=h):
        raise ConfigError("initial point must be at least h inside the domain")
    state = np.concatenate([lam0, np.asarray(vel0, dtype=float)])
    L = len(lam0)
    times = [0.0]
    states = [state]
    exited = False
    for k in range(n_steps):
        k1 = _geodesic_rhs(field, h, state)
        try:
            k2 = _geodesic_rhs(field, h, state + 0.5 * dt * k1)
            k3 = _geodesic_rhs(field, h, state + 0.5 * dt * k2)
            k4 = _geodesic_rhs(field, h, state + dt * k3)
        except ConfigError:
            exited = True
            break
        nxt = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not field.contains(nxt[:L], pad=h):
            exited = True
            break
        state = nxt
        states.append(state)
        times.append((k + 1) * dt)
    states = np.array(states)
    speeds = [metric_speed(field, s[:L], s[L:]) for s in states]
    return Protocol(np.array(times), states[:, :L],
                    {"velocities": states[:, L:], "metric_speed": np.array(speeds), "exited": exited})
