"""Shared builders and oracles for the test suite."""
import math

import numpy as np

from reactplan.energy import BoxDims, EnergyTables
from reactplan.geometry import OrientedBox, Polyline, Pose2
from reactplan.sampler import KinematicState, SamplerConfig, Trajectory, sample_candidates


def tv_distance(p, q) -> float:
    """Total variation between two distributions (last axis or flattened)."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def max_node_tv(ms_a, ms_b) -> float:
    return max(tv_distance(ms_a.marginals[i], ms_b.marginals[i])
               for i in range(ms_a.n_nodes))


def random_tables(rng, m=3, k=4, coupling=0.5, gamma=None, gamma_frac=0.1,
                  goal_scale=1.0) -> EnergyTables:
    """Random instance: N(0,1) unaries, mild random pairwise coupling and an
    optional symmetric collision mask."""
    unary = rng.normal(size=(m, k))
    pw = np.zeros((m, m, k, k))
    for i in range(m):
        for j in range(i + 1, m):
            pw[i, j] = coupling * rng.normal(size=(k, k))
            pw[j, i] = coupling * rng.normal(size=(k, k))
            if gamma is not None:
                mask = rng.random(size=(k, k)) < gamma_frac
                pw[i, j] = pw[i, j] + gamma * mask
                pw[j, i] = pw[j, i] + gamma * mask.T
    goal = goal_scale * np.abs(rng.normal(size=k))
    return EnergyTables(unary=unary, pairwise=pw, goal=goal)


def tree_tables(rng, m=4, k=4, coupling=1.0):
    """Random spanning-tree structured instance; returns (tables, edges)."""
    unary = rng.normal(size=(m, k))
    pw = np.zeros((m, m, k, k))
    nodes = list(range(m))
    rng.shuffle(nodes)
    edges = []
    for idx in range(1, m):
        child = nodes[idx]
        parent = nodes[int(rng.integers(0, idx))]
        i, j = min(child, parent), max(child, parent)
        edges.append((i, j))
        pw[i, j] = coupling * rng.normal(size=(k, k))
        pw[j, i] = coupling * rng.normal(size=(k, k))
    return EnergyTables(unary=unary, pairwise=pw, goal=np.zeros(k)), edges


def joint_distribution(tables: EnergyTables) -> np.ndarray:
    """Exact joint over all candidate assignments, shape (K,) * (N+1).

    Joint energy: sum_i unary[i, y_i] + sum over ordered pairs i != j of
    pairwise[i, j, y_i, y_j]. Independent of the inference module.
    """
    m, k = tables.unary.shape
    energy = np.zeros((k,) * m)
    for i in range(m):
        shape = [1] * m
        shape[i] = k
        energy = energy + tables.unary[i].reshape(shape)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            shape = [1] * m
            shape[min(i, j)] = k
            shape[max(i, j)] = k
            block = tables.pairwise[i, j] if i < j else tables.pairwise[i, j].T
            energy = energy + block.reshape(shape)
    w = np.exp(-(energy - energy.min()))
    return w / w.sum()


def joint_energy_grid(tables: EnergyTables, include_actor_actor=True,
                      ego_interaction="both") -> np.ndarray:
    """Planning cost of every joint assignment, shape (K,) * (N+1).

    ``ego_interaction``: 'both' sums pairwise[0, i] and pairwise[i, 0];
    'none' drops ego-actor terms. Actor unaries always included; the ego
    unary always included; no goal term.
    """
    m, k = tables.unary.shape
    cost = np.zeros((k,) * m)
    for i in range(m):
        shape = [1] * m
        shape[i] = k
        cost = cost + tables.unary[i].reshape(shape)
    pairs = []
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            if 0 in (i, j):
                if ego_interaction == "both":
                    pairs.append((i, j))
            elif include_actor_actor:
                pairs.append((i, j))
    for i, j in pairs:
        shape = [1] * m
        shape[min(i, j)] = k
        shape[max(i, j)] = k
        block = tables.pairwise[i, j] if i < j else tables.pairwise[i, j].T
        cost = cost + block.reshape(shape)
    return cost


def straight_trajectory(start, heading, speed, steps=8, dt=0.5, start_time=0.0):
    """Constant-velocity straight-line trajectory."""
    direction = np.array([math.cos(heading), math.sin(heading)])
    pts = np.asarray(start, dtype=float) + \
        np.arange(steps)[:, None] * speed * dt * direction
    poses = np.column_stack([pts, np.full(steps, heading)])
    return Trajectory(start_time=start_time, dt=dt, poses=poses,
                      speeds=np.full(steps, float(speed)))


def stationary_trajectory(point, heading=0.0, steps=8, dt=0.5):
    poses = np.tile([point[0], point[1], heading], (steps, 1))
    return Trajectory(start_time=0.0, dt=dt, poses=poses, speeds=np.zeros(steps))


def random_box(rng, half_max=0.5, span=1.5) -> OrientedBox:
    center = Pose2(rng.uniform(-span, span), rng.uniform(-span, span),
                   rng.uniform(-math.pi, math.pi))
    return OrientedBox(center=center,
                       half_length=rng.uniform(0.1, half_max),
                       half_width=rng.uniform(0.1, half_max))


def random_scene(rng, n_actors=2, k=3, steps=6, dt=0.5):
    """Random candidate sets plus feature/interaction context for table tests."""
    candidates = []
    boxes = []
    lanes = []
    refs = []
    for _ in range(n_actors + 1):
        pose = Pose2(rng.uniform(-10, 10), rng.uniform(-10, 10),
                     rng.uniform(-math.pi, math.pi))
        state = KinematicState(pose=pose, speed=rng.uniform(0, 10))
        cfg = SamplerConfig(k=k, horizon_steps=steps, dt=dt,
                            seed=int(rng.integers(0, 2 ** 31)))
        candidates.append(sample_candidates(state, cfg))
        boxes.append(BoxDims(rng.uniform(1.5, 2.5), rng.uniform(0.7, 1.1)))
        origin = np.array([pose.x, pose.y]) + rng.normal(0, 2.0, size=2)
        direction = np.array([math.cos(pose.heading), math.sin(pose.heading)])
        lanes.append(Polyline([origin - 30 * direction, origin + 60 * direction]))
        refs.append(rng.uniform(3, 10))
    return candidates, boxes, lanes, refs
