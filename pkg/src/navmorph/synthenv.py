"""Continuous 2-D navigation arena with rectangular obstacles.

Scenes are generated deterministically from a seed.  A shortest-path teacher
plans on a visibility graph over the corners of obstacles inflated by a small
clearance and re-plans from wherever the agent currently is, so it can label
states the learner visits on its own.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from navmorph.errors import ConfigError, FormatError, UnreachableError, UsageError

ARENA = 10.0
N_RAYS = 16
RAY_CAP = 5.0
CLEARANCE = 0.15
GRID_RES = 0.1
N_LANDMARKS = 8
D_LANDMARK = 8
SPLITS = ("train_seen", "val_seen", "val_unseen")
_BACKOFF = 1e-9
_EPS = 1e-12

SHIFTS = {
    # shift -> (min rects, max rects, noise sigma)
    "seen": (2, 4, 0.02),
    "unseen": (5, 8, 0.08),
}


def obs_dim(n_rays: int = N_RAYS) -> int:
    return 4 + n_rays


# -- geometry ----------------------------------------------------------------

def segment_entry(p: np.ndarray, d: np.ndarray, rect) -> float | None:
    """Smallest ``t`` in [0, 1] at which ``p + t d`` enters the open interior of
    ``rect = (x0, y0, x1, y1)``, or None.  Grazing an edge is not entry."""
    lo, hi = 0.0, 1.0
    for axis in (0, 1):
        a, b = rect[axis], rect[axis + 2]
        if abs(d[axis]) < _EPS:
            if not a < p[axis] < b:
                return None
            continue
        t0, t1 = (a - p[axis]) / d[axis], (b - p[axis]) / d[axis]
        if t0 > t1:
            t0, t1 = t1, t0
        lo, hi = max(lo, t0), min(hi, t1)
        if lo >= hi:
            return None
    return lo


def ray_distance(p: np.ndarray, direction: np.ndarray, rects, cap: float = RAY_CAP) -> float:
    """Distance along a unit ``direction`` to the first obstacle or wall, capped."""
    best = cap
    for axis in (0, 1):
        if direction[axis] > _EPS:
            best = min(best, (ARENA - p[axis]) / direction[axis])
        elif direction[axis] < -_EPS:
            best = min(best, -p[axis] / direction[axis])
    d = direction * cap
    for r in rects:
        t = segment_entry(p, d, r)
        if t is not None:
            best = min(best, t * cap)
    return max(best, 0.0)


def inflate(rect, margin: float):
    return (rect[0] - margin, rect[1] - margin, rect[2] + margin, rect[3] + margin)


def inside(p, rect) -> bool:
    return rect[0] < p[0] < rect[2] and rect[1] < p[1] < rect[3]


def in_arena(p) -> bool:
    return 0.0 <= p[0] <= ARENA and 0.0 <= p[1] <= ARENA


# -- scenes ---------------------------------------------------------------------

@dataclass
class Scene:
    scene_seed: int
    shift: str
    obstacles: list
    noise_sigma: float
    landmarks: np.ndarray
    landmark_features: np.ndarray
    n_rays: int = N_RAYS
    _free_cells: list = field(default_factory=list, repr=False)
    _nodes: list = field(default_factory=list, repr=False)
    _node_edges: dict = field(default_factory=dict, repr=False)
    _goal_cache: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {"scene_seed": self.scene_seed, "shift": self.shift,
                "obstacles": [list(r) for r in self.obstacles],
                "noise_sigma": self.noise_sigma}

    def blocked(self, p) -> bool:
        return any(inside(p, r) for r in self.obstacles)

    # visibility-graph planning -------------------------------------------------
    def _planning_rects(self, origin=None):
        """Obstacles inflated by (just under) the clearance; those that contain
        ``origin`` revert to their raw outline so the agent can back out."""
        rects = []
        for r in self.obstacles:
            big = inflate(r, CLEARANCE * 0.999)
            rects.append(r if origin is not None and inside(origin, big) else big)
        return rects

    def _clear(self, a, b, rects) -> bool:
        a = np.asarray(a, dtype=np.float64)
        d = np.asarray(b, dtype=np.float64) - a
        return all(segment_entry(a, d, r) is None for r in rects)

    def _build_graph(self) -> None:
        if self._nodes:
            return
        big = [inflate(r, CLEARANCE) for r in self.obstacles]
        nodes = []
        for r in big:
            for x in (r[0], r[2]):
                for y in (r[1], r[3]):
                    p = (x, y)
                    if in_arena(p) and not any(inside(p, o) for o in big):
                        nodes.append(np.array(p))
        rects = self._planning_rects()
        edges = {i: [] for i in range(len(nodes))}
        for i in range(len(nodes)):
            for j in range(i + 1, len(nodes)):
                if self._clear(nodes[i], nodes[j], rects):
                    w = float(np.linalg.norm(nodes[i] - nodes[j]))
                    edges[i].append((j, w))
                    edges[j].append((i, w))
        self._nodes, self._node_edges = nodes, edges

    def _goal_distances(self, goal) -> list:
        """Shortest distances from every graph node to ``goal`` (Dijkstra)."""
        key = (float(goal[0]), float(goal[1]))
        if key in self._goal_cache:
            return self._goal_cache[key]
        self._build_graph()
        rects = self._planning_rects(goal)
        dist = [math.inf] * len(self._nodes)
        heap = []
        for i, n in enumerate(self._nodes):
            if self._clear(n, goal, rects):
                dist[i] = float(np.linalg.norm(n - goal))
                heap.append((dist[i], i))
        heapq.heapify(heap)
        while heap:
            d, i = heapq.heappop(heap)
            if d > dist[i]:
                continue
            for j, w in self._node_edges[i]:
                if d + w < dist[j]:
                    dist[j] = d + w
                    heapq.heappush(heap, (dist[j], j))
        self._goal_cache[key] = dist
        return dist

    def plan(self, position, goal) -> tuple[float, np.ndarray]:
        """Shortest obstacle-avoiding distance to ``goal`` and the next waypoint."""
        position = np.asarray(position, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        rects = self._planning_rects(position)
        if self._clear(position, goal, rects):
            return float(np.linalg.norm(goal - position)), goal
        dist = self._goal_distances(goal)
        best, target = math.inf, None
        for i, n in enumerate(self._nodes):
            if dist[i] == math.inf:
                continue
            total = float(np.linalg.norm(n - position)) + dist[i]
            if total < best and self._clear(position, n, rects):
                best, target = total, n
        if target is None:
            raise UnreachableError(f"goal {goal.tolist()} unreachable from {position.tolist()}")
        return best, target


def _occupancy(obstacles) -> np.ndarray:
    n = int(round(ARENA / GRID_RES))
    centers = (np.arange(n) + 0.5) * GRID_RES
    xs, ys = np.meshgrid(centers, centers, indexing="ij")
    occ = np.zeros((n, n), dtype=bool)
    for r in obstacles:
        x0, y0, x1, y1 = inflate(r, CLEARANCE)
        occ |= (xs > x0) & (xs < x1) & (ys > y0) & (ys < y1)
    return occ


def largest_free_component(occ: np.ndarray) -> list[tuple[int, int]]:
    """Cells of the largest 4-connected free region of an occupancy grid."""
    n, m = occ.shape
    seen = occ.copy()
    best: list = []
    for i0 in range(n):
        for j0 in range(m):
            if seen[i0, j0]:
                continue
            comp = [(i0, j0)]
            seen[i0, j0] = True
            queue = deque(comp)
            while queue:
                i, j = queue.popleft()
                for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                    if 0 <= a < n and 0 <= b < m and not seen[a, b]:
                        seen[a, b] = True
                        comp.append((a, b))
                        queue.append((a, b))
            if len(comp) > len(best):
                best = comp
    return best


def generate_scene(scene_seed: int, shift: str = "seen", max_attempts: int = 100) -> Scene:
    """Deterministic scene for ``(scene_seed, shift)``.  Layouts whose largest
    free region holds under 85% of the free cells are redrawn with the next
    sub-seed."""
    if shift not in SHIFTS:
        raise ConfigError(f"unknown shift {shift!r}; expected one of {sorted(SHIFTS)}")
    lo, hi, sigma = SHIFTS[shift]
    for sub in range(max_attempts):
        rng = np.random.default_rng([scene_seed, 0 if shift == "seen" else 1, sub])
        obstacles = []
        for _ in range(int(rng.integers(lo, hi + 1))):
            w, h = rng.uniform(0.6, 2.0, size=2)
            x0 = rng.uniform(0.0, ARENA - w)
            y0 = rng.uniform(0.0, ARENA - h)
            obstacles.append((float(x0), float(y0), float(x0 + w), float(y0 + h)))
        occ = _occupancy(obstacles)
        comp = largest_free_component(occ)
        free = int((~occ).sum())
        if not comp or len(comp) < 0.85 * free:
            continue
        landmarks = []
        while len(landmarks) < N_LANDMARKS:
            i, j = comp[int(rng.integers(len(comp)))]
            landmarks.append(((i + 0.5) * GRID_RES, (j + 0.5) * GRID_RES))
        return Scene(
            scene_seed, shift, obstacles, sigma,
            np.array(landmarks), rng.standard_normal((N_LANDMARKS, D_LANDMARK)),
            _free_cells=comp,
        )
    raise UnreachableError(f"no feasible layout for scene seed {scene_seed} after {max_attempts} attempts")


# -- episodes -------------------------------------------------------------------

@dataclass
class Episode:
    episode_id: str
    scene: Scene
    start: np.ndarray
    goal: np.ndarray
    max_steps: int = 50
    success_radius: float = 0.5
    max_step_len: float = 0.25
    shortest_path_length: float = 0.0
    reference: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"episode_id": self.episode_id, "scene_seed": self.scene.scene_seed,
                "shift": self.scene.shift, "start": self.start.tolist(),
                "goal": self.goal.tolist()}


@dataclass
class EpisodeState:
    episode: Episode
    position: np.ndarray
    rng: np.random.Generator
    steps: int = 0
    done: bool = False
    heading: float = 0.0
    path: list = field(default_factory=list)


def clip_action(delta, max_len: float) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(delta)):
        raise UsageError(f"action must be finite, got {delta.tolist()}")
    norm = math.hypot(delta[0], delta[1])
    if norm > max_len:
        delta = delta * (max_len / norm)
    return delta


def move(scene: Scene, position: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Translate by ``delta``, stopping just short of the first obstacle or
    wall contact (no sliding)."""
    norm = math.hypot(delta[0], delta[1])
    if norm == 0.0:
        return position.copy()
    t_stop = 1.0
    for r in scene.obstacles:
        t = segment_entry(position, delta, r)
        if t is not None:
            t_stop = min(t_stop, t)
    for axis in (0, 1):
        if delta[axis] > 0:
            t_stop = min(t_stop, (ARENA - position[axis]) / delta[axis])
        elif delta[axis] < 0:
            t_stop = min(t_stop, -position[axis] / delta[axis])
    if t_stop < 1.0:
        t_stop = max(0.0, t_stop - _BACKOFF / norm)
    return position + t_stop * delta


def observe(state: EpisodeState) -> np.ndarray:
    ep, p = state.episode, state.position
    offset = ep.goal - p
    dist = math.hypot(offset[0], offset[1])
    angles = 2 * math.pi * np.arange(ep.scene.n_rays) / ep.scene.n_rays
    rays = np.array([
        ray_distance(p, np.array([math.cos(a), math.sin(a)]), ep.scene.obstacles) for a in angles
    ]) / RAY_CAP
    rays = rays + state.rng.normal(0.0, ep.scene.noise_sigma, size=rays.shape) \
        if ep.scene.noise_sigma > 0 else rays
    head = [offset[0] / max(dist, 1.0), offset[1] / max(dist, 1.0), dist / ARENA,
            state.heading / math.pi]
    return np.concatenate([head, rays])


def reset(episode: Episode, rng: np.random.Generator) -> tuple[EpisodeState, np.ndarray]:
    state = EpisodeState(episode, episode.start.copy(), rng)
    state.path.append(state.position.copy())
    return state, observe(state)


def step(state: EpisodeState, delta) -> tuple[np.ndarray, np.ndarray, bool]:
    if state.done:
        raise UsageError("episode already finished")
    ep = state.episode
    delta = clip_action(delta, ep.max_step_len)
    new = move(ep.scene, state.position, delta)
    moved = new - state.position
    if math.hypot(moved[0], moved[1]) > 0:
        state.heading = math.atan2(moved[1], moved[0])
    state.position = new
    state.path.append(new.copy())
    state.steps += 1
    reached = math.hypot(*(ep.goal - new)) <= ep.success_radius
    state.done = reached or state.steps >= ep.max_steps
    return new.copy(), observe(state), state.done


def teacher_action(position, episode: Episode) -> np.ndarray:
    """One bounded step along the shortest path from ``position`` to the goal."""
    position = np.asarray(position, dtype=np.float64)
    if np.allclose(position, episode.goal, atol=0.0, rtol=0.0):
        return np.zeros(2)
    _, target = episode.scene.plan(position, episode.goal)
    delta = target - position
    norm = math.hypot(delta[0], delta[1])
    if norm > episode.max_step_len:
        delta = delta * (episode.max_step_len / norm)
    return delta


def teacher_rollout(episode: Episode) -> np.ndarray:
    """Noise-free positions visited when always executing the teacher action."""
    state = EpisodeState(episode, episode.start.copy(), np.random.default_rng(0))
    pts = [state.position.copy()]
    while True:
        a = teacher_action(state.position, episode)
        new = move(episode.scene, state.position, clip_action(a, episode.max_step_len))
        state.position = new
        state.steps += 1
        pts.append(new.copy())
        if math.hypot(*(episode.goal - new)) <= episode.success_radius or state.steps >= episode.max_steps:
            break
    return np.array(pts)


def make_episode(scene: Scene, start, goal, episode_id: str = "", **kw) -> Episode:
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if np.array_equal(start, goal):
        raise UsageError("start and goal coincide")
    ep = Episode(episode_id, scene, start, goal, **kw)
    ep.shortest_path_length = scene.plan(start, goal)[0]
    ep.reference = teacher_rollout(ep)
    return ep


def sample_episodes(scene: Scene, n: int, rng: np.random.Generator, prefix: str,
                    min_len: float = 2.0, max_len: float = 9.0,
                    max_tries: int = 1000) -> list[Episode]:
    """Draw ``n`` start/goal pairs from the scene's main free region whose
    shortest path lies in [min_len, max_len] and that the teacher solves."""
    cells = scene._free_cells
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        a, b = (cells[int(i)] for i in rng.integers(len(cells), size=2))
        start = np.array([(a[0] + 0.5) * GRID_RES, (a[1] + 0.5) * GRID_RES])
        goal = np.array([(b[0] + 0.5) * GRID_RES, (b[1] + 0.5) * GRID_RES])
        if np.array_equal(start, goal):
            continue
        try:
            length = scene.plan(start, goal)[0]
        except UnreachableError:
            continue
        if not min_len <= length <= max_len:
            continue
        ep = make_episode(scene, start, goal, f"{prefix}-{len(out)}")
        if math.hypot(*(ep.reference[-1] - goal)) <= ep.success_radius:
            out.append(ep)
    if len(out) < n:
        raise UnreachableError(f"scene {scene.scene_seed}: only {len(out)} of {n} episodes found")
    return out


# -- manifests ------------------------------------------------------------------

MANIFEST_FORMAT = "navmorph-manifest-v1"


@dataclass
class Manifest:
    splits: dict

    def episodes(self, split: str) -> list[Episode]:
        if split not in self.splits:
            raise ConfigError(f"unknown split {split!r}; available: {sorted(self.splits)}")
        rows = self.splits[split]
        if not rows:
            raise ConfigError(f"split {split!r} is empty")
        scenes: dict = {}
        out = []
        for row in rows:
            key = (row["scene_seed"], row["shift"])
            if key not in scenes:
                scenes[key] = generate_scene(*key)
            out.append(make_episode(scenes[key], row["start"], row["goal"], row["episode_id"]))
        return out

    def dumps(self) -> str:
        return json.dumps({"format": MANIFEST_FORMAT, "splits": self.splits}, indent=1) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed manifest at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
            raise FormatError(f"not a {MANIFEST_FORMAT} document")
        return cls(doc["splits"])


def build_manifest(seed: int = 0, n_train: int = 300, n_val_seen: int = 50,
                   n_val_unseen: int = 50, per_scene: int = 10) -> Manifest:
    """Seen splits share one pool of scenes with disjoint start/goal draws;
    the unseen split uses denser, noisier scenes from separate seeds."""
    rng = np.random.default_rng([seed, 7])

    def rows(eps):
        return [e.to_json() for e in eps]

    def draw(scenes, n, split):
        eps = []
        for i in range(n):
            ep = sample_episodes(scenes[i % len(scenes)], 1, rng, split)[0]
            ep.episode_id = f"{split}-{i:04d}"
            eps.append(ep)
        return eps

    n_seen = max(1, math.ceil(n_train / per_scene))
    seen = [generate_scene(seed * 1000 + i, "seen") for i in range(n_seen)]
    n_unseen = max(1, math.ceil(n_val_unseen / per_scene))
    unseen = [generate_scene(seed * 1000 + 500 + i, "unseen") for i in range(n_unseen)]
    return Manifest({
        "train_seen": rows(draw(seen, n_train, "train_seen")),
        "val_seen": rows(draw(seen, n_val_seen, "val_seen")),
        "val_unseen": rows(draw(unseen, n_val_unseen, "val_unseen")),
    })
