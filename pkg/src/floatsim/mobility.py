"""Node mobility: synthetic Manhattan trajectories, trace ingestion,
pairwise contact detection, and per-link per-interval mobility features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_seed
from .roadnet import DEFAULT_SNAP_M, RoadGrid, link_of_many

KMH = 1.0 / 3.6  # km/h expressed in m/s


class TraceParseError(ValueError):
    pass


class EmptyTraceError(ValueError):
    pass


class IntervalRangeError(ValueError):
    """Interval partition exceeds the trajectory horizon."""


@dataclass
class SpeedModel:
    """Node speed distribution in m/s: constant or uniform(low, high)."""
    kind: str                 # "constant" | "uniform"
    low: float
    high: float = 0.0

    @classmethod
    def constant(cls, v: float) -> "SpeedModel":
        return cls("constant", v)

    @classmethod
    def uniform(cls, low: float, high: float) -> "SpeedModel":
        return cls("uniform", low, high)

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.low
        return float(rng.uniform(self.low, self.high))


@dataclass
class NodeTrack:
    """One contiguous presence episode of a node, sampled at every tick."""
    node: int
    enter_tick: int
    pos: np.ndarray      # (n, 2)
    speed: np.ndarray    # (n,)
    link: np.ndarray     # (n,) int

    @property
    def exit_tick(self) -> int:
        return self.enter_tick + len(self.pos) - 1

    def ticks(self) -> np.ndarray:
        return np.arange(self.enter_tick, self.enter_tick + len(self.pos))


@dataclass
class TrajectorySet:
    tick: float
    horizon: int                      # number of ticks covered: ticks 0..horizon-1
    tracks: list[NodeTrack] = field(default_factory=list)
    dropped_samples: int = 0          # off-grid samples discarded on ingestion

    @property
    def num_tracks(self) -> int:
        return len(self.tracks)

    @property
    def duration(self) -> float:
        return self.horizon * self.tick


@dataclass
class ContactEvent:
    """Maximal run of ticks during which a track pair stays within range."""
    i: int               # track index, i < j
    j: int
    start: int           # tick (inclusive)
    end: int             # tick (inclusive)
    dist: np.ndarray     # (end - start + 1,) meters

    @property
    def num_ticks(self) -> int:
        return self.end - self.start + 1


@dataclass
class MobilityFeatures:
    """Per-(link, interval) aggregates: mean node count, mean concurrent
    contacts per node, mean contact duration, mean speed."""
    n: np.ndarray        # (L, T)
    lam: np.ndarray      # (L, T)
    tau: np.ndarray      # (L, T) seconds
    nu: np.ndarray       # (L, T) m/s
    empty: np.ndarray    # (L, T) bool: no node sample in the cell
    d_t: np.ndarray      # (T,) interval durations, seconds

    @property
    def shape(self) -> tuple[int, int]:
        return self.n.shape


def interval_ticks(d_t, tick: float) -> np.ndarray:
    """Number of ticks in each interval; durations must be tick multiples."""
    d_t = np.asarray(d_t, dtype=float)
    if np.any(d_t <= 0):
        raise ValueError("interval durations must be positive")
    nt = np.rint(d_t / tick).astype(int)
    if not np.allclose(nt * tick, d_t, rtol=0, atol=1e-9):
        raise ValueError("interval durations must be whole multiples of the tick")
    return nt


def interval_of_tick(d_t, tick: float, horizon: int) -> np.ndarray:
    """Map tick index -> interval index (-1 beyond the partition)."""
    nt = interval_ticks(d_t, tick)
    total = int(nt.sum())
    if total > horizon:
        raise IntervalRangeError(
            f"interval partition covers {total} ticks but trajectory has {horizon}")
    out = np.full(horizon, -1, dtype=np.int64)
    pos = 0
    for t, n in enumerate(nt):
        out[pos:pos + n] = t
        pos += n
    return out


# ---------------------------------------------------------------------------
# synthetic Manhattan mobility
# ---------------------------------------------------------------------------

def _walk_route(grid: RoadGrid, stub_id: int, rng: np.random.Generator,
                max_hops: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Random walk from a border stub to any border exit.

    Returns the route as polyline vertices (k, 2) plus the link id of each
    segment.  At each interior intersection the next link is drawn uniformly
    among the incident links other than the one just travelled (straight,
    right or left); the incoming link is reused only at a dead end.
    """
    inter = grid.intersections
    stub = grid.links[stub_id]
    # border endpoint = the stub endpoint that is not an intersection
    d1 = np.min(np.linalg.norm(inter - np.array(stub.p1), axis=1)) if len(inter) else 1.0
    entry, inner = (stub.p2, stub.p1) if d1 < 1e-9 else (stub.p1, stub.p2)

    points = [entry, inner]
    seg_links = [stub_id]
    cur_link = stub_id
    for _ in range(max_hops):
        # locate the intersection at the current inner endpoint
        here = np.array(points[-1])
        k = int(np.argmin(np.linalg.norm(inter - here, axis=1)))
        if np.linalg.norm(inter[k] - here) > 1e-9:
            break  # reached a border point: exit
        options = [lid for lid in grid.adjacency[k] if lid != cur_link]
        if not options:
            options = [cur_link]  # dead end: U-turn allowed
        nxt = options[int(rng.integers(len(options)))]
        ln = grid.links[nxt]
        far = ln.p2 if np.allclose(ln.p1, points[-1]) else ln.p1
        points.append(far)
        seg_links.append(nxt)
        cur_link = nxt
    return np.array(points, dtype=float), np.array(seg_links, dtype=np.int64)


def simulate_manhattan(grid: RoadGrid, arrival_rate: float, speed_model: SpeedModel,
                       duration: float, seed: int, tick: float = 1.0,
                       warmup_s: float = 0.0) -> TrajectorySet:
    """Poisson arrivals at every border stub, random-turn walks along link
    center lines, exit at the border.  Deterministic given the seed.

    With warmup_s > 0, arrivals start warmup_s seconds before tick 0 and the
    warm-up ticks are discarded, so tick 0 sees steady-state occupancy.
    """
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be >= 0")
    if duration <= 0:
        raise ValueError("duration must be positive")
    if warmup_s < 0:
        raise ValueError("warmup must be >= 0")

    horizon = int(round(duration / tick))
    w_ticks = int(round(warmup_s / tick))
    window = warmup_s + duration
    stubs = [ln.id for ln in grid.links if ln.is_border_stub]
    arrivals: list[tuple[float, int]] = []
    for sid in stubs:
        rng = np.random.default_rng(derive_seed(seed, 101, sid))
        t = 0.0
        if arrival_rate > 0:
            while True:
                t += rng.exponential(1.0 / arrival_rate)
                if t >= window:
                    break
                arrivals.append((t, sid))
    arrivals.sort()

    traj = TrajectorySet(tick=tick, horizon=horizon)
    for node_id, (t0, sid) in enumerate(arrivals):
        rng = np.random.default_rng(derive_seed(seed, 202, node_id))
        speed = speed_model.draw(rng)
        points, seg_links = _walk_route(grid, sid, rng)
        seg_len = np.linalg.norm(np.diff(points, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = cum[-1]
        t_exit = t0 + total / speed
        k0 = max(math.ceil(t0 / tick - 1e-9), w_ticks)
        k1 = min(math.floor(t_exit / tick + 1e-9), w_ticks + horizon - 1)
        if k1 < k0:
            continue
        ticks = np.arange(k0, k1 + 1)
        dist = np.minimum((ticks * tick - t0) * speed, total)
        seg = np.minimum(np.searchsorted(cum, dist, side="right") - 1, len(seg_len) - 1)
        frac = (dist - cum[seg]) / seg_len[seg]
        pos = points[seg] + frac[:, None] * (points[seg + 1] - points[seg])
        traj.tracks.append(NodeTrack(
            node=node_id, enter_tick=int(k0) - w_ticks, pos=pos,
            speed=np.full(len(ticks), speed), link=seg_links[seg]))
    return traj


# ---------------------------------------------------------------------------
# trace ingestion
# ---------------------------------------------------------------------------

def load_traces(path, grid: RoadGrid, tick: float = 1.0,
                eps_snap: float = DEFAULT_SNAP_M) -> TrajectorySet:
    """Load a `t,node_id,x,y[,speed]` CSV, resample every node to the tick
    grid by linear interpolation and snap samples to links.

    Samples farther than eps_snap from every link are dropped (counted in
    `dropped_samples`); a dropped sample splits the node's presence into
    separate episodes.
    """
    by_node: dict[int, list[tuple[float, float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTraceError(f"{path}: empty trace file")
        cols = [h.strip().lower() for h in header]
        if cols[:4] != ["t", "node_id", "x", "y"]:
            raise TraceParseError(f"{path}:1: header must start with t,node_id,x,y")
        has_speed = len(cols) > 4 and cols[4] == "speed"
        n_rows = 0
        for ln_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t = float(row[0])
                node = int(row[1])
                x = float(row[2])
                y = float(row[3])
                sp = float(row[4]) if has_speed and len(row) > 4 and row[4] != "" else math.nan
            except (ValueError, IndexError) as exc:
                raise TraceParseError(f"{path}:{ln_no}: malformed row: {exc}") from exc
            samples = by_node.setdefault(node, [])
            if samples and t < samples[-1][0]:
                raise TraceParseError(f"{path}:{ln_no}: timestamps decrease for node {node}")
            samples.append((t, x, y, sp))
            n_rows += 1
    if n_rows == 0:
        raise EmptyTraceError(f"{path}: no data rows")

    t_max = max(s[-1][0] for s in by_node.values())
    horizon = int(math.floor(t_max / tick + 1e-9)) + 1
    traj = TrajectorySet(tick=tick, horizon=horizon)
    for node in sorted(by_node):
        rows = by_node[node]
        ts = np.array([r[0] for r in rows])
        xs = np.array([r[1] for r in rows])
        ys = np.array([r[2] for r in rows])
        sp = np.array([r[3] for r in rows])
        k0 = math.ceil(ts[0] / tick - 1e-9)
        k1 = math.floor(ts[-1] / tick + 1e-9)
        if k1 < k0:
            continue
        ticks = np.arange(k0, k1 + 1)
        tgrid = ticks * tick
        x = np.interp(tgrid, ts, xs)
        y = np.interp(tgrid, ts, ys)
        if np.all(np.isnan(sp)):
            if len(tgrid) > 1:
                v = np.hypot(np.gradient(x, tgrid), np.gradient(y, tgrid))
            else:
                v = np.zeros(1)
        else:
            v = np.interp(tgrid, ts[~np.isnan(sp)], sp[~np.isnan(sp)])
        pos = np.stack([x, y], axis=1)
        links = link_of_many(grid, pos, eps_snap)
        on = links >= 0
        traj.dropped_samples += int((~on).sum())
        # split into contiguous on-grid episodes
        idx = np.nonzero(on)[0]
        if idx.size == 0:
            continue
        breaks = np.nonzero(np.diff(idx) > 1)[0]
        for chunk in np.split(idx, breaks + 1):
            traj.tracks.append(NodeTrack(
                node=node, enter_tick=int(ticks[chunk[0]]),
                pos=pos[chunk], speed=v[chunk], link=links[chunk]))
    return traj


# ---------------------------------------------------------------------------
# contacts
# ---------------------------------------------------------------------------

def _presence_index(traj: TrajectorySet) -> list[np.ndarray]:
    """Per tick: array of track indices present."""
    per_tick: list[list[int]] = [[] for _ in range(traj.horizon)]
    for ti, tr in enumerate(traj.tracks):
        e = min(tr.exit_tick, traj.horizon - 1)
        for k in range(tr.enter_tick, e + 1):
            per_tick[k].append(ti)
    return [np.array(v, dtype=np.int64) for v in per_tick]


def detect_contacts(traj: TrajectorySet, r: float) -> list[ContactEvent]:
    """All maximal in-range episodes between unordered track pairs."""
    if r <= 0:
        raise ValueError("contact radius must be positive")
    present = _presence_index(traj)
    # per-pair sparse record: pair -> (list of ticks, list of distances)
    open_runs: dict[tuple[int, int], list] = {}
    events: list[ContactEvent] = []

    def close(pair, run):
        ticks, dists = run
        events.append(ContactEvent(pair[0], pair[1], ticks[0], ticks[-1],
                                   np.array(dists)))

    for k in range(traj.horizon):
        ids = present[k]
        live: set[tuple[int, int]] = set()
        if len(ids) >= 2:
            pos = np.stack([traj.tracks[ti].pos[k - traj.tracks[ti].enter_tick] for ti in ids])
            diff = pos[:, None, :] - pos[None, :, :]
            dm = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            iu, ju = np.triu_indices(len(ids), k=1)
            hit = dm[iu, ju] <= r
            for a, b, d in zip(iu[hit], ju[hit], dm[iu, ju][hit]):
                ta, tb = int(ids[a]), int(ids[b])
                pair = (ta, tb) if ta < tb else (tb, ta)
                live.add(pair)
                run = open_runs.get(pair)
                if run is not None and run[0][-1] == k - 1:
                    run[0].append(k)
                    run[1].append(float(d))
                else:
                    if run is not None:
                        close(pair, run)
                    open_runs[pair] = [[k], [float(d)]]
        stale = [p for p, run in open_runs.items() if run[0][-1] < k and p not in live]
        for p in stale:
            close(p, open_runs.pop(p))
    for p in sorted(open_runs):
        close(p, open_runs.pop(p))
    events.sort(key=lambda e: (e.start, e.i, e.j))
    return events


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def mobility_features(traj: TrajectorySet, contacts: list[ContactEvent],
                      grid: RoadGrid, d_t) -> MobilityFeatures:
    """Table-1 style aggregates per (link, interval).

    n: time-averaged node count; nu: mean sampled speed; lam: mean number of
    concurrent contacts over node samples; tau: mean duration of contacts
    attributed to the link where each endpoint sits at contact start.
    """
    L = grid.num_links
    ivl = interval_of_tick(d_t, traj.tick, traj.horizon)
    T = int(ivl.max()) + 1 if ivl.size else 0
    nt = interval_ticks(d_t, traj.tick)

    count = np.zeros((L, T))
    speed_sum = np.zeros((L, T))
    lam_sum = np.zeros((L, T))
    tau_sum = np.zeros((L, T))
    tau_cnt = np.zeros((L, T))

    # per-track concurrent contact counts
    degree = [np.zeros(len(tr.pos), dtype=np.int32) for tr in traj.tracks]
    for ev in contacts:
        for ti in (ev.i, ev.j):
            tr = traj.tracks[ti]
            degree[ti][ev.start - tr.enter_tick:ev.end - tr.enter_tick + 1] += 1

    for ti, tr in enumerate(traj.tracks):
        ticks = tr.ticks()
        ok = (ticks < len(ivl))
        iv = ivl[ticks[ok]]
        keep = iv >= 0
        lk = tr.link[ok][keep]
        iv = iv[keep]
        np.add.at(count, (lk, iv), 1.0)
        np.add.at(speed_sum, (lk, iv), tr.speed[ok][keep])
        np.add.at(lam_sum, (lk, iv), degree[ti][ok][keep].astype(float))

    for ev in contacts:
        if ev.start >= len(ivl) or ivl[ev.start] < 0:
            continue
        iv = ivl[ev.start]
        dur = ev.num_ticks * traj.tick
        for ti in (ev.i, ev.j):
            tr = traj.tracks[ti]
            tau_sum[tr.link[ev.start - tr.enter_tick], iv] += dur
            tau_cnt[tr.link[ev.start - tr.enter_tick], iv] += 1.0

    nonzero = count > 0
    n = count / nt[None, :]
    nu = np.where(nonzero, speed_sum / np.maximum(count, 1.0), 0.0)
    lam = np.where(nonzero, lam_sum / np.maximum(count, 1.0), 0.0)
    tau = np.where(tau_cnt > 0, tau_sum / np.maximum(tau_cnt, 1.0), 0.0)
    return MobilityFeatures(n=n, lam=lam, tau=tau, nu=nu, empty=~nonzero,
                            d_t=np.asarray(d_t, dtype=float))
