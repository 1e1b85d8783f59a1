"""Master/slave keyframe streaming and the merge trigger.

Slaves push keyframes, poses and clouds over a channel.  The master keeps
a bounded buffer per agent, merges each agent pair once at the first usable
loop closure and chains pairwise merges into one frame.
"""
from __future__ import annotations

import enum
import json
import queue
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CyclicMerge, DisconnectedAgents, MapMergeError, SessionTimeout
from .geometry import SE3, FrameId, Sim3, compose, inverse
from .loops import PairMatcher, find_trigger
from .pipeline import PipelineParams, merge_pair
from .registration import apply_merge
from .scene import AgentTrack, Keyframe


class BusMode(enum.Enum):
    CENTRALIZED = "centralized"
    DISTRIBUTED = "distributed"


# ----------------------------------------------------------------------------
# messages
# ----------------------------------------------------------------------------

@dataclass
class Hello:
    agent: str
    local_scale: float = 1.0


@dataclass
class Bye:
    agent: str


@dataclass
class KeyframeMsg:
    keyframe: Keyframe


@dataclass
class PoseMsg:
    frame: FrameId
    pose: Sim3


@dataclass
class CloudMsg:
    frame: FrameId
    cloud: np.ndarray


def message_agent(msg):
    if isinstance(msg, (Hello, Bye)):
        return msg.agent
    if isinstance(msg, KeyframeMsg):
        return msg.keyframe.frame.agent
    return msg.frame.agent


# ----------------------------------------------------------------------------
# framing: MAGIC | version u8 | type u8 | payload length u32 | payload
# payload: meta length u32 | JSON meta | raw little-endian arrays listed in meta
# ----------------------------------------------------------------------------

MAGIC = b"MMRG"
WIRE_VERSION = 1
_HEADER = struct.Struct(">4sBBI")
_U32 = struct.Struct(">I")
_TYPES = {Hello: 1, Bye: 2, KeyframeMsg: 3, PoseMsg: 4, CloudMsg: 5}
_CLASSES = {v: k for k, v in _TYPES.items()}


class FramingError(MapMergeError, ValueError):
    pass


def _pack(meta, arrays):
    meta = dict(meta)
    meta["arrays"] = []
    blobs = []
    for name, a in arrays:
        a = np.ascontiguousarray(a)
        dt = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
        a = a.astype(dt)
        meta["arrays"].append({"name": name, "dtype": dt, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    head = json.dumps(meta, sort_keys=True).encode()
    return _U32.pack(len(head)) + head + b"".join(blobs)


def _unpack(payload):
    (n,) = _U32.unpack_from(payload, 0)
    meta = json.loads(payload[4:4 + n].decode())
    off = 4 + n
    arrays = {}
    for spec in meta["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        a = np.frombuffer(payload, dtype=dt, count=count, offset=off).reshape(spec["shape"])
        arrays[spec["name"]] = a.copy()
        off += count * dt.itemsize
    if off != len(payload):
        raise FramingError("trailing bytes in payload")
    return meta, arrays


def _pose_array(T):
    return np.concatenate([T.matrix()[:3].ravel(), [T.scale]])


def _pose_from(a):
    M = a[:12].reshape(3, 4)
    s = float(a[12])
    return Sim3(M[:, :3] / s, M[:, 3], s)


def encode(msg):
    kind = _TYPES.get(type(msg))
    if kind is None:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    if isinstance(msg, Hello):
        payload = _pack({"agent": msg.agent, "local_scale": msg.local_scale}, [])
    elif isinstance(msg, Bye):
        payload = _pack({"agent": msg.agent}, [])
    elif isinstance(msg, KeyframeMsg):
        kf = msg.keyframe
        payload = _pack({"agent": kf.frame.agent, "index": kf.index, "zone": kf.zone},
                        [("pose", _pose_array(kf.pose)), ("landmark_ids", kf.landmark_ids),
                         ("observations", kf.observations), ("descriptors", kf.descriptors),
                         ("cloud", kf.cloud)])
    elif isinstance(msg, PoseMsg):
        payload = _pack({"agent": msg.frame.agent, "index": msg.frame.index},
                        [("pose", _pose_array(msg.pose))])
    else:
        payload = _pack({"agent": msg.frame.agent, "index": msg.frame.index},
                        [("cloud", msg.cloud)])
    return _HEADER.pack(MAGIC, WIRE_VERSION, kind, len(payload)) + payload


def decode(buf):
    """Decode one record from the front of ``buf``; returns (message, bytes consumed)."""
    if len(buf) < _HEADER.size:
        raise FramingError("truncated header")
    magic, version, kind, n = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise FramingError(f"unsupported wire version {version}")
    if kind not in _CLASSES:
        raise FramingError(f"unknown message type {kind}")
    end = _HEADER.size + n
    if len(buf) < end:
        raise FramingError("truncated payload")
    meta, arr = _unpack(bytes(buf[_HEADER.size:end]))
    cls = _CLASSES[kind]
    if cls is Hello:
        msg = Hello(meta["agent"], float(meta["local_scale"]))
    elif cls is Bye:
        msg = Bye(meta["agent"])
    elif cls is KeyframeMsg:
        frame = FrameId(meta["agent"], int(meta["index"]))
        msg = KeyframeMsg(Keyframe(frame, _pose_from(arr["pose"]), int(meta["zone"]),
                                   arr["landmark_ids"], arr["observations"],
                                   arr["descriptors"], arr["cloud"]))
    elif cls is PoseMsg:
        msg = PoseMsg(FrameId(meta["agent"], int(meta["index"])), _pose_from(arr["pose"]))
    else:
        msg = CloudMsg(FrameId(meta["agent"], int(meta["index"])), arr["cloud"])
    return msg, end


class QueueChannel:
    """Ordered, reliable in-process channel carrying framed bytes."""

    def __init__(self):
        self._q = queue.Queue()

    def send(self, msg):
        self._q.put(encode(msg))

    def recv(self, timeout=None):
        try:
            data = self._q.get(timeout=timeout)
        except queue.Empty:
            return None
        msg, _ = decode(data)
        return msg


def agent_stream(track, with_clouds=True):
    """Messages one slave sends: hello, per keyframe (keyframe, pose, cloud), bye."""
    yield Hello(track.agent_id, track.local_scale)
    for kf in track.keyframes:
        # the cloud travels separately
        yield KeyframeMsg(replace(kf, cloud=np.zeros((0, 3))))
        yield PoseMsg(kf.frame, kf.pose)
        if with_clouds:
            yield CloudMsg(kf.frame, kf.cloud)
    yield Bye(track.agent_id)


# ----------------------------------------------------------------------------
# merge notices and chaining
# ----------------------------------------------------------------------------

@dataclass
class MergeNotice:
    source_agent: str
    target_agent: str
    sigma_scaling: Sim3       # source world -> merged frame
    final: Sim3               # target camera -> scaled source camera
    target_transform: Sim3    # target world -> merged frame
    loop_report: dict
    scale_report: dict
    trigger: tuple = ()       # (source index, target index) of the loop closure

    @property
    def relative(self):
        """Target world -> source world, in source units."""
        return compose(inverse(self.sigma_scaling), self.target_transform)

    @property
    def pair(self):
        return (self.source_agent, self.target_agent)


def chain_merges(notices, agents=None, root=None):
    """Agent world -> root world for every agent, composed breadth first.

    The root defaults to the lexicographically smallest agent.
    """
    names = set(agents or [])
    for n in notices:
        names.update(n.pair)
    if not names:
        return {}
    root = root or min(names)
    if root not in names:
        raise DisconnectedAgents(f"root {root} is not among the agents")
    seen_pairs = set()
    adj = {a: [] for a in names}
    for n in notices:
        key = frozenset(n.pair)
        if key in seen_pairs:
            raise CyclicMerge(f"pair {sorted(key)} merged twice")
        seen_pairs.add(key)
        rel = n.relative
        adj[n.source_agent].append((n.target_agent, rel))
        adj[n.target_agent].append((n.source_agent, inverse(rel)))
    out = {root: Sim3.identity()}
    todo = deque([root])
    visited_edges = 0
    while todo:
        a = todo.popleft()
        for b, T_ba in adj[a]:   # T_ba: b world -> a world
            if b in out:
                continue
            out[b] = compose(out[a], T_ba)
            visited_edges += 1
            todo.append(b)
    missing = sorted(names - set(out))
    if missing:
        raise DisconnectedAgents(f"agents {missing} are not connected to {root}")
    if len(seen_pairs) > visited_edges:
        raise CyclicMerge("merge graph has a cycle")
    return out


# ----------------------------------------------------------------------------
# session
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionParams:
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    buffer_size: int = 32
    summary_points: int = 64
    rate_hz: float | None = None        # None: replay as fast as possible
    timeout_s: float | None = None
    transcript_path: str | None = None


@dataclass
class SessionResult:
    mode: BusMode
    notices: list
    transforms: dict          # agent world -> common frame
    merged: object            # MergedMap
    timings: dict
    transcript: list

    def notice(self, a, b):
        for n in self.notices:
            if set(n.pair) == {a, b}:
                return n
        return None


def _summarize(kf, n):
    if len(kf.cloud) <= n:
        return kf
    idx = np.linspace(0, len(kf.cloud) - 1, n).round().astype(int)
    return replace(kf, cloud=kf.cloud[idx])


class _AgentBuffer:
    def __init__(self, agent, scale):
        self.agent = agent
        self.scale = scale
        self.keyframes = []     # complete keyframes in index order
        self.pending = {}       # index -> keyframe waiting for its cloud
        self.done = False

    def track(self):
        return AgentTrack(self.agent, list(self.keyframes), self.scale)


class Master:
    """Consumes messages, triggers one merge per agent pair."""

    def __init__(self, params, clock=time.perf_counter):
        self.params = params
        self.buffers = {}
        self.matchers = {}
        self.notices = []
        self.merged_pairs = set()
        self.timings = {}
        self.transcript = []
        self._clock = clock
        self._t0 = clock()
        self._seq = 0

    def log(self, event, **fields):
        rec = {"seq": self._seq, "wall": round(self._clock() - self._t0, 6), "event": event}
        rec.update(fields)
        self._seq += 1
        self.transcript.append(rec)

    def handle(self, msg):
        agent = message_agent(msg)
        idx = None if isinstance(msg, (Hello, Bye)) else (
            msg.keyframe.index if isinstance(msg, KeyframeMsg) else msg.frame.index)
        self.log("message", type=type(msg).__name__, agent=agent, index=idx)
        if isinstance(msg, Hello):
            self.buffers[agent] = _AgentBuffer(agent, msg.local_scale)
            return
        buf = self.buffers[agent]
        if isinstance(msg, Bye):
            buf.done = True
            return
        if isinstance(msg, KeyframeMsg):
            expected = len(buf.keyframes) + len(buf.pending)
            if idx != expected:
                raise MapMergeError(f"{agent}: keyframe {idx} arrived, expected {expected}")
            buf.pending[idx] = msg.keyframe
        elif isinstance(msg, PoseMsg):
            buf.pending[idx] = replace(buf.pending[idx], pose=msg.pose)
        else:
            kf = replace(buf.pending.pop(idx), cloud=np.asarray(msg.cloud, dtype=float))
            buf.keyframes.append(kf)
            self._evict(buf)
            self._check(agent)

    def complete_without_clouds(self):
        for buf in self.buffers.values():
            for idx in sorted(buf.pending):
                buf.keyframes.append(buf.pending.pop(idx))

    def _evict(self, buf):
        old = len(buf.keyframes) - self.params.buffer_size - 1
        if old >= 0:
            buf.keyframes[old] = _summarize(buf.keyframes[old], self.params.summary_points)

    def _check(self, agent):
        for other in sorted(self.buffers):
            if other == agent:
                continue
            s, t = sorted((agent, other))
            if (s, t) in self.merged_pairs:
                continue
            self._try_pair(s, t)

    def _try_pair(self, s, t):
        src, tgt = self.buffers[s].track(), self.buffers[t].track()
        key = (s, t)
        m = self.matchers.get(key)
        if m is None:
            m = self.matchers[key] = PairMatcher(src, tgt, self.params.pipeline.loop)
        m.source, m.target = src, tgt
        hit = find_trigger(src, tgt, matcher=m)
        if hit is None:
            return
        self.merged_pairs.add(key)
        res = merge_pair(src, tgt, self.params.pipeline, matcher=m, trigger=hit)
        for stage, sec in res.timings.items():
            self.timings[f"{s}-{t}/{stage}"] = sec
            self.log("stage", pair=[s, t], stage=stage, seconds=sec)
        notice = MergeNotice(s, t, res.sigma_scaling, res.final, res.target_transform,
                             res.loop_report(), res.scale_report(), hit[0].pair)
        self.notices.append(notice)
        self.log("merge_notice", pair=[s, t], trigger=list(notice.trigger),
                 loop_report=notice.loop_report, scale_report=notice.scale_report)


class _Reorder:
    """Releases complete per-keyframe message groups in (index, agent) order.

    Makes the master's processing order independent of how producer
    threads interleave on the channel.
    """

    def __init__(self, agents):
        self.agents = sorted(agents)
        self.groups = {a: deque() for a in self.agents}
        self.current = {a: [] for a in self.agents}
        self.finished = set()
        self.hellos = {}
        self.started = False

    def push(self, msg):
        a = message_agent(msg)
        if isinstance(msg, Hello):
            self.hellos[a] = msg
        elif isinstance(msg, Bye):
            if self.current[a]:
                self.groups[a].append(self.current[a])
                self.current[a] = []
            self.groups[a].append([msg])
            self.finished.add(a)
        else:
            if isinstance(msg, KeyframeMsg) and self.current[a]:
                self.groups[a].append(self.current[a])
                self.current[a] = []
            self.current[a].append(msg)

    def ready(self):
        """Round-robin release; waits while an active agent has nothing queued."""
        out = []
        if not self.started:
            if len(self.hellos) < len(self.agents):
                return out
            out = [self.hellos.pop(a) for a in self.agents]
            self.started = True
        while True:
            active = [a for a in self.agents if self.groups[a] or a not in self.finished]
            if not active or any(not self.groups[a] for a in active):
                return out
            for a in active:
                out.extend(self.groups[a].popleft())
            self.agents = [a for a in self.agents if self.groups[a] or a not in self.finished]


def _round_robin(tracks):
    streams = [list(agent_stream(t)) for t in sorted(tracks, key=lambda t: t.agent_id)]
    hellos = [s[0] for s in streams]
    bodies = [s[1:-1] for s in streams]
    byes = [s[-1] for s in streams]
    yield from hellos
    n = max(len(b) for b in bodies)
    for k in range(0, n, 3):
        for b in bodies:
            yield from b[k:k + 3]
    yield from byes


def run_session(scenario, mode=BusMode.CENTRALIZED, params=None):
    """Replay every agent's stream through a channel into the master."""
    params = params or SessionParams()
    mode = BusMode(mode)
    tracks = scenario.agents if hasattr(scenario, "agents") else list(scenario)
    if len(tracks) < 2:
        raise ValueError("a session needs at least two agents")
    master = Master(params)
    channel = QueueChannel()
    start = time.perf_counter()
    period = 1.0 / params.rate_hz if params.rate_hz else 0.0

    def expired():
        return params.timeout_s is not None and time.perf_counter() - start > params.timeout_s

    if mode is BusMode.CENTRALIZED:
        for msg in _round_robin(tracks):
            if period and isinstance(msg, KeyframeMsg):
                time.sleep(period)
            channel.send(msg)
            master.handle(channel.recv())
            if expired():
                raise SessionTimeout(f"no merge within {params.timeout_s} s")
    else:
        def produce(track):
            for msg in agent_stream(track):
                if period and isinstance(msg, KeyframeMsg):
                    time.sleep(period)
                channel.send(msg)

        threads = [threading.Thread(target=produce, args=(t,), daemon=True) for t in tracks]
        for th in threads:
            th.start()
        reorder = _Reorder([t.agent_id for t in tracks])
        byes = 0
        while byes < len(tracks):
            msg = channel.recv(timeout=1.0)
            if msg is None:
                if expired():
                    raise SessionTimeout(f"no merge within {params.timeout_s} s")
                continue
            byes += isinstance(msg, Bye)
            reorder.push(msg)
            for m in reorder.ready():
                master.handle(m)
            if expired():
                raise SessionTimeout(f"no merge within {params.timeout_s} s")
        for th in threads:
            th.join()
        for m in reorder.ready():
            master.handle(m)

    if not master.notices:
        raise SessionTimeout("the streams ended without any inter-agent loop closure")
    transforms = chain_merges(master.notices)
    full = {t.agent_id: t for t in tracks}
    order = sorted(transforms)
    merged = apply_merge([full[a] for a in order], [transforms[a] for a in order])
    if params.transcript_path:
        write_transcript(master.transcript, params.transcript_path)
    return SessionResult(mode, master.notices, transforms, merged, master.timings, master.transcript)


def write_transcript(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, default=float) + "\n")


def delivery_in_order(transcript):
    """True when every agent's keyframe messages reached the master in index order."""
    last = {}
    for r in transcript:
        if r.get("event") != "message" or r.get("type") != "KeyframeMsg":
            continue
        a, i = r["agent"], r["index"]
        if i != last.get(a, -1) + 1:
            return False
        last[a] = i
    return True
