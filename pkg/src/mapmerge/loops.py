"""Inter-agent loop closure detection, direction verdict and adjacent matching."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import BoundaryError, InsufficientMatches
from .geometry import FrameId


class DirectionVerdict(enum.Enum):
    SAME = "same"
    OPPOSITE = "opposite"


class PairingMode(enum.Enum):
    DIRECT = "direct"
    CROSSED = "crossed"


@dataclass(frozen=True)
class LoopParams:
    min_gamma: int = 8
    ratio: float = 0.8
    max_descriptor_distance: float = 0.7


@dataclass
class LoopClosure:
    source_frame: FrameId
    target_frame: FrameId
    source_idx: np.ndarray   # rows into the source keyframe's observations
    target_idx: np.ndarray
    source_obs: np.ndarray   # (gamma, 3)
    target_obs: np.ndarray   # (gamma, 3)

    @property
    def gamma(self):
        return len(self.source_idx)

    @property
    def pair(self):
        return (self.source_frame.index, self.target_frame.index)


@dataclass
class MatchTriple:
    matches: list            # LoopClosure for z = -1, 0, 1
    pairing_mode: PairingMode

    @property
    def center(self):
        return self.matches[1]

    @property
    def pairs(self):
        return [m.pair for m in self.matches]

    @property
    def gammas(self):
        return [m.gamma for m in self.matches]


def match_descriptors(desc_a, desc_b, ratio=0.8, max_distance=np.inf):
    """Mutual nearest neighbours that also pass a Lowe ratio test in both directions.

    Returns (idx_a, idx_b) integer arrays.
    """
    if len(desc_a) < 2 or len(desc_b) < 2:
        return np.zeros(0, int), np.zeros(0, int)
    D = cdist(desc_a, desc_b)
    ab = np.argsort(D, axis=1)[:, :2]
    ba = np.argsort(D, axis=0)[:2, :]
    ia = np.arange(len(desc_a))
    nn_ab = ab[:, 0]
    d1 = D[ia, nn_ab]
    mutual = ba[0, nn_ab] == ia
    ok_a = d1 < ratio * D[ia, ab[:, 1]]
    ok_b = D[ba[0, nn_ab], nn_ab] < ratio * D[ba[1, nn_ab], nn_ab]
    keep = mutual & ok_a & ok_b & (d1 <= max_distance)
    return ia[keep], nn_ab[keep]


class PairMatcher:
    """Caches keyframe-pair matching between two tracks."""

    def __init__(self, source, target, params=None):
        self.source = source
        self.target = target
        self.params = params or LoopParams()
        self._cache = {}

    def has(self, i, j):
        return 0 <= i < len(self.source) and 0 <= j < len(self.target)

    def match(self, i, j):
        key = (i, j)
        if key not in self._cache:
            ks, kt = self.source[i], self.target[j]
            ia, ib = match_descriptors(ks.descriptors, kt.descriptors, self.params.ratio,
                                       self.params.max_descriptor_distance)
            self._cache[key] = LoopClosure(ks.frame, kt.frame, ia, ib,
                                           ks.observations[ia], kt.observations[ib])
        return self._cache[key]

    def gamma(self, i, j):
        return self.match(i, j).gamma


def iter_loop_closures(source, target, params=None, matcher=None):
    """All qualifying pairs in canonical order (source index, then target index)."""
    m = matcher or PairMatcher(source, target, params)
    for i in range(len(source)):
        for j in range(len(target)):
            lc = m.match(i, j)
            if lc.gamma >= m.params.min_gamma:
                yield lc


def detect_first_loop(source, target, params=None, matcher=None):
    """Earliest qualifying keyframe pair, or None when the tracks never meet."""
    return next(iter_loop_closures(source, target, params, matcher), None)


def _require(m, pairs):
    for i, j in pairs:
        if not m.has(i, j):
            raise BoundaryError(f"keyframe pair ({i}, {j}) lies outside the tracks")


def determine_direction(source, target, lc, params=None, matcher=None):
    m = matcher or PairMatcher(source, target, params)
    i, j = lc.pair
    _require(m, [(i - 1, j - 1), (i + 1, j + 1)])
    same = m.gamma(i + 1, j + 1) + m.gamma(i - 1, j - 1)
    crossed = m.gamma(i + 1, j - 1) + m.gamma(i - 1, j + 1)
    return DirectionVerdict.SAME if same >= crossed else DirectionVerdict.OPPOSITE


def triple_pairs(i, j, verdict):
    if verdict is DirectionVerdict.SAME:
        return [(i + z, j + z) for z in (-1, 0, 1)]
    return [(i + z, j - z) for z in (-1, 0, 1)]


def build_match_triple(source, target, lc, verdict, params=None, matcher=None):
    m = matcher or PairMatcher(source, target, params)
    pairs = triple_pairs(*lc.pair, verdict)
    _require(m, pairs)
    matches = [m.match(a, b) for a, b in pairs]
    weak = [(p, mm.gamma) for p, mm in zip(pairs, matches) if mm.gamma < m.params.min_gamma]
    if weak:
        raise InsufficientMatches(f"adjacent pairs below min_gamma={m.params.min_gamma}: {weak}")
    mode = PairingMode.DIRECT if verdict is DirectionVerdict.SAME else PairingMode.CROSSED
    return MatchTriple(matches, mode)


def find_trigger(source, target, params=None, matcher=None):
    """First loop closure around which a full match triple can be assembled.

    Loop closures at the edge of the covisible stretch have no usable
    neighbours; those are skipped.  Returns (lc, verdict, triple) or None.
    """
    m = matcher or PairMatcher(source, target, params)
    for i in range(len(source)):
        found = [m.match(i, j) for j in range(len(target))]
        found = [lc for lc in found if lc.gamma >= m.params.min_gamma]
        # best place first, as a place recognizer would rank them
        found.sort(key=lambda lc: (-lc.gamma, lc.pair[1]))
        for lc in found:
            hit = _try_triple(source, target, lc, m)
            if hit is not None:
                return hit
    return None


def _try_triple(source, target, lc, m):
    try:
        verdict = determine_direction(source, target, lc, matcher=m)
        triple = build_match_triple(source, target, lc, verdict, matcher=m)
    except (BoundaryError, InsufficientMatches):
        return None
    return lc, verdict, triple


def loop_report(triple, verdict):
    return {
        "source_frame": str(triple.center.source_frame),
        "target_frame": str(triple.center.target_frame),
        "pairs": [list(p) for p in triple.pairs],
        "gammas": triple.gammas,
        "verdict": verdict.value,
        "pairing_mode": triple.pairing_mode.value,
    }
