"""Synthetic action trajectories built from a library of motion primitives.

A trajectory is a chain of segments. Segment ``s`` runs task phase
``s % n_phases`` (reach, grasp, carry, release, ...), and the rng picks one of
the primitive variants belonging to that phase. Each primitive is a
``seg_len x d_feature`` template of per-step deltas: the motion channels mix
smoothstep and minimum-jerk profiles with a constant drift, and the last
channel is a constant gripper command of +1 or -1, so gripper state is a
piecewise-constant schedule over the trajectory.

Because phases follow a fixed order, an action's content identifies where in
the trajectory it sits. The timestamp target is therefore learnable from the
action alone.
"""
from dataclasses import dataclass
import struct

import numpy as np

from .errors import FormatError, HistatError, ShapeError

DATA_MAGIC = b"HSTD"
DATA_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB")


def _min_jerk_pos(s):
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _min_jerk_vel(s):
    # peak 30/16 at s = 0.5
    return 30.0 * s * s * (1.0 - s) ** 2 / 1.875


def _smoothstep(s):
    return s * s * (3.0 - 2.0 * s)


def _smoothstep_vel(s):
    return 4.0 * s * (1.0 - s)


BASIS = (_min_jerk_pos, _min_jerk_vel, _smoothstep, _smoothstep_vel)


@dataclass
class PrimitiveLibrary:
    templates: np.ndarray  # (P, seg_len, d_feature)
    phases: np.ndarray  # (P,) phase id of each primitive
    seed: int

    @property
    def n_primitives(self):
        return self.templates.shape[0]

    @property
    def seg_len(self):
        return self.templates.shape[1]

    @property
    def d_feature(self):
        return self.templates.shape[2]

    @property
    def n_phases(self):
        return int(self.phases.max()) + 1 if self.phases.size else 0


def make_library(n_primitives=8, seg_len=16, d_feature=7, n_phases=4, seed=0):
    """Deterministically build ``n_primitives`` templates spread over ``n_phases`` phases."""
    if n_primitives < 2:
        raise HistatError("need at least 2 primitives")
    if d_feature < 2:
        raise HistatError("need at least one motion channel plus the gripper")
    if seg_len < 2:
        raise HistatError("seg_len must be at least 2")
    n_phases = max(1, min(n_phases, n_primitives))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    s = np.linspace(0.0, 1.0, seg_len)
    phases = np.arange(n_primitives) % n_phases
    # gripper opens and closes on alternating phases
    gripper = np.where(phases % 2 == 0, 1.0, -1.0)
    templates = np.zeros((n_primitives, seg_len, d_feature))
    for p in range(n_primitives):
        for d in range(d_feature - 1):
            shape = BASIS[rng.integers(len(BASIS))](s)
            amp = rng.uniform(-0.6, 0.6)
            drift = rng.uniform(-0.4, 0.4)
            templates[p, :, d] = amp * shape + drift
        templates[p, :, -1] = gripper[p]
    return PrimitiveLibrary(templates, phases, seed)


def gen_trajectory(lib, n_segments, noise_sigma, rng):
    """Chain ``n_segments`` primitives and add Gaussian noise to the motion channels.

    Returns:
        ``(trajectory, labels)``: a ``(n_segments * seg_len, d_feature)`` array
        and the primitive id of every step.
    """
    if lib.n_primitives == 0:
        raise HistatError("empty primitive library")
    if n_segments < 1:
        raise HistatError("n_segments must be >= 1")
    if noise_sigma < 0:
        raise HistatError("noise_sigma must be >= 0")
    ids = np.empty(n_segments, dtype=np.int64)
    for k in range(n_segments):
        options = np.flatnonzero(lib.phases == k % lib.n_phases)
        ids[k] = options[rng.integers(options.size)]
    traj = lib.templates[ids].reshape(n_segments * lib.seg_len, lib.d_feature).copy()
    if noise_sigma > 0:
        traj[:, :-1] += rng.normal(0.0, noise_sigma, size=(traj.shape[0], lib.d_feature - 1))
    labels = np.repeat(ids, lib.seg_len)
    return traj, labels


def normalize_timestamps(seq_len):
    """``k / (S - 1)`` for ``k = 0..S-1``."""
    if seq_len < 2:
        raise HistatError("sequence length must be at least 2")
    return np.arange(seq_len, dtype=np.float64) / (seq_len - 1)


@dataclass
class TrajectoryBatch:
    X: np.ndarray  # (B*S, d_feature)
    T: np.ndarray  # (B*S,)
    seq_len: int
    batch: int
    labels: np.ndarray = None  # (B*S,) or None

    def __post_init__(self):
        if self.X.shape[0] != self.batch * self.seq_len or self.T.shape != (self.X.shape[0],):
            raise ShapeError("trajectory batch arrays disagree with batch * seq_len")
        if self.labels is not None and self.labels.shape != (self.X.shape[0],):
            raise ShapeError("labels must have one entry per step")

    @property
    def d_feature(self):
        return self.X.shape[1]

    def take(self, traj_indices):
        """Sub-batch made of the given trajectories, in the given order."""
        traj_indices = np.asarray(traj_indices, dtype=np.int64)
        rows = (traj_indices[:, None] * self.seq_len + np.arange(self.seq_len)).reshape(-1)
        labels = None if self.labels is None else self.labels[rows]
        return TrajectoryBatch(self.X[rows], self.T[rows], self.seq_len, len(traj_indices), labels)


def generate_dataset(num_traj, seq_len=64, d_feature=7, seed=0, n_primitives=8, seg_len=16,
                     n_phases=4, noise_sigma=0.01, library_seed=0):
    """Generate ``num_traj`` trajectories; trajectory ``i`` uses its own rng stream.

    The library comes from ``library_seed`` so train and held-out corpora
    (different ``seed``) share the same primitives.
    """
    lib = make_library(n_primitives, seg_len, d_feature, n_phases, library_seed)
    n_segments = -(-seq_len // seg_len)
    streams = np.random.SeedSequence(seed).spawn(num_traj)
    X = np.empty((num_traj * seq_len, d_feature))
    labels = np.empty(num_traj * seq_len, dtype=np.int64)
    for i, ss in enumerate(streams):
        traj, lab = gen_trajectory(lib, n_segments, noise_sigma, np.random.default_rng(ss))
        X[i * seq_len : (i + 1) * seq_len] = traj[:seq_len]
        labels[i * seq_len : (i + 1) * seq_len] = lab[:seq_len]
    T = np.tile(normalize_timestamps(seq_len), num_traj)
    return TrajectoryBatch(X, T, seq_len, num_traj, labels)


def write_dataset(path, data):
    labels_flag = 0 if data.labels is None else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATA_MAGIC, DATA_VERSION, data.batch, data.seq_len,
                              data.d_feature, labels_flag))
        S = data.seq_len
        for i in range(data.batch):
            rows = slice(i * S, (i + 1) * S)
            fh.write(np.ascontiguousarray(data.X[rows], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(data.T[rows], dtype="<f8").tobytes())
            if labels_flag:
                lab = data.labels[rows]
                if lab.min(initial=0) < 0 or lab.max(initial=0) > 0xFFFF:
                    raise HistatError("labels do not fit in u16")
                fh.write(lab.astype("<u2").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != DATA_MAGIC:
        raise FormatError("bad magic", f"{path} is not an HSTD file")
    if len(blob) < _HEADER.size:
        raise FormatError("truncated", "header is incomplete")
    _, version, num, S, dim, flag = _HEADER.unpack_from(blob)
    if version != DATA_VERSION:
        raise FormatError("version mismatch", f"file version {version}, expected {DATA_VERSION}")
    if flag not in (0, 1):
        raise FormatError("label mismatch", f"labels flag {flag}")
    per_traj = S * dim * 8 + S * 8 + (S * 2 if flag else 0)
    expected = _HEADER.size + num * per_traj
    if len(blob) < expected:
        raise FormatError("truncated", f"expected {expected} bytes, got {len(blob)}")
    if len(blob) > expected:
        raise FormatError("label mismatch" if not flag else "length mismatch",
                          f"{len(blob) - expected} trailing bytes")
    X = np.empty((num * S, dim))
    T = np.empty(num * S)
    labels = np.empty(num * S, dtype=np.int64) if flag else None
    off = _HEADER.size
    for i in range(num):
        rows = slice(i * S, (i + 1) * S)
        X[rows] = np.frombuffer(blob, "<f8", S * dim, off).reshape(S, dim)
        off += S * dim * 8
        T[rows] = np.frombuffer(blob, "<f8", S, off)
        off += S * 8
        if flag:
            labels[rows] = np.frombuffer(blob, "<u2", S, off)
            off += S * 2
    return TrajectoryBatch(X, T, S, num, labels)
