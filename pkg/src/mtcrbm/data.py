"""Dataset formats, skeleton feature extraction, synthetic data generation,
source-disjoint splits, standardization, and classification metrics.

File formats
------------
Frame CSV: one row per frame, comma-separated decimal floats, no header.
Manifest JSON: ``{format_version, feature_pipeline, tasks, sequences}`` where
each sequence entry is ``{id, source_id, labels, files}`` and ``files`` maps
modality id to a frame-CSV path relative to the manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .model import (FrameSequence, MultimodalSequence, Normalization, TaskSpec,
                    rng_from_seed)

MANIFEST_VERSION = 1


# -- frame CSV ----------------------------------------------------------


def parse_frame_csv(path):
    """Read a frame CSV into a (T, D) float array with file/line diagnostics."""
    rows = []
    width = None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if width is None:
                    width = len(parts)
                elif len(parts) != width:
                    raise DataError(
                        f"{path}:{lineno}: ragged row ({len(parts)} values, "
                        f"expected {width})"
                    )
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read frame file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no frames")
    return np.asarray(rows, dtype=np.float64)


def write_frame_csv(path, frames):
    """Write frames with shortest round-trip float notation."""
    frames = np.asarray(frames, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for row in frames:
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")


# -- manifests ----------------------------------------------------------


@dataclass
class Dataset:
    """Sequences plus their task declarations, as loaded from a manifest."""

    sequences: list  # of MultimodalSequence
    tasks: tuple  # of TaskSpec
    feature_pipeline: str = "raw"
    manifest_path: str = ""

    def task_by_name(self, name):
        for t in self.tasks:
            if t.name == name:
                return t
        raise ConfigError(f"dataset has no task {name!r}")

    @property
    def modalities(self):
        return tuple(sorted(self.sequences[0].parts)) if self.sequences else ()


def load_dataset(manifest_path) -> Dataset:
    """Load a manifest and every referenced frame file, validating as we go."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(
            f"manifest {manifest_path}: unsupported format_version "
            f"{doc.get('format_version')!r}"
        )
    try:
        tasks = tuple(
            TaskSpec(
                name=t["name"],
                class_count=t["class_count"],
                class_names=tuple(t["class_names"]) if t.get("class_names") else None,
            )
            for t in doc.get("tasks", [])
        )
    except (KeyError, ConfigError) as exc:
        raise DataError(f"manifest {manifest_path}: bad task declaration: {exc}")
    tasks_by_name = {t.name: t for t in tasks}

    base = os.path.dirname(os.path.abspath(manifest_path))
    sequences = []
    dims = {}
    for entry in doc.get("sequences", []):
        seq_id = entry.get("id", "<missing id>")
        labels = entry.get("labels", {})
        for tname, idx in labels.items():
            if tname not in tasks_by_name:
                raise DataError(
                    f"manifest {manifest_path}: sequence {seq_id}: label for "
                    f"undeclared task {tname!r}"
                )
            spec = tasks_by_name[tname]
            if not 0 <= int(idx) < spec.class_count:
                raise DataError(
                    f"manifest {manifest_path}: sequence {seq_id}: label "
                    f"{idx} out of range for task {tname!r} "
                    f"(class_count={spec.class_count})"
                )
        parts = {}
        for modality, rel in entry.get("files", {}).items():
            frames = parse_frame_csv(os.path.join(base, rel))
            if modality in dims and frames.shape[1] != dims[modality]:
                raise DataError(
                    f"manifest {manifest_path}: sequence {seq_id}: modality "
                    f"{modality!r} has dimension {frames.shape[1]}, expected "
                    f"{dims[modality]}"
                )
            dims.setdefault(modality, frames.shape[1])
            parts[modality] = FrameSequence(
                modality_id=modality, frames=frames,
                labels=dict(labels), source_id=str(entry.get("source_id", "")),
            )
        if not parts:
            raise DataError(
                f"manifest {manifest_path}: sequence {seq_id} lists no files"
            )
        sequences.append(
            MultimodalSequence(parts=parts, labels=dict(labels),
                               sequence_id=str(seq_id))
        )
    return Dataset(
        sequences=sequences, tasks=tasks,
        feature_pipeline=str(doc.get("feature_pipeline", "raw")),
        manifest_path=str(manifest_path),
    )


# -- standardization ----------------------------------------------------


def fit_normalization(sequences, modality) -> Normalization:
    """Per-dimension mean/std over every frame of one modality."""
    frames = np.concatenate([s.parts[modality].frames for s in sequences], axis=0)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)  # constant dims pass through unscaled
    return Normalization(mean=mean, std=std)


def standardize_sequences(sequences, norms):
    """Apply stored normalization (never re-fit) to a list of sequences."""
    out = []
    for seq in sequences:
        parts = {
            m: FrameSequence(
                modality_id=m,
                frames=norms[m].apply(p.frames),
                labels=dict(seq.labels),
                source_id=p.source_id,
            )
            for m, p in seq.parts.items()
        }
        out.append(MultimodalSequence(parts=parts, labels=dict(seq.labels),
                                      sequence_id=seq.sequence_id))
    return out


# -- splits --------------------------------------------------------------


def split_by_source(sequences, fraction=0.5, seed=0):
    """Disjoint source split: no source contributes to both sides."""
    sources = sorted({s.source_id for s in sequences})
    if len(sources) < 2:
        raise DataError(
            "cannot split by source: need at least 2 distinct source_ids "
            f"(got {len(sources)})"
        )
    rng = rng_from_seed(seed)
    order = list(sources)
    rng.shuffle(order)
    n_train = int(round(fraction * len(order)))
    n_train = min(max(n_train, 1), len(order) - 1)
    train_sources = set(order[:n_train])
    train = [s for s in sequences if s.source_id in train_sources]
    test = [s for s in sequences if s.source_id not in train_sources]
    return train, test


# -- metrics --------------------------------------------------------------


@dataclass
class MetricsReport:
    accuracy: dict  # task -> float
    confusion: dict  # task -> (Y, Y) int array, rows = truth
    count: int = 0


def classification_metrics(predictions, truth, tasks) -> MetricsReport:
    """Per-task accuracy and confusion matrices for aligned label lists."""
    accuracy, confusion = {}, {}
    n = None
    for task in tasks:
        pred = np.asarray(predictions[task.name], dtype=np.int64)
        true = np.asarray(truth[task.name], dtype=np.int64)
        if pred.shape != true.shape:
            raise DataError(
                f"task {task.name!r}: {pred.shape[0]} predictions for "
                f"{true.shape[0]} truth labels"
            )
        if n is None:
            n = pred.shape[0]
        elif pred.shape[0] != n:
            raise DataError("tasks disagree on the number of predictions")
        mat = np.zeros((task.class_count, task.class_count), dtype=np.int64)
        for t, p in zip(true, pred):
            mat[t, p] += 1
        confusion[task.name] = mat
        accuracy[task.name] = float((pred == true).mean()) if n else 0.0
    return MetricsReport(accuracy=accuracy, confusion=confusion, count=n or 0)


# -- motion-capture features (14 joints, 42-D) ---------------------------

# Fixed joint order for the full-body descriptor. Axis convention: z up.
MOCAP_JOINTS = (
    "root", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_knee", "l_ankle", "r_knee", "r_ankle",
)
_MC_ROOT = MOCAP_JOINTS.index("root")
_MC_LSH = MOCAP_JOINTS.index("l_shoulder")
_MC_RSH = MOCAP_JOINTS.index("r_shoulder")


def mocap_features(joints):
    """Body-centric 42-D descriptor: root-centered, yaw-normalized, flattened.

    The skeleton is translated so the root sits at the origin, then rotated
    about the vertical (z) axis so the left-to-right shoulder axis lies on
    +x. Invariant to global translation and yaw by construction.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (14, 3):
        raise DataError(f"expected 14 joints x 3 coords, got {joints.shape}")
    centered = joints - joints[_MC_ROOT]
    axis = centered[_MC_LSH] - centered[_MC_RSH]
    theta = np.arctan2(axis[1], axis[0])
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rot = np.array([[cos_t, sin_t, 0.0], [-sin_t, cos_t, 0.0], [0.0, 0.0, 1.0]])
    return (centered @ rot.T).ravel()


# -- Kinect upper-body features (11 joints per player, 84-D) --------------

KINECT_UPPER_JOINTS = (
    "head", "neck", "torso",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand",
)

# Anatomical connectivity (bones), including clavicle-like links.
KINECT_BONES = (
    ("torso", "neck"), ("neck", "head"),
    ("neck", "l_shoulder"), ("neck", "r_shoulder"),
    ("torso", "l_shoulder"), ("torso", "r_shoulder"),
    ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"), ("l_wrist", "l_hand"),
    ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"), ("r_wrist", "r_hand"),
)

# All (p, q, r) with bones p-q and q-r: q is the middle joint. 19 triples.
KINECT_TRIPLES = (
    ("torso", "neck", "head"),
    ("torso", "neck", "l_shoulder"),
    ("torso", "neck", "r_shoulder"),
    ("head", "neck", "l_shoulder"),
    ("head", "neck", "r_shoulder"),
    ("l_shoulder", "neck", "r_shoulder"),
    ("neck", "torso", "l_shoulder"),
    ("neck", "torso", "r_shoulder"),
    ("l_shoulder", "torso", "r_shoulder"),
    ("neck", "l_shoulder", "torso"),
    ("neck", "l_shoulder", "l_elbow"),
    ("torso", "l_shoulder", "l_elbow"),
    ("l_shoulder", "l_elbow", "l_wrist"),
    ("l_elbow", "l_wrist", "l_hand"),
    ("neck", "r_shoulder", "torso"),
    ("neck", "r_shoulder", "r_elbow"),
    ("torso", "r_shoulder", "r_elbow"),
    ("r_shoulder", "r_elbow", "r_wrist"),
    ("r_elbow", "r_wrist", "r_hand"),
)

# 84-D layout: 33 torso-centered scale-normalized coords, 19 inclination
# angles (triple order above), 19 azimuth angles (same order), 10 bending
# angles (joint order, torso excluded), 3 zero padding.
KINECT_FEATURE_LAYOUT = (
    ("coords", 0, 33),
    ("inclination", 33, 52),
    ("azimuth", 52, 71),
    ("bending", 71, 81),
    ("padding", 81, 84),
)


@dataclass
class DegenerateAngleCounter:
    """Counts zero-length-bone fallbacks instead of failing on noisy frames."""

    count: int = 0

    def bump(self):
        self.count += 1


degenerate_angles = DegenerateAngleCounter()

_KJ = {name: i for i, name in enumerate(KINECT_UPPER_JOINTS)}


def _unit(v, counter):
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        counter.bump()
        return None
    return v / norm


def kinect_upper_body_features(joints, counter=None):
    """84-D upper-body descriptor for one player.

    Inclination of (p, q, r): the angle at q between q->p and q->r, in
    [0, pi] (collinear chains give pi). Azimuth of (p, q, r): the signed
    angle, in (-pi, pi], between the projection of the second bone q->r onto
    the plane perpendicular to the first bone p->q and the projection of the
    global up axis onto that plane. Bending of joint j: the angle between
    the torso-plane normal and the position vector of j. Degenerate
    geometry yields 0 and bumps the counter.
    """
    counter = counter if counter is not None else degenerate_angles
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (11, 3):
        raise DataError(f"expected 11 joints x 3 coords, got {joints.shape}")

    centered = joints - joints[_KJ["torso"]]
    scale = np.linalg.norm(centered[_KJ["neck"]])
    if scale < 1e-12:
        scale = 1.0
    coords = centered / scale

    out = np.zeros(84)
    out[0:33] = coords.ravel()

    for i, (p, q, r) in enumerate(KINECT_TRIPLES):
        u = _unit(coords[_KJ[p]] - coords[_KJ[q]], counter)
        v = _unit(coords[_KJ[r]] - coords[_KJ[q]], counter)
        if u is None or v is None:
            out[33 + i] = 0.0
        else:
            out[33 + i] = np.arccos(np.clip(u @ v, -1.0, 1.0))

    up = np.array([0.0, 0.0, 1.0])
    for i, (p, q, r) in enumerate(KINECT_TRIPLES):
        bone1 = _unit(coords[_KJ[q]] - coords[_KJ[p]], counter)
        if bone1 is None:
            continue
        bone2 = coords[_KJ[r]] - coords[_KJ[q]]
        proj2 = bone2 - (bone2 @ bone1) * bone1
        ref = up - (up @ bone1) * bone1
        if np.linalg.norm(ref) < 1e-12:
            ref = np.array([1.0, 0.0, 0.0]) - bone1[0] * bone1
        proj2_u = _unit(proj2, counter)
        ref_u = _unit(ref, counter)
        if proj2_u is None or ref_u is None:
            continue
        out[52 + i] = np.arctan2(bone1 @ np.cross(ref_u, proj2_u),
                                 ref_u @ proj2_u)

    normal = np.cross(coords[_KJ["l_shoulder"]], coords[_KJ["r_shoulder"]])
    normal_u = _unit(normal, counter)
    if normal_u is None:
        normal_u = up
    bend_joints = [j for j in KINECT_UPPER_JOINTS if j != "torso"]
    for i, j in enumerate(bend_joints):
        pos = _unit(coords[_KJ[j]], counter)
        out[71 + i] = 0.0 if pos is None else np.arccos(
            np.clip(normal_u @ pos, -1.0, 1.0)
        )
    return out


# -- synthetic data -------------------------------------------------------

SYNTH_TASKS = (
    TaskSpec("AC", 4, ("walk", "knock", "lift", "throw")),
    TaskSpec("AF", 4, ("neutral", "happy", "sad", "angry")),
    TaskSpec("G", 2, ("female", "male")),
)

_AFFECT_AMPLITUDE = np.array([1.0, 1.6, 0.55, 2.2])
_AFFECT_TEMPO = np.array([1.0, 1.3, 0.7, 1.6])
_GENDER_SCALE = np.array([0.8, 1.25])
_ACTION_FREQ = np.array([1.0, 1.7, 2.6, 3.9]) * (2.0 * np.pi / 32.0)


@dataclass
class _SynthStructure:
    action_offsets: np.ndarray  # (4, D) orthogonal macro offsets
    affect_offsets: np.ndarray  # (4, D); neutral row is zero
    osc_primary: np.ndarray     # (4, D)
    osc_secondary: np.ndarray   # (4, D)


def _synth_structure(rng, dim):
    if dim < 8:
        raise ConfigError("synthetic generator needs frame_dim >= 8")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    action_offsets = 2.2 * basis[:, 0:4].T
    affect_offsets = np.zeros((4, dim))
    affect_offsets[1:4] = 1.2 * basis[:, 4:7].T
    q_block = basis[:, 4:7]

    def osc_dirs():
        dirs = rng.normal(size=(4, dim))
        dirs -= (dirs @ q_block) @ q_block.T  # keep affect axes clean
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    return _SynthStructure(
        action_offsets=action_offsets,
        affect_offsets=affect_offsets,
        osc_primary=osc_dirs(),
        osc_secondary=osc_dirs(),
    )


def _synth_clean_frames(structure, action, affect, gender, length, phase):
    t = np.arange(length, dtype=np.float64)[:, None]
    omega = _ACTION_FREQ[action] * _AFFECT_TEMPO[affect]
    amp = _AFFECT_AMPLITUDE[affect]
    osc = (
        amp * np.sin(omega * t + phase) * structure.osc_primary[action]
        + 0.6 * amp * np.cos(2.0 * omega * t + phase) * structure.osc_secondary[action]
    )
    body = structure.action_offsets[action] + osc
    return _GENDER_SCALE[gender] * body + structure.affect_offsets[affect]


def make_synthetic(out_dir, count=400, noise=0.1, seed=0, modalities=1,
                   frame_dim=12, actor_count=30):
    """Generate a desk-scale multi-task dataset and write it to disk.

    Task 1 (AC) picks the base periodic trajectory family (frequency, macro
    offset, oscillation directions); task 2 (AF) modulates amplitude, tempo,
    and an additive offset; task 3 (G) is a per-actor scale factor on the
    body component. Micro structure separates affects, macro structure
    separates actions. Deterministic per seed; with noise=0, sequences
    sharing (action, affect, gender) are bit-identical. When
    ``modalities`` = 2, the second modality is the same clean signal with an
    independent noise draw.

    Returns the manifest path.
    """
    if count < 0:
        raise ConfigError("count must be >= 0")
    if modalities not in (1, 2):
        raise ConfigError("modalities must be 1 or 2")
    rng = rng_from_seed(seed)
    structure = _synth_structure(rng, frame_dim)

    os.makedirs(out_dir, exist_ok=True)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    mod_ids = ["m0", "m1"][:modalities]

    entries = []
    for idx in range(count):
        combo = idx % 16
        action, affect = combo % 4, combo // 4
        actor = (idx // 16) % actor_count
        gender = actor % 2
        length = 48 + 2 * action + 3 * affect
        phase = 0.7 * action + 1.3 * affect + noise * 2.0 * np.pi * rng.normal()
        clean = _synth_clean_frames(structure, action, affect, gender, length,
                                    phase)
        labels = {"AC": action, "AF": affect, "G": gender}
        files = {}
        for m in mod_ids:
            noisy = clean + noise * rng.normal(size=clean.shape)
            rel = os.path.join("frames", f"seq{idx:04d}_{m}.csv")
            write_frame_csv(os.path.join(out_dir, rel), noisy)
            files[m] = rel
        entries.append({
            "id": f"seq{idx:04d}",
            "source_id": f"actor{actor:02d}",
            "labels": labels,
            "files": files,
        })

    manifest = {
        "format_version": MANIFEST_VERSION,
        "feature_pipeline": "synthetic",
        "tasks": [
            {"name": t.name, "class_count": t.class_count,
             "class_names": list(t.class_names)}
            for t in SYNTH_TASKS
        ],
        "sequences": entries,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest_path
