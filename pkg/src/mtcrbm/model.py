"""Domain types, model construction, and JSON serialization.

A model bundle holds everything inference and morphing need: the layer
parameters per modality, an optional fusion layer, optional per-task deep
layers, the per-dimension standardization constants fitted at training time,
and the task declarations. Bundles are immutable after construction/training
and safe for concurrent read; training mutates only private copies.

On-disk format: UTF-8 JSON with top-level keys
``{format_version, kind, tasks, normalization, layers, deep_heads}``.
Numeric arrays are nested lists; floats are written with shortest
round-trip notation so ``load(save(b))`` reproduces ``b`` bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError

FORMAT_VERSION = 1

GAUSSIAN = "gaussian"
BINARY = "binary"
VISIBLE_KINDS = (GAUSSIAN, BINARY)

MODEL_KINDS = ("crbm", "dcrbm", "mtcrbm", "mtcrbm_deep", "mtmcrbm", "mtmcrbm_deep")
FUSION_KINDS = ("mtmcrbm", "mtmcrbm_deep")
DEEP_KINDS = ("mtcrbm_deep", "mtmcrbm_deep")

WEIGHT_INIT_SCALE = 0.01


def rng_from_seed(seed):
    """The package-wide randomness contract: one PCG64 generator per seed.

    Every stochastic operation takes an explicit generator; nothing touches
    numpy's global state.
    """
    return np.random.default_rng(int(seed))


def _as_f64(x, name, shape=None):
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ShapeError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TaskSpec:
    """A named classification task with a fixed class count.

    ``class_names`` is optional; when present it lets CLI flags and reports
    refer to classes by name instead of index.
    """

    name: str
    class_count: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ConfigError("task name must be a non-empty string")
        if int(self.class_count) < 2:
            raise ConfigError(f"task {self.name!r}: class_count must be >= 2")
        object.__setattr__(self, "class_count", int(self.class_count))
        if self.class_names is not None:
            names = tuple(str(n) for n in self.class_names)
            if len(names) != self.class_count:
                raise ConfigError(
                    f"task {self.name!r}: {len(names)} class_names for "
                    f"{self.class_count} classes"
                )
            object.__setattr__(self, "class_names", names)

    def class_index(self, value):
        """Resolve a class given as an index or (when known) a name."""
        if isinstance(value, (int, np.integer)):
            idx = int(value)
        elif isinstance(value, str) and value.lstrip("-").isdigit():
            idx = int(value)
        elif self.class_names is not None and value in self.class_names:
            idx = self.class_names.index(value)
        else:
            raise ConfigError(f"task {self.name!r}: unknown class {value!r}")
        if not 0 <= idx < self.class_count:
            raise ConfigError(
                f"task {self.name!r}: class index {idx} out of range "
                f"[0, {self.class_count})"
            )
        return idx

    def label_of(self, idx):
        if self.class_names is not None:
            return self.class_names[idx]
        return int(idx)


@dataclass
class FrameSequence:
    """Ordered real-valued feature frames for one modality."""

    modality_id: str
    frames: np.ndarray  # (T, D)
    labels: dict = field(default_factory=dict)  # task name -> class index
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ShapeError(
                f"sequence frames must be 2-D (frames x features), "
                f"got ndim={self.frames.ndim}"
            )
        t, d = self.frames.shape
        if t < 1:
            raise ShapeError("sequence must contain at least one frame")
        if d < 1:
            raise ShapeError("frame dimension must be >= 1")
        self.labels = {str(k): int(v) for k, v in self.labels.items()}

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass
class MultimodalSequence:
    """Time-aligned per-modality frame sequences with shared labels."""

    parts: dict  # modality id -> FrameSequence
    labels: dict = field(default_factory=dict)
    sequence_id: str = ""

    def __post_init__(self):
        if not self.parts:
            raise ShapeError("multimodal sequence needs at least one modality")
        lengths = {m: p.length for m, p in self.parts.items()}
        if len(set(lengths.values())) != 1:
            raise ShapeError(f"modalities are not time-aligned: lengths {lengths}")
        self.labels = {str(k): int(v) for k, v in self.labels.items()}
        for part in self.parts.values():
            if part.labels and part.labels != self.labels:
                raise ShapeError(
                    "per-part labels must match the sequence-level labels"
                )
            part.labels = dict(self.labels)

    @property
    def length(self):
        return next(iter(self.parts.values())).length

    @property
    def source_id(self):
        return next(iter(self.parts.values())).source_id


@dataclass
class TaskHead:
    """Softmax classifier attached to a hidden layer for one task."""

    task: TaskSpec
    s: np.ndarray  # (Y,) label bias
    U: np.ndarray  # (H, Y) hidden-to-label weights

    def validate(self, hidden_dim, context=""):
        y = self.task.class_count
        self.s = _as_f64(self.s, f"{context}head[{self.task.name}].s", (y,))
        self.U = _as_f64(self.U, f"{context}head[{self.task.name}].U", (hidden_dim, y))


@dataclass
class CrbmLayerParams:
    """All parameters of one (possibly multi-task) conditional RBM layer.

    Shapes: a (D,), b (H,), A (N*D, D), B (N*D, H), W (D, H). History
    windows are concatenated oldest-first, so row p = k*D + i of A/B belongs
    to history step k and feature i.
    """

    visible_dim: int
    hidden_dim: int
    history_order: int
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    heads: tuple = ()
    visible_kind: str = GAUSSIAN

    def __post_init__(self):
        self.heads = tuple(self.heads)
        self.validate()

    def validate(self, context=""):
        d, h, n = int(self.visible_dim), int(self.hidden_dim), int(self.history_order)
        if d < 1 or h < 1 or n < 0:
            raise ConfigError(
                f"{context}layer dims must satisfy D>=1, H>=1, N>=0 "
                f"(got D={d}, H={h}, N={n})"
            )
        if self.visible_kind not in VISIBLE_KINDS:
            raise ConfigError(f"{context}unknown visible_kind {self.visible_kind!r}")
        self.visible_dim, self.hidden_dim, self.history_order = d, h, n
        self.a = _as_f64(self.a, f"{context}a", (d,))
        self.b = _as_f64(self.b, f"{context}b", (h,))
        self.A = _as_f64(self.A, f"{context}A", (n * d, d))
        self.B = _as_f64(self.B, f"{context}B", (n * d, h))
        self.W = _as_f64(self.W, f"{context}W", (d, h))
        seen = set()
        for head in self.heads:
            if head.task.name in seen:
                raise ConfigError(f"{context}duplicate head for task {head.task.name!r}")
            seen.add(head.task.name)
            head.validate(h, context)

    @property
    def history_dim(self):
        return self.history_order * self.visible_dim

    def head_for(self, task_name):
        for head in self.heads:
            if head.task.name == task_name:
                return head
        raise ConfigError(f"layer has no head for task {task_name!r}")

    def copy(self):
        return CrbmLayerParams(
            visible_dim=self.visible_dim,
            hidden_dim=self.hidden_dim,
            history_order=self.history_order,
            a=self.a.copy(),
            b=self.b.copy(),
            A=self.A.copy(),
            B=self.B.copy(),
            W=self.W.copy(),
            heads=tuple(
                TaskHead(task=h.task, s=h.s.copy(), U=h.U.copy()) for h in self.heads
            ),
            visible_kind=self.visible_kind,
        )

    @classmethod
    def init(cls, rng, visible_dim, hidden_dim, history_order, tasks=(),
             visible_kind=GAUSSIAN):
        """Fresh layer: weights ~ N(0, 0.01^2), biases zero.

        Draw order is fixed (W, A, B, then one U per task in the given
        order) so identical seeds give bit-identical layers.
        """
        d, h, n = visible_dim, hidden_dim, history_order
        w = rng.normal(0.0, WEIGHT_INIT_SCALE, size=(d, h))
        a_mat = rng.normal(0.0, WEIGHT_INIT_SCALE, size=(n * d, d))
        b_mat = rng.normal(0.0, WEIGHT_INIT_SCALE, size=(n * d, h))
        heads = tuple(
            TaskHead(
                task=t,
                s=np.zeros(t.class_count),
                U=rng.normal(0.0, WEIGHT_INIT_SCALE, size=(h, t.class_count)),
            )
            for t in tasks
        )
        return cls(
            visible_dim=d, hidden_dim=h, history_order=n,
            a=np.zeros(d), b=np.zeros(h), A=a_mat, B=b_mat, W=w,
            heads=heads, visible_kind=visible_kind,
        )


@dataclass
class FusionModel:
    """Per-modality layers plus one fusion layer over their hidden units.

    The fusion layer's visible side is the concatenation of the unimodal
    hidden vectors in lexicographic modality order; its B matrix plays the
    role of the hidden-history coupling (the C matrix) and its b vector is
    the fusion hidden bias e. The fusion a/A blocks are unused by the energy
    and kept at zero.
    """

    unimodal: dict  # modality id -> CrbmLayerParams
    fusion: CrbmLayerParams

    def __post_init__(self):
        self.validate()

    def validate(self, context=""):
        if not self.unimodal:
            raise ConfigError(f"{context}fusion model needs at least one modality")
        total_hidden = sum(l.hidden_dim for l in self.unimodal.values())
        if self.fusion.visible_dim != total_hidden:
            raise ShapeError(
                f"{context}fusion.visible_dim is {self.fusion.visible_dim}, "
                f"expected the sum of unimodal hidden dims {total_hidden}"
            )
        task_lists = {
            m: tuple(h.task.name for h in l.heads) for m, l in self.unimodal.items()
        }
        task_lists["fusion"] = tuple(h.task.name for h in self.fusion.heads)
        if len(set(task_lists.values())) != 1:
            raise ConfigError(
                f"{context}unimodal and fusion layers must carry heads for the "
                f"same task list, got {task_lists}"
            )

    @property
    def modality_order(self):
        """Concatenation order of the fusion input: lexicographic modality id."""
        return tuple(sorted(self.unimodal))

    def hidden_slices(self):
        """Column ranges of each modality inside the concatenated fusion input."""
        out, start = {}, 0
        for m in self.modality_order:
            h = self.unimodal[m].hidden_dim
            out[m] = slice(start, start + h)
            start += h
        return out


@dataclass
class Normalization:
    """Per-dimension standardization constants for one modality."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("normalization mean/std must be 1-D and equal length")
        if np.any(self.std <= 0):
            raise ShapeError("normalization std must be strictly positive")

    @classmethod
    def identity(cls, dim):
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, frames):
        return (frames - self.mean) / self.std

    def invert(self, frames):
        return frames * self.std + self.mean


@dataclass
class ModelConfig:
    """Everything :func:`new_model` needs to build a bundle."""

    kind: str
    tasks: tuple  # of TaskSpec
    visible_dims: dict  # modality id -> D
    hidden_dim: int
    history_order: int
    fusion_hidden_dim: int | None = None
    deep_hidden_dim: int | None = None
    deep_history_order: int | None = None
    visible_kind: str = GAUSSIAN

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if not self.visible_dims:
            raise ConfigError("at least one modality is required")
        for m, d in self.visible_dims.items():
            if int(d) < 1:
                raise ConfigError(f"modality {m!r}: visible_dim must be positive")
        if int(self.hidden_dim) < 1:
            raise ConfigError("hidden_dim must be positive")
        if int(self.history_order) < 0:
            raise ConfigError("history_order must be >= 0")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names: {names}")
        if self.kind == "crbm":
            if self.tasks:
                raise ConfigError("crbm is purely generative; it takes no tasks")
        elif self.kind == "dcrbm":
            if len(self.tasks) != 1:
                raise ConfigError("dcrbm is single-task; give exactly one task")
        elif not self.tasks:
            raise ConfigError(f"{self.kind} requires at least one task")
        if self.kind in FUSION_KINDS:
            if self.fusion_hidden_dim is None:
                self.fusion_hidden_dim = self.hidden_dim
            if int(self.fusion_hidden_dim) < 1:
                raise ConfigError("fusion_hidden_dim must be positive")
        elif len(self.visible_dims) != 1:
            raise ConfigError(f"{self.kind} is unimodal; give exactly one modality")
        if self.kind in DEEP_KINDS:
            if self.deep_hidden_dim is None:
                self.deep_hidden_dim = (
                    self.fusion_hidden_dim if self.kind in FUSION_KINDS
                    else self.hidden_dim
                )
            if self.deep_history_order is None:
                self.deep_history_order = self.history_order
            if int(self.deep_hidden_dim) < 1 or int(self.deep_history_order) < 0:
                raise ConfigError("deep layer dims out of range")


@dataclass
class ModelBundle:
    """A trained or freshly initialized model of any supported kind."""

    kind: str
    tasks: tuple
    unimodal: dict  # modality id -> CrbmLayerParams
    fusion: CrbmLayerParams | None = None
    deep_heads: dict | None = None  # task name -> CrbmLayerParams
    normalization: dict = field(default_factory=dict)  # modality id -> Normalization

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.validate()

    # -- structure -----------------------------------------------------

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names: {names}")
        if not self.unimodal:
            raise ConfigError("bundle has no modalities")
        for m, layer in self.unimodal.items():
            layer.validate(context=f"unimodal[{m!r}].")
        if set(self.normalization) != set(self.unimodal):
            raise ConfigError(
                "normalization must cover exactly the model's modalities"
            )
        for m, norm in self.normalization.items():
            if norm.mean.shape[0] != self.unimodal[m].visible_dim:
                raise ShapeError(
                    f"normalization[{m!r}] length {norm.mean.shape[0]} != "
                    f"visible_dim {self.unimodal[m].visible_dim}"
                )

        task_names = tuple(names)
        is_fusion = self.kind in FUSION_KINDS
        is_deep = self.kind in DEEP_KINDS
        if not is_fusion:
            if len(self.unimodal) != 1:
                raise ConfigError(f"kind={self.kind}: expected exactly one modality")
            if self.fusion is not None:
                raise ConfigError(f"kind={self.kind}: unexpected fusion layer")
        else:
            if self.fusion is None:
                raise ConfigError(f"kind={self.kind}: missing fusion layer")
            self.fusion.validate(context="fusion.")
            FusionModel(unimodal=self.unimodal, fusion=self.fusion)

        head_bearing = () if (is_deep or self.kind == "crbm") else task_names
        for m, layer in self.unimodal.items():
            have = tuple(h.task.name for h in layer.heads)
            if have != head_bearing:
                raise ConfigError(
                    f"kind={self.kind}: unimodal[{m!r}] heads {have} do not match "
                    f"expected {head_bearing}"
                )
        if is_fusion:
            have = tuple(h.task.name for h in self.fusion.heads)
            if have != head_bearing:
                raise ConfigError(
                    f"kind={self.kind}: fusion heads {have} do not match "
                    f"expected {head_bearing}"
                )

        if not is_deep:
            if self.deep_heads:
                raise ConfigError(f"kind={self.kind}: unexpected deep_heads")
            self.deep_heads = None
        else:
            if not self.deep_heads or set(self.deep_heads) != set(task_names):
                raise ConfigError(
                    f"kind={self.kind}: deep_heads must cover tasks {task_names}"
                )
            base_hidden = (
                self.fusion.hidden_dim if is_fusion
                else next(iter(self.unimodal.values())).hidden_dim
            )
            for t, layer in self.deep_heads.items():
                layer.validate(context=f"deep_heads[{t!r}].")
                if layer.visible_dim != base_hidden:
                    raise ShapeError(
                        f"deep_heads[{t!r}].visible_dim {layer.visible_dim} != "
                        f"base hidden_dim {base_hidden}"
                    )
                have = tuple(h.task.name for h in layer.heads)
                if have != (t,):
                    raise ConfigError(
                        f"deep_heads[{t!r}] must carry exactly one head for {t!r}"
                    )

    @property
    def modality_order(self):
        return tuple(sorted(self.unimodal))

    @property
    def single_layer(self):
        if len(self.unimodal) != 1:
            raise ConfigError(f"kind={self.kind} is not unimodal")
        return next(iter(self.unimodal.values()))

    @property
    def single_modality(self):
        if len(self.unimodal) != 1:
            raise ConfigError(f"kind={self.kind} is not unimodal")
        return next(iter(self.unimodal))

    def fusion_model(self):
        if self.fusion is None:
            raise ConfigError(f"kind={self.kind} has no fusion layer")
        return FusionModel(unimodal=self.unimodal, fusion=self.fusion)

    def task_by_name(self, name):
        for t in self.tasks:
            if t.name == name:
                return t
        raise ConfigError(f"model has no task {name!r}")

    def copy(self):
        return ModelBundle(
            kind=self.kind,
            tasks=self.tasks,
            unimodal={m: l.copy() for m, l in self.unimodal.items()},
            fusion=self.fusion.copy() if self.fusion is not None else None,
            deep_heads=(
                {t: l.copy() for t, l in self.deep_heads.items()}
                if self.deep_heads else None
            ),
            normalization={
                m: Normalization(mean=n.mean.copy(), std=n.std.copy())
                for m, n in self.normalization.items()
            },
        )

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return _bundle_to_dict(self) == _bundle_to_dict(other)


def new_model(config: ModelConfig, seed) -> ModelBundle:
    """Initialize a bundle: weights ~ N(0, 0.01^2), biases zero, reproducible."""
    rng = rng_from_seed(seed)
    is_deep = config.kind in DEEP_KINDS
    layer_tasks = () if (is_deep or config.kind == "crbm") else config.tasks

    unimodal, normalization = {}, {}
    for m in sorted(config.visible_dims):
        d = int(config.visible_dims[m])
        unimodal[m] = CrbmLayerParams.init(
            rng, d, config.hidden_dim, config.history_order,
            tasks=layer_tasks, visible_kind=config.visible_kind,
        )
        normalization[m] = Normalization.identity(d)

    fusion = None
    if config.kind in FUSION_KINDS:
        total_hidden = sum(l.hidden_dim for l in unimodal.values())
        fusion = CrbmLayerParams.init(
            rng, total_hidden, config.fusion_hidden_dim, config.history_order,
            tasks=layer_tasks, visible_kind=BINARY,
        )
        # the fusion visible side has no bias terms in the energy
        fusion.a[:] = 0.0
        fusion.A[:] = 0.0

    deep_heads = None
    if is_deep:
        base_hidden = fusion.hidden_dim if fusion is not None else config.hidden_dim
        deep_heads = {}
        for t in config.tasks:
            layer = CrbmLayerParams.init(
                rng, base_hidden, config.deep_hidden_dim, config.deep_history_order,
                tasks=(t,), visible_kind=BINARY,
            )
            # like the fusion layer, a task layer's visible side (the base
            # hidden units) carries no bias terms of its own
            layer.a[:] = 0.0
            layer.A[:] = 0.0
            deep_heads[t.name] = layer

    return ModelBundle(
        kind=config.kind, tasks=config.tasks, unimodal=unimodal,
        fusion=fusion, deep_heads=deep_heads, normalization=normalization,
    )


def label_edge_parameter_audit(hidden_dim, tasks):
    """Label-edge parameter counts: factored multi-task vs flattened.

    Returns ``(H * sum_l Y_l, H * prod_l Y_l)`` — the factored representation
    grows linearly in tasks while the flattened Cartesian product grows
    exponentially; the two must differ whenever there are >= 2 tasks of >= 2
    classes each.
    """
    counts = [t.class_count for t in tasks]
    factored = hidden_dim * sum(counts)
    flattened = hidden_dim * int(np.prod(counts)) if counts else 0
    return factored, flattened


# -- serialization -----------------------------------------------------


def _head_to_dict(head):
    return {"task": head.task.name, "s": head.s.tolist(), "U": head.U.tolist()}


def _layer_to_dict(layer):
    return {
        "visible_dim": layer.visible_dim,
        "hidden_dim": layer.hidden_dim,
        "history_order": layer.history_order,
        "visible_kind": layer.visible_kind,
        "a": layer.a.tolist(),
        "b": layer.b.tolist(),
        "A": layer.A.tolist(),
        "B": layer.B.tolist(),
        "W": layer.W.tolist(),
        "heads": [_head_to_dict(h) for h in layer.heads],
    }


def _bundle_to_dict(bundle):
    return {
        "format_version": FORMAT_VERSION,
        "kind": bundle.kind,
        "tasks": [
            {
                "name": t.name,
                "class_count": t.class_count,
                "class_names": list(t.class_names) if t.class_names else None,
            }
            for t in bundle.tasks
        ],
        "normalization": {
            m: {"mean": n.mean.tolist(), "std": n.std.tolist()}
            for m, n in sorted(bundle.normalization.items())
        },
        "layers": {
            "unimodal": {
                m: _layer_to_dict(l) for m, l in sorted(bundle.unimodal.items())
            },
            "fusion": _layer_to_dict(bundle.fusion) if bundle.fusion else None,
        },
        "deep_heads": (
            {t: _layer_to_dict(l) for t, l in sorted(bundle.deep_heads.items())}
            if bundle.deep_heads else None
        ),
    }


def _matrix_from_list(values, rows, cols):
    # json stores 0-row matrices as [], which numpy reads as shape (0,)
    arr = np.asarray(values, dtype=np.float64)
    if rows == 0 and arr.size == 0:
        return np.zeros((0, cols))
    return arr


def _layer_from_dict(doc, tasks_by_name, context):
    try:
        heads = []
        for h in doc.get("heads", []):
            tname = h["task"]
            if tname not in tasks_by_name:
                raise DataError(
                    f"{context}: head references undeclared task {tname!r}"
                )
            heads.append(
                TaskHead(task=tasks_by_name[tname], s=np.asarray(h["s"]),
                         U=np.asarray(h["U"]))
            )
        d, h_dim, n = doc["visible_dim"], doc["hidden_dim"], doc["history_order"]
        layer = CrbmLayerParams(
            visible_dim=d,
            hidden_dim=h_dim,
            history_order=n,
            a=np.asarray(doc["a"]),
            b=np.asarray(doc["b"]),
            A=_matrix_from_list(doc["A"], n * d, d),
            B=_matrix_from_list(doc["B"], n * d, h_dim),
            W=np.asarray(doc["W"]),
            heads=tuple(heads),
            visible_kind=doc.get("visible_kind", GAUSSIAN),
        )
    except KeyError as exc:
        raise DataError(f"{context}: missing field {exc}") from exc
    except ShapeError as exc:
        raise ShapeError(f"{context}: {exc}") from exc
    return layer


def save_model(bundle: ModelBundle, path):
    """Write the bundle as JSON; numeric precision is preserved exactly."""
    bundle.validate()
    doc = _bundle_to_dict(bundle)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


def load_model(path) -> ModelBundle:
    """Read and validate a model file; raises DataError/ShapeError on problems."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"model file {path}: format_version {version!r} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise DataError(f"model file {path}: unknown kind {kind!r}")

    try:
        tasks = tuple(
            TaskSpec(
                name=t["name"],
                class_count=t["class_count"],
                class_names=tuple(t["class_names"]) if t.get("class_names") else None,
            )
            for t in doc.get("tasks", [])
        )
        tasks_by_name = {t.name: t for t in tasks}
        layers_doc = doc.get("layers") or {}
        unimodal = {
            m: _layer_from_dict(l, tasks_by_name, f"unimodal[{m!r}]")
            for m, l in (layers_doc.get("unimodal") or {}).items()
        }
        fusion_doc = layers_doc.get("fusion")
        fusion = (
            _layer_from_dict(fusion_doc, tasks_by_name, "fusion")
            if fusion_doc else None
        )
        deep_doc = doc.get("deep_heads")
        deep_heads = (
            {
                t: _layer_from_dict(l, tasks_by_name, f"deep_heads[{t!r}]")
                for t, l in deep_doc.items()
            }
            if deep_doc else None
        )
        normalization = {
            m: Normalization(mean=np.asarray(n["mean"]), std=np.asarray(n["std"]))
            for m, n in (doc.get("normalization") or {}).items()
        }
        bundle = ModelBundle(
            kind=kind, tasks=tasks, unimodal=unimodal, fusion=fusion,
            deep_heads=deep_heads, normalization=normalization,
        )
    except (ConfigError,) as exc:
        raise DataError(f"model file {path}: {exc}") from exc
    except KeyError as exc:
        raise DataError(f"model file {path}: missing field {exc}") from exc
    return bundle
