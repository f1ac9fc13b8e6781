"""Event records, event-stream file formats, synthetic event data and dataset manifests."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

BINARY_MAGIC = b"EVS1"
_HEADER = np.dtype([("width", "<u2"), ("height", "<u2"), ("count", "<u8")])
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])


class EventFormatError(ValueError):
    """Malformed event file (bad row, bad record, truncated body)."""


class EventValidationError(ValueError):
    """Event values outside their allowed domain."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass
class EventCloud:
    """Time-ordered events from a sensor of ``width`` x ``height`` pixels.

    Columns are stored as parallel integer arrays; ``t`` is in microseconds
    and ``p`` is +1 or -1.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int
    label: int | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise EventValidationError("event columns have different lengths")

    @classmethod
    def empty(cls, width, height, label=None):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, label)

    @classmethod
    def from_events(cls, events, width, height, label=None):
        arr = np.asarray([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height, label)

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventCloud):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.label == other.label
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "xytp")
        )

    def sorted(self):
        """Return a copy stably sorted by timestamp."""
        order = np.argsort(self.t, kind="stable")
        return EventCloud(self.x[order], self.y[order], self.t[order], self.p[order],
                          self.width, self.height, self.label)

    def validate(self):
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise EventValidationError(f"invalid sensor size {self.width}x{self.height}")
        bad = np.flatnonzero((self.x < 0) | (self.x >= self.width)
                             | (self.y < 0) | (self.y >= self.height))
        if bad.size:
            i = bad[0]
            raise EventValidationError(
                f"event {i} at ({self.x[i]}, {self.y[i]}) outside {self.width}x{self.height} sensor")
        if np.any(self.t < 0):
            raise EventValidationError("negative timestamp")
        if np.any((self.p != 1) & (self.p != -1)):
            raise EventValidationError("polarity must be +1 or -1")
        if np.any(np.diff(self.t) < 0):
            raise EventValidationError("timestamps are not non-decreasing")
        return self


# ---------------------------------------------------------------------------
# file formats


def read_events(path, format=None, width=None, height=None, label=None):
    """Read an event file (``csv`` or ``binary``) into a sorted, validated EventCloud.

    CSV files carry no sensor size in their rows; pass ``width``/``height``
    or rely on a ``# sensor W H`` comment line as written by
    :func:`write_events`.
    """
    path = Path(path)
    format = format or _guess_format(path)
    if format == "csv":
        cloud = _read_csv(path, width, height)
    elif format == "binary":
        cloud = _read_binary(path)
    else:
        raise ValueError(f"unknown event format {format!r}")
    cloud.label = label
    return cloud.sorted().validate()


def write_events(cloud, path, format=None):
    path = Path(path)
    format = format or _guess_format(path)
    cloud.validate()
    if format == "csv":
        _write_csv(cloud, path)
    elif format == "binary":
        _write_binary(cloud, path)
    else:
        raise ValueError(f"unknown event format {format!r}")


def _guess_format(path):
    return "csv" if path.suffix.lower() in (".csv", ".txt") else "binary"


def _read_csv(path, width, height):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if len(parts) == 3 and parts[0] == "sensor" and width is None and height is None:
                    try:
                        width, height = int(parts[1]), int(parts[2])
                    except ValueError:
                        raise EventFormatError(f"{path}:{lineno}: bad sensor comment {s!r}")
                continue
            fields = s.split(",")
            if len(fields) != 4:
                raise EventFormatError(f"{path}:{lineno}: expected 4 fields x,y,t,p, got {len(fields)}")
            try:
                x, y, t, p = (int(f) for f in fields)
            except ValueError:
                raise EventFormatError(f"{path}:{lineno}: non-integer field in {s!r}")
            if p not in (-1, 0, 1):
                raise EventFormatError(f"{path}:{lineno}: polarity {p} not in {{-1, 0, 1}}")
            rows.append((x, y, t, 1 if p == 1 else -1))
    if width is None or height is None:
        raise EventFormatError(f"{path}: sensor size not given and no '# sensor W H' comment")
    if not rows:
        return EventCloud.empty(width, height)
    return EventCloud.from_events(rows, width, height)


def _write_csv(cloud, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# sensor {cloud.width} {cloud.height}\n")
        for x, y, t, p in zip(cloud.x.tolist(), cloud.y.tolist(), cloud.t.tolist(), cloud.p.tolist()):
            fh.write(f"{x},{y},{t},{p}\n")


def _read_binary(path):
    data = Path(path).read_bytes()
    if data[:4] != BINARY_MAGIC:
        raise EventFormatError(f"{path}: offset 0: bad magic {data[:4]!r}, expected {BINARY_MAGIC!r}")
    hsize = 4 + _HEADER.itemsize
    if len(data) < hsize:
        raise EventFormatError(f"{path}: offset 4: truncated header")
    header = np.frombuffer(data, dtype=_HEADER, count=1, offset=4)[0]
    count = int(header["count"])
    body = len(data) - hsize
    if body != count * _RECORD.itemsize:
        whole = body // _RECORD.itemsize
        raise EventFormatError(
            f"{path}: offset {hsize + whole * _RECORD.itemsize}: header declares {count} events, "
            f"body holds {body / _RECORD.itemsize:g} records")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=hsize)
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if bad.size:
        raise EventFormatError(
            f"{path}: offset {hsize + bad[0] * _RECORD.itemsize}: polarity {rec['p'][bad[0]]} not in {{-1, 1}}")
    if np.any(rec["t"] > np.iinfo(np.int64).max):
        raise EventFormatError(f"{path}: timestamp exceeds int64 range")
    return EventCloud(rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"],
                      int(header["width"]), int(header["height"]))


def _write_binary(cloud, path):
    header = np.zeros(1, dtype=_HEADER)
    header["width"], header["height"], header["count"] = cloud.width, cloud.height, len(cloud)
    rec = np.zeros(len(cloud), dtype=_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = cloud.x, cloud.y, cloud.t, cloud.p
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(header.tobytes())
        fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# synthetic data

TRAJECTORIES = ("right", "down", "clockwise", "counterclockwise",
                "down_right", "up_right", "left", "up")


@dataclass
class SynthConfig:
    """Moving bright-disk scene parameters.

    ``speed`` scales the whole motion; 0 gives a static scene.
    ``noise_rate`` is the expected number of background events per second.
    """

    num_classes: int = 4
    width: int = 64
    height: int = 64
    duration_us: int = 100_000
    num_steps: int = 60
    radius: tuple = (7.0, 10.0)
    travel: float = 40.0
    speed: float = 1.0
    jitter: float = 5.0
    noise_rate: float = 10000.0

    def __post_init__(self):
        self.radius = tuple(self.radius)
        if not 2 <= self.num_classes <= len(TRAJECTORIES):
            raise ValueError(f"num_classes must be in [2, {len(TRAJECTORIES)}]")


def _trajectory(kind, tau, cfg, rng):
    """Disk centres (len(tau) x 2) for one motion family."""
    cx, cy = cfg.width / 2, cfg.height / 2
    jx, jy = rng.uniform(-cfg.jitter, cfg.jitter, size=2)
    s = cfg.speed * rng.uniform(0.85, 1.15)
    half = cfg.travel / 2
    if kind in ("clockwise", "counterclockwise"):
        rho = cfg.travel / 2.5 * rng.uniform(0.85, 1.15)
        theta0 = rng.uniform(-0.35, 0.35)
        # y grows downward, so increasing angle turns clockwise on screen
        sign = 1.0 if kind == "clockwise" else -1.0
        theta = theta0 + sign * 1.5 * math.pi * s * tau
        return np.column_stack([cx + jx + rho * np.cos(theta), cy + jy + rho * np.sin(theta)])
    dx, dy = {"right": (1, 0), "down": (0, 1), "left": (-1, 0), "up": (0, -1),
              "down_right": (0.7071, 0.7071), "up_right": (0.7071, -0.7071)}[kind]
    u = (tau - 0.5) * 2 * half * s
    return np.column_stack([cx + jx + dx * u, cy + jy + dy * u])


def generate_synthetic(class_id, config=None, seed=0):
    """Deterministic event stream of a bright disk following a class-specific path.

    Events are emitted where the rendered disk mask changes between
    consecutive frames: pixels switching on give +1, switching off give -1.
    """
    cfg = config or SynthConfig()
    if not 0 <= class_id < cfg.num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {cfg.num_classes})")
    rng = np.random.default_rng([seed, class_id])
    steps = cfg.num_steps
    tau = np.linspace(0.0, 1.0, steps + 1)
    centres = _trajectory(TRAJECTORIES[class_id], tau, cfg, rng)
    radius = rng.uniform(*cfg.radius)
    gx, gy = np.meshgrid(np.arange(cfg.width) + 0.5, np.arange(cfg.height) + 0.5)
    dt = cfg.duration_us / steps

    xs, ys, ts, ps = [], [], [], []
    prev = (gx - centres[0, 0]) ** 2 + (gy - centres[0, 1]) ** 2 < radius ** 2
    for k in range(1, steps + 1):
        cur = (gx - centres[k, 0]) ** 2 + (gy - centres[k, 1]) ** 2 < radius ** 2
        on = np.argwhere(cur & ~prev)
        off = np.argwhere(prev & ~cur)
        for idx, pol in ((on, 1), (off, -1)):
            if len(idx):
                ys.append(idx[:, 0])
                xs.append(idx[:, 1])
                ts.append(np.floor((k - 1 + rng.random(len(idx))) * dt).astype(np.int64))
                ps.append(np.full(len(idx), pol))
        prev = cur

    n_noise = rng.poisson(cfg.noise_rate * cfg.duration_us * 1e-6) if cfg.noise_rate > 0 else 0
    if n_noise:
        xs.append(rng.integers(0, cfg.width, n_noise))
        ys.append(rng.integers(0, cfg.height, n_noise))
        ts.append(rng.integers(0, cfg.duration_us, n_noise))
        ps.append(rng.choice([-1, 1], n_noise))
    if not xs:
        return EventCloud.empty(cfg.width, cfg.height, class_id)
    cloud = EventCloud(np.concatenate(xs), np.concatenate(ys), np.concatenate(ts),
                       np.concatenate(ps), cfg.width, cfg.height, class_id)
    return cloud.sorted().validate()


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Sample:
    id: str
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    """JSON-backed sample list. Paths are relative to the manifest file."""

    name: str
    num_classes: int
    samples: list = field(default_factory=list)
    seed: int = 0
    format: str = "binary"
    sensor: tuple = (64, 64)
    root: Path | None = None

    def __post_init__(self):
        self.samples = [s if isinstance(s, Sample) else Sample(**s) for s in self.samples]
        self.sensor = tuple(self.sensor)
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise EventValidationError("num_classes must be >= 2")
        ids = set()
        for s in self.samples:
            if not 0 <= s.label < self.num_classes:
                raise EventValidationError(f"sample {s.id}: label {s.label} >= num_classes")
            if s.split not in ("train", "test"):
                raise EventValidationError(f"sample {s.id}: split must be train or test")
            if s.id in ids:
                raise EventValidationError(f"duplicate sample id {s.id}")
            ids.add(s.id)
        train = {s.path for s in self.samples if s.split == "train"}
        test = {s.path for s in self.samples if s.split == "test"}
        if train & test:
            raise EventValidationError("train and test splits share files")

    def split(self, name):
        if name == "all":
            return list(self.samples)
        return [s for s in self.samples if s.split == name]

    def resolve(self, sample):
        p = Path(sample.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self, sample):
        return read_events(self.resolve(sample), self.format,
                           width=self.sensor[0], height=self.sensor[1], label=sample.label)

    def to_json(self):
        return json.dumps({
            "name": self.name,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "format": self.format,
            "sensor": list(self.sensor),
            "samples": [vars(s) for s in self.samples],
        }, indent=1)

    def save(self, path):
        path = Path(path)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        self.root = path.parent

    @classmethod
    def load_file(cls, path):
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        return cls(root=path.parent, **raw)


def stratified_split(labels, test_fraction=0.2, seed=0):
    """Per-class shuffled split; returns a list of 'train'/'test' aligned with ``labels``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = np.array(["train"] * len(labels), dtype=object)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n_test = int(round(len(idx) * test_fraction))
        out[idx[:n_test]] = "test"
    return out.tolist()


def synthesize_dataset(out_dir, num_classes=4, samples_per_class=100, seed=0,
                       config=None, format="binary", name="synthetic"):
    """Write a synthetic dataset and its manifest (80/20 stratified split)."""
    out_dir = Path(out_dir)
    cfg = config or SynthConfig(num_classes=num_classes)
    cfg.num_classes = num_classes
    ext = "csv" if format == "csv" else "evs"
    (out_dir / "events").mkdir(parents=True, exist_ok=True)
    labels, paths = [], []
    for c in range(num_classes):
        for i in range(samples_per_class):
            rel = os.path.join("events", f"c{c}_{i:05d}.{ext}")
            cloud = generate_synthetic(c, cfg, seed=seed * 1_000_003 + i)
            write_events(cloud, out_dir / rel, format)
            labels.append(c)
            paths.append(rel)
    splits = stratified_split(labels, 0.2, seed)
    samples = [Sample(id=Path(p).stem, path=p, label=l, split=s)
               for p, l, s in zip(paths, labels, splits)]
    manifest = DatasetManifest(name=name, num_classes=num_classes, samples=samples, seed=seed,
                               format=format, sensor=(cfg.width, cfg.height))
    manifest.save(out_dir / "manifest.json")
    return manifest
