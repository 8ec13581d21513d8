"""Bit-exact on-disk storage for dataset tensors and trained detectors.

Datasets are one directory per sample with fixed filenames (logits.npy,
labels.npy, optional embeddings.npy), all NPY v1.0 little-endian C-order,
plus a top-level manifest.json listing C, V, class names and sample ids.
Trained detectors are zip archives holding manifest.json and one NPY blob
per parameter. Writes are atomic (temp file + rename) and byte-stable:
writing the same content twice produces identical files.
"""

import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field

import numpy as np

ARCHIVE_VERSION = 1
DATASET_MANIFEST = "manifest.json"

# Fixed zip member timestamp so archives are byte-identical across runs.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class DatasetSample:
    """Per-image tensors from a frozen segmentation model."""

    sample_id: str
    logits: np.ndarray
    labels: np.ndarray
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        if self.logits.ndim != 3:
            raise ValueError(f"{self.sample_id}: logits must be C x H x W, got {self.logits.shape}")
        if self.logits.shape[0] < 2:
            raise ValueError(f"{self.sample_id}: need C >= 2, got {self.logits.shape[0]}")
        if self.labels.shape != self.logits.shape[1:]:
            raise ValueError(
                f"{self.sample_id}: labels shape {self.labels.shape} does not match "
                f"logits spatial shape {self.logits.shape[1:]}"
            )
        if self.embeddings is not None and self.embeddings.shape[1:] != self.logits.shape[1:]:
            raise ValueError(
                f"{self.sample_id}: embeddings spatial shape {self.embeddings.shape[1:]} "
                f"does not match logits spatial shape {self.logits.shape[1:]}"
            )


@dataclass
class ModelArchive:
    """Trained detector parameters plus the hyperparameter manifest."""

    manifest: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)

    REQUIRED_KEYS = ("version", "C", "V", "L", "P", "K", "hidden_width", "cov_mode", "seed")

    def validate(self):
        for key in self.REQUIRED_KEYS:
            if key not in self.manifest:
                raise ValueError(f"model manifest missing required key {key!r}")
        declared = self.manifest.get("params", {})
        for name, shape in declared.items():
            if name not in self.params:
                raise ValueError(f"model archive missing parameter blob {name!r}")
            if tuple(self.params[name].shape) != tuple(shape):
                raise ValueError(
                    f"parameter {name!r}: declared shape {tuple(shape)} does not match "
                    f"blob shape {self.params[name].shape}"
                )
        for name in self.params:
            if name not in declared:
                raise ValueError(f"parameter blob {name!r} not declared in the manifest")


def atomic_write_bytes(path, payload):
    """Write bytes to `path` via a temp file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _npy_bytes(arr):
    """Serialize an array as NPY v1.0, little-endian, C-order."""
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), version=(1, 0))
    return buf.getvalue()


def write_npy(path, arr):
    atomic_write_bytes(path, _npy_bytes(arr))


def read_npy(path, expected_kind, name):
    """Load an NPY file and check its dtype family.

    expected_kind "f" accepts 16/32/64-bit floats (upcast to the stored
    precision's natural numpy dtype); "i" accepts signed integers.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{name}: missing file {path}")
    arr = np.load(path, allow_pickle=False)
    if arr.dtype.kind != expected_kind:
        kinds = {"f": "floating-point", "i": "signed integer"}
        raise ValueError(f"{name}: expected {kinds[expected_kind]} dtype in {path}, got {arr.dtype}")
    return arr


def write_sample(root, sample):
    """Write one DatasetSample as a directory of NPY files."""
    sample_dir = os.path.join(root, sample.sample_id)
    os.makedirs(sample_dir, exist_ok=True)
    write_npy(os.path.join(sample_dir, "logits.npy"), sample.logits.astype("<f4"))
    write_npy(os.path.join(sample_dir, "labels.npy"), sample.labels.astype("<i4"))
    if sample.embeddings is not None:
        write_npy(os.path.join(sample_dir, "embeddings.npy"), sample.embeddings.astype("<f4"))


def read_sample(sample_dir):
    """Read one sample directory back into a DatasetSample."""
    sample_id = os.path.basename(os.path.normpath(sample_dir))
    logits = read_npy(os.path.join(sample_dir, "logits.npy"), "f", f"{sample_id}/logits")
    labels = read_npy(os.path.join(sample_dir, "labels.npy"), "i", f"{sample_id}/labels")
    if logits.ndim != 3:
        raise ValueError(f"{sample_id}: logits must be C x H x W, got shape {logits.shape}")
    if labels.shape != logits.shape[1:]:
        raise ValueError(
            f"{sample_id}: labels shape {labels.shape} does not match expected "
            f"spatial shape {logits.shape[1:]}"
        )
    emb_path = os.path.join(sample_dir, "embeddings.npy")
    embeddings = None
    if os.path.isfile(emb_path):
        embeddings = read_npy(emb_path, "f", f"{sample_id}/embeddings")
        if embeddings.shape[1:] != logits.shape[1:]:
            raise ValueError(
                f"{sample_id}: embeddings shape {embeddings.shape} does not match "
                f"expected spatial shape {logits.shape[1:]}"
            )
    return DatasetSample(sample_id=sample_id, logits=logits, labels=labels, embeddings=embeddings)


def write_dataset_manifest(root, n_classes, embed_dim, class_names, sample_ids):
    doc = {
        "C": int(n_classes),
        "V": int(embed_dim),
        "class_names": list(class_names),
        "sample_ids": list(sample_ids),
    }
    payload = json.dumps(doc, indent=2, sort_keys=True).encode("utf-8") + b"\n"
    atomic_write_bytes(os.path.join(root, DATASET_MANIFEST), payload)


def read_dataset_manifest(root):
    path = os.path.join(root, DATASET_MANIFEST)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"dataset manifest missing: {path}")
    with open(path, "rb") as fp:
        doc = json.load(fp)
    for key in ("C", "V", "sample_ids"):
        if key not in doc:
            raise ValueError(f"dataset manifest {path} missing key {key!r}")
    return doc


def iter_samples(root):
    """Yield DatasetSamples in manifest order."""
    doc = read_dataset_manifest(root)
    for sample_id in doc["sample_ids"]:
        yield read_sample(os.path.join(root, sample_id))


def write_model(archive, path):
    """Write a ModelArchive as a deterministic zip file."""
    manifest = dict(archive.manifest)
    manifest["params"] = {name: list(arr.shape) for name, arr in archive.params.items()}
    full = ModelArchive(manifest=manifest, params=archive.params)
    full.validate()

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        payload = json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8") + b"\n"
        zf.writestr(zipfile.ZipInfo("manifest.json", date_time=_ZIP_EPOCH), payload)
        for name in sorted(archive.params):
            arr = np.ascontiguousarray(archive.params[name], dtype="<f8")
            zf.writestr(zipfile.ZipInfo(f"params/{name}.npy", date_time=_ZIP_EPOCH), _npy_bytes(arr))
    atomic_write_bytes(path, buf.getvalue())


def read_model(path):
    """Read a ModelArchive back; validates version, names and shapes."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"model archive missing: {path}")
    with zipfile.ZipFile(path, "r") as zf:
        names = set(zf.namelist())
        if "manifest.json" not in names:
            raise ValueError(f"model archive {path} has no manifest.json")
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        version = manifest.get("version")
        if version != ARCHIVE_VERSION:
            raise ValueError(f"model archive version {version!r} unsupported (expected {ARCHIVE_VERSION})")
        params = {}
        for name in manifest.get("params", {}):
            member = f"params/{name}.npy"
            if member not in names:
                raise ValueError(f"model archive missing parameter blob {name!r}")
            params[name] = np.load(io.BytesIO(zf.read(member)), allow_pickle=False)
    archive = ModelArchive(manifest=manifest, params=params)
    archive.validate()
    return archive
