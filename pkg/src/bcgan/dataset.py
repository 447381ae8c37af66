"""
Dataset storage
Subject generation to RVOL files, the split manifest, and the 2-D slice view used for training
"""

import json
import logging
import os
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from src.bcgan.augment import augment
from src.bcgan.config import RunConfig
from src.bcgan.errors import DatasetError
from src.bcgan.phantom import VolumePair, generate_subject, normalize_slice
from src.bcgan.rng import derive_stream
from src.bcgan.rvol import read_rvol, write_rvol

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
VOLUME_FILES = {
    "contrast_a": "contrast_a.rvol",
    "contrast_b": "contrast_b.rvol",
    "labels": "labels.rvol",
    "lesion_mask": "lesion_mask.rvol",
}
SPLIT_NAMES = {2: ("train", "test"), 3: ("train", "calibration", "test")}


class SubjectEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subject_id: str
    seed: int
    split: str
    has_lesion: bool
    files: Dict[str, str]


class Manifest(BaseModel):
    """Subjects, their files (relative to the data directory) and the split"""

    model_config = ConfigDict(extra="forbid")

    version: int = 1
    seed: int
    volume_shape: Tuple[int, int, int]
    splits: Dict[str, List[str]]
    subjects: List[SubjectEntry]

    def entry(self, subject_id: str) -> SubjectEntry:
        for subject in self.subjects:
            if subject.subject_id == subject_id:
                return subject
        raise DatasetError(f"subject '{subject_id}' is not in the manifest")

    def split(self, name: str) -> List[str]:
        if name not in self.splits:
            raise DatasetError(f"manifest has no '{name}' split (has {', '.join(self.splits)})")
        return list(self.splits[name])


def subject_ids(count: int) -> List[str]:
    return [f"subject_{index:03d}" for index in range(count)]


def make_splits(ids: Sequence[str], ratios: Sequence[float], seed: int) -> Dict[str, List[str]]:
    """
    Shuffle subjects deterministically and cut them into train/test (or train/calibration/test)

    Args:
        ids: Subject identifiers
        ratios: Two or three positive fractions summing to 1
        seed: Run seed

    Returns:
        Split name -> sorted subject ids; splits are disjoint and cover ids

    Raises:
        DatasetError: Bad ratios or a split that would be empty
    """
    if len(ratios) not in SPLIT_NAMES:
        raise DatasetError(f"expected 2 or 3 split ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"split ratios {list(ratios)} must be positive and sum to 1")
    if len(set(ids)) != len(ids):
        raise DatasetError("subject ids are not unique")
    order = derive_stream(seed, "splits").permutation(len(ids))
    shuffled = [ids[i] for i in order]

    counts = [int(round(r * len(ids))) for r in ratios[:-1]]
    counts.append(len(ids) - sum(counts))
    splits: Dict[str, List[str]] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES[len(ratios)], counts):
        if count <= 0:
            raise DatasetError(f"split '{name}' would be empty ({len(ids)} subjects, ratios {list(ratios)})")
        splits[name] = sorted(shuffled[start:start + count])
        start += count
    return splits


def subject_seed(run_seed: int, index: int) -> int:
    return int(derive_stream(run_seed, "subject", index).integers(0, 2 ** 31 - 1))


def write_subject(pair: VolumePair, data_dir: str) -> Dict[str, str]:
    """Write the four volumes of a subject; returns relative file paths"""
    files: Dict[str, str] = {}
    for field, filename in VOLUME_FILES.items():
        relative = os.path.join("subjects", pair.subject_id, filename)
        write_rvol(getattr(pair, field), os.path.join(data_dir, relative))
        files[field] = relative
    return files


def generate_dataset(config: RunConfig, data_dir: str, progress=None) -> Manifest:
    """
    Generate all subjects of a run and write the manifest

    Args:
        config: Run configuration (phantom, data and seed sections are used)
        data_dir: Output directory
        progress: Optional callable invoked once per written subject
    """
    ids = subject_ids(config.data.num_subjects)
    splits = make_splits(ids, config.data.split_ratios, config.seed)
    split_of = {sid: name for name, members in splits.items() for sid in members}

    entries: List[SubjectEntry] = []
    for index, sid in enumerate(ids):
        seed = subject_seed(config.seed, index)
        pair = generate_subject(seed, config.phantom, subject_id=sid)
        files = write_subject(pair, data_dir)
        entries.append(SubjectEntry(subject_id=sid, seed=seed, split=split_of[sid],
                                    has_lesion=pair.has_lesion, files=files))
        if progress is not None:
            progress()

    manifest = Manifest(seed=config.seed, volume_shape=tuple(config.phantom.volume_shape), splits=splits,
                        subjects=entries)
    write_manifest(manifest, data_dir)
    logger.info("generated %d subjects in %s (%s)", len(entries), data_dir,
                ", ".join(f"{name}={len(members)}" for name, members in splits.items()))
    return manifest


def write_manifest(manifest: Manifest, data_dir: str) -> None:
    os.makedirs(data_dir, exist_ok=True)
    with open(os.path.join(data_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(data_dir: str) -> Manifest:
    path = os.path.join(data_dir, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return Manifest.model_validate(json.load(f))
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc


def load_subject(data_dir: str, entry: SubjectEntry) -> VolumePair:
    volumes = {field: read_rvol(os.path.join(data_dir, entry.files[field])) for field in VOLUME_FILES}
    return VolumePair(
        contrast_a=volumes["contrast_a"],
        contrast_b=volumes["contrast_b"],
        labels=np.rint(volumes["labels"]).astype(np.uint8),
        lesion_mask=volumes["lesion_mask"] > 0.5,
        subject_id=entry.subject_id,
        seed=entry.seed,
    )


def load_split(data_dir: str, split: str, manifest: Optional[Manifest] = None) -> List[VolumePair]:
    manifest = manifest if manifest is not None else read_manifest(data_dir)
    return [load_subject(data_dir, manifest.entry(sid)) for sid in manifest.split(split)]


def volume_slices(volume: np.ndarray) -> np.ndarray:
    """Per-slice normalized (Z, X, Y) stack of an [x, y, z] volume"""
    return np.stack([normalize_slice(volume[:, :, k]) for k in range(volume.shape[2])])


def normalized_volume(volume: np.ndarray) -> np.ndarray:
    """The [x, y, z] volume with every z-slice normalized to [0, 1]"""
    return np.moveaxis(volume_slices(volume), 0, 2)


class SliceDataset:
    """All 2-D (source, target) slices of a set of subjects"""

    def __init__(self, sources: np.ndarray, targets: np.ndarray):
        if sources.shape != targets.shape or sources.ndim != 3:
            raise DatasetError(f"slice stacks disagree: {sources.shape} vs {targets.shape}")
        if len(sources) == 0:
            raise DatasetError("slice dataset is empty")
        self.sources = sources.astype(np.float32, copy=False)
        self.targets = targets.astype(np.float32, copy=False)

    @classmethod
    def from_subjects(cls, pairs: Sequence[VolumePair]) -> "SliceDataset":
        if not pairs:
            raise DatasetError("no subjects to slice")
        sources = np.concatenate([volume_slices(pair.contrast_a) for pair in pairs])
        targets = np.concatenate([volume_slices(pair.contrast_b) for pair in pairs])
        return cls(sources, targets)

    def __len__(self) -> int:
        return len(self.sources)

    def batches(self, rng: np.random.Generator, batch_size: int, resize_to: int,
                crop_to: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Shuffled, augmented (B, 1, S, S) source/target batches covering every slice once"""
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            pairs = [augment(self.sources[i], self.targets[i], rng, resize_to, crop_to)
                     for i in order[start:start + batch_size]]
            yield (np.stack([p[0] for p in pairs])[:, None], np.stack([p[1] for p in pairs])[:, None])
