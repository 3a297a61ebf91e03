"""Synthetic source/target dataset generator.

Each identity owns a raw prototype vector in R^d_in. A sample is the
prototype plus a camera-specific offset plus per-sample Gaussian noise
(both scaled by ``camera_noise``). Target prototypes are additionally
shifted by ``domain_shift`` along one random direction shared by the whole
target domain, which is what makes a source-only model degrade on it.

Camera offsets are drawn wider than the per-sample noise (by
``CAMERA_OFFSET_SCALE``): cross-camera appearance change is the dominant
nuisance, the way viewpoint dwarfs pixel noise in practice.

Confuser identities reproduce the whole-body-confusion failure mode:
``confuser_fraction`` of the target identities are paired up, each pair
sharing the bottom half of its prototype while the upper halves stay
independent. Whole-vector similarity then confuses the pair even though
the upper half separates it cleanly.

Raw inputs deliberately live off the unit sphere; only encoder outputs are
normalized. Target identity labels are carried for evaluation only and
must never reach the trainer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidConfigError

# camera offsets dominate per-sample noise by this factor
CAMERA_OFFSET_SCALE = 1.0


@dataclass
class SynthConfig:
    num_ids_source: int = 40
    num_ids_target: int = 60
    imgs_per_id: int = 20
    d_in: int = 32
    num_cameras: int = 4
    camera_noise: float = 0.55
    domain_shift: float = 2.0
    confuser_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("num_ids_source", "num_ids_target", "imgs_per_id", "num_cameras"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.d_in < 2 or self.d_in % 2 != 0:
            raise InvalidConfigError(f"d_in must be even and >= 2, got {self.d_in}")
        if self.camera_noise < 0.0:
            raise InvalidConfigError("camera_noise must be >= 0")
        if self.domain_shift < 0.0:
            raise InvalidConfigError("domain_shift must be >= 0")
        if not 0.0 <= self.confuser_fraction <= 1.0:
            raise InvalidConfigError("confuser_fraction must be in [0, 1]")
        if self.num_confusers % 2 != 0:
            raise InvalidConfigError(
                f"confuser_fraction * num_ids_target must round to an even count, "
                f"got {self.num_confusers}"
            )

    @property
    def num_confusers(self) -> int:
        return round(self.confuser_fraction * self.num_ids_target)


@dataclass
class SynthDataset:
    samples: np.ndarray
    true_ids: np.ndarray
    camera_ids: np.ndarray
    domain: str
    confuser_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]


def _materialize(
    prototypes: np.ndarray,
    imgs_per_id: int,
    num_cameras: int,
    camera_noise: float,
    rng: np.random.Generator,
    domain: str,
    confuser_ids: np.ndarray,
) -> SynthDataset:
    num_ids, d_in = prototypes.shape
    cam_offsets = rng.normal(
        0.0, CAMERA_OFFSET_SCALE * camera_noise, size=(num_cameras, d_in)
    )
    n = num_ids * imgs_per_id
    samples = np.empty((n, d_in))
    true_ids = np.empty(n, dtype=np.intp)
    camera_ids = np.empty(n, dtype=np.intp)
    row = 0
    for ident in range(num_ids):
        for j in range(imgs_per_id):
            cam = j % num_cameras  # cycling guarantees cross-camera matches
            samples[row] = (
                prototypes[ident]
                + cam_offsets[cam]
                + rng.normal(0.0, camera_noise, size=d_in)
            )
            true_ids[row] = ident
            camera_ids[row] = cam
            row += 1
    return SynthDataset(
        samples=samples,
        true_ids=true_ids,
        camera_ids=camera_ids,
        domain=domain,
        confuser_ids=confuser_ids,
    )


def generate(config: SynthConfig) -> tuple[SynthDataset, SynthDataset]:
    """Deterministically generate the (source, target) dataset pair."""
    rng = np.random.default_rng(config.seed)
    d = config.d_in
    half = d // 2

    source_protos = rng.normal(size=(config.num_ids_source, d))
    target_protos = rng.normal(size=(config.num_ids_target, d))

    # confuser pairs: the shared bottom half is boosted so whole-vector
    # similarity strongly confuses the pair, while the independent upper
    # halves still separate it cleanly
    n_conf = config.num_confusers
    confuser_ids = np.arange(n_conf, dtype=np.intp)
    bottom_boost = 1.5
    for a in range(0, n_conf, 2):
        target_protos[a, half:] *= bottom_boost
        target_protos[a + 1, half:] = target_protos[a, half:]

    if config.domain_shift > 0.0:
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        target_protos = target_protos + config.domain_shift * direction

    source = _materialize(
        source_protos,
        config.imgs_per_id,
        config.num_cameras,
        config.camera_noise,
        rng,
        domain="source",
        confuser_ids=np.empty(0, dtype=np.intp),
    )
    target = _materialize(
        target_protos,
        config.imgs_per_id,
        config.num_cameras,
        config.camera_noise,
        rng,
        domain="target",
        confuser_ids=confuser_ids,
    )
    return source, target


@dataclass
class Batch:
    source_x: np.ndarray
    source_labels: np.ndarray
    target_x: np.ndarray
    target_indices: np.ndarray


def make_batches(
    source: SynthDataset,
    target: SynthDataset,
    batch_size: int,
    seed: int | np.random.SeedSequence,
) -> list[Batch]:
    """Half-source, half-target batches covering the target split once.

    One epoch is a shuffled pass over every target index; each chunk is
    matched with the same number of source samples drawn uniformly (with
    replacement) from the labelled pool.
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise InvalidConfigError(f"batch_size must be even and >= 2, got {batch_size}")
    rng = np.random.default_rng(seed)
    half = batch_size // 2
    perm = rng.permutation(target.num_samples)
    batches = []
    for start in range(0, target.num_samples, half):
        t_idx = perm[start : start + half]
        s_idx = rng.integers(0, source.num_samples, size=t_idx.size)
        batches.append(
            Batch(
                source_x=source.samples[s_idx],
                source_labels=source.true_ids[s_idx],
                target_x=target.samples[t_idx],
                target_indices=t_idx,
            )
        )
    return batches


# -- serialization ----------------------------------------------------------


def save_dataset(ds: SynthDataset, path: str) -> None:
    """CSV with one row per sample: sample_id, true_id, camera_id, x0..x{d-1}."""
    d = ds.samples.shape[1]
    with open(path, "w") as fh:
        fh.write("sample_id,true_id,camera_id," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for i in range(ds.num_samples):
            coords = ",".join(f"{x:.17g}" for x in ds.samples[i])
            fh.write(f"{i},{ds.true_ids[i]},{ds.camera_ids[i]},{coords}\n")


def load_dataset(path: str, domain: str, confuser_ids: np.ndarray) -> SynthDataset:
    rows = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            rows.append(line.rstrip("\n").split(","))
    true_ids = np.array([int(r[1]) for r in rows], dtype=np.intp)
    camera_ids = np.array([int(r[2]) for r in rows], dtype=np.intp)
    samples = np.array([[float(x) for x in r[3:]] for r in rows])
    return SynthDataset(
        samples=samples,
        true_ids=true_ids,
        camera_ids=camera_ids,
        domain=domain,
        confuser_ids=np.asarray(confuser_ids, dtype=np.intp),
    )


def save_pair(source: SynthDataset, target: SynthDataset, out_dir: str, config: SynthConfig) -> list[str]:
    src_path = os.path.join(out_dir, "source.csv")
    tgt_path = os.path.join(out_dir, "target.csv")
    meta_path = os.path.join(out_dir, "dataset_meta.json")
    save_dataset(source, src_path)
    save_dataset(target, tgt_path)
    with open(meta_path, "w") as fh:
        json.dump(
            {"config": asdict(config), "confuser_ids": target.confuser_ids.tolist()},
            fh,
            indent=2,
        )
    return [src_path, tgt_path, meta_path]


def load_pair(data_dir: str) -> tuple[SynthDataset, SynthDataset, SynthConfig]:
    with open(os.path.join(data_dir, "dataset_meta.json")) as fh:
        meta = json.load(fh)
    config = SynthConfig(**meta["config"])
    confusers = np.asarray(meta["confuser_ids"], dtype=np.intp)
    source = load_dataset(os.path.join(data_dir, "source.csv"), "source", np.empty(0, dtype=np.intp))
    target = load_dataset(os.path.join(data_dir, "target.csv"), "target", confusers)
    return source, target, config
