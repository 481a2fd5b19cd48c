"""
Seeded synthetic federations with feature-shifted clients.

Classification clients draw Gaussian class clusters around class means fixed on a
circle in the first feature plane. Each client rotates that plane and offsets the
features by its own mean shift, so a shift along the first feature moves the
class boundary.
Segmentation clients draw g x g images of a random blob whose intensity and
contrast are client specific. Each client owns a random stream derived from the
federation seed and its id, so adding a client never perturbs the others.
"""
import hashlib
from typing import List, Sequence, Tuple, Union

import numpy as np
import structlog

from fedce.exceptions.errors import EmptyDatasetError, FederationSpecError, SplitError
from fedce.models.federation import (
    ClientDataset,
    ClientShift,
    FederationSpec,
    Sample,
    SampleSet,
    Task,
)

logger = structlog.get_logger(__name__)

MASK64 = (1 << 64) - 1


def derive_client_seed(seed: int, client_id: int) -> int:
    """seed XOR a stable 64-bit hash of the client id."""
    digest = hashlib.blake2b(f"client-{client_id}".encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & MASK64


def _client_streams(spec: FederationSpec, client_id: int) -> List[np.random.Generator]:
    client_seed = derive_client_seed(spec.seed, client_id) if spec.per_client_streams else spec.seed
    children = np.random.SeedSequence(client_seed).spawn(3)
    # shift parameters, samples, split permutation
    return [np.random.default_rng(child) for child in children]


def _default_shift(spec: FederationSpec, rng: np.random.Generator) -> ClientShift:
    offset = rng.uniform(-spec.shift_scale, spec.shift_scale, size=spec.offset_dim)
    rotation = rng.uniform(-spec.max_rotation, spec.max_rotation)
    contrast = float(np.exp(rng.uniform(-0.2, 0.2))) if spec.task == Task.SEGMENTATION else 1.0
    return ClientShift(
        mean_offset=[float(v) for v in offset],
        rotation=float(rotation),
        noise_scale=1.0,
        contrast=contrast,
    )


def resolve_shifts(spec: FederationSpec) -> List[ClientShift]:
    """Effective per-client shift parameters, outlier amplification included."""
    shifts = []
    for client_id in range(spec.n_clients):
        if spec.client_shift is not None:
            shift = spec.client_shift[client_id]
            if not shift.mean_offset:
                shift = shift.model_copy(update={"mean_offset": [0.0] * spec.offset_dim})
        else:
            shift = _default_shift(spec, _client_streams(spec, client_id)[0])
        if client_id == spec.outlier_client:
            offset = list(shift.mean_offset)
            offset[0] += spec.outlier_shift
            shift = shift.model_copy(update={"mean_offset": offset})
        shifts.append(shift)

    if spec.outlier_client is not None:
        outlier_distance = shifts[spec.outlier_client].distance()
        others = [s.distance() for i, s in enumerate(shifts) if i != spec.outlier_client]
        if others and outlier_distance <= max(others):
            raise FederationSpecError(
                f"outlier client {spec.outlier_client} shift distance {outlier_distance:.4f} "
                f"does not exceed the largest other client distance {max(others):.4f}"
            )
    return shifts


def _class_means(spec: FederationSpec) -> np.ndarray:
    """Class means evenly spaced on a circle of radius class_separation in the first feature plane."""
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    means = np.zeros((spec.n_classes, spec.n_features))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    return means * spec.class_separation


def _rotate(features: np.ndarray, angle: float) -> np.ndarray:
    if angle == 0.0:
        return features
    out = features.copy()
    c, s = np.cos(angle), np.sin(angle)
    out[:, 0] = c * features[:, 0] - s * features[:, 1]
    out[:, 1] = s * features[:, 0] + c * features[:, 1]
    return out


def _classification_samples(
    spec: FederationSpec, shift: ClientShift, n: int, rng: np.random.Generator
) -> SampleSet:
    means = _class_means(spec)
    labels = rng.permutation(np.arange(n) % spec.n_classes).astype(np.int64)
    noise = rng.standard_normal((n, spec.n_features)) * shift.noise_scale
    features = _rotate(means[labels] + noise, shift.rotation) + np.asarray(shift.mean_offset)
    return SampleSet(features=features, labels=labels)


def _blob_masks(g: int, n: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.mgrid[0:g, 0:g]
    centers = rng.uniform(g / 4, 3 * g / 4, size=(n, 2))
    radii = rng.uniform(g / 6, g / 3, size=n)
    dist = np.sqrt(
        (rows[None] + 0.5 - centers[:, 0, None, None]) ** 2
        + (cols[None] + 0.5 - centers[:, 1, None, None]) ** 2
    )
    masks = (dist <= radii[:, None, None]).astype(np.float64)
    # every blob covers at least the cell holding its centre
    ci = np.clip(centers.astype(np.int64), 0, g - 1)
    masks[np.arange(n), ci[:, 0], ci[:, 1]] = 1.0
    return masks.reshape(n, g * g)


def _segmentation_samples(
    spec: FederationSpec, shift: ClientShift, n: int, rng: np.random.Generator
) -> SampleSet:
    masks = _blob_masks(spec.grid_size, n, rng)
    raw = masks + rng.standard_normal(masks.shape) * 0.35 * shift.noise_scale
    features = shift.contrast * raw + shift.mean_offset[0]
    return SampleSet(features=features, labels=masks)


def split_client(
    samples: Union[SampleSet, Sequence[Sample]],
    ratios: Tuple[float, float, float] = (0.5, 0.25, 0.25),
    seed: Union[int, np.random.Generator] = 0,
) -> Tuple[SampleSet, SampleSet, SampleSet]:
    """
    Deterministic shuffled train/val/test split.

    Validation and test receive floor(r * n) samples; the remainder goes to train.

    Raises:
        SplitError: empty input, fewer than 4 samples, or invalid ratios
    """
    if not isinstance(samples, SampleSet):
        if len(samples) == 0:
            raise SplitError("cannot split an empty sample sequence")
        samples = SampleSet.from_samples(list(samples))
    n = len(samples)
    if n == 0:
        raise SplitError("cannot split an empty sample sequence")
    if n < 4:
        raise SplitError(f"need at least 4 samples to split, got {n}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"split ratios {tuple(ratios)} must be nonnegative and sum to 1")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    train = samples.take(order[:n_train])
    val = samples.take(order[n_train : n_train + n_val])
    test = samples.take(order[n_train + n_val :])
    return train, val, test


def make_free_rider(base_sample: Sample, repeat: int, client_id: int = 0) -> ClientDataset:
    """
    Client that inflates its data by repeating one sample.

    Train holds `repeat` copies; val and test hold one copy each.
    """
    if repeat < 1:
        raise FederationSpecError(f"free-rider repeat must be >= 1, got {repeat}")
    one = SampleSet.from_samples([base_sample])
    train = SampleSet(
        features=np.repeat(one.features, repeat, axis=0),
        labels=np.repeat(one.labels, repeat, axis=0),
    )
    return ClientDataset(client_id=client_id, train=train, val=one, test=one, is_free_rider=True)


def _with_sample_weights(clients: List[ClientDataset]) -> List[ClientDataset]:
    counts = np.array([c.n_train for c in clients], dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyDatasetError("federation has no training samples")
    return [c.with_weight(float(n / total)) for c, n in zip(clients, counts)]


def generate_client_samples(spec: FederationSpec, client_id: int, shift: ClientShift) -> SampleSet:
    """All samples of one client before splitting."""
    _, sample_rng, _ = _client_streams(spec, client_id)
    n = spec.samples_per_client[client_id]
    if spec.task == Task.SEGMENTATION:
        return _segmentation_samples(spec, shift, n, sample_rng)
    return _classification_samples(spec, shift, n, sample_rng)


def generate_federation(spec: FederationSpec) -> List[ClientDataset]:
    """
    Generate the N client datasets of a federation.

    Identical spec (seed included) yields bit-identical data. The free-rider
    client, if any, replaces its data by repeats of its first generated sample.

    Raises:
        FederationSpecError: the outlier does not end up strictly most shifted
    """
    shifts = resolve_shifts(spec)
    clients = []
    for client_id, shift in enumerate(shifts):
        samples = generate_client_samples(spec, client_id, shift)
        if spec.free_rider is not None and spec.free_rider.client == client_id:
            clients.append(make_free_rider(samples[0], spec.free_rider.repeat, client_id))
            continue
        split_rng = _client_streams(spec, client_id)[2]
        train, val, test = split_client(samples, spec.split_ratios, split_rng)
        clients.append(ClientDataset(client_id=client_id, train=train, val=val, test=test))

    clients = _with_sample_weights(clients)
    logger.debug(
        "federation_generated",
        n_clients=spec.n_clients,
        task=spec.task.value,
        seed=spec.seed,
        train_counts=[c.n_train for c in clients],
    )
    return clients


def subset_federation(clients: Sequence[ClientDataset], keep: Sequence[int]) -> List[ClientDataset]:
    """Clients in `keep` (ascending), re-indexed from 0 with recomputed sample weights."""
    kept = [clients[i].with_id(new_id) for new_id, i in enumerate(sorted(keep))]
    if not kept:
        return []
    return _with_sample_weights(kept)


def client_projection(client: ClientDataset) -> np.ndarray:
    """First feature coordinate of every sample a client holds."""
    return np.concatenate(
        [client.train.features[:, 0], client.val.features[:, 0], client.test.features[:, 0]]
    )


def pooled_projection(clients: Sequence[ClientDataset]) -> np.ndarray:
    return np.concatenate([client_projection(c) for c in clients])
