import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config import IGNORE_INDEX, SceneConfig, TrainConfig
from utils.label_groups import dataset_mapping, remap_labels
from utils.storage import DatasetFile, read_dataset, write_dataset
from utils.synthetic import generate_scene

logger = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, np.ndarray]

# fixed input normalisation for 8-bit images
PIXEL_MEAN = 127.5
PIXEL_SCALE = 64.0


def normalize_images(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 ``[B, 3, H, W]`` to zero-centred floats."""
    return ((np.asarray(images, dtype=np.float64) - PIXEL_MEAN) / PIXEL_SCALE).astype(dtype)


def augment_sample(image: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                   max_shift: Optional[int] = None) -> Sample:
    """
    Horizontal flip, per-channel brightness/contrast jitter and a shift-and-pad crop.

    The crop keeps the image size: the view shifts by up to ``max_shift`` pixels,
    image borders are edge-replicated and uncovered labels become ``ignore_index``.
    """
    height, width = labels.shape
    max_shift = max_shift if max_shift is not None else max(1, min(height, width) // 8)
    image = image.astype(np.float64)
    labels = labels.copy()
    if rng.random() < 0.5:
        image = image[:, :, ::-1]
        labels = labels[:, ::-1]
    contrast = rng.uniform(0.8, 1.2, size=(3, 1, 1))
    brightness = rng.uniform(-20.0, 20.0, size=(3, 1, 1))
    mean = image.mean(axis=(1, 2), keepdims=True)
    image = (image - mean) * contrast + mean + brightness
    dy, dx = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
    if dy or dx:
        padded = np.pad(image, ((0, 0), (max_shift, max_shift), (max_shift, max_shift)), mode='edge')
        padded_labels = np.pad(labels, max_shift, mode='constant', constant_values=IGNORE_INDEX)
        top, left = max_shift + dy, max_shift + dx
        image = padded[:, top:top + height, left:left + width]
        labels = padded_labels[top:top + height, left:left + width]
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


class BatchStream:
    """
    Endless seeded batches: one permutation per epoch, stream ``[seed, epoch]``.

    Args:
        samples: ``(image, labels)`` pairs.
        batch_size (int): Images per batch; the last short batch of an epoch is dropped
            when at least one full batch exists.
        seed (int): Shuffling and augmentation seed.
        augment (bool): Apply :func:`augment_sample`.
        dtype: Float dtype of the image batch.
    """

    def __init__(self, samples: Sequence[Sample], batch_size: int, seed: int, augment: bool = False,
                 dtype=np.float32):
        if not samples:
            raise ValueError("cannot draw batches from an empty dataset")
        self.samples = list(samples)
        self.batch_size = min(batch_size, len(self.samples))
        self.seed = seed
        self.augment = augment
        self.dtype = dtype

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        epoch = 0
        while True:
            order = np.random.default_rng([self.seed, epoch]).permutation(len(self.samples))
            full = len(order) // self.batch_size
            for b in range(full):
                yield self._batch(order[b * self.batch_size:(b + 1) * self.batch_size], epoch, b)
            epoch += 1

    def _batch(self, indices: np.ndarray, epoch: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, epoch, index, 1])
        images, labels = [], []
        for i in indices:
            image, label = self.samples[i]
            if self.augment:
                image, label = augment_sample(image, label, rng)
            images.append(image)
            labels.append(label)
        return normalize_images(np.stack(images), self.dtype), np.stack(labels)


class BackgroundLoader:
    """
    Runs a batch iterator on a daemon thread behind a bounded queue.

    Batches arrive in exactly the order the iterator produces them.
    """

    _DONE = object()

    def __init__(self, iterator: Iterator, max_prefetch: int = 4):
        self._iterator = iterator
        self._queue: 'queue.Queue' = queue.Queue(maxsize=max_prefetch)
        self._stop = threading.Event()
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._produce, name='cstr-loader', daemon=True)
        self._thread.start()

    def _produce(self):
        try:
            for item in self._iterator:
                while not self._stop.is_set():
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        except BaseException as e:
            self._error = e
        self._queue.put(self._DONE)

    def __iter__(self):
        return self

    def __next__(self):
        item = self._queue.get()
        if item is self._DONE:
            if self._error is not None:
                raise self._error
            raise StopIteration
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=1.0)


class DatasetService:
    """
    Service layer for synthetic dataset generation and dataset files.
    """
    def __init__(self, num_workers: int = 0):
        self.num_workers = num_workers

    def generate(self, scene: SceneConfig, count: int, start: int = 0) -> List[Sample]:
        """
        Generate scenes ``start .. start + count - 1``.

        returns: List of (image, labels)"""
        indices = range(start, start + count)
        if self.num_workers > 0 and count > 1:
            with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
                samples = list(pool.map(lambda i: generate_scene(scene, i), indices))
        else:
            samples = [generate_scene(scene, i) for i in indices]
        logger.debug(f"Generated {count} scenes of {scene.height}x{scene.width} (seed {scene.seed})")
        return samples

    def train_eval_split(self, cfg: TrainConfig, seed: Optional[int] = None) -> Tuple[List[Sample], List[Sample]]:
        """
        Training scenes take indices ``0 .. train_count - 1``; evaluation scenes
        follow, so both sets come from one seeded stream and never overlap.
        """
        scene = cfg.scene(seed)
        train = self.generate(scene, cfg.data.train_count)
        held_out = self.generate(scene, cfg.data.eval_count, start=cfg.data.train_count)
        return train, held_out

    def save(self, samples: Sequence[Sample], path: str, scene: SceneConfig) -> str:
        return write_dataset(samples, path, seed=scene.seed, digest=scene.digest(),
                             height=scene.height, width=scene.width)

    def load(self, path: str, expected_digest: Optional[str] = None,
             scene: Optional[SceneConfig] = None) -> DatasetFile:
        """
        Read a dataset file and log its recorded config digest.

        Args:
            expected_digest: When given, a different recorded digest raises ``DigestMismatch``.
            scene: Active scene config; a differing digest is only reported.
        """
        dataset = read_dataset(path, expected_digest=expected_digest)
        logger.info(f"Loaded {len(dataset)} scenes of {dataset.height}x{dataset.width} from {path} "
                    f"(seed {dataset.seed}, digest {dataset.digest})")
        if scene is not None and scene.digest() != dataset.digest:
            logger.info(f"{path} was not generated with the active scene config (digest {scene.digest()})")
        return dataset

    def remap(self, dataset: DatasetFile, ontology: str) -> List[Sample]:
        """Group the fine labels of ``dataset`` with the ``ontology`` table; ignored pixels pass through."""
        mapping = dataset_mapping(ontology)
        samples = [(image, remap_labels(labels, mapping, ignore_index=IGNORE_INDEX)) for image, labels in dataset]
        logger.debug(f"Remapped {len(samples)} label maps with the {ontology} table")
        return samples

    def batches(self, samples: Sequence[Sample], batch_size: int, seed: int, augment: bool = False,
                dtype=np.float32) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Endless batches; prefetched on a background thread when workers are enabled."""
        stream = iter(BatchStream(samples, batch_size, seed, augment=augment, dtype=dtype))
        if self.num_workers > 0:
            return BackgroundLoader(stream, max_prefetch=2 * self.num_workers)
        return stream
