"""
Portable binary files: datasets of image/label pairs and model checkpoints.

Dataset file::

    CSTRSEG v1 H=<h> W=<w> count=<n> seed=<s> digest=<config digest> payload=<sha256 prefix>\\n
    n x (3*H*W image bytes, channel-major | H*W label bytes)

Checkpoint file::

    CSTRCKPT v1 manifest=<bytes> payload=<bytes> digest=<sha256 prefix>\\n
    JSON manifest (tensor names, dtypes, shapes, offsets, metadata)
    raw little-endian tensor bytes
"""

import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CHUNK_SIZE = 8192  # 8KB
DATASET_MAGIC = 'CSTRSEG'
CHECKPOINT_MAGIC = 'CSTRCKPT'
FORMAT_VERSION = 'v1'
DIGEST_CHARS = 16

Sample = Tuple[np.ndarray, np.ndarray]


class DatasetFormatError(ValueError):
    """Raised when a file does not follow the dataset layout."""
    pass


class DatasetTruncated(DatasetFormatError):
    """Raised when the payload is shorter than the header promises."""

    def __init__(self, expected: int, actual: int, path: str = ''):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{path or 'dataset'}: payload truncated, expected {expected} bytes, found {actual}")


class DigestMismatch(DatasetFormatError):
    """Raised when a stored digest does not match the content or the expected config."""
    pass


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint header or manifest is malformed."""
    pass


def _digest(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return h.hexdigest()[:DIGEST_CHARS]


def _read_all(stream: BinaryIO) -> bytes:
    parts = []
    while True:
        chunk = stream.read(CHUNK_SIZE)
        if not chunk:
            break
        parts.append(chunk)
    return b''.join(parts)


def _parse_header(line: bytes, magic: str, error) -> Dict[str, str]:
    try:
        text = line.decode('ascii').strip()
    except UnicodeDecodeError:
        raise error(f"header is not ASCII text; not a {magic} file")
    parts = text.split()
    if len(parts) < 2 or parts[0] != magic:
        raise error(f"bad magic {parts[0] if parts else ''!r}; expected {magic}")
    if parts[1] != FORMAT_VERSION:
        raise error(f"unsupported {magic} version {parts[1]!r}; expected {FORMAT_VERSION}")
    fields = {}
    for item in parts[2:]:
        key, sep, value = item.partition('=')
        if not sep:
            raise error(f"malformed header field {item!r}")
        fields[key] = value
    return fields


# --------------------------------------------------------------------------- datasets
@dataclass
class DatasetFile:
    """
    Attributes:
        samples: ``(image [3, H, W] uint8, labels [H, W] uint8)`` pairs.
        height, width: Sample extents.
        seed: Generator seed recorded at write time.
        digest: Config digest recorded at write time.
    """
    samples: List[Sample]
    height: int
    width: int
    seed: int = 0
    digest: str = '0' * DIGEST_CHARS

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index) -> Sample:
        return self.samples[index]

    def images(self) -> np.ndarray:
        return np.stack([s[0] for s in self.samples]) if self.samples else np.zeros((0, 3, self.height, self.width), np.uint8)

    def labels(self) -> np.ndarray:
        return np.stack([s[1] for s in self.samples]) if self.samples else np.zeros((0, self.height, self.width), np.uint8)


def write_dataset(samples: Sequence[Sample], path: str, seed: int = 0, digest: Optional[str] = None,
                  height: Optional[int] = None, width: Optional[int] = None) -> str:
    """
    Write samples in the dataset format.

    Args:
        samples: ``(image, labels)`` pairs, all of one size.
        path: Output file; parent directories are created.
        seed: Generator seed for the header.
        digest: Config digest for the header.
        height, width: Required only for an empty dataset.

    Returns:
        str: ``path``.
    """
    samples = list(samples)
    if samples:
        height, width = np.asarray(samples[0][1]).shape
    elif height is None or width is None:
        raise DatasetFormatError("an empty dataset needs explicit height and width")
    chunks = []
    for index, (image, labels) in enumerate(samples):
        image = np.asarray(image)
        labels = np.asarray(labels)
        if image.shape != (3, height, width) or labels.shape != (height, width):
            raise DatasetFormatError(
                f"sample {index}: image {image.shape} / labels {labels.shape} do not match {height}x{width}")
        if image.dtype != np.uint8 or labels.dtype != np.uint8:
            raise DatasetFormatError(f"sample {index}: images and labels must be uint8")
        chunks.append(np.ascontiguousarray(image).tobytes())
        chunks.append(np.ascontiguousarray(labels).tobytes())
    payload = b''.join(chunks)
    digest = digest or '0' * DIGEST_CHARS
    header = (f"{DATASET_MAGIC} {FORMAT_VERSION} H={height} W={width} count={len(samples)} "
              f"seed={seed} digest={digest} payload={_digest(payload)}\n")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        for start in range(0, len(payload), CHUNK_SIZE):
            f.write(payload[start:start + CHUNK_SIZE])
    logger.debug(f"Wrote {len(samples)} samples ({len(payload)} bytes) to {path}")
    return path


def read_dataset(path: str, expected_digest: Optional[str] = None) -> DatasetFile:
    """
    Read and verify a dataset file.

    Args:
        path: Dataset file.
        expected_digest: When given, the header config digest must equal it.

    Raises:
        DatasetFormatError: Bad magic, version or header.
        DatasetTruncated: Payload shorter than ``count * 4 * H * W`` bytes.
        DigestMismatch: Payload or config digest disagreement.
    """
    with open(path, 'rb') as f:
        header_line = f.readline()
        payload = _read_all(f)
    fields = _parse_header(header_line, DATASET_MAGIC, DatasetFormatError)
    try:
        height, width, count = int(fields['H']), int(fields['W']), int(fields['count'])
        seed = int(fields['seed'])
        digest, payload_digest = fields['digest'], fields['payload']
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(f"{path}: incomplete header ({e})")
    per_sample = 4 * height * width
    expected = count * per_sample
    if len(payload) < expected:
        raise DatasetTruncated(expected, len(payload), path)
    if len(payload) > expected:
        raise DatasetFormatError(f"{path}: {len(payload) - expected} unexpected trailing bytes")
    if _digest(payload) != payload_digest:
        raise DigestMismatch(f"{path}: payload digest {_digest(payload)} does not match header {payload_digest}")
    if expected_digest is not None and digest != expected_digest:
        raise DigestMismatch(f"{path}: config digest {digest} does not match expected {expected_digest}")
    image_bytes = 3 * height * width
    buffer = np.frombuffer(payload, dtype=np.uint8)
    samples = []
    for i in range(count):
        start = i * per_sample
        image = buffer[start:start + image_bytes].reshape(3, height, width).copy()
        labels = buffer[start + image_bytes:start + per_sample].reshape(height, width).copy()
        samples.append((image, labels))
    logger.debug(f"Read {count} samples from {path}")
    return DatasetFile(samples=samples, height=height, width=width, seed=seed, digest=digest)


# ------------------------------------------------------------------------ checkpoints
@dataclass
class Checkpoint:
    """
    Attributes:
        state: Named parameters then buffers, in model enumeration order.
        meta: JSON-serialisable metadata (config, iteration, variant).
    """
    state: 'OrderedDict[str, np.ndarray]'
    meta: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(state: Mapping[str, np.ndarray], path: str, meta: Optional[Mapping[str, Any]] = None) -> str:
    """Write named arrays and metadata; returns ``path``."""
    entries, chunks, offset = [], [], 0
    for name, value in state.items():
        array = np.ascontiguousarray(value)
        little = array.astype(array.dtype.newbyteorder('<'), copy=False)
        raw = little.tobytes()
        entries.append({'name': name, 'dtype': little.dtype.str, 'shape': list(array.shape),
                        'offset': offset, 'nbytes': len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({'entries': entries, 'meta': dict(meta or {})}, sort_keys=True).encode('utf-8')
    payload = b''.join(chunks)
    header = (f"{CHECKPOINT_MAGIC} {FORMAT_VERSION} manifest={len(manifest)} payload={len(payload)} "
              f"digest={_digest(manifest, payload)}\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        f.write(manifest)
        f.write(payload)
    logger.debug(f"Saved checkpoint with {len(entries)} tensors to {path}")
    return path


def load_checkpoint(path: str) -> Checkpoint:
    """
    Raises:
        CheckpointFormatError: Bad header, sizes or manifest.
        DigestMismatch: Content does not match the header digest.
    """
    with open(path, 'rb') as f:
        header_line = f.readline()
        body = _read_all(f)
    fields = _parse_header(header_line, CHECKPOINT_MAGIC, CheckpointFormatError)
    try:
        manifest_len, payload_len, digest = int(fields['manifest']), int(fields['payload']), fields['digest']
    except (KeyError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: incomplete header ({e})")
    if len(body) != manifest_len + payload_len:
        raise CheckpointFormatError(
            f"{path}: expected {manifest_len + payload_len} bytes after the header, found {len(body)}")
    manifest_raw, payload = body[:manifest_len], body[manifest_len:]
    if _digest(manifest_raw, payload) != digest:
        raise DigestMismatch(f"{path}: checkpoint digest mismatch")
    try:
        manifest = json.loads(manifest_raw.decode('utf-8'))
    except ValueError as e:
        raise CheckpointFormatError(f"{path}: unreadable manifest ({e})")
    state = OrderedDict()
    for entry in manifest['entries']:
        raw = payload[entry['offset']:entry['offset'] + entry['nbytes']]
        array = np.frombuffer(raw, dtype=np.dtype(entry['dtype'])).reshape(entry['shape'])
        state[entry['name']] = array.astype(array.dtype.newbyteorder('='))
    return Checkpoint(state=state, meta=manifest.get('meta', {}))
