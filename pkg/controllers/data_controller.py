import logging
import os
import re
from typing import Tuple

from config import ConfigError, SceneConfig
from services.dataset_service import DatasetService
from utils.label_groups import ONTOLOGIES
from utils.label_noise import DEFAULT_FLIP_PROB, noise_summary, perturb_samples
from utils.storage import write_dataset

logger = logging.getLogger(__name__)

SIZE_PATTERN = re.compile(r'^\s*(\d+)\s*[xX]\s*(\d+)\s*$')


def parse_size(text: str) -> Tuple[int, int]:
    """
    ``'64x96'`` to ``(64, 96)``.

    Raises:
        ConfigError: If the text is not ``HxW`` or a side is not a positive multiple of 16.
    """
    match = SIZE_PATTERN.match(text or '')
    if not match:
        raise ConfigError(f"--size must look like HxW, got {text!r}")
    height, width = int(match.group(1)), int(match.group(2))
    if height <= 0 or width <= 0 or height % 16 or width % 16:
        raise ConfigError(f"--size sides must be positive multiples of 16, got {height}x{width}")
    return height, width


class DataController:
    """Controller class for dataset generation with dependency injection."""

    def __init__(self, dataset_service: DatasetService, output_dir: str):
        """
        Args:
            dataset_service: Service for scene generation and dataset files
            output_dir: Default directory for generated files
        """
        self.dataset_service = dataset_service
        self.output_dir = output_dir

    def generate(self, args) -> int:
        height, width = parse_size(args.size)
        if not 0.0 <= args.overlap <= 1.0:
            raise ConfigError(f"--overlap must lie in [0, 1], got {args.overlap}")
        if args.count < 0:
            raise ConfigError("--count must be non-negative")
        scene = SceneConfig(height=height, width=width, overlap=args.overlap, seed=args.seed)
        samples = self.dataset_service.generate(scene, args.count)

        noise_radius = getattr(args, 'noise_radius', 0) or 0
        if noise_radius < 0:
            raise ConfigError("--noise-radius must be non-negative")
        if noise_radius:
            flip_prob = getattr(args, 'flip_prob', None)
            noisy = perturb_samples(samples, noise_radius, args.seed,
                                    flip_prob=DEFAULT_FLIP_PROB if flip_prob is None else flip_prob)
            stats = noise_summary([s[1] for s in samples], [s[1] for s in noisy], r=noise_radius)
            logger.info(f"Perturbed labels with r={noise_radius}: {stats['changed']} of {stats['pixels']} pixels")
            samples = noisy

        path = args.out or os.path.join(self.output_dir, f"scenes_{height}x{width}_s{args.seed}.cstrseg")
        self.dataset_service.save(samples, path, scene)
        logger.info(f"Wrote {len(samples)} scenes to {path} (digest {scene.digest()})")
        return 0

    def remap(self, args) -> int:
        """Rewrite a fine-label dataset file with the six terrain groups."""
        if args.ontology not in ONTOLOGIES:
            raise ConfigError(f"--ontology must be one of {', '.join(sorted(ONTOLOGIES))}, got {args.ontology!r}")
        source = self.dataset_service.load(args.source)
        samples = self.dataset_service.remap(source, args.ontology)
        path = args.out or os.path.join(self.output_dir, f"{os.path.splitext(os.path.basename(args.source))[0]}"
                                                         f"_{args.ontology}.cstrseg")
        write_dataset(samples, path, seed=source.seed, digest=source.digest,
                      height=source.height, width=source.width)
        logger.info(f"Wrote {len(samples)} grouped scenes to {path}")
        return 0
