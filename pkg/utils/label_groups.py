"""
Six-group terrain hierarchy and fine-label remapping tables.
"""

import logging
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from config import CLASS_NAMES

logger = logging.getLogger(__name__)


class UnmappedLabelError(KeyError):
    """Raised when a fine label has no entry in the mapping table."""

    def __init__(self, values: Sequence[int]):
        self.values = sorted(int(v) for v in values)
        super().__init__(f"fine labels without a group mapping: {self.values}")


RUGD_ONTOLOGY: Dict[int, str] = {
    0: 'void', 1: 'dirt', 2: 'sand', 3: 'grass', 4: 'tree', 5: 'pole', 6: 'water', 7: 'sky',
    8: 'vehicle', 9: 'container', 10: 'asphalt', 11: 'gravel', 12: 'building', 13: 'mulch',
    14: 'rock-bed', 15: 'log', 16: 'bicycle', 17: 'person', 18: 'fence', 19: 'bush', 20: 'sign',
    21: 'rock', 22: 'bridge', 23: 'concrete', 24: 'picnic-table',
}

RUGD_GROUPS: Dict[str, Sequence[str]] = {
    'Smooth': ('concrete', 'asphalt'),
    'Rough': ('gravel', 'grass', 'dirt', 'sand', 'mulch'),
    'Bumpy': ('rock', 'rock-bed'),
    'Forbidden': ('water', 'bush'),
    'Obstacle': ('tree', 'pole', 'log', 'vehicle', 'container', 'building', 'bicycle', 'person',
                 'fence', 'bridge', 'picnic-table'),
    'Background': ('void', 'sky', 'sign'),
}

RELLIS_ONTOLOGY: Dict[int, str] = {
    0: 'void', 1: 'dirt', 3: 'grass', 4: 'tree', 5: 'pole', 6: 'water', 7: 'sky', 8: 'vehicle',
    9: 'object', 10: 'asphalt', 12: 'building', 15: 'log', 17: 'person', 18: 'fence', 19: 'bush',
    23: 'concrete', 27: 'barrier', 31: 'puddle', 33: 'mud', 34: 'rubble',
}

RELLIS_GROUPS: Dict[str, Sequence[str]] = {
    'Smooth': ('concrete', 'asphalt'),
    'Rough': ('dirt', 'grass'),
    'Bumpy': ('mud', 'rubble'),
    'Forbidden': ('water', 'bush', 'puddle'),
    'Obstacle': ('tree', 'pole', 'vehicle', 'object', 'building', 'log', 'person', 'fence', 'barrier'),
    'Background': ('void', 'sky'),
}

ONTOLOGIES = {
    'rugd': (RUGD_ONTOLOGY, RUGD_GROUPS),
    'rellis3d': (RELLIS_ONTOLOGY, RELLIS_GROUPS),
}


def build_mapping(ontology: Mapping[int, str], groups: Mapping[str, Sequence[str]],
                  class_names: Sequence[str] = CLASS_NAMES) -> Dict[int, int]:
    """
    Turn ``{fine_id: fine_name}`` and ``{group: fine_names}`` into ``{fine_id: group_index}``.

    Fine names listed under no group are left out (and fail at remap time).

    Raises:
        ValueError: If a fine name is claimed by two groups or a group is unknown.
    """
    by_name = {}
    for group, names in groups.items():
        if group not in class_names:
            raise ValueError(f"unknown terrain group {group!r}")
        for name in names:
            if name in by_name:
                raise ValueError(f"fine label {name!r} assigned to both {by_name[name]} and {group}")
            by_name[name] = group
    return {fine_id: class_names.index(by_name[name]) for fine_id, name in ontology.items() if name in by_name}


def dataset_mapping(name: str) -> Dict[int, int]:
    """Mapping table for ``'rugd'`` or ``'rellis3d'``."""
    if name not in ONTOLOGIES:
        raise ValueError(f"unknown ontology {name!r}; expected one of {sorted(ONTOLOGIES)}")
    return build_mapping(*ONTOLOGIES[name])


def remap_labels(fine_labels: np.ndarray, mapping: Mapping[int, int],
                 ignore_index: Optional[int] = None) -> np.ndarray:
    """
    Pointwise table lookup.

    Args:
        fine_labels: Integer label map.
        mapping: ``{fine: group}``.
        ignore_index: Passed through unchanged when given.

    Raises:
        UnmappedLabelError: Listing every fine value without an entry.
    """
    fine_labels = np.asarray(fine_labels)
    observed = np.unique(fine_labels)
    if ignore_index is not None:
        observed = observed[observed != ignore_index]
    missing = [v for v in observed if int(v) not in mapping]
    if missing:
        raise UnmappedLabelError(missing)
    keys = np.array(sorted(mapping), dtype=np.int64)
    values = np.array([mapping[k] for k in keys], dtype=np.int64)
    out = fine_labels.astype(np.int64, copy=True)
    if observed.size:
        positions = np.searchsorted(keys, fine_labels.astype(np.int64))
        lookup = np.isin(fine_labels, observed)
        out[lookup] = values[positions[lookup]]
    return out.astype(fine_labels.dtype)
