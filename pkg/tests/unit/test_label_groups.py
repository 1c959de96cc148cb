"""
Tests for fine-label to terrain-group remapping.
"""

import numpy as np
import pytest

from config import CLASS_NAMES, IGNORE_INDEX
from utils.label_groups import ONTOLOGIES, UnmappedLabelError, build_mapping, dataset_mapping, remap_labels


@pytest.mark.parametrize('name', sorted(ONTOLOGIES))
def test_every_fine_label_is_grouped(name) -> None:
    """The shipped tables cover their whole ontology."""
    ontology, _ = ONTOLOGIES[name]
    mapping = dataset_mapping(name)
    assert set(mapping) == set(ontology)
    assert set(mapping.values()) <= set(range(len(CLASS_NAMES)))


def test_rugd_examples() -> None:
    mapping = dataset_mapping('rugd')
    fine = np.array([[10, 3], [21, 6]])
    np.testing.assert_array_equal(remap_labels(fine, mapping), [[0, 1], [2, 3]])


def test_unmapped_values_are_listed() -> None:
    with pytest.raises(UnmappedLabelError) as excinfo:
        remap_labels(np.array([1, 99, 98]), {1: 0})
    assert excinfo.value.values == [98, 99]


def test_ignore_index_passes_through() -> None:
    out = remap_labels(np.array([5, IGNORE_INDEX], dtype=np.uint8), {5: 4}, ignore_index=IGNORE_INDEX)
    np.testing.assert_array_equal(out, [4, IGNORE_INDEX])


def test_duplicate_claims_are_rejected() -> None:
    with pytest.raises(ValueError):
        build_mapping({0: 'mud'}, {'Rough': ('mud',), 'Bumpy': ('mud',)})


def test_unknown_group() -> None:
    with pytest.raises(ValueError):
        build_mapping({0: 'mud'}, {'Slippery': ('mud',)})


def test_unknown_ontology() -> None:
    with pytest.raises(ValueError):
        dataset_mapping('cityscapes')
