# tests/helpers.py
import numpy as np

from config import IGNORE_INDEX, TrainConfig

TINY_OVERRIDES = {
    'model.widths': (4, 8, 8, 8),
    'model.embed_dim': 8,
    'model.point_hidden': 8,
    'model.edge_channels': 4,
    'model.grid_channels': 4,
    'model.point_budget': 0.01,
    'optim.max_iters': 4,
    'optim.warmup_iters': 1,
    'optim.base_lr': 0.01,
    'train.batch_size': 2,
    'train.log_interval': 1,
    'train.eval_interval': 2,
    'data.train_count': 4,
    'data.eval_count': 2,
    'data.height': 32,
    'data.width': 32,
}


def tiny_config(**overrides) -> TrainConfig:
    """A configuration small enough to train in well under a second per iteration."""
    values = dict(TINY_OVERRIDES)
    values.update({k.replace('__', '.'): v for k, v in overrides.items()})
    return TrainConfig().update(values).validate()


def write_config_file(path, overrides=None) -> str:
    """``key=value`` file with the tiny configuration plus ``overrides``."""
    values = dict(TINY_OVERRIDES)
    values.update(overrides or {})
    lines = ['# tiny experiment']
    for key, value in values.items():
        if isinstance(value, tuple):
            value = ','.join(str(v) for v in value)
        lines.append(f"{key}={value}")
    path.write_text('\n'.join(lines) + '\n')
    return str(path)


def random_labels(rng, shape=(8, 8), num_classes=6, ignore_fraction=0.0) -> np.ndarray:
    labels = rng.integers(0, num_classes, size=shape).astype(np.uint8)
    if ignore_fraction:
        labels[rng.random(shape) < ignore_fraction] = IGNORE_INDEX
    return labels


def blocky_labels(rng, shape=(8, 8), num_classes=6, block=4) -> np.ndarray:
    """Piecewise-constant maps so boundaries are sparse."""
    cells = rng.integers(0, num_classes, size=(shape[0] // block + 1, shape[1] // block + 1))
    return np.kron(cells, np.ones((block, block), dtype=int))[:shape[0], :shape[1]].astype(np.uint8)


# --------------------------------------------------------------------------- oracles
def brute_confusion(pred, gt, num_classes=6, ignore_index=IGNORE_INDEX) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(np.asarray(pred).ravel(), np.asarray(gt).ravel()):
        if g == ignore_index:
            continue
        cm[int(g), int(p)] += 1
    return cm


def brute_band(labels, w, ignore_index=None) -> np.ndarray:
    labels = np.asarray(labels)
    height, width = labels.shape
    band = np.zeros(labels.shape, dtype=bool)
    if w == 0:
        return band
    for y in range(height):
        for x in range(width):
            own = labels[y, x]
            if ignore_index is not None and own == ignore_index:
                continue
            for yy in range(max(0, y - w), min(height, y + w + 1)):
                for xx in range(max(0, x - w), min(width, x + w + 1)):
                    other = labels[yy, xx]
                    if ignore_index is not None and other == ignore_index:
                        continue
                    if other != own:
                        band[y, x] = True
    return band


def brute_biou(pred, gt, d=2, num_classes=6, ignore_index=IGNORE_INDEX) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    support = (brute_band(pred, d) | brute_band(gt, d, ignore_index)) & (gt != ignore_index)
    scores = []
    for c in range(num_classes):
        inter = union = 0
        for y, x in zip(*np.nonzero(support)):
            in_pred, in_gt = pred[y, x] == c, gt[y, x] == c
            inter += int(in_pred and in_gt)
            union += int(in_pred or in_gt)
        if union:
            scores.append(inter / union)
    return float(np.mean(scores)) if scores else 1.0


def brute_boundary_f1(pred, gt, t=1, ignore_index=IGNORE_INDEX) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    pred_b = brute_band(pred, 1) & (gt != ignore_index)
    gt_b = brute_band(gt, 1, ignore_index)

    def matched(source, target):
        hits = 0
        targets = list(zip(*np.nonzero(target)))
        for y, x in zip(*np.nonzero(source)):
            if any(max(abs(y - ty), abs(x - tx)) <= t for ty, tx in targets):
                hits += 1
        return hits

    total_pred, total_gt = int(pred_b.sum()), int(gt_b.sum())
    if total_pred == 0 and total_gt == 0:
        return 1.0
    precision = matched(pred_b, gt_b) / total_pred if total_pred else 0.0
    recall = matched(gt_b, pred_b) / total_gt if total_gt else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def chebyshev_distance_to(mask) -> np.ndarray:
    """Per-pixel Chebyshev distance to the nearest ``True`` of ``mask`` (inf when empty)."""
    mask = np.asarray(mask, dtype=bool)
    points = np.argwhere(mask)
    height, width = mask.shape
    out = np.full(mask.shape, np.inf)
    if len(points) == 0:
        return out
    ys, xs = np.mgrid[0:height, 0:width]
    for py, px in points:
        out = np.minimum(out, np.maximum(np.abs(ys - py), np.abs(xs - px)))
    return out
