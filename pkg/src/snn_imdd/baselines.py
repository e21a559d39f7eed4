"""Reference receivers: linear MMSE equalizer with BER-optimized slicing and
feedforward ReLU networks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .encoder import tap_windows
from .link import CLASS_BITS, LEVELS
from .train import Adam, TrainConfig, cross_entropy, _log_softmax

ANN_ARCHS = {"ann1": (40,), "ann2": (34, 10)}
RIDGE_EPS = 1e-8

# bit errors between decided class (row) and true class (column)
_GRAY_COST = (CLASS_BITS[:, None, :] != CLASS_BITS[None, :, :]).sum(axis=2)


@dataclass
class LmmseEqualizer:
    taps: np.ndarray
    bias: float
    decision_boundaries: np.ndarray = field(default_factory=lambda: 0.5 * (LEVELS[1:] + LEVELS[:-1]))

    def __post_init__(self):
        self.decision_boundaries = np.asarray(self.decision_boundaries, dtype=float)
        if np.any(np.diff(self.decision_boundaries) <= 0):
            raise ValueError("decision boundaries must be strictly increasing")

    @property
    def n_tap(self) -> int:
        return len(self.taps)

    def equalize(self, y) -> np.ndarray:
        return tap_windows(y, self.n_tap) @ self.taps + self.bias

    def decide(self, y) -> np.ndarray:
        return slice_classes(self.equalize(y), self.decision_boundaries)


def slice_classes(values, boundaries) -> np.ndarray:
    """Class index 0..3: number of boundaries strictly below each value."""
    return np.searchsorted(np.asarray(boundaries), np.asarray(values), side="left")


def lmmse_normal_equations(y, targets, n_tap: int):
    """Empirical autocorrelation ``R`` and cross-correlation ``p`` of the
    augmented tap windows (trailing constant 1 for the bias)."""
    X = tap_windows(y, n_tap)
    X = np.hstack([X, np.ones((len(X), 1))])
    t = np.asarray(targets, dtype=float)
    return X.T @ X / len(X), X.T @ t / len(X)


def fit_lmmse(y, targets, n_tap: int = 17) -> LmmseEqualizer:
    """Wiener solution ``w = R^-1 p`` on tap windows of ``y``."""
    if len(y) <= 4 * n_tap:
        raise ValueError(f"need many more samples than taps ({len(y)} for {n_tap} taps)")
    R, p = lmmse_normal_equations(y, targets, n_tap)
    if np.linalg.cond(R) > 1e12:
        warnings.warn(f"autocorrelation matrix is near singular; adding ridge {RIDGE_EPS}", RuntimeWarning)
        R = R + RIDGE_EPS * np.eye(len(R))
    w = np.linalg.solve(R, p)
    return LmmseEqualizer(taps=w[:-1], bias=float(w[-1]))


def bit_error_count(decided, labels) -> int:
    return int(_GRAY_COST[np.asarray(decided), np.asarray(labels)].sum())


def _best_split(values, labels, lo, hi, lower_class, current):
    """Best position for the boundary between ``lower_class`` and
    ``lower_class + 1`` inside ``(lo, hi)``; returns ``(position, cost)``."""
    sel = (values > lo) & (values < hi)
    x, k = values[sel], labels[sel]
    order = np.argsort(x, kind="stable")
    x, k = x[order], k[order]
    if len(x) == 0:
        return current, 0
    below = _GRAY_COST[lower_class][k]  # cost if decided as lower class
    above = _GRAY_COST[lower_class + 1][k]
    # cost when the first j sorted samples fall below the boundary, j = 0..n
    cost = np.concatenate([[0], np.cumsum(below)]) + np.concatenate([np.cumsum(above[::-1])[::-1], [0]])
    cur_j = int(np.searchsorted(x, current, side="right"))
    cur_cost = int(cost[cur_j])
    best = int(cost.min())
    if best >= cur_cost:
        return current, cur_cost
    j = int(np.argmax(cost == best))
    j_end = j
    while j_end + 1 < len(cost) and cost[j_end + 1] == best:
        j_end += 1
    j = (j + j_end) // 2
    edges = np.concatenate([[lo], x, [hi]])
    left, right = edges[j], edges[j + 1]
    # gaps touching an open interval end fall back to a point beside the data
    if not np.isfinite(left):
        left = right - 1.0
    if not np.isfinite(right):
        right = left + 1.0
    return 0.5 * (left + right), best


def _global_cuts(x, k) -> list[int]:
    """Exact minimizer of the Gray bit-error count over monotone labelings of
    the sorted samples ``x`` (classes ``k``), by dynamic programming.

    Returns three cut indices ``c0 <= c1 <= c2``; class ``m`` covers the
    sorted samples ``[c_{m-1}, c_m)``.
    """
    n = len(x)
    # C[m, j]: cost of deciding the first j sorted samples as class m
    C = np.concatenate([np.zeros((4, 1)), np.cumsum(_GRAY_COST[:, k], axis=1)], axis=1)
    f = C[0].copy()  # best cost of the first j samples using classes <= 0
    back = []
    for m in range(1, 4):
        g = f - C[m]
        # running argmin, ties resolved to the middle is done later by _center
        idx = np.arange(n + 1)
        best_i = np.where(g == np.minimum.accumulate(g), idx, 0)
        best_i = np.maximum.accumulate(best_i)
        back.append(best_i)
        f = C[m] + g[best_i]
    cuts = [n]
    for m in range(3, 0, -1):
        cuts.append(int(back[m - 1][cuts[-1]]))
    return cuts[:0:-1]


def _cuts_to_boundaries(x, cuts) -> np.ndarray:
    edges = np.concatenate([[x[0] - 1.0], x, [x[-1] + 1.0]])
    b = np.empty(3)
    i = 0
    while i < 3:
        j = i
        while j + 1 < 3 and cuts[j + 1] == cuts[i]:
            j += 1
        left, right = edges[cuts[i]], edges[cuts[i] + 1]
        # several boundaries in one gap are spread evenly across it
        b[i:j + 1] = left + (right - left) * np.arange(1, j - i + 2) / (j - i + 2)
        i = j + 1
    return b


def _center(values, labels, b, i):
    """Move boundary ``i`` to the middle of the equal-cost run it sits in."""
    lo = b[i - 1] if i > 0 else -np.inf
    hi = b[i + 1] if i < 2 else np.inf
    sel = (values > lo) & (values < hi)
    x = np.sort(values[sel])
    k = labels[sel][np.argsort(values[sel], kind="stable")]
    if len(x) == 0:
        return b[i]
    cost = (np.concatenate([[0], np.cumsum(_GRAY_COST[i][k])])
            + np.concatenate([np.cumsum(_GRAY_COST[i + 1][k][::-1])[::-1], [0]]))
    j = int(np.searchsorted(x, b[i], side="right"))
    a, e = j, j
    while a > 0 and cost[a - 1] == cost[j]:
        a -= 1
    while e + 1 < len(cost) and cost[e + 1] == cost[j]:
        e += 1
    if a == j and e == j:
        return b[i]
    edges = np.concatenate([[lo], x, [hi]])
    left, right = edges[a], edges[e + 1]
    if not np.isfinite(left):
        left = right - 1.0
    if not np.isfinite(right):
        right = left + 1.0
    # the middle of the whole run, snapped to the gap that contains it
    mid = 0.5 * (left + right)
    jm = int(np.clip(np.searchsorted(x, mid), a, e))
    g_left, g_right = edges[jm], edges[jm + 1]
    if not np.isfinite(g_left):
        g_left = g_right - 1.0
    if not np.isfinite(g_right):
        g_right = g_left + 1.0
    return 0.5 * (g_left + g_right)


def optimize_boundaries(values, labels, init=None, max_sweeps: int = 100) -> np.ndarray:
    """Three increasing thresholds minimizing the empirical Gray bit-error
    count.

    Without ``init`` the start is the exact global minimizer found by dynamic
    programming over the sorted samples, with each boundary centered in its
    zero-slope gap.  Coordinate descent over exhaustive 1-D scans then runs
    to a fixed point; from a given ``init`` only the coordinate descent runs.
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if len(values) == 0 or len(np.unique(labels)) < 2:
        raise ValueError("boundary optimization needs samples from at least two classes")
    if init is None:
        order = np.argsort(values, kind="stable")
        x, k = values[order], labels[order]
        b = _cuts_to_boundaries(x, _global_cuts(x, k))
        for i in range(3):
            b[i] = _center(values, labels, b, i)
    else:
        b = np.array(init, dtype=float)
    for _ in range(max_sweeps):
        moved = False
        for i in range(3):
            lo = b[i - 1] if i > 0 else -np.inf
            hi = b[i + 1] if i < 2 else np.inf
            new, _ = _best_split(values, labels, lo, hi, i, b[i])
            if new != b[i]:
                b[i] = new
                moved = True
        if not moved:
            break
    return b


# --- feedforward ReLU networks ---------------------------------------------


@dataclass
class AnnParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    std: np.ndarray

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights[:-1])

    def copy(self) -> "AnnParams":
        return AnnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.mean.copy(), self.std.copy())


def init_ann(n_in: int, hidden, rng: np.random.Generator, n_out: int = 4) -> AnnParams:
    sizes = [n_in, *hidden, n_out]
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return AnnParams(weights, biases, np.zeros(n_in), np.ones(n_in))


def ann_logits(params: AnnParams, x, normalize: bool = True):
    """Logits for raw inputs ``x`` ``[batch, n_in]``; also returns the
    per-layer activations needed for backprop."""
    h = (np.asarray(x, dtype=float) - params.mean) / params.std if normalize else np.asarray(x, dtype=float)
    acts = [h]
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W.T + b
        if i < len(params.weights) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def ann_loss_and_grads(params: AnnParams, x, labels):
    """Mean softmax cross-entropy and its gradients (weights, biases)."""
    labels = np.asarray(labels)
    logits, acts = ann_logits(params, x)
    loss = float(cross_entropy(logits, labels).mean())
    g = np.exp(_log_softmax(logits))
    g[np.arange(len(labels)), labels] -= 1.0
    g /= len(labels)
    gW, gb = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        gW.append(g.T @ acts[i])
        gb.append(g.sum(axis=0))
        if i > 0:
            g = (g @ params.weights[i]) * (acts[i] > 0)
    return loss, gW[::-1], gb[::-1]


def ann_predict(params: AnnParams, x) -> np.ndarray:
    return ann_logits(params, x)[0].argmax(axis=1)


def fit_ann(x, labels, arch, cfg: TrainConfig, validation=None) -> tuple[AnnParams, list[dict]]:
    """Train a ReLU network on tap windows ``x`` with Adam and cross-entropy.

    ``arch`` is ``"ann1"``, ``"ann2"`` or a tuple of hidden widths.  Inputs
    are standardized with training statistics.  The epoch with the lowest
    validation BER is returned, the latest one on ties.
    """
    hidden = ANN_ARCHS[arch] if isinstance(arch, str) else tuple(arch)
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    rng = np.random.default_rng(cfg.rng_seed)
    params = init_ann(x.shape[1], hidden, rng)
    params.mean = x.mean(axis=0)
    params.std = x.std(axis=0) + 1e-12
    if validation is None:
        validation = (x, labels)
    records: list[dict] = []
    opt = Adam(cfg)
    named = {f"W{i}": w for i, w in enumerate(params.weights)}
    named.update({f"b{i}": b for i, b in enumerate(params.biases)})
    best, best_ber = params.copy(), np.inf
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            batch_loss, gW, gb = ann_loss_and_grads(params, x[idx], labels[idx])
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"ANN loss diverged at epoch {epoch}, batch {s // cfg.batch_size}")
            grads = {f"W{i}": g for i, g in enumerate(gW)}
            grads.update({f"b{i}": g for i, g in enumerate(gb)})
            opt.step(named, grads)
            total += batch_loss * len(idx)
        pred = ann_predict(params, validation[0])
        ber = bit_error_count(pred, validation[1]) / (2 * len(validation[1]))
        records.append({"epoch": epoch, "loss": total / n, "val_ber": ber})
        if ber <= best_ber:
            best, best_ber = params.copy(), ber
    return (best if cfg.epochs else params), records
