"""Training objectives: deep clustering, PIT mask inference, chimera.

Every loss takes two lists, ``outputs`` (model tensors) and ``labels``
(targets, tensors or plain arrays), and returns a scalar Tensor; arities
are asserted up front so incompatible model/loss pairings fail loudly.

Label layouts by loss key (S sources, B batch, N = T*F bins per chunk):

  dc            [Y]                          Y one-hot (B, N, S)
  dc_weighted   [Y, W]                       W binary (B, N)
  mi_msa        [|X|, |S_1| .. |S_S|]        all (B, T, F)
  mi_tpsa       [|X|, phase_X, (|S_c|, phase_c) per source]
  chimera_msa   [Y, |X|, |S_1| .. |S_S|]     (+ W last when dc_variant="weighted")
  chimera_tpsa  [Y, |X|, |S_1| .. |S_S|, phase_X, phase_1 .. phase_S]

Mask outputs may arrive either as S separate (B, T, F) tensors or as a
single stacked (B, T, F, S) tensor; both satisfy the arity checks.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

PERMUTATION_CAP = 6

CHIMERA_ALPHA_DEFAULT = 0.975


def enumerate_permutations(num_sources):
    """All num_sources! assignments, lexicographically ordered."""
    if not 1 <= num_sources <= PERMUTATION_CAP:
        raise ValueError(
            f"permutation enumeration supports 1..{PERMUTATION_CAP} sources, "
            f"got {num_sources}"
        )
    return list(itertools.permutations(range(num_sources)))


# ---------------------------------------------------------------------
# deep clustering
# ---------------------------------------------------------------------

def loss_dc(outputs, labels, normalize=False):
    """Classic deep-clustering loss, averaged over the batch.

    Computed per batch item in the expanded form
    ||V^T V||_F^2 - 2 ||V^T Y||_F^2 + ||Y^T Y||_F^2, which equals
    ||V V^T - Y Y^T||_F^2 without ever materializing the N x N affinity
    matrix. With normalize=True the per-item value is divided by N.
    """
    assert len(outputs) == 1, "deep clustering expects exactly 1 output tensor"
    assert len(labels) == 1, "deep clustering expects exactly 1 label tensor"
    v, y = as_tensor(outputs[0]), as_tensor(labels[0])
    return _dc_core(v, y, normalize=normalize)


def loss_dc_weighted(outputs, labels, normalize=False):
    """Deep-clustering loss with per-bin weights (silence removal).

    sum_ij w_i w_j (<v_i, v_j> - <y_i, y_j>)^2, realized by pre-scaling
    the rows of V and Y with sqrt(w) and reusing the expanded form.
    """
    assert len(outputs) == 1, "weighted deep clustering expects exactly 1 output tensor"
    assert len(labels) == 2, "weighted deep clustering expects labels [Y, W]"
    v, y = as_tensor(outputs[0]), as_tensor(labels[0])
    w = labels[1].data if isinstance(labels[1], Tensor) else np.asarray(labels[1], dtype=np.float64)
    assert w.shape == v.shape[:2], (
        f"weight shape {w.shape} does not match embedding rows {v.shape[:2]}"
    )
    return _dc_core(v, y, weights=w, normalize=normalize)


def _dc_core(v, y, weights=None, normalize=False):
    assert v.ndim == 3 and y.ndim == 3, "V and Y must be (B, N, D) and (B, N, S)"
    assert v.shape[0] == y.shape[0], (
        f"batch size mismatch between V {v.shape} and Y {y.shape}"
    )
    assert v.shape[1] == y.shape[1], (
        f"bin count mismatch between V {v.shape} and Y {y.shape}"
    )
    if weights is not None:
        scale = np.sqrt(weights)[:, :, None]
        v = v * scale
        y = y * scale
    vv = _sq_frob(v.transpose() @ v)
    vy = _sq_frob(v.transpose() @ y)
    yy = _sq_frob(y.transpose() @ y)
    per_item = vv - 2.0 * vy + yy
    if normalize:
        per_item = per_item * (1.0 / v.shape[1])
    return per_item.mean()


def _sq_frob(m):
    # squared Frobenius norm per batch item: (B, a, b) -> (B,)
    return (m * m).sum(axis=(1, 2))


# ---------------------------------------------------------------------
# PIT mask inference
# ---------------------------------------------------------------------

def loss_mi_msa(outputs, labels, reduction="mean", return_perms=False):
    """Magnitude spectral approximation under utterance-level PIT.

    Per batch item, the L1 distance sum_c |M_c * |X| - |S_pi(c)|| is
    minimized over all S! source assignments; one permutation is chosen
    per chunk and only its branch carries gradient. reduction="mean"
    divides each per-item cost by T*F*S; "sum" keeps the raw L1 sums.
    Results are averaged over the batch either way.
    """
    assert len(labels) >= 2, "MSA labels are [mix magnitude, per-source magnitudes...]"
    mix_mag = _label_array(labels[0])
    targets = [_label_array(l) for l in labels[1:]]
    masks = _mask_list(outputs, len(targets))
    return _pit_l1(masks, mix_mag, targets, reduction, return_perms)


def loss_mi_tpsa(outputs, labels, reduction="mean", return_perms=False):
    """Truncated phase-sensitive approximation under utterance-level PIT.

    The target for source c is clamp(|S_c| * cos(phase_X - phase_c),
    0, |X|); the PIT L1 machinery is shared with the MSA loss.
    """
    assert len(labels) >= 4 and len(labels) % 2 == 0, (
        "tPSA labels are [mix magnitude, mix phase, (magnitude, phase) per source]"
    )
    num_sources = (len(labels) - 2) // 2
    mix_mag = _label_array(labels[0])
    mix_phase = _label_array(labels[1])
    targets = []
    for c in range(num_sources):
        mag = _label_array(labels[2 + 2 * c])
        phase = _label_array(labels[3 + 2 * c])
        targets.append(tpsa_target(mag, phase, mix_mag, mix_phase))
    masks = _mask_list(outputs, num_sources)
    return _pit_l1(masks, mix_mag, targets, reduction, return_perms)


def tpsa_target(src_mag, src_phase, mix_mag, mix_phase):
    """Phase-discounted magnitude target, truncated into [0, |X|]."""
    return np.clip(src_mag * np.cos(mix_phase - src_phase), 0.0, mix_mag)


def _pit_l1(masks, mix_mag, targets, reduction, return_perms):
    num_sources = len(targets)
    perms = enumerate_permutations(num_sources)
    batch = masks[0].shape[0]
    # S x S table of per-item L1 costs; permutation costs are sums of picks
    pair = [
        [(T.absolute(m * mix_mag - t)).sum(axis=(1, 2)) for t in targets]
        for m in masks
    ]
    perm_costs = []
    for perm in perms:
        cost = pair[0][perm[0]]
        for c in range(1, num_sources):
            cost = cost + pair[c][perm[c]]
        perm_costs.append(cost)
    table = np.stack([pc.data for pc in perm_costs])  # (P, B)
    chosen = np.argmin(table, axis=0)  # lexicographically first on ties
    total = None
    for p, cost in enumerate(perm_costs):
        indicator = (chosen == p).astype(np.float64)
        if indicator.any():
            contrib = (cost * indicator).sum()
            total = contrib if total is None else total + contrib
    denom = float(batch)
    if reduction == "mean":
        denom *= float(np.prod(mix_mag.shape[1:])) * num_sources
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    loss = total * (1.0 / denom)
    if return_perms:
        return loss, [perms[i] for i in chosen]
    return loss


def _mask_list(outputs, num_sources):
    """Accept S mask tensors or one stacked (B, T, F, S) tensor."""
    assert len(outputs) in (1, num_sources), (
        f"expected {num_sources} masks or 1 stacked mask tensor, got {len(outputs)} outputs"
    )
    if len(outputs) == 1 and num_sources != 1:
        stacked = as_tensor(outputs[0])
        assert stacked.ndim == 4 and stacked.shape[-1] == num_sources, (
            f"stacked masks must be (B, T, F, {num_sources}), got {stacked.shape}"
        )
        return [stacked[:, :, :, c] for c in range(num_sources)]
    masks = [as_tensor(o) for o in outputs]
    if len(masks) == 1 and masks[0].ndim == 4:
        assert masks[0].shape[-1] == 1
        masks = [masks[0][:, :, :, 0]]
    for m in masks:
        assert m.ndim == 3, f"each mask must be (B, T, F), got {m.shape}"
    return masks


def _label_array(label):
    return label.data if isinstance(label, Tensor) else np.asarray(label, dtype=np.float64)


# ---------------------------------------------------------------------
# chimera combinations
# ---------------------------------------------------------------------

def loss_chimera_msa(outputs, labels, alpha=CHIMERA_ALPHA_DEFAULT,
                     dc_variant="classic", return_perms=False):
    """alpha * L_DC/N + (1 - alpha) * L_MSA for a two-headed model.

    outputs = [embedding, mask_1, ..., mask_S]; labels = [one-hot, mix
    magnitude, per-source magnitudes] (+ weights last for the weighted
    deep-clustering variant). For S=2 this asserts 3 outputs / 4 labels.
    """
    return _chimera(outputs, labels, alpha, dc_variant, "msa", return_perms)


def loss_chimera_tpsa(outputs, labels, alpha=CHIMERA_ALPHA_DEFAULT,
                      dc_variant="classic", return_perms=False):
    """alpha * L_DC/N + (1 - alpha) * L_tPSA; phases appended after the
    magnitudes: [Y, |X|, |S_1|..|S_S|, phase_X, phase_1..phase_S]."""
    return _chimera(outputs, labels, alpha, dc_variant, "tpsa", return_perms)


def _chimera(outputs, labels, alpha, dc_variant, mi_kind, return_perms):
    assert 0.0 <= alpha <= 1.0, f"alpha must lie in [0, 1], got {alpha}"
    assert dc_variant in ("classic", "weighted"), f"unknown dc_variant {dc_variant!r}"
    assert len(outputs) >= 2, "chimera expects [embedding, masks...]"
    num_sources = len(outputs) - 1
    expected = (2 + num_sources) if mi_kind == "msa" else (3 + 2 * num_sources)
    if dc_variant == "weighted":
        expected += 1
    assert len(outputs) == 1 + num_sources
    assert len(labels) == expected, (
        f"chimera_{mi_kind} with {num_sources} sources and {dc_variant} DC "
        f"expects {expected} labels, got {len(labels)}"
    )
    embedding = outputs[0]
    masks = list(outputs[1:])
    y = labels[0]
    if dc_variant == "weighted":
        dc_term = loss_dc_weighted([embedding], [y, labels[-1]], normalize=True)
        labels = labels[:-1]
    else:
        dc_term = loss_dc([embedding], [y], normalize=True)
    if mi_kind == "msa":
        mi_labels = list(labels[1:])
        mi = loss_mi_msa(masks, mi_labels, reduction="mean", return_perms=return_perms)
    else:
        mix_mag = labels[1]
        src_mags = labels[2 : 2 + num_sources]
        mix_phase = labels[2 + num_sources]
        src_phases = labels[3 + num_sources :]
        mi_labels = [mix_mag, mix_phase]
        for mag, phase in zip(src_mags, src_phases):
            mi_labels.extend([mag, phase])
        mi = loss_mi_tpsa(masks, mi_labels, reduction="mean", return_perms=return_perms)
    if return_perms:
        mi, perms = mi
        return alpha * dc_term + (1.0 - alpha) * mi, perms
    return alpha * dc_term + (1.0 - alpha) * mi


# ---------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------

LOSS_KEYS = ("dc", "dc_weighted", "mi_msa", "mi_tpsa", "chimera_msa", "chimera_tpsa")


def make_loss(loss_key, alpha=CHIMERA_ALPHA_DEFAULT, dc_variant="classic"):
    """Bind a loss key from a training config to a (outputs, labels) callable."""
    if loss_key == "dc":
        return loss_dc
    if loss_key == "dc_weighted":
        return loss_dc_weighted
    if loss_key == "mi_msa":
        return loss_mi_msa
    if loss_key == "mi_tpsa":
        return loss_mi_tpsa
    if loss_key == "chimera_msa":
        return lambda outputs, labels: loss_chimera_msa(
            outputs, labels, alpha=alpha, dc_variant=dc_variant)
    if loss_key == "chimera_tpsa":
        return lambda outputs, labels: loss_chimera_tpsa(
            outputs, labels, alpha=alpha, dc_variant=dc_variant)
    raise ValueError(f"unknown loss key {loss_key!r}; known: {LOSS_KEYS}")
