"""Sequence-aware pair scorer: stacked Bi-LSTM predicting similarity rows.

Each row i of the similarity matrix is treated as one sequence: the network
reads [x_i; x_1], [x_i; x_2], ... [x_i; x_n] and emits a score per position.
All n rows of one recording form a batch. Matrices larger than a configured
cap are partitioned into sub-matrix blocks processed independently.

Built on numpy with explicit backpropagation through time, so gradients are
exact and runs are bitwise reproducible given a seed. The recurrent time
loops are numba kernels (serial, no fastmath) working on a time-major
(T, batch, features) layout; everything around them is plain BLAS.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

from .core import EmbeddingSequence, ParameterError, reference_matrix

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


class NumericalError(RuntimeError):
    """Raised when activations or losses stop being finite."""


@dataclass
class TrainConfig:
    """SGD schedule and architecture for pair-sequence training."""

    lr0: float = 0.01
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 40  # epochs per learning-rate drop
    epochs: int = 100
    max_block: int = 400
    seed: int = 0
    hidden_size: int = 256  # per direction
    fc_size: int = 64
    grad_clip: float | None = None  # global-norm cap, off by default
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr0 < 0:  # zero is legal: a no-op training run stays bitwise put
            raise ParameterError("lr0 must be >= 0")
        if min(self.lr_decay_factor, self.lr_decay_every, self.epochs,
               self.max_block, self.hidden_size, self.fc_size) <= 0:
            raise ParameterError("training hyperparameters must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-indexed epoch."""
        return self.lr0 / self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)


@dataclass
class PairSeqModel:
    """Parameters of the 2-layer Bi-LSTM + 2 fully connected head.

    params maps names to arrays: per layer l and direction d ("f"/"b"),
    l{l}_{d}_Wx (in, 4H), l{l}_{d}_Wh (H, 4H), l{l}_{d}_b (4H,), then
    fc1_W (2H, fc), fc1_b, fc2_W (fc, 1), fc2_b. Gate column order is
    input, forget, output, candidate.
    """

    input_dim: int
    hidden_size: int
    fc_size: int
    params: dict[str, np.ndarray]
    num_layers: int = 2

    @property
    def dtype(self) -> np.dtype:
        return self.params["fc1_W"].dtype

    def param_names(self) -> list[str]:
        return list(self.params)


@dataclass
class PairBatch:
    """All n row-sequences of one recording: (n, n, 2d) inputs with targets."""

    sequences: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        if self.sequences.ndim != 3 or self.sequences.shape[0] != self.sequences.shape[1]:
            raise ParameterError("pair batch must be (n, n, 2d)")
        if self.targets is not None and self.targets.shape != self.sequences.shape[:2]:
            raise ParameterError(
                f"target shape {self.targets.shape} does not match batch "
                f"{self.sequences.shape[:2]}"
            )


def init_model(
    input_dim: int,
    hidden_size: int = 256,
    fc_size: int = 64,
    seed: int = 0,
    dtype: str = "float64",
) -> PairSeqModel:
    """Seeded uniform initialization, bound 1/sqrt(fan-in) per weight matrix.

    Forget-gate biases start at 1.0; everything else at 0.
    """
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    params: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dt)

    h = hidden_size
    layer_in = input_dim
    for layer in range(2):
        for direction in ("f", "b"):
            prefix = f"l{layer}_{direction}"
            params[f"{prefix}_Wx"] = uniform((layer_in, 4 * h), layer_in)
            params[f"{prefix}_Wh"] = uniform((h, 4 * h), h)
            bias = np.zeros(4 * h, dtype=dt)
            bias[h:2 * h] = 1.0
            params[f"{prefix}_b"] = bias
        layer_in = 2 * h
    params["fc1_W"] = uniform((2 * h, fc_size), 2 * h)
    params["fc1_b"] = np.zeros(fc_size, dtype=dt)
    params["fc2_W"] = uniform((fc_size, 1), fc_size)
    params["fc2_b"] = np.zeros(1, dtype=dt)
    return PairSeqModel(input_dim, hidden_size, fc_size, params)


def build_pair_batch(seq: EmbeddingSequence, target: np.ndarray | None = None) -> PairBatch:
    """Concatenate [x_i; x_j] for every (i, j) into the (n, n, 2d) batch.

    sequences[i, j] holds [x_i; x_j]: row identity first, position second.
    """
    if target is not None:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (seq.n, seq.n):
            raise ParameterError(f"target must be {(seq.n, seq.n)}, got {target.shape}")
    x = np.ascontiguousarray(
        _pair_inputs(seq.vectors, (0, seq.n), (0, seq.n), np.float64).transpose(1, 0, 2))
    return PairBatch(sequences=x, targets=target)


def _pair_inputs(vectors: np.ndarray, rows: tuple[int, int], cols: tuple[int, int], dtype) -> np.ndarray:
    """Time-major (T, B, 2d) block input: sequence b is matrix row rows[b],
    position t is matrix column cols[t], features are [x_row; x_col]."""
    r0, r1 = rows
    c0, c1 = cols
    d = vectors.shape[1]
    out = np.empty((c1 - c0, r1 - r0, 2 * d), dtype=dtype)
    out[:, :, :d] = vectors[None, r0:r1, :]
    out[:, :, d:] = vectors[c0:c1, None, :]
    return out


def partition_blocks(n: int, max_block: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Split {0..n-1}^2 into near-equal contiguous blocks of side <= max_block.

    Rows and columns are each cut into ceil(n / max_block) chunks whose sizes
    differ by at most one; the cross product covers every (i, j) exactly once.
    """
    if n < 1 or max_block < 1:
        raise ParameterError("n and max_block must be >= 1")
    chunks = -(-n // max_block)
    base, extra = divmod(n, chunks)
    bounds = [0]
    for i in range(chunks):
        bounds.append(bounds[-1] + base + (1 if i < extra else 0))
    ranges = list(zip(bounds, bounds[1:]))
    return [(r, c) for r in ranges for c in ranges]


# ---------------------------------------------------------------------------
# LSTM primitives over time-major (T, B, features) arrays. One kernel serves
# both directions: `reverse` flips the processing order in place, so no time
# flips or copies happen outside. Gate column order: input, forget, output,
# candidate. The two directions of a layer run concurrently (nogil kernels,
# disjoint outputs), which is bitwise deterministic for any thread count.
# ---------------------------------------------------------------------------

_DIRECTION_POOL = ThreadPoolExecutor(max_workers=2)


@njit(cache=True, nogil=True)
def _cell_forward_kernel(xw, Wh, hs, gates, cells, tanh_cells, reverse):
    T, B, H4 = xw.shape
    H = H4 // 4
    one = xw.dtype.type(1.0)
    h = np.zeros((B, H), dtype=xw.dtype)
    c = np.zeros((B, H), dtype=xw.dtype)
    for idx in range(T):
        t = T - 1 - idx if reverse else idx
        z = xw[t] + np.dot(h, Wh)
        for bi in range(B):
            for k in range(H):
                ig = one / (one + np.exp(-z[bi, k]))
                fg = one / (one + np.exp(-z[bi, H + k]))
                og = one / (one + np.exp(-z[bi, 2 * H + k]))
                gg = np.tanh(z[bi, 3 * H + k])
                cc = fg * c[bi, k] + ig * gg
                tc = np.tanh(cc)
                c[bi, k] = cc
                h[bi, k] = og * tc
                hs[t, bi, k] = og * tc
                gates[t, bi, k] = ig
                gates[t, bi, H + k] = fg
                gates[t, bi, 2 * H + k] = og
                gates[t, bi, 3 * H + k] = gg
                cells[t, bi, k] = cc
                tanh_cells[t, bi, k] = tc


@njit(cache=True, nogil=True)
def _cell_forward_kernel_nocache(xw, Wh, hs, reverse):
    T, B, H4 = xw.shape
    H = H4 // 4
    one = xw.dtype.type(1.0)
    h = np.zeros((B, H), dtype=xw.dtype)
    c = np.zeros((B, H), dtype=xw.dtype)
    for idx in range(T):
        t = T - 1 - idx if reverse else idx
        z = xw[t] + np.dot(h, Wh)
        for bi in range(B):
            for k in range(H):
                ig = one / (one + np.exp(-z[bi, k]))
                fg = one / (one + np.exp(-z[bi, H + k]))
                og = one / (one + np.exp(-z[bi, 2 * H + k]))
                gg = np.tanh(z[bi, 3 * H + k])
                cc = fg * c[bi, k] + ig * gg
                c[bi, k] = cc
                h[bi, k] = og * np.tanh(cc)
                hs[t, bi, k] = h[bi, k]


@njit(cache=True, nogil=True)
def _cell_backward_kernel(dhs, gates, cells, tanh_cells, Wh_T, dz_all, reverse):
    # Iterates the processing order backwards; the cell state that preceded
    # step t sits at t-1 for the forward direction and t+1 for the reverse.
    T, B, H = dhs.shape
    one = dhs.dtype.type(1.0)
    zero = dhs.dtype.type(0.0)
    dh = np.zeros((B, H), dtype=dhs.dtype)
    dc = np.zeros((B, H), dtype=dhs.dtype)
    for idx in range(T):
        t = idx if reverse else T - 1 - idx
        first_step = (t == T - 1) if reverse else (t == 0)
        for bi in range(B):
            for k in range(H):
                dht = dhs[t, bi, k] + dh[bi, k]
                ig = gates[t, bi, k]
                fg = gates[t, bi, H + k]
                og = gates[t, bi, 2 * H + k]
                gg = gates[t, bi, 3 * H + k]
                tc = tanh_cells[t, bi, k]
                do = dht * tc
                dcc = dc[bi, k] + dht * og * (one - tc * tc)
                if first_step:
                    cp = zero
                elif reverse:
                    cp = cells[t + 1, bi, k]
                else:
                    cp = cells[t - 1, bi, k]
                dz_all[t, bi, k] = (dcc * gg) * ig * (one - ig)
                dz_all[t, bi, H + k] = (dcc * cp) * fg * (one - fg)
                dz_all[t, bi, 2 * H + k] = do * og * (one - og)
                dz_all[t, bi, 3 * H + k] = (dcc * ig) * (one - gg * gg)
                dc[bi, k] = dcc * fg
        dh = np.dot(dz_all[t], Wh_T)


def _lstm_forward(x, Wx, Wh, b, want_cache, reverse=False):
    """One LSTM direction over time-major (T, B, in) input.

    Returns (T, B, H) hidden states indexed by actual time position.
    """
    T, B, _ = x.shape
    H = Wh.shape[0]
    xw = np.dot(x.reshape(T * B, -1), Wx)
    xw += b
    xw = xw.reshape(T, B, 4 * H)
    hs = np.empty((T, B, H), dtype=x.dtype)
    if not want_cache:
        _cell_forward_kernel_nocache(xw, Wh, hs, reverse)
        return hs, None
    gates = np.empty((T, B, 4 * H), dtype=x.dtype)
    cells = np.empty((T, B, H), dtype=x.dtype)
    tanh_cells = np.empty((T, B, H), dtype=x.dtype)
    _cell_forward_kernel(xw, Wh, hs, gates, cells, tanh_cells, reverse)
    return hs, (x, hs, gates, cells, tanh_cells, Wx, Wh, reverse)


def _lstm_backward(dhs, cache):
    """BPTT through one direction; returns (dx, dWx, dWh, db)."""
    x, hs, gates, cells, tanh_cells, Wx, Wh, reverse = cache
    T, B, H = hs.shape
    dz_all = np.empty((T, B, 4 * H), dtype=x.dtype)
    _cell_backward_kernel(dhs, gates, cells, tanh_cells,
                          np.ascontiguousarray(Wh.T), dz_all, reverse)
    h_prev = np.empty_like(hs)
    if reverse:
        h_prev[:-1] = hs[1:]
        h_prev[-1] = 0.0
    else:
        h_prev[1:] = hs[:-1]
        h_prev[0] = 0.0
    dz_flat = dz_all.reshape(T * B, 4 * H)
    dWh = h_prev.reshape(T * B, H).T @ dz_flat
    dWx = x.reshape(T * B, -1).T @ dz_flat
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ Wx.T).reshape(x.shape)
    return dx, dWx, dWh, db


def _bilstm_layer_forward(model, layer, x, want_cache):
    p = model.params
    run_f = _DIRECTION_POOL.submit(
        _lstm_forward, x, p[f"l{layer}_f_Wx"], p[f"l{layer}_f_Wh"],
        p[f"l{layer}_f_b"], want_cache, False)
    h_b, cache_b = _lstm_forward(
        x, p[f"l{layer}_b_Wx"], p[f"l{layer}_b_Wh"], p[f"l{layer}_b_b"],
        want_cache, True)
    h_f, cache_f = run_f.result()
    out = np.concatenate([h_f, h_b], axis=2)
    return out, (cache_f, cache_b)


def _bilstm_layer_backward(dout, caches):
    cache_f, cache_b = caches
    H = cache_f[1].shape[2]
    run_f = _DIRECTION_POOL.submit(
        _lstm_backward, np.ascontiguousarray(dout[..., :H]), cache_f)
    dx_b, dWx_b, dWh_b, db_b = _lstm_backward(
        np.ascontiguousarray(dout[..., H:]), cache_b)
    dx_f, dWx_f, dWh_f, db_f = run_f.result()
    dx = dx_f + dx_b
    grads = {"f": (dWx_f, dWh_f, db_f), "b": (dWx_b, dWh_b, db_b)}
    return dx, grads


def _forward_stack(model, x, want_cache):
    """Run both Bi-LSTM layers and the FC head over time-major (T, B, 2d) x.

    Returns probabilities as an (B, T) array: matrix rows by matrix columns.
    """
    caches = []
    out = x
    for layer in range(model.num_layers):
        out, layer_cache = _bilstm_layer_forward(model, layer, out, want_cache)
        caches.append(layer_cache)

    p = model.params
    T, B, _ = out.shape
    flat = out.reshape(T * B, -1)
    z1 = flat @ p["fc1_W"] + p["fc1_b"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["fc2_W"] + p["fc2_b"]
    probs = expit(z2).reshape(T, B).T
    if not np.all(np.isfinite(probs)):
        raise NumericalError("non-finite activations in forward pass")
    head_cache = (flat, z1, a1) if want_cache else None
    return probs, (caches, head_cache)


def _backward_stack(model, dz2, caches):
    """Backprop from the pre-sigmoid output gradient dz2 of shape (B, T)."""
    layer_caches, (flat, z1, a1) = caches
    p = model.params
    B, T = dz2.shape
    dz2_flat = np.ascontiguousarray(dz2.T).reshape(T * B, 1).astype(model.dtype, copy=False)

    grads: dict[str, np.ndarray] = {}
    grads["fc2_W"] = a1.T @ dz2_flat
    grads["fc2_b"] = dz2_flat.sum(axis=0)
    da1 = dz2_flat @ p["fc2_W"].T
    dz1 = da1 * (z1 > 0)
    grads["fc1_W"] = flat.T @ dz1
    grads["fc1_b"] = dz1.sum(axis=0)
    dout = (dz1 @ p["fc1_W"].T).reshape(T, B, -1)

    for layer in range(model.num_layers - 1, -1, -1):
        dout, layer_grads = _bilstm_layer_backward(dout, layer_caches[layer])
        for direction, (dWx, dWh, db) in layer_grads.items():
            prefix = f"l{layer}_{direction}"
            grads[f"{prefix}_Wx"] = dWx
            grads[f"{prefix}_Wh"] = dWh
            grads[f"{prefix}_b"] = db
    return grads


def forward(model: PairSeqModel, batch: PairBatch) -> np.ndarray:
    """Score every pair of a full batch; output is the (n, n) matrix in (0,1)."""
    if batch.sequences.shape[2] != model.input_dim:
        raise ParameterError(
            f"batch feature dim {batch.sequences.shape[2]} does not match "
            f"model input {model.input_dim}")
    x = np.ascontiguousarray(batch.sequences.transpose(1, 0, 2)).astype(
        model.dtype, copy=False)
    probs, _ = _forward_stack(model, x, want_cache=False)
    return probs.astype(np.float64)


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross entropy over all matrix entries.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    if not np.isfinite(loss):
        raise NumericalError("non-finite BCE loss")
    return float(loss)


def _train_step(model, x, target, lr, grad_clip):
    """One SGD step on a single block; returns the block's BCE loss."""
    probs, caches = _forward_stack(model, x, want_cache=True)
    loss = bce_loss(probs, target)
    # With sigmoid outputs the clamped-BCE gradient wrt the logit is (p - t)/N
    # wherever the clamp is inactive, which it is for any finite logit.
    dz2 = (probs - target) / probs.size
    grads = _backward_stack(model, dz2, caches)
    if grad_clip is not None:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > grad_clip:
            scale = grad_clip / norm
            for g in grads.values():
                g *= scale
    for name, g in grads.items():
        model.params[name] -= (lr * g).astype(model.dtype, copy=False)
    return loss


def train(
    corpus: list[tuple[EmbeddingSequence, list[str]]],
    cfg: TrainConfig,
    model: PairSeqModel | None = None,
) -> tuple[PairSeqModel, list[tuple[int, float, float]]]:
    """SGD training, one recording per batch, one gradient step per block.

    Returns the final model and the per-epoch history (epoch, lr, mean loss),
    where the mean weights each block by its entry count.
    """
    if not corpus:
        raise ParameterError("training corpus is empty")
    dims = {seq.dim for seq, _ in corpus}
    if len(dims) != 1:
        raise ParameterError(f"corpus mixes embedding dims {sorted(dims)}")
    input_dim = 2 * dims.pop()

    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(input_dim, cfg.hidden_size, cfg.fc_size,
                           seed=cfg.seed, dtype=cfg.dtype)
    elif model.input_dim != input_dim:
        raise ParameterError(
            f"model input dim {model.input_dim} does not match corpus {input_dim}")

    targets = []
    for seq, labels in corpus:
        if len(labels) != seq.n:
            raise ParameterError(
                f"{seq.recording_id}: {len(labels)} labels for {seq.n} segments")
        targets.append(reference_matrix(labels))

    history: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(corpus))
        loss_sum = 0.0
        entry_sum = 0
        for idx in order:
            seq, _ = corpus[idx]
            target = targets[idx]
            for rows, cols in partition_blocks(seq.n, cfg.max_block):
                x = _pair_inputs(seq.vectors, rows, cols, model.dtype)
                t_block = target[rows[0]:rows[1], cols[0]:cols[1]].astype(model.dtype)
                try:
                    loss = _train_step(model, x, t_block, lr, cfg.grad_clip)
                except NumericalError as err:
                    raise NumericalError(
                        f"training diverged at epoch {epoch}, recording "
                        f"{seq.recording_id}, block rows {rows} cols {cols}: {err}"
                    ) from err
                loss_sum += loss * t_block.size
                entry_sum += t_block.size
        mean_loss = loss_sum / entry_sum
        history.append((epoch, lr, mean_loss))
        logger.info("epoch %d lr %.6g mean_loss %.6f", epoch, lr, mean_loss)
    return model, history


def predict_matrix(model: PairSeqModel, seq: EmbeddingSequence, max_block: int = 400) -> np.ndarray:
    """Assemble the full n-by-n score matrix from per-block forward passes."""
    if 2 * seq.dim != model.input_dim:
        raise ParameterError(
            f"sequence dim {seq.dim} does not match model input {model.input_dim}")
    if max_block < 1:
        raise ParameterError("max_block must be >= 1")
    out = np.empty((seq.n, seq.n), dtype=np.float64)
    for rows, cols in partition_blocks(seq.n, max_block):
        x = _pair_inputs(seq.vectors, rows, cols, model.dtype)
        probs, _ = _forward_stack(model, x, want_cache=False)
        out[rows[0]:rows[1], cols[0]:cols[1]] = probs
    return out
