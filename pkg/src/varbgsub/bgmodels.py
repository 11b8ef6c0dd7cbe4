"""Background generators behind a single streaming interface.

Two models are provided.  The temporal-median model keeps a short frame
history and emits the per-pixel median, which makes the residual and
thresholding stack testable without any training.  The autoencoder model
trains one optimizer step per frame on a small batch spread uniformly
over the history and emits the batch of reconstructions.

Both expose the same surface: ``ingest`` pushes a frame into the history
(validating dimensions), ``reconstruct_with_update`` performs the model
update and returns a ``(channels, h, w)`` uint8 stack of backgrounds
(newest first), and ``update_and_reconstruct`` composes the two.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from . import network
from .imgio import denormalize, normalize

DEFAULT_HISTORY = 50
DEFAULT_BATCH = 10


class FrameHistory:
    """FIFO ring buffer of the most recent frames, oldest first."""

    def __init__(self, capacity: int = DEFAULT_HISTORY):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._buf: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, frame: np.ndarray) -> None:
        self._buf.append(frame)

    def clear(self) -> None:
        self._buf.clear()

    def frames(self) -> list[np.ndarray]:
        return list(self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


def select_subset(history: FrameHistory, n: int) -> list[np.ndarray]:
    """Pick ``n`` frames uniformly spread over the history, time-ordered.

    Index ``j`` maps to ``round(j * (len - 1) / (n - 1))``; short histories
    yield duplicates, which keeps warm-up batches full-sized.
    """
    frames = history.frames()
    if not frames:
        raise ValueError("empty history")
    if n < 1:
        raise ValueError(f"subset size must be positive, got {n}")
    if n == 1:
        return [frames[-1]]
    last = len(frames) - 1
    return [frames[int(math.floor(j * last / (n - 1) + 0.5))] for j in range(n)]


def median_background(history: FrameHistory) -> np.ndarray:
    """Per-pixel temporal median (lower middle element for even counts)."""
    frames = history.frames()
    if not frames:
        raise ValueError("empty history")
    stack = np.stack(frames)
    k = (len(frames) - 1) // 2
    return np.partition(stack, k, axis=0)[k]


class _HistoryModel:
    def __init__(self, capacity: int):
        self.history = FrameHistory(capacity)

    def ingest(self, frame: np.ndarray) -> None:
        frame = np.asarray(frame)
        if frame.dtype != np.uint8 or frame.ndim != 2:
            raise ValueError("frames must be 2-d uint8 arrays")
        if len(self.history) and self.history.frames()[0].shape != frame.shape:
            raise ValueError(
                f"dimension change mid-stream: {self.history.frames()[0].shape} -> {frame.shape}"
            )
        self.history.push(frame)

    def reset_history(self) -> None:
        self.history.clear()

    def update_and_reconstruct(self, frame: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        self.ingest(frame)
        return self.reconstruct_with_update(weights)


class MedianModel(_HistoryModel):
    """Temporal-median baseline; emits a single background channel."""

    channels = 1

    def __init__(self, capacity: int = DEFAULT_HISTORY):
        super().__init__(capacity)
        self.last_loss: float | None = None

    def reconstruct_with_update(self, weights: np.ndarray | None = None) -> np.ndarray:
        return median_background(self.history)[None]


class AutoencoderModel(_HistoryModel):
    """Incrementally trained autoencoder; emits the reconstructed batch."""

    def __init__(self, height: int, width: int, bottleneck: int = 2048, seed: int = 0,
                 lr: float = network.DEFAULT_LR, capacity: int = DEFAULT_HISTORY,
                 batch_size: int = DEFAULT_BATCH, dtype=np.float32):
        super().__init__(capacity)
        if capacity < batch_size:
            raise ValueError(f"history capacity {capacity} smaller than batch size {batch_size}")
        self.params = network.xavier_init(network.build_network(height, width, bottleneck), seed, dtype)
        self.lr = lr
        self.batch_size = batch_size
        self.channels = batch_size
        self.last_loss: float | None = None

    def reconstruct_with_update(self, weights: np.ndarray | None = None) -> np.ndarray:
        subset = select_subset(self.history, self.batch_size)
        batch = np.stack([normalize(f, self.params.dtype) for f in subset])
        recon, caches = network.forward(self.params, batch)
        loss, grad = network.weighted_l1_loss(batch, recon, weights)
        grads = network.backward(self.params, caches, grad)
        network.adam_step(self.params, grads, self.lr)
        self.last_loss = loss
        # Reconstructions come back newest first; the subset is time-ordered.
        return np.stack([denormalize(r) for r in recon[::-1]])


def make_model(name: str, *, height: int, width: int, capacity: int = DEFAULT_HISTORY,
               batch_size: int = DEFAULT_BATCH, bottleneck: int = 2048, seed: int = 0,
               lr: float = network.DEFAULT_LR):
    """Build a background model from its config token."""
    if name == "median":
        return MedianModel(capacity)
    if name == "autoencoder":
        return AutoencoderModel(
            height, width, bottleneck=bottleneck, seed=seed, lr=lr,
            capacity=capacity, batch_size=batch_size,
        )
    raise ValueError(f"unknown model {name!r} (expected 'autoencoder' or 'median')")
