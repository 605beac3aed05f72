"""One-hidden-layer networks with hand-derived backpropagation.

Used for the policy (softmax head), the adversary (softmax head, optionally
masked to a successor support) and the critics (linear head, width 1).
Gradients are returned as flat vectors laid out like `DiffNet.params`:
W1 (hidden x in, row-major), b1, W2 (out x hidden, row-major), b2.

Snapshot layout (little-endian):
    4 bytes   magic b"DNET"
    5 x <u4   version, input width, hidden width, output width, head code
    N x <f8   flat parameter vector
Head codes: 0 softmax, 1 linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

HIDDEN_WIDTH = 100
INIT_SCALE = 0.05
LOG_PROB_FLOOR = np.log(1e-12)
SNAPSHOT_MAGIC = b"DNET"
SNAPSHOT_VERSION = 1
HEADS = ("softmax", "linear")


def scheduled_rate(base: float, episode: int) -> float:
    """Learning-rate schedule base / (1 + n // 500) for episode n."""
    return base / (1 + episode // 500)


def masked_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Softmax along the last axis with max-subtraction; masked entries get 0."""
    z = np.array(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z_max = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - z_max)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Chain a gradient wrt softmax outputs back to the logits."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


class DiffNet:
    """Affine -> ReLU -> affine -> {softmax | identity}."""

    def __init__(
        self,
        input_width: int,
        output_width: int,
        hidden_width: int = HIDDEN_WIDTH,
        head: str = "softmax",
        rng: Optional[np.random.Generator] = None,
        params: Optional[np.ndarray] = None,
    ):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
        self.input_width = int(input_width)
        self.hidden_width = int(hidden_width)
        self.output_width = int(output_width)
        self.head = head
        count = self.parameter_count
        if params is not None:
            params = np.array(params, dtype=np.float64)
            if params.shape != (count,):
                raise ValueError(f"expected {count} parameters, got {params.shape}")
            self.params = params
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.params = rng.uniform(-INIT_SCALE, INIT_SCALE, size=count)
        self._bind_views()

    @property
    def parameter_count(self) -> int:
        return (self.hidden_width * (self.input_width + 1)
                + self.output_width * (self.hidden_width + 1))

    def _bind_views(self):
        h, i, o = self.hidden_width, self.input_width, self.output_width
        p = self.params
        a = h * i
        b = a + h
        c = b + o * h
        self.W1 = p[:a].reshape(h, i)
        self.b1 = p[a:b]
        self.W2 = p[b:c].reshape(o, h)
        self.b2 = p[c:]

    def set_params(self, params: np.ndarray):
        self.params[:] = params

    def copy(self) -> "DiffNet":
        return DiffNet(self.input_width, self.output_width, self.hidden_width,
                       self.head, params=self.params.copy())

    # forward ---------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_width:
            raise ValueError(f"input width {x.shape[-1]} != network input width {self.input_width}")
        return x

    def _forward_cache(self, x: np.ndarray, mask: Optional[np.ndarray] = None):
        x = self._check_input(x)
        pre = x @ self.W1.T + self.b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ self.W2.T + self.b2
        if self.head == "softmax":
            out = masked_softmax(logits, mask)
        else:
            out = logits
        return x, pre, hidden, out

    def forward(self, x: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Network output for one input vector (or a batch, row-wise)."""
        return self._forward_cache(x, mask)[3]

    def _backprop(self, x: np.ndarray, pre: np.ndarray, hidden: np.ndarray,
                  grad_logits: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given d(objective)/d(logits); batches are summed."""
        x2 = np.atleast_2d(x)
        pre2 = np.atleast_2d(pre)
        hid2 = np.atleast_2d(hidden)
        gz = np.atleast_2d(grad_logits)
        g_w2 = gz.T @ hid2
        g_b2 = gz.sum(axis=0)
        g_pre = (gz @ self.W2) * (pre2 > 0.0)
        g_w1 = g_pre.T @ x2
        g_b1 = g_pre.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def _require_softmax(self, what: str):
        if self.head != "softmax":
            raise ValueError(f"{what} is undefined for a {self.head} head")

    def log_prob_grad(self, x: np.ndarray, index: int,
                      mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
        """Gradient of log p_index(x) wrt the parameters, and log p_index(x)."""
        self._require_softmax("log-probability")
        if not 0 <= index < self.output_width:
            raise ValueError(f"index {index} outside output width {self.output_width}")
        x, pre, hidden, probs = self._forward_cache(x, mask)
        grad_logits = -probs
        grad_logits[index] += 1.0
        log_p = float(np.log(probs[index])) if probs[index] > 0.0 else LOG_PROB_FLOOR
        return self._backprop(x, pre, hidden, grad_logits), max(log_p, LOG_PROB_FLOOR)

    def entropy_grad(self, x: np.ndarray) -> Tuple[np.ndarray, float]:
        """Gradient of H(p) = -sum p log p wrt the parameters, and H(p)."""
        self._require_softmax("entropy")
        x, pre, hidden, probs = self._forward_cache(x)
        log_p = np.log(np.maximum(probs, 1e-300))
        entropy = float(-np.sum(probs * log_p))
        grad_logits = -probs * (log_p + entropy)
        return self._backprop(x, pre, hidden, grad_logits), entropy

    def score_and_entropy_grads(self, x: np.ndarray, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """log_prob_grad and entropy_grad for one input from a single forward pass."""
        self._require_softmax("score")
        if not 0 <= index < self.output_width:
            raise ValueError(f"index {index} outside output width {self.output_width}")
        x, pre, hidden, probs = self._forward_cache(x)
        score_logits = -probs
        score_logits[index] += 1.0
        log_p = np.log(np.maximum(probs, 1e-300))
        entropy = -np.sum(probs * log_p)
        entropy_logits = -probs * (log_p + entropy)
        return (self._backprop(x, pre, hidden, score_logits),
                self._backprop(x, pre, hidden, entropy_logits))

    def output_grad(self, x: np.ndarray, grad_out: np.ndarray,
                    mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Backpropagate d(objective)/d(outputs) for a batch of inputs (summed)."""
        x, pre, hidden, out = self._forward_cache(x, mask)
        if self.head == "softmax":
            grad_logits = softmax_backward(out, grad_out)
        else:
            grad_logits = grad_out
        return self._backprop(x, pre, hidden, grad_logits)

    # snapshots -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = np.array(
            [SNAPSHOT_VERSION, self.input_width, self.hidden_width, self.output_width,
             HEADS.index(self.head)],
            dtype="<u4",
        )
        return SNAPSHOT_MAGIC + header.tobytes() + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DiffNet":
        if blob[:4] != SNAPSHOT_MAGIC:
            raise ValueError("not a network snapshot (bad magic)")
        header = np.frombuffer(blob[4:24], dtype="<u4")
        version, n_in, n_hidden, n_out, head_code = (int(v) for v in header)
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        if head_code >= len(HEADS):
            raise ValueError(f"unknown head code {head_code}")
        params = np.frombuffer(blob[24:], dtype="<f8").astype(np.float64)
        return cls(n_in, n_out, n_hidden, HEADS[head_code], params=params)

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "DiffNet":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


@dataclass
class AdamState:
    """Adam moments for one network (critics only)."""

    size: int
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    @classmethod
    def for_net(cls, net: DiffNet, lr: float = 0.001) -> "AdamState":
        return cls(size=net.parameter_count, lr=lr)

    def delta(self, grad: np.ndarray) -> np.ndarray:
        """Parameter change for a descent step on `grad`."""
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mse_loss_grad(net: DiffNet, inputs: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, float]:
    """Mean-squared error of a width-1 linear net over a batch, and its gradient."""
    if net.head != "linear" or net.output_width != 1:
        raise ValueError("critic fitting needs a linear head of width 1")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ValueError("empty critic batch")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    preds = net.forward(inputs)[:, 0]
    err = preds - targets
    loss = float(np.mean(err ** 2))
    grad_out = (2.0 / len(targets) * err)[:, None]
    return net.output_grad(inputs, grad_out), loss


def critic_fit_episode(net: DiffNet, states: Sequence[np.ndarray], targets: Sequence[float],
                       adam: AdamState) -> Tuple[DiffNet, float]:
    """One Adam step on the episode's MSE; the episode is the batch."""
    grad, loss = mse_loss_grad(net, np.asarray(states, dtype=np.float64), np.asarray(targets))
    net.params += adam.delta(grad)
    return net, loss


def critic_table(net: DiffNet, n_states: int) -> np.ndarray:
    """Critic evaluated on every one-hot state encoding."""
    return net.forward(np.eye(n_states))[:, 0]
