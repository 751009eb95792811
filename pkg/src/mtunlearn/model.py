"""Small differentiable logit models with exact gradients and Jacobians.

Two model kinds:

  bigram-softmax   logits h(x; theta) = row of a V x V table indexed by the
                   last context token; linear in theta.
  mlp-1hidden      h(x; theta) = W2 tanh(W1 phi(x) + b1) + b2 where phi(x)
                   concatenates one-hot encodings of the last context_len
                   tokens (missing positions encode as the zero block).

Parameters are flat 1-d float vectors; `param_layout` names the slices.
All gradients are manual backprop, exact to machine precision, and every
operation is deterministic (same inputs give bitwise identical outputs).
"""

import json
from dataclasses import dataclass, field

import numpy as np

BIGRAM = "bigram-softmax"
MLP = "mlp-1hidden"
PAD = -1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture record: kind, vocabulary size, context length, width."""

    kind: str
    vocab_size: int
    context_len: int = 1
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in (BIGRAM, MLP):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.context_len < 1:
            raise ValueError("context_len must be at least 1")
        if self.kind == MLP and self.hidden_dim < 1:
            raise ValueError("mlp-1hidden requires hidden_dim >= 1")


def param_layout(spec):
    """Named slices mapping parameter blocks to coordinate ranges.

    The ranges are disjoint and cover [0, param_count).
    """
    V = spec.vocab_size
    if spec.kind == BIGRAM:
        return {"table": (0, V * V)}
    D = V * spec.context_len
    Hd = spec.hidden_dim
    i = 0
    layout = {}
    for name, size in (("W1", Hd * D), ("b1", Hd), ("W2", V * Hd), ("b2", V)):
        layout[name] = (i, i + size)
        i += size
    return layout


def param_count(spec):
    """Total number of parameters for the given spec."""
    return max(stop for _, stop in param_layout(spec).values())


def init_params(spec, seed):
    """Seeded uniform(-0.1, 0.1) initialization of the flat parameter vector."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.1, 0.1, param_count(spec))


def _unpack_mlp(spec, theta):
    V, D, Hd = spec.vocab_size, spec.vocab_size * spec.context_len, spec.hidden_dim
    lay = param_layout(spec)
    W1 = theta[lay["W1"][0]:lay["W1"][1]].reshape(Hd, D)
    b1 = theta[lay["b1"][0]:lay["b1"][1]]
    W2 = theta[lay["W2"][0]:lay["W2"][1]].reshape(V, Hd)
    b2 = theta[lay["b2"][0]:lay["b2"][1]]
    return W1, b1, W2, b2


@dataclass
class TokenDataset:
    """A set of (context, next-token) pairs expanded from token sequences.

    contexts is an (n, context_len) int array, left-padded with -1 where a
    sequence prefix is shorter than context_len; nexts is the (n,) array of
    target tokens.  role labels the split the pairs belong to ("forget" or
    "pretrain").  sequences retains the source sequences when the dataset
    was built from them (needed for sequence-level losses and for greedy
    decoding metrics).
    """

    contexts: np.ndarray
    nexts: np.ndarray
    role: str = "forget"
    sequences: list = field(default_factory=list)

    def __len__(self):
        return len(self.nexts)

    def subset(self, idx):
        """Row subset by integer index array (sequences are not subset)."""
        return TokenDataset(self.contexts[idx], self.nexts[idx], self.role, [])


def dataset_from_sequences(sequences, context_len, role="forget"):
    """Expand token sequences into all (context, next) pairs.

    Each sequence s contributes pairs (s[max(0, t-context_len):t], s[t])
    for t = 1 .. len(s)-1, left-padded with -1 to context_len.
    """
    ctx, nxt = [], []
    seqs = [np.asarray(s, dtype=int) for s in sequences]
    for s in seqs:
        if len(s) < 2:
            raise ValueError("sequences must have length >= 2")
        for t in range(1, len(s)):
            c = list(s[max(0, t - context_len):t])
            c = [PAD] * (context_len - len(c)) + c
            ctx.append(c)
            nxt.append(int(s[t]))
    return TokenDataset(np.array(ctx, dtype=int), np.array(nxt, dtype=int), role, seqs)


def load_jsonl_dataset(path, context_len, role="forget"):
    """Load sequences from a JSON-lines file of {"tokens": [int, ...]} records."""
    seqs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "tokens" not in rec:
                raise ValueError(f"{path}:{lineno}: record has no 'tokens' field")
            seqs.append(rec["tokens"])
    return dataset_from_sequences(seqs, context_len, role)


def validate_dataset(spec, ds):
    """Check every token id against the vocabulary; raise on violation."""
    V = spec.vocab_size
    ok_ctx = np.all((ds.contexts >= PAD) & (ds.contexts < V))
    ok_nxt = np.all((ds.nexts >= 0) & (ds.nexts < V))
    if not (ok_ctx and ok_nxt):
        raise ValueError(f"token id out of vocabulary (V={V})")
    if ds.contexts.shape[1] > spec.context_len and spec.kind == MLP:
        raise ValueError("context wider than the model's context_len")


def _encode_contexts(spec, contexts):
    """Concatenated one-hot encoding (n, V*context_len); pad rows stay zero."""
    contexts = np.asarray(contexts, dtype=int)
    n, width = contexts.shape
    V = spec.vocab_size
    X = np.zeros((n, V * spec.context_len))
    offset = spec.context_len - width
    if offset < 0:
        raise ValueError("context wider than the model's context_len")
    for j in range(width):
        t = contexts[:, j]
        m = t >= 0
        X[np.nonzero(m)[0], (offset + j) * V + t[m]] = 1.0
    return X


def _forward(spec, theta, contexts):
    """Batch logits plus the auxiliary state the backward pass needs.

    Returns (H, aux): H is (n, V); aux is the hidden activation matrix for
    the MLP and the encoded one-hot matrix, or the context rows for the
    bigram model.
    """
    contexts = np.asarray(contexts, dtype=int)
    V = spec.vocab_size
    if np.any(contexts >= V) or np.any(contexts < PAD):
        raise ValueError(f"token id out of vocabulary (V={V})")
    if spec.kind == BIGRAM:
        rows = contexts[:, -1]
        if np.any(rows < 0):
            raise ValueError("bigram model requires a non-empty context")
        table = theta.reshape(V, V)
        return table[rows], rows
    X = _encode_contexts(spec, contexts)
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    A = np.tanh(X @ W1.T + b1)
    return A @ W2.T + b2, (X, A)


def batch_logits(spec, theta, contexts):
    """Logit matrix (n, V) for a batch of contexts."""
    H, _ = _forward(spec, theta, contexts)
    return H


def logits(spec, theta, x):
    """Logit vector (V,) for a single context x (list of token ids)."""
    x = np.asarray(x, dtype=int).reshape(1, -1)
    return batch_logits(spec, theta, x)[0]


def grad_from_logit_grads(spec, theta, contexts, G, aux=None):
    """Backprop: gradient w.r.t. theta of sum_n <G[n], h(x_n; theta)>.

    G is (n, V).  Passing the aux state returned by `_forward` avoids a
    second forward pass.
    """
    contexts = np.asarray(contexts, dtype=int)
    V = spec.vocab_size
    G = np.asarray(G, dtype=float)
    if spec.kind == BIGRAM:
        rows = aux if aux is not None else contexts[:, -1]
        dW = np.zeros((V, V))
        np.add.at(dW, rows, G)
        return dW.ravel()
    if aux is None:
        _, aux = _forward(spec, theta, contexts)
    X, A = aux
    _, _, W2, _ = _unpack_mlp(spec, theta)
    dW2 = G.T @ A
    db2 = G.sum(axis=0)
    dZ = (G @ W2) * (1.0 - A * A)
    dW1 = dZ.T @ X
    db1 = dZ.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


def grad_loss(spec, theta, batch, loss):
    """Exact gradient of the batch-mean per-token loss w.r.t. theta."""
    from . import losses

    return losses.batch_grad(loss, spec, theta, batch)


def logit_jacobian(spec, theta, x):
    """Exact Jacobian d h(x; theta) / d theta, shape (dim(theta), V).

    For the bigram model this is a 0/1 selection matrix: one identity
    block on the active table row, zeros elsewhere.
    """
    x = np.asarray(x, dtype=int).reshape(1, -1)
    V = spec.vocab_size
    dim = param_count(spec)
    J = np.zeros((dim, V))
    if spec.kind == BIGRAM:
        row = int(x[0, -1])
        if row < 0:
            raise ValueError("bigram model requires a non-empty context")
        if row >= V:
            raise ValueError(f"token id out of vocabulary (V={V})")
        for j in range(V):
            J[row * V + j, j] = 1.0
        return J
    # Backprop of each logit coordinate: column j is the gradient of h_j.
    _, aux = _forward(spec, theta, x)
    for j in range(V):
        G = np.zeros((1, V))
        G[0, j] = 1.0
        J[:, j] = grad_from_logit_grads(spec, theta, x, G, aux=aux)
    return J


def logit_jvp(spec, theta, contexts, v):
    """Directional derivative of the batch logits along the parameter
    direction v: returns (n, V) with rows J(x_n)^T v.

    Exact forward-mode product; avoids materializing dense Jacobians.
    """
    contexts = np.asarray(contexts, dtype=int)
    V = spec.vocab_size
    v = np.asarray(v, dtype=float)
    if spec.kind == BIGRAM:
        rows = contexts[:, -1]
        dtable = v.reshape(V, V)
        return dtable[rows]
    X = _encode_contexts(spec, contexts)
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    dW1, db1, dW2, db2 = _unpack_mlp(spec, v)
    A = np.tanh(X @ W1.T + b1)
    dZ = X @ dW1.T + db1
    dA = (1.0 - A * A) * dZ
    return A @ dW2.T + dA @ W2.T + db2


def log_softmax_rows(H):
    """Row-wise log softmax, stabilized by max subtraction."""
    Z = H - H.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def softmax_rows(H):
    """Row-wise softmax, stabilized by max subtraction."""
    Z = H - H.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def sequence_logprob(spec, theta, s):
    """Sum over positions t >= 1 of log softmax(h(s_{<t}))_{s_t}."""
    s = np.asarray(s, dtype=int)
    if len(s) < 2:
        raise ValueError("sequence must have length >= 2")
    ds = dataset_from_sequences([s], spec.context_len)
    H = batch_logits(spec, theta, ds.contexts)
    L = log_softmax_rows(H)
    return float(L[np.arange(len(ds.nexts)), ds.nexts].sum())


def grad_sequence_logprob(spec, theta, s):
    """Gradient w.r.t. theta of sequence_logprob (sum of per-step terms)."""
    s = np.asarray(s, dtype=int)
    if len(s) < 2:
        raise ValueError("sequence must have length >= 2")
    ds = dataset_from_sequences([s], spec.context_len)
    H, aux = _forward(spec, theta, ds.contexts)
    P = softmax_rows(H)
    G = -P
    G[np.arange(len(ds.nexts)), ds.nexts] += 1.0
    return grad_from_logit_grads(spec, theta, ds.contexts, G, aux=aux)


def greedy_continuation(spec, theta, prompt, n_steps):
    """Greedy decode: repeatedly append argmax-logit tokens to the prompt.

    Ties break toward the lowest token id (np.argmax convention), so the
    decode is fully deterministic.
    """
    cur = [int(t) for t in prompt]
    out = []
    for _ in range(n_steps):
        c = cur[-spec.context_len:]
        c = [PAD] * (spec.context_len - len(c)) + c
        h = logits(spec, theta, c)
        nxt = int(np.argmax(h))
        out.append(nxt)
        cur.append(nxt)
    return out
