"""Per-token and sequence-level unlearning losses with exact gradients.

All losses are written to be MINIMIZED.  In logit space, with
p = softmax(h):

  nll    -log p_y                  (the learning loss)
  ll     log p_y                   (= -nll; minimizing pushes p_y down)
  nlul   -log(1 - p_y)             (log-unlikelihood; gradient is the ll
                                    gradient reweighted by p_y/(1-p_y))
  it     KL(softmax(h) || softmax(h_teacher))
  npo    -(2/beta) log sigmoid(-beta (log pi_theta(s) - log pi_base(s))),
         a sequence-level loss whose gradient is the summed per-token ll
         gradient damped by 2 w(s), w = pi_theta^beta/(pi_theta^beta +
         pi_base^beta).

The saturated regime p_y -> 1 is handled exactly: the complementary mass
1 - p_y is computed in log space as exp(logsumexp(h without y) -
logsumexp(h)), which never underflows to zero error where it matters.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import model as M

LOSS_TAGS = ("nll", "ll", "nlul", "it", "npo")


@dataclass
class TeacherLogits:
    """Logit source for the it loss.

    With spec/theta unset the teacher is uniform: the all-zeros logit
    vector, whose softmax is the uniform distribution.
    """

    spec: object = None
    theta: object = None

    @property
    def is_uniform(self):
        return self.spec is None

    def batch(self, contexts, vocab_size):
        if self.is_uniform:
            return np.zeros((len(contexts), vocab_size))
        return M.batch_logits(self.spec, self.theta, contexts)


@dataclass
class LossKind:
    """Loss selector plus its hyperparameters.

    tag: one of "nll", "ll", "nlul", "it", "npo".
    beta: npo inverse temperature (> 0).
    teacher: it logit source (defaults to uniform).
    clamp_eps: p_y is clamped to at most 1 - clamp_eps inside nlul.
    """

    tag: str
    beta: float = 1.0
    teacher: TeacherLogits = field(default_factory=TeacherLogits)
    clamp_eps: float = 1e-12

    def __post_init__(self):
        if self.tag not in LOSS_TAGS:
            raise ValueError(f"unknown loss tag: {self.tag!r}")
        if self.tag == "npo" and not self.beta > 0:
            raise ValueError("npo requires beta > 0")
        if not (0.0 < self.clamp_eps < 1e-3):
            raise ValueError("clamp_eps must lie in (0, 1e-3)")


def _rows(h):
    h = np.asarray(h, dtype=float)
    return h.reshape(1, -1) if h.ndim == 1 else h


def _log_complement_rows(H, y):
    """log(1 - p_y) per row, exact in log space.

    Computed as logsumexp over the non-y logits minus the full logsumexp,
    which equals log(sum_{j != y} p_j) without forming 1 - p_y.
    """
    H = _rows(H)
    n, V = H.shape
    lse_full = logsumexp(H, axis=1)
    mask = np.ones((n, V), dtype=bool)
    mask[np.arange(n), y] = False
    Hm = np.where(mask, H, -np.inf)
    lse_wo = logsumexp(Hm, axis=1)
    return lse_wo - lse_full


def ll_value_rows(H, y):
    """Row-wise log softmax(h)_y."""
    H = _rows(H)
    L = M.log_softmax_rows(H)
    return L[np.arange(len(H)), y]


def ll_grad_rows(H, y):
    """Row-wise gradient of ll_value in logit space: e_y - softmax(h).

    The y entry is assembled as exp(log(1 - p_y)) = 1 - p_y computed in
    log space, so it stays exact when p_y saturates toward 1.
    """
    H = _rows(H)
    P = M.softmax_rows(H)
    G = -P
    G[np.arange(len(H)), y] = np.exp(_log_complement_rows(H, y))
    return G


def nlul_value_rows(H, y, clamp_eps=1e-12):
    """Row-wise -log(1 - p_y) with p_y clamped to at most 1 - clamp_eps."""
    return np.minimum(-_log_complement_rows(_rows(H), y), -np.log(clamp_eps))


def nlul_grad_rows(H, y, clamp_eps=1e-12):
    """Row-wise gradient of nlul in logit space.

    Equals w * ll_grad with w = p_y/(1 - p_y) at the clamped p_y.  The y
    entry reduces to exactly p_y (the weight cancels the complementary
    mass), so the gradient never underflows at memorized points.
    """
    H = _rows(H)
    log1mp = _log_complement_rows(H, y)
    log1mp_c = np.maximum(log1mp, np.log(clamp_eps))
    logp = ll_value_rows(H, y)
    w = np.exp(logp - log1mp_c)
    return w[:, None] * ll_grad_rows(H, y)


def it_value_rows(H, teacher_H):
    """Row-wise KL(softmax(h) || softmax(h_teacher)), stabilized."""
    H, T = _rows(H), _rows(teacher_H)
    P = M.softmax_rows(H)
    R = M.log_softmax_rows(H) - M.log_softmax_rows(T)
    return (P * R).sum(axis=1)


def it_grad_rows(H, teacher_H):
    """Row-wise gradient of it_value in logit space.

    d/dh KL(p || q) = p * (r - <p, r>) with r = log p - log q; the
    centering term is the softmax covariance acting on r.
    """
    H, T = _rows(H), _rows(teacher_H)
    P = M.softmax_rows(H)
    R = M.log_softmax_rows(H) - M.log_softmax_rows(T)
    return P * (R - (P * R).sum(axis=1, keepdims=True))


def nll_value_rows(H, y):
    return -ll_value_rows(H, y)


def nll_grad_rows(H, y):
    return -ll_grad_rows(H, y)


def ll_value(h, y):
    """log softmax(h)_y for a single logit vector."""
    return float(ll_value_rows(h, [int(y)])[0])


def ll_grad(h, y):
    """Gradient of ll_value in logit space for a single logit vector."""
    return ll_grad_rows(h, [int(y)])[0]


def nlul_value(h, y, clamp_eps=1e-12):
    """-log(1 - p_y) with the clamp p_y <= 1 - clamp_eps."""
    return float(nlul_value_rows(h, [int(y)], clamp_eps)[0])


def nlul_grad(h, y, clamp_eps=1e-12):
    """(p_y/(1-p_y)) * ll_grad(h, y) at the clamped p_y."""
    return nlul_grad_rows(h, [int(y)], clamp_eps)[0]


def it_value(h, teacher_h):
    """KL between softmax(h) and softmax(teacher_h)."""
    return float(it_value_rows(h, teacher_h)[0])


def it_grad(h, teacher_h):
    """Gradient of it_value in logit space for a single logit vector."""
    return it_grad_rows(h, teacher_h)[0]


def npo_value(spec, s, theta, base_theta, beta):
    """Sequence-level value (2/beta) * softplus(beta * (L_theta - L_base))
    with L = sequence log-probability; equals
    -(2/beta) log sigmoid(-beta (L_theta - L_base)).
    """
    lt = M.sequence_logprob(spec, theta, s)
    lb = M.sequence_logprob(spec, base_theta, s)
    return float((2.0 / beta) * np.logaddexp(0.0, beta * (lt - lb)))


def npo_weight(spec, s, theta, base_theta, beta):
    """Damping weight w = pi_theta(s)^beta / (pi_theta(s)^beta + pi_base(s)^beta).

    Equals sigmoid(beta * (L_theta - L_base)); w = 1/2 when theta equals
    the base model.
    """
    lt = M.sequence_logprob(spec, theta, s)
    lb = M.sequence_logprob(spec, base_theta, s)
    return float(expit(beta * (lt - lb)))


def npo_grad(spec, s, theta, base_theta, beta):
    """Exact gradient of npo_value w.r.t. theta.

    Chain rule gives 2 w(s) times the gradient of the sequence
    log-probability (the summed per-token ll gradients).
    """
    w = npo_weight(spec, s, theta, base_theta, beta)
    return 2.0 * w * M.grad_sequence_logprob(spec, theta, s)


def _teacher_batch(kind, spec, contexts):
    return kind.teacher.batch(contexts, spec.vocab_size)


def _sequences_of(batch):
    if isinstance(batch, M.TokenDataset):
        seqs = batch.sequences
    else:
        seqs = list(batch)
    if not seqs:
        raise ValueError("npo needs a batch carrying whole sequences")
    return seqs


def batch_loss(kind, spec, theta, batch, base_theta=None):
    """Mean loss over the batch.

    For npo the batch is a set of sequences (a TokenDataset built from
    sequences, or a plain list of sequences) and base_theta must be the
    fixed base model parameters.  All other losses average per
    (context, next) pair.
    """
    if kind.tag == "npo":
        seqs = _sequences_of(batch)
        if base_theta is None:
            raise ValueError("npo requires base_theta")
        return float(np.mean([npo_value(spec, s, theta, base_theta, kind.beta) for s in seqs]))
    if len(batch) == 0:
        raise ValueError("empty batch")
    H = M.batch_logits(spec, theta, batch.contexts)
    y = batch.nexts
    if kind.tag == "nll":
        vals = nll_value_rows(H, y)
    elif kind.tag == "ll":
        vals = ll_value_rows(H, y)
    elif kind.tag == "nlul":
        vals = nlul_value_rows(H, y, kind.clamp_eps)
    elif kind.tag == "it":
        vals = it_value_rows(H, _teacher_batch(kind, spec, batch.contexts))
    else:
        raise ValueError(f"unknown loss tag: {kind.tag!r}")
    return float(vals.mean())


def batch_grad(kind, spec, theta, batch, base_theta=None):
    """Exact gradient of batch_loss w.r.t. theta."""
    if kind.tag == "npo":
        seqs = _sequences_of(batch)
        if base_theta is None:
            raise ValueError("npo requires base_theta")
        g = np.zeros(M.param_count(spec))
        for s in seqs:
            g += npo_grad(spec, s, theta, base_theta, kind.beta)
        return g / len(seqs)
    if len(batch) == 0:
        raise ValueError("empty batch")
    H, aux = M._forward(spec, theta, batch.contexts)
    y = batch.nexts
    if kind.tag == "nll":
        G = nll_grad_rows(H, y)
    elif kind.tag == "ll":
        G = ll_grad_rows(H, y)
    elif kind.tag == "nlul":
        G = nlul_grad_rows(H, y, kind.clamp_eps)
    elif kind.tag == "it":
        G = it_grad_rows(H, _teacher_batch(kind, spec, batch.contexts))
    else:
        raise ValueError(f"unknown loss tag: {kind.tag!r}")
    return M.grad_from_logit_grads(spec, theta, batch.contexts, G / len(batch), aux=aux)
