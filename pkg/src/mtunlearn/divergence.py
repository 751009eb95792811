"""Proximity terms D(theta, theta_ref) anchoring the unlearning update.

Three divergences, each a batch mean over (context, next) pairs (labels
unused), with exact gradients w.r.t. the first argument:

  kl       KL(softmax(h(theta)) || softmax(h(theta_ref))), current model
           first, reference second.
  qkl      (h - h')^T S(h) (h - h') with S(h) = Diag(p) - p p^T evaluated
           at the CURRENT model's logits; the gradient differentiates
           through S as well (exact gradient of the written expression).
  bregman  L(theta) - L(theta_ref) - (theta - theta_ref)^T grad L(theta_ref)
           for a convex L; the batch form wraps the bigram nll loss,
           which is convex in the logit table.

The damped variant adds (lam/2) ||theta - theta_ref||^2, whose gradient
contributes lam (theta - theta_ref).
"""

from dataclasses import dataclass

import numpy as np

from . import losses
from . import model as M

DIVERGENCE_TAGS = ("kl", "qkl", "bregman")

# Second-order coefficient of each divergence relative to the shared
# curvature matrix H: D(theta_ref + t d, theta_ref) = scale * (t^2/2) d^T H d
# + O(t^3).  kl expands with the classic 1/2; qkl is the full quadratic
# form, twice that; the bregman remainder of the bigram nll matches kl.
CURVATURE_SCALE = {"kl": 1.0, "qkl": 2.0, "bregman": 1.0}


@dataclass
class DivergenceKind:
    """Divergence selector plus damping strength lam >= 0."""

    tag: str
    lam: float = 0.0

    def __post_init__(self):
        if self.tag not in DIVERGENCE_TAGS:
            raise ValueError(f"unknown divergence tag: {self.tag!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def _check_batch(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")


def kl_div(spec, theta, theta_ref, batch):
    """Batch mean KL between current-model and reference-model softmaxes."""
    _check_batch(batch)
    H = M.batch_logits(spec, theta, batch.contexts)
    Href = M.batch_logits(spec, theta_ref, batch.contexts)
    return float(losses.it_value_rows(H, Href).mean())


def _kl_grad(spec, theta, theta_ref, batch):
    H, aux = M._forward(spec, theta, batch.contexts)
    Href = M.batch_logits(spec, theta_ref, batch.contexts)
    G = losses.it_grad_rows(H, Href)
    return M.grad_from_logit_grads(spec, theta, batch.contexts, G / len(batch), aux=aux)


def _qkl_rows(H, Href):
    """Per-row quadratic form d^T S(h) d = sum_j p_j d_j^2 - (p^T d)^2."""
    P = M.softmax_rows(H)
    D = H - Href
    m1 = (P * D).sum(axis=1)
    m2 = (P * D * D).sum(axis=1)
    return m2 - m1 * m1


def qkl_div(spec, theta, theta_ref, batch):
    """Batch mean of the quadratic form with S at the current model."""
    _check_batch(batch)
    H = M.batch_logits(spec, theta, batch.contexts)
    Href = M.batch_logits(spec, theta_ref, batch.contexts)
    return float(_qkl_rows(H, Href).mean())


def _qkl_grad_rows(H, Href):
    """Exact logit-space gradient of the per-row quadratic form.

    With d = h - h', p = softmax(h), m1 = p^T d, m2 = p^T d^2, the
    product rule over both d and S(h) gives

      dQKL/dh = p * (2d - 2 m1 + d^2 - m2 - 2 m1 d + 2 m1^2).
    """
    P = M.softmax_rows(H)
    D = H - Href
    m1 = (P * D).sum(axis=1, keepdims=True)
    m2 = (P * D * D).sum(axis=1, keepdims=True)
    return P * (2.0 * D - 2.0 * m1 + D * D - m2 - 2.0 * m1 * D + 2.0 * m1 * m1)


def _qkl_grad(spec, theta, theta_ref, batch):
    H, aux = M._forward(spec, theta, batch.contexts)
    Href = M.batch_logits(spec, theta_ref, batch.contexts)
    G = _qkl_grad_rows(H, Href)
    return M.grad_from_logit_grads(spec, theta, batch.contexts, G / len(batch), aux=aux)


def bregman_div(loss_value, loss_grad, theta, theta_ref):
    """Bregman divergence of a convex loss given by value/gradient callables:

    D(theta, theta_ref) = L(theta) - L(theta_ref)
                          - (theta - theta_ref)^T grad L(theta_ref).
    """
    theta = np.asarray(theta, dtype=float)
    theta_ref = np.asarray(theta_ref, dtype=float)
    g_ref = np.asarray(loss_grad(theta_ref), dtype=float)
    return float(loss_value(theta) - loss_value(theta_ref) - (theta - theta_ref) @ g_ref)


_NLL = losses.LossKind("nll")


def _check_bregman_model(spec):
    if spec.kind != M.BIGRAM:
        raise ValueError("bregman divergence requires the bigram-softmax model "
                         "(the wrapped nll loss must be convex in theta)")


def bregman_nll_div(spec, theta, theta_ref, batch):
    """Bregman divergence of the batch nll loss on the bigram model."""
    _check_batch(batch)
    _check_bregman_model(spec)
    return bregman_div(
        lambda th: losses.batch_loss(_NLL, spec, th, batch),
        lambda th: losses.batch_grad(_NLL, spec, th, batch),
        theta, theta_ref,
    )


def _bregman_grad(spec, theta, theta_ref, batch):
    _check_bregman_model(spec)
    return (losses.batch_grad(_NLL, spec, theta, batch)
            - losses.batch_grad(_NLL, spec, theta_ref, batch))


def divergence_value(kind, spec, theta, theta_ref, batch):
    """Raw divergence value D(theta, theta_ref) for the selected kind."""
    if kind.tag == "kl":
        return kl_div(spec, theta, theta_ref, batch)
    if kind.tag == "qkl":
        return qkl_div(spec, theta, theta_ref, batch)
    return bregman_nll_div(spec, theta, theta_ref, batch)


def damped_value(kind, spec, theta, theta_ref, batch):
    """D(theta, theta_ref) + (lam/2) ||theta - theta_ref||^2."""
    diff = np.asarray(theta, dtype=float) - np.asarray(theta_ref, dtype=float)
    return divergence_value(kind, spec, theta, theta_ref, batch) + 0.5 * kind.lam * float(diff @ diff)


def damped_grad(kind, spec, theta, theta_ref, batch):
    """Exact gradient of the damped divergence w.r.t. theta:
    grad D(theta, theta_ref) + lam (theta - theta_ref)."""
    _check_batch(batch)
    if kind.tag == "kl":
        g = _kl_grad(spec, theta, theta_ref, batch)
    elif kind.tag == "qkl":
        g = _qkl_grad(spec, theta, theta_ref, batch)
    else:
        g = _bregman_grad(spec, theta, theta_ref, batch)
    if kind.lam:
        g = g + kind.lam * (np.asarray(theta, dtype=float) - np.asarray(theta_ref, dtype=float))
    return g


def curvature_quadratic_form(spec, theta_ref, batch, d):
    """d^T H(theta_ref) d for the shared curvature matrix H (batch mean of
    J S J^T), computed matrix-free via the logit directional derivative:
    each context contributes u^T S u with u = J^T d."""
    U = M.logit_jvp(spec, theta_ref, batch.contexts, d)
    H = M.batch_logits(spec, theta_ref, batch.contexts)
    P = M.softmax_rows(H)
    m1 = (P * U).sum(axis=1)
    m2 = (P * U * U).sum(axis=1)
    return float((m2 - m1 * m1).mean())


def local_quadratic_residual(kind, spec, theta_ref, d, t, batch):
    """|D(theta_ref + t d, theta_ref) - scale * (t^2/2) d^T H(theta_ref) d|
    for a unit direction d.

    H is frozen at theta_ref, so the residual captures every term beyond
    second order; it decays like t^3 as t -> 0 for all three divergences.
    scale is the divergence's second-order coefficient (2 for qkl, 1
    otherwise).
    """
    d = np.asarray(d, dtype=float)
    nd = float(np.linalg.norm(d))
    if not np.isclose(nd, 1.0, atol=1e-8):
        raise ValueError(f"direction must be a unit vector, got norm {nd}")
    if t < 0:
        raise ValueError("scale t must be nonnegative")
    _check_batch(batch)
    value = divergence_value(kind, spec, np.asarray(theta_ref, dtype=float) + t * d, theta_ref, batch)
    q = curvature_quadratic_form(spec, theta_ref, batch, d)
    return abs(value - CURVATURE_SCALE[kind.tag] * 0.5 * t * t * q)
