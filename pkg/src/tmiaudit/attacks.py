"""Membership-inference attacks on the pretraining data of finetuned models.

Three scorers share the same query machinery:

* adapted LiRA: Gaussian likelihood ratio on the target's most confident
  downstream label,
* direct LiRA: the same test run on the *pretrained* models at the true
  label (an upper-bound baseline),
* TMI: a metaclassifier trained on logit-scaled prediction vectors of
  finetuned shadow models, queried with the target's vectors.

Array-level entry points (``*_from_arrays``, :func:`fit_metaclassifiers`)
let the harness evaluate many challenge points at once; the per-point
functions are thin wrappers over them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ._rng import child_rng
from .datasets import Point, augment
from .errors import DegenerateSplitError, EmptyDataError, FitError, MaskError, MetaTrainingError
from .nn_core import Model, forward, softmax

PROB_CLAMP = 1e-7
DEFAULT_RIDGE = 1e-6
DEFAULT_AUG_STRENGTH = 0.1
DEFAULT_M = 8


# -- prediction vectors ---------------------------------------------------


def scale(pred) -> np.ndarray:
    """Componentwise logit of clamped probabilities (any leading shape)."""
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(p) - np.log1p(-p)


def topk_mask(pred, k: int) -> np.ndarray:
    """Keep the ``k`` largest confidences and spread the rest evenly.

    Works on a single vector or on stacked vectors along the last axis.
    Ties go to the lower label index.
    """
    p = np.asarray(pred, dtype=np.float64)
    K = p.shape[-1]
    if not 1 <= k <= K:
        raise MaskError(f"k={k} outside [1, {K}]")
    if k == K:
        return p.copy()
    order = np.argsort(-p, axis=-1, kind="stable")
    top = order[..., :k]
    keep = np.zeros(p.shape, dtype=bool)
    np.put_along_axis(keep, top, True, axis=-1)
    rest = 1.0 - np.sum(np.where(keep, p, 0.0), axis=-1, keepdims=True)
    return np.where(keep, p, rest / (K - k))


def view_inputs(x, M: int, master_seed: int, strength: float = DEFAULT_AUG_STRENGTH) -> np.ndarray:
    if M < 1:
        raise ValueError("M must be at least 1")
    return np.stack([augment(x, j, strength, master_seed) for j in range(M)])


def query_views(
    model: Model,
    point,
    M: int = DEFAULT_M,
    master_seed: int = 0,
    *,
    strength: float = DEFAULT_AUG_STRENGTH,
    topk: int | None = None,
) -> np.ndarray:
    """``[M, K]`` prediction vectors on views 0..M-1 of a challenge point."""
    x = point.x if isinstance(point, Point) else point
    probs = softmax(forward(model, view_inputs(x, M, master_seed, strength)))
    return probs if topk is None else topk_mask(probs, topk)


# -- Gaussian likelihood ratio --------------------------------------------


@dataclass
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    def logpdf(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        L = np.linalg.cholesky(self.covariance)
        z = np.linalg.solve(L, x - self.mean)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return float(-0.5 * (z @ z + logdet + len(x) * math.log(2 * math.pi)))


def fit_gaussian(samples, ridge: float = DEFAULT_RIDGE) -> GaussianFit:
    """Sample mean and unbiased covariance plus ``ridge * I``."""
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] < 2:
        raise FitError(f"need at least 2 samples to fit a Gaussian, got {S.shape[0]}")
    mean = S.mean(axis=0)
    cov = np.atleast_2d(np.cov(S, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2 + ridge * np.eye(S.shape[1])
    return GaussianFit(mean, cov)


def log_likelihood_ratio(obs, fit_in: GaussianFit, fit_out: GaussianFit) -> float:
    return fit_in.logpdf(obs) - fit_out.logpdf(obs)


def lira_from_arrays(obs, shadow_stats, member, ridge: float = DEFAULT_RIDGE, challenge_id=None) -> float:
    """Log likelihood ratio of ``obs`` under IN vs OUT fits of ``shadow_stats``.

    ``shadow_stats`` is ``[n_shadow, M]`` and ``member`` the IN bit per row.
    """
    member = np.asarray(member, dtype=bool)
    n_in = int(member.sum())
    n_out = len(member) - n_in
    if n_in == 0 or n_out == 0:
        raise DegenerateSplitError(challenge_id, n_in, n_out)
    stats = np.asarray(shadow_stats, dtype=np.float64)
    return log_likelihood_ratio(obs, fit_gaussian(stats[member], ridge), fit_gaussian(stats[~member], ridge))


def _exp(log_ratio: float) -> float:
    try:
        return math.exp(log_ratio)
    except OverflowError:
        return math.inf


def adapted_lira_log(target, point: Point, view, M=DEFAULT_M, ridge=DEFAULT_RIDGE, master_seed=0,
                     *, strength=DEFAULT_AUG_STRENGTH) -> float:
    """Log of :func:`adapted_lira`."""
    obs_views = query_views(target, point, M, master_seed, strength=strength)
    y_hat = int(np.argmax(obs_views[0]))
    obs = scale(obs_views[:, y_hat])
    stats = np.stack([
        scale(query_views(view.finetuned(i), point, M, master_seed, strength=strength)[:, y_hat])
        for i in range(len(view))
    ])
    return lira_from_arrays(obs, stats, view.membership(point.id), ridge, point.id)


def adapted_lira(target, point: Point, view, M=DEFAULT_M, ridge=DEFAULT_RIDGE, master_seed=0,
                 *, strength=DEFAULT_AUG_STRENGTH) -> float:
    """LiRA on the finetuned target, at the label it predicts most confidently.

    The observation is the M-vector of scaled confidences at that label over
    the target's views; IN/OUT Gaussians come from the finetuned shadow
    models in ``view``. Returns the likelihood ratio (not its log).
    """
    return _exp(adapted_lira_log(target, point, view, M, ridge, master_seed, strength=strength))


def direct_lira_log(pretrained_target, point: Point, view, M=DEFAULT_M, ridge=DEFAULT_RIDGE,
                    master_seed=0, *, strength=DEFAULT_AUG_STRENGTH) -> float:
    obs = scale(query_views(pretrained_target, point, M, master_seed, strength=strength)[:, point.y])
    stats = np.stack([
        scale(query_views(view.pretrained(i), point, M, master_seed, strength=strength)[:, point.y])
        for i in range(len(view))
    ])
    return lira_from_arrays(obs, stats, view.membership(point.id), ridge, point.id)


def direct_lira(pretrained_target, point: Point, view, M=DEFAULT_M, ridge=DEFAULT_RIDGE,
                master_seed=0, *, strength=DEFAULT_AUG_STRENGTH) -> float:
    """LiRA on the pretrained models at the true label ``point.y``."""
    return _exp(direct_lira_log(pretrained_target, point, view, M, ridge, master_seed, strength=strength))


# -- metaclassifier data ----------------------------------------------------


@dataclass
class MetaDataset:
    features: np.ndarray
    labels: np.ndarray
    challenge_id: int | None = None
    n_shadow: int | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def imbalance(self) -> float:
        """Fraction of IN rows."""
        return float(np.mean(self.labels)) if len(self.labels) else float("nan")


def meta_rows(shadow_views, member) -> tuple[np.ndarray, np.ndarray]:
    """Flatten ``[n_shadow, M, K]`` prediction vectors into labelled rows."""
    shadow_views = np.asarray(shadow_views)
    n, M, K = shadow_views.shape
    X = scale(shadow_views).reshape(n * M, K)
    y = np.repeat(np.asarray(member, dtype=np.int64), M)
    return X, y


def build_meta_dataset(point: Point, view, M=DEFAULT_M, master_seed=0, *,
                       strength=DEFAULT_AUG_STRENGTH, topk=None) -> MetaDataset:
    """One row per (shadow model, view): scaled prediction vector and IN bit."""
    member = view.membership(point.id)
    n_in = int(member.sum())
    if n_in == 0 or n_in == len(member):
        raise DegenerateSplitError(point.id, n_in, len(member) - n_in)
    vecs = np.stack([
        query_views(view.finetuned(i), point, M, master_seed, strength=strength, topk=topk)
        for i in range(len(view))
    ])
    X, y = meta_rows(vecs, member)
    return MetaDataset(X, y, challenge_id=point.id, n_shadow=len(view))


# -- metaclassifiers ----------------------------------------------------------

META_KINDS = ("mlp", "logistic", "linear_svm", "knn")
K_RULES = ("sqrt_n", "n_shadow", "fixed")


@dataclass
class MetaArch:
    kind: str = "mlp"
    hidden: int = 32
    epochs: int = 200
    learning_rate: float = 0.01
    l2: float = 0.0
    k_rule: str = "sqrt_n"
    k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in META_KINDS:
            raise ValueError(f"unknown metaclassifier kind {self.kind!r}")
        if self.k_rule not in K_RULES:
            raise ValueError(f"unknown k rule {self.k_rule!r}")
        if self.k_rule == "fixed" and (self.k is None or self.k < 1):
            raise ValueError("fixed k rule needs k >= 1")
        if self.kind == "linear_svm" and self.l2 == 0.0:
            self.l2 = 1e-3

    def resolve_k(self, n_rows: int, n_shadow: int | None) -> int:
        if self.k_rule == "fixed":
            return int(self.k)
        if self.k_rule == "n_shadow":
            if n_shadow is None:
                raise MetaTrainingError("k rule n_shadow needs the shadow count")
            return int(n_shadow)
        return max(1, math.isqrt(n_rows))

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(z):
    return expit(z)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MetaModel:
    """A batch of ``B`` trained metaclassifiers sharing one architecture.

    :meth:`score` takes ``[B, Q, F]`` queries (or ``[Q, F]`` when ``B == 1``)
    and returns membership scores in ``[0, 1]``.
    """

    def __init__(self, arch: MetaArch, params: dict):
        self.arch = arch
        self.params = params

    @property
    def batch(self) -> int:
        return self.params["batch"]

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            if self.batch != 1:
                raise ValueError("unbatched queries need a single metaclassifier")
            X = X[None]
        out = self._score(X)
        return out[0] if single else out

    def _score(self, X):
        p = self.params
        kind = self.arch.kind
        if kind == "knn":
            return _knn_scores(p["X"], p["y"], X, p["k"])
        Z = (X - p["mu"][:, None, :]) / p["sd"][:, None, :]
        if kind == "mlp":
            H = np.maximum(Z @ p["W1"] + p["b1"][:, None, :], 0)
            return _sigmoid((H @ p["w2"][:, :, None])[..., 0] + p["b2"][:, None])
        return _sigmoid(np.einsum("bqf,bf->bq", Z, p["w"]) + p["b"][:, None])


def _knn_scores(Xtr, ytr, Xq, k):
    """Mean label of the ``k`` nearest rows; distance ties go to the lower row index."""
    B, Q, _ = Xq.shape
    R = Xtr.shape[1]
    if k > R:
        raise MetaTrainingError(f"k={k} exceeds the {R} stored rows")
    out = np.empty((B, Q))
    chunk = max(1, 4_000_000 // max(R * Xtr.shape[2], 1))
    for b in range(B):
        for s in range(0, Q, chunk):
            diff = Xq[b, s : s + chunk, None, :] - Xtr[b][None]
            d = np.einsum("qrf,qrf->qr", diff, diff)
            out[b, s : s + chunk] = _nearest_label_mean(d, ytr[b], k)
    return out


def _nearest_label_mean(d, y, k):
    kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
    below = d < kth
    n_below = below.sum(axis=1, keepdims=True)
    tie = d == kth
    take_tie = tie & (np.cumsum(tie, axis=1) <= (k - n_below))
    chosen = below | take_tie
    return (chosen * y[None]).sum(axis=1) / k


def _standardize(X):
    mu = X.mean(axis=1)
    sd = X.std(axis=1)
    return mu, np.where(sd > 1e-8, sd, 1.0)


def fit_metaclassifiers(X, y, arch: MetaArch, keys: Sequence, n_shadow: int | None = None) -> MetaModel:
    """Train ``B`` independent metaclassifiers on ``X [B, R, F]``, ``y [B, R]``.

    ``keys[b]`` names the seed stream of dataset ``b`` so that each model's
    initialisation does not depend on which other datasets share the batch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B, R, F = X.shape
    if arch.kind == "knn":
        k = arch.resolve_k(R, n_shadow)
        if k > R:
            raise MetaTrainingError(f"knn needs at least k={k} rows, got {R}")
        return MetaModel(arch, {"batch": B, "X": X, "y": y, "k": k})

    labels_present = (y.min(axis=1) == 0) & (y.max(axis=1) == 1)
    if not np.all(labels_present):
        raise MetaTrainingError("metaclassifier data must contain both labels")
    mu, sd = _standardize(X)
    Z = (X - mu[:, None, :]) / sd[:, None, :]
    rngs = [child_rng(arch.seed, "meta", key) for key in keys]
    l2 = arch.l2

    if arch.kind == "mlp":
        H = arch.hidden
        W1 = np.stack([r.normal(0, math.sqrt(2.0 / F), (F, H)) for r in rngs])
        w2 = np.stack([r.normal(0, math.sqrt(1.0 / H), H) for r in rngs])
        b1 = np.zeros((B, H))
        b2 = np.zeros(B)
        opt = _Adam([W1, b1, w2, b2], arch.learning_rate)
        Zt = Z.transpose(0, 2, 1).copy()
        for _ in range(arch.epochs):
            A = Z @ W1 + b1[:, None, :]
            active = (A > 0).astype(np.float64)
            Hh = A * active
            out = (Hh @ w2[:, :, None])[..., 0] + b2[:, None]
            g = (_sigmoid(out) - y) / R
            gw2 = (g[:, None, :] @ Hh)[:, 0] + l2 * w2
            gb2 = g.sum(axis=1)
            # d/dA = g * w2 * active; w2 factors out of the sums over rows
            gW1 = ((Zt * g[:, None, :]) @ active) * w2[:, None, :] + l2 * W1
            gb1 = (g[:, None, :] @ active)[:, 0] * w2
            opt.step([gW1, gb1, gw2, gb2])
        return MetaModel(arch, {"batch": B, "mu": mu, "sd": sd, "W1": W1, "b1": b1, "w2": w2, "b2": b2})

    w = np.stack([r.normal(0, 0.01, F) for r in rngs])
    b = np.zeros(B)
    opt = _Adam([w, b], arch.learning_rate)
    sign = 2.0 * y - 1.0
    for _ in range(arch.epochs):
        out = np.einsum("brf,bf->br", Z, w) + b[:, None]
        if arch.kind == "logistic":
            g = (_sigmoid(out) - y) / R
        else:
            g = np.where(sign * out < 1.0, -sign, 0.0) / R
        opt.step([np.einsum("brf,br->bf", Z, g) + l2 * w, g.sum(axis=1)])
    return MetaModel(arch, {"batch": B, "mu": mu, "sd": sd, "w": w, "b": b})


def train_metaclassifier(D_meta: MetaDataset, arch: MetaArch) -> MetaModel:
    """Fit one metaclassifier on ``D_meta``."""
    labels = np.asarray(D_meta.labels)
    if arch.kind != "knn" and len(np.unique(labels)) < 2:
        raise MetaTrainingError("metaclassifier data must contain both labels")
    key = "global" if D_meta.challenge_id is None else D_meta.challenge_id
    return fit_metaclassifiers(D_meta.features[None], labels[None], arch, [key], D_meta.n_shadow)


def tmi_from_arrays(shadow_views, member, target_views, arch: MetaArch, keys, n_shadow=None) -> np.ndarray:
    """TMI scores for ``B`` challenge points at once.

    ``shadow_views`` is ``[B, n_shadow, M, K]`` prediction vectors,
    ``member`` the ``[B, n_shadow]`` IN bits and ``target_views``
    ``[B, M, K]``. Returns the view-averaged score per point.
    """
    shadow_views = np.asarray(shadow_views)
    B, n, M, K = shadow_views.shape
    X = scale(shadow_views).reshape(B, n * M, K)
    y = np.repeat(np.asarray(member, dtype=np.int64), M, axis=1)
    model = fit_metaclassifiers(X, y, arch, keys, n_shadow or n)
    return model.score(scale(target_views)).mean(axis=1)


def tmi_score(target, point: Point, view, M=DEFAULT_M, arch: MetaArch | None = None, master_seed=0,
              *, strength=DEFAULT_AUG_STRENGTH, topk=None) -> float:
    """Per-point TMI: train a metaclassifier on the shadows, average it over the target's views."""
    arch = arch or MetaArch()
    D_meta = build_meta_dataset(point, view, M, master_seed, strength=strength, topk=topk)
    model = train_metaclassifier(D_meta, arch)
    obs = scale(query_views(target, point, M, master_seed, strength=strength, topk=topk))
    return float(np.mean(model.score(obs)))


def global_tmi_from_arrays(shadow_views, member, target_views, arch: MetaArch, n_shadow=None) -> np.ndarray:
    """Global TMI for ``B`` challenge points: one metaclassifier over all their rows.

    Shapes are as in :func:`tmi_from_arrays`. Returns one score per point.
    """
    shadow_views = np.asarray(shadow_views)
    B, n, M, K = shadow_views.shape
    if B == 0:
        raise EmptyDataError("global TMI needs at least one challenge point")
    X = scale(shadow_views).reshape(1, B * n * M, K)
    y = np.repeat(np.asarray(member, dtype=np.int64), M, axis=1).reshape(1, -1)
    if arch.kind != "knn" and len(np.unique(y)) < 2:
        raise MetaTrainingError("metaclassifier data must contain both labels")
    model = fit_metaclassifiers(X, y, arch, ["global"], n_shadow or n)
    q = scale(np.asarray(target_views)).reshape(1, B * M, K)
    return model.score(q)[0].reshape(B, M).mean(axis=1)


def global_tmi(target, challenges: Sequence[Point], view, M=DEFAULT_M, arch: MetaArch | None = None,
               master_seed=0, *, strength=DEFAULT_AUG_STRENGTH, topk=None) -> dict:
    """One metaclassifier over the rows of every challenge point.

    Returns ``{challenge_id: score}``. Unlike the per-point attack, the
    pooled data need not contain both labels for each individual point.
    """
    arch = arch or MetaArch(kind="knn")
    challenges = list(challenges)
    if not challenges:
        raise EmptyDataError("global_tmi needs at least one challenge point")
    shadow = np.stack([
        np.stack([
            query_views(view.finetuned(i), pt, M, master_seed, strength=strength, topk=topk)
            for i in range(len(view))
        ])
        for pt in challenges
    ])
    member = np.stack([view.membership(pt.id) for pt in challenges])
    obs = np.stack([query_views(target, pt, M, master_seed, strength=strength, topk=topk) for pt in challenges])
    scores = global_tmi_from_arrays(shadow, member, obs, arch, len(view))
    return {pt.id: float(sc) for pt, sc in zip(challenges, scores)}
