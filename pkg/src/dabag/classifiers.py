"""Base classifiers behind one fit/predict contract, and the Bayes oracle.

All classifiers predict labels in {1..L}.  Tree, LDA and logistic predictions
are deterministic functions of the fitted state; kNN additionally consumes a
tie stream (equidistant neighbors and tied votes are split at random).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Dataset, Metric, RngStream, UsageError
from . import _kernels
from .neighbors import knn_batch, label_counts

_VOTE_TAG = 11


def knn_schedule(n: int, p: int) -> int:
    """Default neighbor count k(n) = round(n^(4/(p+4)))."""
    return max(1, int(round(n ** (4.0 / (p + 4.0)))))


@dataclass(frozen=True)
class ClassifierSpec:
    """Which base classifier to fit, with its hyperparameters.

    Only the fields of the selected kind are read.  ``knn_k=None`` applies the
    k(n) schedule above at fit time.
    """

    kind: str = "tree"
    knn_k: int | None = None
    max_iter: int = 200
    l2: float = 1e-6
    tol: float = 1e-8
    ridge: float | None = None
    max_depth: int = 12
    min_leaf: int = 2

    def __post_init__(self):
        if self.kind not in {"knn", "logistic", "lda", "tree"}:
            raise ConfigError(f"unknown classifier kind: {self.kind!r}")
        if self.knn_k is not None and self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.max_iter < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ConfigError("counts must be >= 1")
        if self.l2 < 0 or (self.ridge is not None and self.ridge < 0):
            raise ConfigError("penalties must be >= 0")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")


class _Fitted:
    """Common bits: dimension checks and the single-point entry."""

    n_classes: int
    p: int

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.p:
            raise UsageError(f"point dimension {x.shape[1]} != model dimension {self.p}")
        if not np.all(np.isfinite(x)):
            raise UsageError("points must be finite")
        return x

    def predict(self, x, rng: RngStream | None = None) -> int:
        return int(self.predict_batch(x, rng)[0])


class KnnModel(_Fitted):
    """Majority vote over the k nearest stored training rows."""

    kind = "knn"

    def __init__(self, train: Dataset, k: int, metric: Metric):
        self.features = train.features
        self.labels = train.require_labels()
        self.n_classes = train.n_classes
        self.p = train.p
        self.k = min(k, train.n)
        self.metric = metric
        self._ref = train

    def predict_batch(self, x, rng: RngStream | None = None) -> np.ndarray:
        x = self._check(x)
        idx, _, _ = knn_batch(x, self._ref, self.k, self.metric, rng=rng)
        counts = label_counts(idx, self.labels, self.n_classes)
        top = counts.max(axis=1, keepdims=True)
        tied = counts == top
        n_tied = tied.sum(axis=1)
        first = np.argmax(tied, axis=1)
        if np.all(n_tied == 1) or rng is None:
            return first.astype(np.int64) + 1
        # vote ties: uniform pick among the tied classes
        u = rng.child(_VOTE_TAG).generator().random(x.shape[0])
        pick = np.minimum((u * n_tied).astype(np.int64), n_tied - 1)
        csum = np.cumsum(tied, axis=1)
        out = np.argmax(csum == (pick + 1)[:, None], axis=1)
        return out.astype(np.int64) + 1


class LogisticModel(_Fitted):
    """Multinomial logistic regression fitted by damped Newton."""

    kind = "logistic"

    def __init__(self, weights: np.ndarray, present: np.ndarray, n_classes: int,
                 grad_norm: float, n_iter: int):
        self.weights = weights  # (L, p + 1), last column is the intercept
        self.present = present
        self.n_classes = n_classes
        self.p = weights.shape[1] - 1
        self.grad_norm = grad_norm
        self.n_iter = n_iter

    def scores(self, x) -> np.ndarray:
        x = self._check(x)
        z = x @ self.weights[:, :-1].T + self.weights[:, -1]
        z[:, ~self.present] = -np.inf  # absent classes are never predicted
        return z

    def predict_batch(self, x, rng: RngStream | None = None) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1).astype(np.int64) + 1


class LdaModel(_Fitted):
    """Linear discriminant analysis with a ridge-jittered pooled covariance."""

    kind = "lda"

    def __init__(self, means, precision, log_priors, present, n_classes):
        self.means = means  # (L, p); rows of absent classes are zero
        self.precision = precision  # pooled covariance inverse
        self.log_priors = log_priors  # -inf for absent classes
        self.present = present
        self.n_classes = n_classes
        self.p = means.shape[1]

    def scores(self, x) -> np.ndarray:
        x = self._check(x)
        a = self.means @ self.precision  # (L, p)
        const = -0.5 * np.einsum("lp,lp->l", a, self.means) + self.log_priors
        return x @ a.T + const

    def predict_batch(self, x, rng: RngStream | None = None) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1).astype(np.int64) + 1


class TreeModel(_Fitted):
    """Greedy Gini CART; leaves carry training class distributions."""

    kind = "tree"

    def __init__(self, nodes, n_classes: int, p: int):
        self.feature, self.threshold, self.left, self.right, self.leaf_dist = nodes
        self.n_classes = n_classes
        self.p = p

    def apply(self, x) -> np.ndarray:
        """Leaf node index for each row."""
        x = self._check(x)
        return _kernels.tree_apply(self.feature, self.threshold, self.left, self.right, x)

    def predict_batch(self, x, rng: RngStream | None = None) -> np.ndarray:
        leaves = self.apply(x)
        return np.argmax(self.leaf_dist[leaves], axis=1).astype(np.int64) + 1


def _logistic_objective(w, x1, onehot, l2):
    z = x1 @ w.T
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -np.sum(logp * onehot) / x1.shape[0]
    return nll + 0.5 * l2 * np.sum(w * w)


def _logistic_grad(w, x1, onehot, l2):
    z = x1 @ w.T
    z -= z.max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    return (prob - onehot).T @ x1 / x1.shape[0] + l2 * w, prob


def _fit_logistic(spec: ClassifierSpec, train: Dataset) -> LogisticModel:
    y = train.require_labels()
    n, p = train.n, train.p
    n_classes = train.n_classes
    x1 = np.hstack([train.features, np.ones((n, 1))])
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y - 1] = 1.0
    present = np.bincount(y, minlength=n_classes + 1)[1:] > 0

    w = np.zeros((n_classes, p + 1))
    obj = _logistic_objective(w, x1, onehot, spec.l2)
    grad, prob = _logistic_grad(w, x1, onehot, spec.l2)
    gn = float(np.linalg.norm(grad))
    it = 0
    d = p + 1
    for it in range(1, spec.max_iter + 1):
        if gn <= spec.tol:
            break
        # blockwise Newton Hessian of the penalized mean cross-entropy
        h = np.zeros((n_classes * d, n_classes * d))
        for a in range(n_classes):
            for bcl in range(a, n_classes):
                s = prob[:, a] * ((a == bcl) - prob[:, bcl])
                block = (x1 * s[:, None]).T @ x1 / n
                h[a * d:(a + 1) * d, bcl * d:(bcl + 1) * d] = block
                if bcl != a:
                    h[bcl * d:(bcl + 1) * d, a * d:(a + 1) * d] = block
        h += spec.l2 * np.eye(n_classes * d)
        g = grad.reshape(-1)
        damp = 0.0
        while True:
            try:
                step = np.linalg.solve(h + damp * np.eye(h.shape[0]), g)
                break
            except np.linalg.LinAlgError:
                damp = max(2 * damp, 1e-10)
        # backtracking keeps Newton honest on saturated problems
        scale = 1.0
        for _ in range(40):
            w_new = w - scale * step.reshape(n_classes, d)
            obj_new = _logistic_objective(w_new, x1, onehot, spec.l2)
            if obj_new < obj:
                break
            scale *= 0.5
        else:
            break
        w, obj = w_new, obj_new
        grad, prob = _logistic_grad(w, x1, onehot, spec.l2)
        gn = float(np.linalg.norm(grad))
    return LogisticModel(w, present, n_classes, gn, it)


def _fit_lda(spec: ClassifierSpec, train: Dataset) -> LdaModel:
    y = train.require_labels()
    x = train.features
    n, p = train.n, train.p
    n_classes = train.n_classes
    counts = np.bincount(y, minlength=n_classes + 1)[1:]
    present = counts > 0

    means = np.zeros((n_classes, p))
    scatter = np.zeros((p, p))
    for c in range(n_classes):
        if not present[c]:
            continue
        rows = x[y == c + 1]
        means[c] = rows.mean(axis=0)
        centered = rows - means[c]
        scatter += centered.T @ centered
    dof = max(n - int(present.sum()), 1)
    cov = scatter / dof
    ridge = spec.ridge
    if ridge is None:
        # absolute floor keeps degenerate (zero-scatter) fits invertible
        ridge = max(1e-8 * np.trace(cov) / p, 1e-12)
    cov = cov + ridge * np.eye(p)
    try:
        precision = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(
            "singular pooled covariance; increase the LDA ridge"
        ) from exc
    with np.errstate(divide="ignore"):
        log_priors = np.where(present, np.log(counts / n, where=present), -np.inf)
    return LdaModel(means, precision, log_priors, present, n_classes)


def _fit_tree(spec: ClassifierSpec, train: Dataset) -> TreeModel:
    y0 = train.require_labels() - 1
    nodes = _kernels.tree_build(
        train.features, y0, train.n_classes, spec.max_depth, spec.min_leaf
    )
    return TreeModel(nodes, train.n_classes, train.p)


def fit(spec: ClassifierSpec, train: Dataset, rng: RngStream | None = None,
        metric: Metric = Metric()):
    """Fit the classifier described by `spec` on a labeled dataset."""
    train.require_labels()
    if spec.kind == "knn":
        k = spec.knn_k if spec.knn_k is not None else knn_schedule(train.n, train.p)
        return KnnModel(train, k, metric)
    if spec.kind == "logistic":
        return _fit_logistic(spec, train)
    if spec.kind == "lda":
        return _fit_lda(spec, train)
    return _fit_tree(spec, train)


def predict(model, x, rng: RngStream | None = None) -> int:
    """Label in {1..L} for a single point."""
    return model.predict(x, rng)


# ---------------------------------------------------------------------------
# Oracle for known Gaussian-mixture class densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureOracle:
    """Known class-conditional Gaussian mixtures with test-side class weights.

    Class ``l`` (1-based) has density ``sum_c mix_weights[l-1][c] *
    N(means[l-1][c], covs[l-1][c])`` and prior ``class_weights[l-1]``.
    """

    class_weights: np.ndarray
    means: tuple[np.ndarray, ...]
    covs: tuple[np.ndarray, ...]
    mix_weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        q = np.asarray(self.class_weights, dtype=np.float64)
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ConfigError("class weights must lie on the simplex")
        object.__setattr__(self, "class_weights", q)
        chols = []
        for c, (mu, cov, w) in enumerate(zip(self.means, self.covs, self.mix_weights)):
            w = np.asarray(w, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError(f"component weights of class {c + 1} must sum to 1")
            try:
                chols.append(tuple(np.linalg.cholesky(s) for s in cov))
            except np.linalg.LinAlgError as exc:
                raise ConfigError(
                    f"covariance of class {c + 1} is not positive definite"
                ) from exc
        object.__setattr__(self, "_chols", tuple(chols))

    @property
    def n_classes(self) -> int:
        return len(self.means)

    @property
    def p(self) -> int:
        return self.means[0].shape[1]

    def log_class_density(self, x, label: int) -> np.ndarray:
        """log f_l at each row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mus = self.means[label - 1]
        ws = self.mix_weights[label - 1]
        chols = self._chols[label - 1]
        comp = []
        for c in range(len(ws)):
            chol = chols[c]
            diff = x - mus[c]
            sol = np.linalg.solve(chol, diff.T)
            maha = np.sum(sol * sol, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            lognorm = -0.5 * (self.p * np.log(2 * np.pi) + logdet)
            with np.errstate(divide="ignore"):
                comp.append(np.log(ws[c]) + lognorm - 0.5 * maha)
        comp = np.stack(comp, axis=1)
        mx = comp.max(axis=1, keepdims=True)
        return (mx + np.log(np.exp(comp - mx).sum(axis=1, keepdims=True)))[:, 0]

    def class_scores(self, x) -> np.ndarray:
        """log q_l + log f_l per class, (m, L)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        with np.errstate(divide="ignore"):
            logq = np.log(self.class_weights)
        return np.stack(
            [logq[c] + self.log_class_density(x, c + 1) for c in range(self.n_classes)],
            axis=1,
        )

    def sample_class(self, label: int, size: int, gen: np.random.Generator) -> np.ndarray:
        """Draw rows from class `label`'s mixture."""
        ws = self.mix_weights[label - 1]
        mus = self.means[label - 1]
        chols = self._chols[label - 1]
        comp = gen.choice(len(ws), size=size, p=ws)
        z = gen.standard_normal((size, self.p))
        out = np.empty((size, self.p))
        for c in range(len(ws)):
            rows = comp == c
            if rows.any():
                out[rows] = mus[c] + z[rows] @ chols[c].T
        return out


def bayes_classify(oracle: GaussianMixtureOracle, x) -> np.ndarray:
    """argmax_l q_l f_l(x) with ties going to the smallest class index."""
    scores = oracle.class_scores(x)
    return np.argmax(scores, axis=1).astype(np.int64) + 1


def bayes_risk(
    oracle: GaussianMixtureOracle, n_mc: int, rng: RngStream
) -> tuple[float, float]:
    """Monte Carlo Bayes risk under the oracle's test mixture, with its SE."""
    if n_mc < 1:
        raise UsageError("n_mc must be >= 1")
    gen = rng.generator()
    labels = gen.choice(oracle.n_classes, size=n_mc, p=oracle.class_weights)
    x = np.empty((n_mc, oracle.p))
    for c in range(oracle.n_classes):
        rows = labels == c
        if rows.any():
            x[rows] = oracle.sample_class(c + 1, int(rows.sum()), gen)
    scores = oracle.class_scores(x)
    mx = scores.max(axis=1, keepdims=True)
    post = np.exp(scores - mx)
    post /= post.sum(axis=1, keepdims=True)
    loss = 1.0 - post.max(axis=1)
    est = float(loss.mean())
    se = float(loss.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return est, se
