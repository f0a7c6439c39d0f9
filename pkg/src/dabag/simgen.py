"""Synthetic scenario generators with matched Bayes oracles.

Three families: a 2-d three-class toy layout, sparse class boundaries
(two-component mixtures in 10-d), and a Haar-rotated sparse normal design,
each with an optional anomaly component on the test side.  The generator
draws every feature through the scenario's oracle object, so oracle and data
share one set of parameters by construction.

Training labels are i.i.d. draws from the training proportions; test labels
hit the requested proportions exactly (largest-remainder counts), which
includes the anomaly share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import GaussianMixtureOracle
from .core import ConfigError, Dataset, RngStream

SCENARIOS = ("toy3", "setting1", "setting2")


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation design point.

    ``q`` are the test-side class proportions; together with ``epsilon_out``
    they sum to one.  Training proportions are fixed by the scenario (1/3
    each for toy3, 1/2 each otherwise).
    """

    scenario: str
    n_train: int
    n_test: int
    q: tuple[float, ...]
    epsilon_out: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario: {self.scenario!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("sample sizes must be >= 1")
        q = tuple(float(v) for v in self.q)
        if any(v < 0 for v in q) or self.epsilon_out < 0:
            raise ConfigError("q entries and epsilon_out must be >= 0")
        if abs(sum(q) + self.epsilon_out - 1.0) > 1e-9:
            raise ConfigError("q entries plus epsilon_out must sum to 1")
        want = 3 if self.scenario == "toy3" else 2
        if len(q) != want:
            raise ConfigError(f"{self.scenario} expects {want} class proportions")
        if self.scenario == "toy3" and self.epsilon_out > 0:
            raise ConfigError("toy3 has no anomaly component")
        object.__setattr__(self, "q", q)

    @property
    def label(self) -> str:
        parts = ["q=" + "/".join(f"{v:.6g}" for v in self.q)]
        if self.epsilon_out > 0:
            parts.append(f"eps={self.epsilon_out:.6g}")
        return f"{self.scenario}[{','.join(parts)}]"


def spec_from_q1(
    scenario: str,
    n_train: int,
    n_test: int,
    q1: float,
    epsilon_out: float = 0.0,
    seed: int = 0,
) -> ScenarioSpec:
    """Two-class spec from the unscaled first-class share q1.

    The anomaly share is carved out proportionally: the class proportions
    become ((1 - eps) * q1, (1 - eps) * (1 - q1), eps).
    """
    if not 0 <= q1 <= 1:
        raise ConfigError("q1 must lie in [0, 1]")
    scale = 1.0 - epsilon_out
    return ScenarioSpec(
        scenario, n_train, n_test, (scale * q1, scale * (1.0 - q1)), epsilon_out, seed
    )


@dataclass(frozen=True)
class GroundTruth:
    """Generated data plus everything needed to score against the truth."""

    train: Dataset
    test: Dataset  # unlabeled features, anomalies included
    test_labels: np.ndarray  # (m,) int64; 0 marks anomaly rows
    oracle: GaussianMixtureOracle

    @property
    def anomaly_mask(self) -> np.ndarray:
        return self.test_labels == 0

    def labeled_test(self) -> Dataset:
        """Inlier test rows with their evaluation labels."""
        keep = ~self.anomaly_mask
        return Dataset(
            self.test.features[keep], self.test_labels[keep], self.train.n_classes
        )


def exact_counts(total: int, weights) -> np.ndarray:
    """Largest-remainder rounding of total * weights to integers summing to total."""
    w = np.asarray(weights, dtype=np.float64)
    raw = total * w
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def haar_rotation(p: int, rng: RngStream) -> np.ndarray:
    """Haar-distributed orthogonal p x p matrix (QR with sign correction)."""
    if p < 1:
        raise ConfigError("p must be >= 1")
    gen = rng.generator()
    return _haar_from_gen(p, gen)


def _haar_from_gen(p: int, gen: np.random.Generator) -> np.ndarray:
    z = gen.standard_normal((p, p))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def _gen_from_oracle(
    oracle: GaussianMixtureOracle,
    train_props: np.ndarray,
    n: int,
    m: int,
    q: np.ndarray,
    epsilon_out: float,
    out_mean: np.ndarray | None,
    out_cov: np.ndarray | None,
    gen: np.random.Generator,
) -> GroundTruth:
    n_classes = oracle.n_classes

    train_labels = gen.choice(n_classes, size=n, p=train_props) + 1
    x_train = np.empty((n, oracle.p))
    for c in range(n_classes):
        rows = train_labels == c + 1
        if rows.any():
            x_train[rows] = oracle.sample_class(c + 1, int(rows.sum()), gen)
    train = Dataset(x_train, train_labels, n_classes)

    counts = exact_counts(m, np.concatenate([q, [epsilon_out]]))
    labels_sorted = np.repeat(
        np.arange(1, n_classes + 2), counts
    )  # n_classes + 1 codes the outlier slot
    labels_sorted[labels_sorted == n_classes + 1] = 0
    perm = gen.permutation(m)
    x_sorted = np.empty((m, oracle.p))
    pos = 0
    for c in range(n_classes):
        if counts[c]:
            x_sorted[pos:pos + counts[c]] = oracle.sample_class(c + 1, int(counts[c]), gen)
            pos += counts[c]
    n_out = int(counts[-1])
    if n_out:
        chol = np.linalg.cholesky(out_cov)
        z = gen.standard_normal((n_out, oracle.p))
        x_sorted[pos:pos + n_out] = out_mean + z @ chol.T

    test_labels = labels_sorted[perm]
    test = Dataset(x_sorted[perm])
    return GroundTruth(train, test, test_labels.astype(np.int64), oracle)


def _inlier_weights(q: np.ndarray, epsilon_out: float) -> np.ndarray:
    scale = q.sum()
    if scale <= 0:
        raise ConfigError("at least one class proportion must be positive")
    return q / scale


def gen_toy3(n: int, m: int, q, rng: RngStream) -> GroundTruth:
    """Three spherical-ish 2-d Gaussians at (1,1), (1,4), (1,7)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ConfigError("q must be a 3-simplex vector")
    cov = np.array([[1.0, 0.2], [0.2, 1.0]])
    oracle = GaussianMixtureOracle(
        class_weights=q,
        means=tuple(np.array([[1.0, mu2]]) for mu2 in (1.0, 4.0, 7.0)),
        covs=tuple(cov[None, :, :] for _ in range(3)),
        mix_weights=tuple(np.array([1.0]) for _ in range(3)),
    )
    gen = rng.generator()
    return _gen_from_oracle(
        oracle, np.full(3, 1 / 3), n, m, q, 0.0, None, None, gen
    )


_P = 10


def gen_setting1(
    n: int, m: int, q1: float, epsilon_out: float, rng: RngStream
) -> GroundTruth:
    """Sparse class boundaries: symmetric two-component mixtures in 10-d."""
    spec = spec_from_q1("setting1", n, m, q1, epsilon_out)
    q = np.asarray(spec.q)
    mu0 = np.zeros(_P)
    mu0[:2] = (2.0, -2.0)
    mu1 = np.zeros(_P)
    mu1[:2] = (2.0, 2.0)
    eye = np.eye(_P)
    oracle = GaussianMixtureOracle(
        class_weights=_inlier_weights(q, epsilon_out),
        means=(np.stack([mu0, -mu0]), np.stack([mu1, -mu1])),
        covs=(np.stack([eye, eye]), np.stack([eye, eye])),
        mix_weights=(np.array([0.5, 0.5]), np.array([0.5, 0.5])),
    )
    out_mean = np.zeros(_P)
    out_mean[:2] = (4.0, 4.0)
    out_cov = np.eye(_P)
    out_cov[0, 0] = out_cov[1, 1] = 0.5
    gen = rng.generator()
    return _gen_from_oracle(
        oracle, np.array([0.5, 0.5]), n, m, q, epsilon_out, out_mean, out_cov, gen
    )


def _setting2_covs() -> tuple[np.ndarray, np.ndarray]:
    def block(dim: int, diag: float) -> np.ndarray:
        return diag * np.eye(dim) + 0.5 * np.ones((dim, dim))

    sigma0 = np.zeros((_P, _P))
    sigma0[:3, :3] = block(3, 1.5)
    sigma0[3:, 3:] = block(_P - 3, 0.5)
    sigma1 = np.zeros((_P, _P))
    sigma1[:3, :3] = block(3, 0.5)
    # second block follows the first-block form at dimension p - 3
    sigma1[3:, 3:] = block(_P - 3, 1.5)
    return sigma0, sigma1


def gen_setting2(
    n: int, m: int, q1: float, epsilon_out: float, rng: RngStream
) -> GroundTruth:
    """Haar-rotated sparse normal design; the rotation is drawn once per call."""
    spec = spec_from_q1("setting2", n, m, q1, epsilon_out)
    q = np.asarray(spec.q)
    gen = rng.generator()
    omega = _haar_from_gen(_P, gen)
    mu0 = np.zeros(_P)
    mu0[:3] = 1.0
    mu1 = np.zeros(_P)
    sigma0, sigma1 = _setting2_covs()
    oracle = GaussianMixtureOracle(
        class_weights=_inlier_weights(q, epsilon_out),
        means=((omega @ mu0)[None, :], (omega @ mu1)[None, :]),
        covs=((omega @ sigma0 @ omega.T)[None, :, :], (omega @ sigma1 @ omega.T)[None, :, :]),
        mix_weights=(np.array([1.0]), np.array([1.0])),
    )
    mu2 = np.zeros(_P)
    mu2[2:4] = 2.0
    out_mean = omega @ mu2
    out_cov = omega @ np.eye(_P) @ omega.T
    return _gen_from_oracle(
        oracle, np.array([0.5, 0.5]), n, m, q, epsilon_out, out_mean, out_cov, gen
    )


def generate(spec: ScenarioSpec, rng: RngStream) -> GroundTruth:
    """Materialize a scenario point with the given stream."""
    if spec.scenario == "toy3":
        return gen_toy3(spec.n_train, spec.n_test, spec.q, rng)
    scale = 1.0 - spec.epsilon_out
    q1 = spec.q[0] / scale if scale > 0 else 0.0
    if spec.scenario == "setting1":
        return gen_setting1(spec.n_train, spec.n_test, q1, spec.epsilon_out, rng)
    return gen_setting2(spec.n_train, spec.n_test, q1, spec.epsilon_out, rng)
