"""Aggregation of per-model evidences into model posteriors, Bayes factors,
total-variation comparisons, model-averaged mixtures, mechanism-inclusion
probabilities, and the posterior-to-prior SD identifiability proxy.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class UndefinedPosteriorError(ValueError):
    """Every log-evidence is -inf; the model posterior is undefined."""


@dataclass(frozen=True)
class ModelPosterior:
    labels: tuple
    log_evidences: np.ndarray
    prior: np.ndarray
    probabilities: np.ndarray

    def to_dict(self, method="", seed=None):
        return {
            "schema_version": 1,
            "labels": list(self.labels),
            "log_evidences": [float(x) for x in self.log_evidences],
            "prior": self.prior.tolist(),
            "probabilities": self.probabilities.tolist(),
            "method": method,
            "seed": seed,
        }

    @classmethod
    def from_dict(cls, d):
        return model_posterior(
            np.array(d["log_evidences"]), prior=np.array(d["prior"]),
            labels=tuple(d["labels"]),
        )

    def probability_of(self, label):
        return float(self.probabilities[self.labels.index(label)])


def model_posterior(log_evidences, prior=None, labels=None):
    """Normalize log-evidences (plus a model prior) into probabilities."""
    log_z = np.asarray(log_evidences, dtype=float)
    m = log_z.size
    if prior is None:
        prior = np.full(m, 1.0 / m)
    prior = np.asarray(prior, dtype=float)
    if prior.shape != log_z.shape:
        raise ValueError("prior and log_evidences must have equal length")
    if abs(prior.sum() - 1.0) > 1e-9 or np.any(prior < 0):
        raise ValueError("model prior must be a probability vector")
    if labels is None:
        labels = tuple(f"model_{i}" for i in range(m))
    if len(labels) != m:
        raise ValueError("one label per model required")
    with np.errstate(divide="ignore"):
        score = log_z + np.log(prior)
    if not np.any(np.isfinite(score)):
        raise UndefinedPosteriorError("all log-evidences are -inf")
    probs = np.exp(score - logsumexp(score[np.isfinite(score)]))
    probs = np.where(np.isfinite(score), probs, 0.0)
    probs = probs / probs.sum()
    return ModelPosterior(
        labels=tuple(labels), log_evidences=log_z, prior=prior, probabilities=probs
    )


def bayes_factor(post, i, j):
    """Evidence ratio of model i over model j."""
    if isinstance(i, str):
        i = post.labels.index(i)
    if isinstance(j, str):
        j = post.labels.index(j)
    return float(np.exp(post.log_evidences[i] - post.log_evidences[j]))


def tvd(p, q):
    """Total variation distance between two aligned model posteriors."""
    if isinstance(p, ModelPosterior):
        if not isinstance(q, ModelPosterior) or p.labels != q.labels:
            raise ValueError("model posteriors must share an aligned label set")
        pv, qv = p.probabilities, q.probabilities
    else:
        pv, qv = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if pv.shape != qv.shape:
            raise ValueError("probability vectors must have equal length")
    return float(0.5 * np.sum(np.abs(pv - qv)))


@dataclass
class BmaPool:
    """Model-averaged pool of statistic values with normalized weights."""

    values: np.ndarray
    weights: np.ndarray
    model_of: np.ndarray

    def mean(self):
        return float(np.dot(self.weights, self.values))

    def quantile(self, q):
        order = np.argsort(self.values)
        cdf = np.cumsum(self.weights[order])
        return float(np.interp(np.atleast_1d(q), cdf, self.values[order])[0])


def bma_mixture(post, per_model_samples, statistic):
    """Pool per-model weighted samples of a statistic with model-posterior
    weights; total weight of model M's block is p(M | data)."""
    if len(per_model_samples) != len(post.labels):
        raise ValueError("one sample set per model required")
    values, weights, model_of = [], [], []
    for idx, (label, sset) in enumerate(zip(post.labels, per_model_samples)):
        p_m = post.probabilities[idx]
        if sset is None or getattr(sset, "n", 0) == 0:
            if p_m > 1e-6:
                raise ValueError(f"model {label} has probability {p_m:.3g} but no samples")
            continue
        w = sset.normalized_weights()
        vals = np.asarray([statistic(theta, label) for theta in sset.thetas], dtype=float)
        values.append(vals)
        weights.append(w * p_m)
        model_of.append(np.full(vals.size, idx))
    values = np.concatenate(values)
    weights = np.concatenate(weights)
    weights = weights / weights.sum()
    return BmaPool(values=values, weights=weights, model_of=np.concatenate(model_of))


def weighted_kde(values, weights, grid, bandwidth=None):
    """Gaussian kernel density with a weighted Silverman bandwidth."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    if bandwidth is None:
        mean = np.dot(weights, values)
        var = np.dot(weights, (values - mean) ** 2)
        n_eff = 1.0 / np.sum(weights**2)
        bandwidth = np.sqrt(var) * (4.0 / (3.0 * n_eff)) ** 0.2
        bandwidth = max(bandwidth, 1e-12)
    z = (np.asarray(grid)[:, None] - values[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z) @ weights / (bandwidth * np.sqrt(2.0 * np.pi))
    return dens


def inclusion_probabilities(post, feature_of):
    """Model-averaged probability that a feature is present: the posterior
    mass of the models for which ``feature_of(label)`` is true."""
    mask = np.array([bool(feature_of(label)) for label in post.labels])
    return float(post.probabilities[mask].sum())


@dataclass(frozen=True)
class IdentifiabilityReport:
    posterior_sds: np.ndarray
    prior_sds: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    source: str

    def to_dict(self):
        return {
            "posterior_sds": self.posterior_sds.tolist(),
            "prior_sds": self.prior_sds.tolist(),
            "ratios": self.ratios.tolist(),
            "max_ratio": self.max_ratio,
            "source": self.source,
        }


def identifiability_proxy(samples, prior, min_effective=100):
    """Max posterior-to-prior SD ratio over parameters.

    ``samples`` is a WeightedSampleSet (importance-weighted) or a ChainSet
    (unweighted pooled draws). Values near 1 flag parameters the data does
    not constrain; roughly 0.6 marks one-sided identifiability (the SD of
    a standard half-normal).
    """
    from .mcmc import ChainSet

    if isinstance(samples, ChainSet):
        draws = samples.pooled()
        w = np.full(draws.shape[0], 1.0 / draws.shape[0])
        n_eff = draws.shape[0]
        source = "nuts_chains"
    else:
        draws = samples.thetas
        w = samples.normalized_weights()
        n_eff = 1.0 / np.sum(w**2)
        source = "weighted_samples"
    if n_eff < min_effective:
        raise ValueError(f"need >= {min_effective} effective samples, have {n_eff:.1f}")
    mean = w @ draws
    var = w @ (draws - mean) ** 2
    post_sds = np.sqrt(var)
    ratios = post_sds / prior.sds
    return IdentifiabilityReport(
        posterior_sds=post_sds, prior_sds=prior.sds.copy(), ratios=ratios,
        max_ratio=float(ratios.max()), source=source,
    )
