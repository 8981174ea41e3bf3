"""Sigmoid growth models for hard-coral re-growth.

Three nested models (logistic, Gompertz, Richards) share closed-form ODE
solutions, an additive-Gaussian observation model, and wide log10-normal
priors. Parameter vector layout on the log10 scale:

* logistic / Gompertz (d=4):  (r, K, C0, sigma)
* Richards (d=5):             (r, K, C0, beta, sigma)

Trajectory evaluation works in log space so that extreme prior draws
(tens of orders of magnitude in K/C0) do not overflow.
"""

import enum
import importlib.resources
from dataclasses import dataclass

import numpy as np

from .targets import LOG_2PI, PriorSpec, posterior_from_likelihood

LN10 = float(np.log(10.0))

# Synthetic surrogate provenance: the original 11-point field dataset is not
# shipped with this repository, so the packaged CSV is simulated from a
# Richards truth with a weakly identified shape parameter (beta = 1, which
# collapses to the logistic curve, leaving beta unconstrained by the data).
SURROGATE_TRUTH = {"r": 1.8e-3, "K": 80.0, "C0": 2.0, "beta": 1.0, "sigma": 2.0}
SURROGATE_SEED = 20417
SURROGATE_DURATION_DAYS = 4028.0
SURROGATE_N_OBS = 11


class CoralModelKind(enum.Enum):
    LOGISTIC = "logistic"
    GOMPERTZ = "gompertz"
    RICHARDS = "richards"

    @property
    def dim(self):
        return 5 if self is CoralModelKind.RICHARDS else 4


@dataclass(frozen=True)
class CoralDataset:
    """Times (days) and hard-coral covers (%), strictly increasing times."""

    times: np.ndarray
    covers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "covers", np.asarray(self.covers, dtype=float))
        if self.times.shape != self.covers.shape or self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("times and covers must be equal-length non-empty vectors")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.times < 0):
            raise ValueError("times must be non-negative")

    @property
    def n_obs(self):
        return self.times.size


def _softplus(x):
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _log_traj_parts(kind, theta, times):
    """log C(t) plus the pieces reused by the analytic gradient.

    ``theta`` may be (d,) or (n, d); ``times`` is (S,). Returns a dict of
    arrays broadcast to shape (..., S).
    """
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(times, dtype=float)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        ln_r = theta[..., 0:1] * LN10
        ln_k = theta[..., 1:2] * LN10
        ln_c0 = theta[..., 2:3] * LN10
        r = np.exp(ln_r)
        s = ln_k - ln_c0

        if kind is CoralModelKind.GOMPERTZ:
            g = np.exp(-r * t)
            log_c = ln_k - g * s
            return {"log_c": log_c, "g": g, "s": s, "rt": r * t}

        if kind is CoralModelKind.RICHARDS:
            beta = np.exp(theta[..., 3:4] * LN10)
        else:
            beta = np.ones_like(r)
        bs = beta * s
        rbt = r * beta * t
        small = bs <= 30.0
        u_small = np.expm1(np.where(small, bs, 0.0)) * np.exp(-rbt)
        d_small = np.log1p(u_small)
        d_big = _softplus(bs - rbt)
        log_denom = np.where(small, d_small, d_big)  # log(1 + u)
        log_c = ln_k - log_denom / beta
        return {
            "log_c": log_c,
            "log_denom": log_denom,
            "w": bs - rbt,  # log of the (K/C0)^beta * exp(-r beta t) product
            "s": s,
            "beta": beta,
            "rt": r * t,
        }


def solve_trajectory(kind, theta, times):
    """Closed-form trajectory C(t) at the requested times.

    ``theta`` is on the log10 scale; accepts a single (d,) vector or an
    (n, d) batch, returning (S,) or (n, S) covers.
    """
    parts = _log_traj_parts(kind, theta, times)
    with np.errstate(over="ignore"):
        return np.exp(parts["log_c"])


def _traj_and_dlog(kind, theta, times):
    """Trajectory plus d(log C)/d(ln param) for each ODE parameter."""
    parts = _log_traj_parts(kind, theta, times)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        c = np.exp(parts["log_c"])
        if kind is CoralModelKind.GOMPERTZ:
            g, s, rt = parts["g"], parts["s"], parts["rt"]
            d_lnr = rt * g * s
            d_lnk = 1.0 - g
            d_lnc0 = g
            return c, {"r": d_lnr, "K": d_lnk, "C0": d_lnc0}
        log_denom, w, s, beta, rt = (
            parts["log_denom"],
            parts["w"],
            parts["s"],
            parts["beta"],
            parts["rt"],
        )
        ratio = np.exp(w - log_denom)  # (K/C0)^b e^{-rbt} / (1+u), always <= 1+
        frac = -np.expm1(-log_denom)  # u / (1+u) in [0, 1)
        d_lnr = rt * frac
        d_lnk = 1.0 - ratio
        d_lnc0 = ratio
        out = {"r": d_lnr, "K": d_lnk, "C0": d_lnc0}
        if kind is CoralModelKind.RICHARDS:
            # d(log C)/d(ln beta) = log(1+u)/beta - s*Eg/(1+u) + rt*u/(1+u)
            out["beta"] = log_denom / beta - s * ratio + rt * frac
        return c, out


def coral_log_likelihood(kind, theta, data):
    """Additive-Gaussian log-likelihood; -inf on non-finite trajectories.

    Accepts a single theta (returns float) or an (n, d) batch (returns (n,)).
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    c = solve_trajectory(kind, theta, data.times)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore", under="ignore"):
        sigma = 10.0 ** theta[..., -1]
        resid = data.covers - c
        ll = np.sum(
            -0.5 * (resid / sigma[..., None]) ** 2, axis=-1
        ) - data.n_obs * (np.log(sigma) + 0.5 * LOG_2PI)
    bad = ~np.all(np.isfinite(c), axis=-1) | ~np.isfinite(ll)
    ll = np.where(bad, -np.inf, ll)
    return float(ll) if single else ll


def _grad_log_likelihood(kind, theta, data):
    theta = np.asarray(theta, dtype=float)
    c, dlog = _traj_and_dlog(kind, theta, data.times)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        sigma = 10.0 ** theta[-1]
        resid = data.covers - c
        dll_dc = resid / sigma**2
        common = dll_dc * c * LN10  # d(loglik)/d(theta_x) via d(log C)/d(ln x)
        g = np.empty(theta.size)
        g[0] = np.sum(common * dlog["r"])
        g[1] = np.sum(common * dlog["K"])
        g[2] = np.sum(common * dlog["C0"])
        if kind is CoralModelKind.RICHARDS:
            g[3] = np.sum(common * dlog["beta"])
        g[-1] = LN10 * (np.sum((resid / sigma) ** 2) - data.n_obs)
    return g


def coral_prior(kind):
    """Wide priors on the log10 parameters (sigma gets the narrow one)."""
    if kind is CoralModelKind.RICHARDS:
        return PriorSpec(means=[-3.0, 2.0, 0.0, 0.0, 0.0], sds=[3.0, 3.0, 3.0, 3.0, 1.0])
    return PriorSpec(means=[-3.0, 2.0, 0.0, 0.0], sds=[3.0, 3.0, 3.0, 1.0])


def coral_target(kind, data):
    """TargetPosterior for one growth model on one dataset."""
    prior = coral_prior(kind)

    def log_likelihood(theta):
        return coral_log_likelihood(kind, theta, data)

    def log_likelihood_batch(thetas):
        return coral_log_likelihood(kind, thetas, data)

    def grad_log_likelihood(theta):
        return _grad_log_likelihood(kind, theta, data)

    return posterior_from_likelihood(
        log_likelihood,
        prior,
        label=kind.value,
        grad_log_likelihood=grad_log_likelihood,
        log_likelihood_batch=log_likelihood_batch,
    )


def surrogate_dataset():
    """Regenerate the packaged synthetic surrogate (see SURROGATE_* above)."""
    times = np.linspace(0.0, SURROGATE_DURATION_DAYS, SURROGATE_N_OBS)
    truth = SURROGATE_TRUTH
    theta = np.array(
        [
            np.log10(truth["r"]),
            np.log10(truth["K"]),
            np.log10(truth["C0"]),
            np.log10(truth["beta"]),
            np.log10(truth["sigma"]),
        ]
    )
    clean = solve_trajectory(CoralModelKind.RICHARDS, theta, times)
    rng = np.random.default_rng(SURROGATE_SEED)
    covers = clean + truth["sigma"] * rng.standard_normal(times.size)
    return CoralDataset(times=times, covers=np.round(covers, 4))


def write_dataset_csv(data, path):
    """CSV with header ``t_days,cover_pct``, one row per observation, LF."""
    lines = ["t_days,cover_pct"]
    for t, y in zip(data.times, data.covers):
        lines.append(f"{t:.6g},{y:.6g}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path=None):
    """Load a coral dataset CSV; defaults to the packaged surrogate."""
    if path is None:
        ref = importlib.resources.files("evidest.data").joinpath("coral_cover.csv")
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows = [line for line in text.strip().splitlines() if line]
    header = rows[0].strip().lower()
    if header != "t_days,cover_pct":
        raise ValueError(f"unexpected coral CSV header: {rows[0]!r}")
    vals = np.array([[float(x) for x in line.split(",")] for line in rows[1:]])
    return CoralDataset(times=vals[:, 0], covers=vals[:, 1])
