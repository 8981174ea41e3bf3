"""Evidence estimation for Bayesian model selection under non-identifiability.

Subpackages follow the pipeline: model families (`coral`, `lifestage`)
define targets (`targets`); `optim`/`gmm` provide the optimization and
mixture machinery; `evidence` hosts the estimators (BIC, Laplace,
Laplace IS, standard/robust adaptive multiple importance sampling);
`mcmc` provides the NUTS + bridge-sampling gold standard; `selection`
aggregates evidences into model posteriors; `cli` batches it all.
"""

__version__ = "0.1.0"

from ._ode import backend_name  # noqa: F401
