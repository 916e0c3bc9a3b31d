"""scikit-learn style wrappers around the rate and scheduling routines.

``fit`` takes the system description in place of a data matrix and stores
results in trailing-underscore attributes; hyperparameters live in
``__init__`` so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .detequiv import de_dl_rzf, de_dl_zf, de_ul, optimal_alpha
from .downlink import mc_dl_sum_rate
from .scheduler import GaParams, ga_schedule
from .streams import trial_streams
from .uplink import mc_ul_sum_rate


class SumRateEstimator(BaseEstimator):
    """Ergodic sum rate by deterministic equivalent or Monte Carlo.

    Parameters
    ----------
    direction : {"dl", "ul"}
    precoder : {"rzf", "zf"}
        Downlink precoder (the uplink uses the RZF residual covariance).
    method : {"de", "mc"}
    alpha : float or "auto" or None
        RZF regularizer; None keeps ``config.alpha``, "auto" maximizes the
        downlink DE.
    trials : int
        Monte-Carlo trials.
    seed : int
        Master seed for Monte-Carlo streams.

    Attributes
    ----------
    sum_rate_ : float
    stderr_ : float
        Zero for the deterministic equivalent.
    sinr_ : ndarray or None
        Per-user DE SINRs (None for Monte Carlo).
    alpha_ : float
    """

    def __init__(self, direction="dl", precoder="rzf", method="de", alpha=None,
                 trials=2000, seed=0):
        self.direction = direction
        self.precoder = precoder
        self.method = method
        self.alpha = alpha
        self.trials = trials
        self.seed = seed

    def fit(self, config, correlations):
        if self.direction not in ("dl", "ul"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.method not in ("de", "mc"):
            raise ValueError(f"unknown method {self.method!r}")
        a = self.alpha
        if a == "auto":
            a = optimal_alpha(config, correlations)
        cfg = config if a is None else config.replace(alpha=float(a))
        self.alpha_ = cfg.alpha
        if self.method == "de":
            if self.direction == "ul":
                res = de_ul(cfg, correlations)
            elif self.precoder == "zf":
                res = de_dl_zf(cfg, correlations)
            else:
                res = de_dl_rzf(cfg, correlations)
            self.sinr_ = res.gamma_bar
            self.sum_rate_ = res.sum_rate_bar
            self.stderr_ = 0.0
        else:
            fn = mc_ul_sum_rate if self.direction == "ul" else mc_dl_sum_rate
            prec = "rzf" if self.direction == "ul" else self.precoder
            res = fn(cfg, correlations, prec, self.trials, trial_streams(self.seed))
            self.sinr_ = None
            self.sum_rate_ = res.mean
            self.stderr_ = res.stderr
        return self

    def score(self, config=None, correlations=None):
        """Fitted sum rate (higher is better)."""
        check_is_fitted(self, "sum_rate_")
        return self.sum_rate_


class GaScheduler(BaseEstimator):
    """Genetic-algorithm user scheduler minimizing the IUD objective.

    Parameters mirror ``GaParams``.  ``fit(pool)`` takes a ``UserPool``.

    Attributes
    ----------
    partition_ : SchedulingPartition
    iud_ : float
    history_ : ndarray
        Best IUD per generation.
    """

    def __init__(self, population=40, iterations=100, crossover=0.8, mutation=0.1,
                 elitism=1, seed=0):
        self.population = population
        self.iterations = iterations
        self.crossover = crossover
        self.mutation = mutation
        self.elitism = elitism
        self.seed = seed

    def fit(self, pool, initial=None):
        params = GaParams(**self.get_params())
        res = ga_schedule(pool.waiting, pool.config, params, pool, initial=initial)
        self.partition_ = res.best
        self.iud_ = res.best_iud
        self.history_ = np.asarray(res.history)
        return self

    def predict(self, pool):
        """Group labels ``(ul_labels, dl_labels)`` of the fitted partition."""
        check_is_fitted(self, "partition_")
        return self.partition_.labels(pool.n_ul, pool.n_dl)
