"""End-to-end fitting: tensor in, forecast-ready bundle out.

One call wires the stages together in the only order that avoids
look-ahead: truncate the tensor at the origin, factorize, build the
component space, derive country series, fit the flow field, and estimate
relaxation rates from the same truncated series the flow field saw.
"""

from dataclasses import dataclass

import numpy as np

from .convergence import RelaxationRates, estimate_rates
from .data import MortalityTensor, truncate_tensor
from .errors import MissingDataError
from .flowfield import (
    FlowConfig,
    FlowField,
    fit_flowfield,
    series_from_fit,
    truncate_series,
)
from .forecast import (
    ForecastConfig,
    PICalibration,
    apply_intervals,
    country_state,
    run_forecast,
)
from .pca import CorePCA, fit_core_pca
from .tucker import TuckerModel, hosvd

# factor ranks used on the full production corpus: both sexes, single
# ages to about 100, the complete country panel, a century of years
PRODUCTION_RANKS = (2, 42, 46, 100)


def _mode_caps(shape):
    size = int(np.prod(shape))
    return tuple(min(d, size // d) for d in shape)


def default_ranks(shape):
    """Production ranks clipped to what the tensor can support."""
    return tuple(min(r, c) for r, c in zip(PRODUCTION_RANKS, _mode_caps(shape)))


@dataclass(frozen=True)
class FitConfig:
    """Everything fit_model needs beyond the tensor itself.

    ``ranks`` of None means the production ranks clipped to the data;
    ``origin`` of None means the last observed year.
    """

    ranks: tuple | None = None
    n_components: int = 5
    tau: float = 12.0
    window: float = 40.0
    bandwidth: float = 0.20
    transition_e0: float = 78.0
    tail_delta: float = 2.0
    tail_blend: float = 3.0
    seed: int = 0
    origin: int | None = None
    max_lag: int = 30

    def __post_init__(self):
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))

    def flow_config(self):
        return FlowConfig(tau=self.tau, window=self.window,
                          bandwidth=self.bandwidth,
                          transition_e0=self.transition_e0,
                          tail_delta=self.tail_delta,
                          tail_blend=self.tail_blend,
                          seed=self.seed)

    def to_dict(self):
        return {
            "ranks": None if self.ranks is None else list(self.ranks),
            "n_components": int(self.n_components),
            "tau": float(self.tau),
            "window": float(self.window),
            "bandwidth": float(self.bandwidth),
            "transition_e0": float(self.transition_e0),
            "tail_delta": float(self.tail_delta),
            "tail_blend": float(self.tail_blend),
            "seed": int(self.seed),
            "origin": None if self.origin is None else int(self.origin),
            "max_lag": int(self.max_lag),
        }

    @classmethod
    def from_dict(cls, d):
        ranks = d.get("ranks")
        return cls(ranks=None if ranks is None else tuple(ranks),
                   n_components=d["n_components"], tau=d["tau"],
                   window=d["window"], bandwidth=d["bandwidth"],
                   transition_e0=d["transition_e0"],
                   tail_delta=d["tail_delta"], tail_blend=d["tail_blend"],
                   seed=d["seed"], origin=d.get("origin"),
                   max_lag=d["max_lag"])


@dataclass
class FittedModel:
    """A complete fit: basis, component space, dynamics, bookkeeping."""

    model: TuckerModel
    pca: CorePCA
    flowfield: FlowField
    rates: RelaxationRates
    mask: np.ndarray
    origin: int
    config: FitConfig
    calibration: PICalibration | None = None

    def state(self, country, origin_year=None):
        return country_state(self.model, self.pca, self.mask, country,
                             origin_year=origin_year)

    def forecast(self, country, horizon=50, w=1.0, origin_year=None,
                 intervals=False):
        """Forecast a fitted country from its last observed year."""
        state = self.state(country, origin_year=origin_year)
        return self.forecast_state(state, horizon=horizon, w=w,
                                   intervals=intervals)

    def forecast_state(self, state, horizon=50, w=1.0, intervals=False):
        config = ForecastConfig(rates=self.rates, w=w, horizon=horizon)
        result = run_forecast(self.model, self.pca, self.flowfield, state,
                              config)
        if intervals:
            result = apply_intervals(result, self.calibration)
        return result


@dataclass
class BasisFit:
    """Factorization half of a fit: everything upstream of the dynamics.

    The series depend only on the basis and the origin, so one BasisFit
    can back several flow-field fits with different era settings.
    """

    model: TuckerModel
    pca: CorePCA
    series: dict
    mask: np.ndarray
    origin: int


def fit_basis(tensor, config=None, clip_ranks=False):
    """Truncate at the origin, factorize, and derive country series.

    With an explicit origin the tensor is truncated before anything is
    fitted, so later years cannot leak in through the factorization or a
    smoothing window.  ``clip_ranks`` quietly clips requested ranks to
    the truncated dimensions (cross-validation refits shrink the year
    axis); otherwise an oversized rank raises RankError.
    """
    config = config or FitConfig()
    origin = config.origin
    if origin is None:
        observed = tensor.years[tensor.mask.any(axis=0)]
        if observed.size == 0:
            raise MissingDataError("tensor has no observed cells")
        origin = int(observed[-1])
    work = truncate_tensor(tensor, origin)
    ranks = config.ranks if config.ranks is not None else default_ranks(work.shape)
    if clip_ranks:
        ranks = tuple(min(r, c) for r, c in zip(ranks, _mode_caps(work.shape)))
    model = hosvd(work, ranks)
    pca = fit_core_pca(model, work.mask, n_components=config.n_components)
    series = truncate_series(series_from_fit(model, pca, work), origin)
    return BasisFit(model=model, pca=pca, series=series,
                    mask=work.mask.copy(), origin=origin)


def fit_dynamics(basis, config=None):
    """Flow field and relaxation rates on an already-fitted basis."""
    config = config or FitConfig()
    ff = fit_flowfield(basis.series, basis.origin, config.flow_config())
    rates = estimate_rates(ff, basis.series, max_lag=config.max_lag)
    return ff, rates


def fit_model(tensor, config=None, clip_ranks=False):
    """Fit the full pipeline on a tensor: basis first, then dynamics."""
    config = config or FitConfig()
    basis = fit_basis(tensor, config, clip_ranks=clip_ranks)
    ff, rates = fit_dynamics(basis, config)
    return FittedModel(model=basis.model, pca=basis.pca, flowfield=ff,
                       rates=rates, mask=basis.mask, origin=basis.origin,
                       config=config)
