"""Period life table reduced to the part the forecaster needs.

The chain starts from single-age death probabilities qx and produces
life expectancy at birth.  Infant deaths are assumed to occur early in
the year of age (average 0.3 years lived); all later deaths at midyear.
"""

import numpy as np
from scipy.special import expit

from .errors import DomainError


def survivorship(qx):
    """Survivor column l_a for a = 0..A, starting at l_0 = 1.

    Accepts batched input with ages on the last axis and returns an array
    with one extra trailing entry (the survivors past the final age).
    """
    qx = _validated(qx)
    ones = np.ones(qx.shape[:-1] + (1,))
    return np.concatenate([ones, np.cumprod(1.0 - qx, axis=-1)], axis=-1)


def life_table_e0(qx):
    """Life expectancy at birth from single-age death probabilities.

    Parameters
    ----------
    qx : array_like, shape (..., A)
        Death probabilities in [0, 1]; ages on the last axis.

    Returns
    -------
    float or ndarray
        Person-years lived per newborn, truncated at the last age:
        e0 = L_0 + sum_{a>=1} L_a with L_0 = 0.3 + 0.7 l_1 and
        L_a = (l_a + l_{a+1}) / 2.

    Raises
    ------
    DomainError
        If any probability falls outside [0, 1].
    """
    qx = _validated(qx)
    l = survivorship(qx)
    e0 = 0.3 + 0.7 * l[..., 1] + 0.5 * (l[..., 1:-1] + l[..., 2:]).sum(axis=-1)
    return float(e0) if e0.ndim == 0 else e0


def e0_by_sex(logit_qx):
    """Per-sex life expectancy from a logit-scale schedule (..., S, A)."""
    return life_table_e0(expit(np.asarray(logit_qx, dtype=float)))


def _validated(qx):
    qx = np.asarray(qx, dtype=float)
    if qx.shape[-1] < 1:
        raise DomainError("need at least one age")
    if not np.all((qx >= 0.0) & (qx <= 1.0)):
        raise DomainError("death probabilities must lie in [0, 1]")
    return qx
