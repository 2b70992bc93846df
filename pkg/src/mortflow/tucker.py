"""Truncated higher-order SVD of the mortality tensor.

The decomposition factors the (sex, age, country, year) logit tensor
into orthonormal per-mode bases and a core.  Collapsing the core with
one country row and one year row yields a small sex-by-age "effective
core" g, and S g A^T maps it back to a full schedule; that matrix is
the object the rest of the pipeline works with.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, RankError

MODE_NAMES = ("sex", "age", "country", "year")


@dataclass
class TuckerModel:
    """Orthonormal factor matrices, the core, and axis labels."""

    sex_factor: np.ndarray
    age_factor: np.ndarray
    country_factor: np.ndarray
    year_factor: np.ndarray
    core: np.ndarray
    countries: tuple
    years: np.ndarray
    ages: np.ndarray

    @property
    def ranks(self):
        return self.core.shape

    @property
    def factors(self):
        return (self.sex_factor, self.age_factor,
                self.country_factor, self.year_factor)


def fill_missing(values, mask):
    """Replace unobserved (country, year) slices with per-cell means.

    The mean is taken over observed slices separately for every
    (sex, age) cell.  The fill only feeds the basis estimation; nothing
    downstream ever reads reconstructed values at unobserved cells.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("tensor has no observed cells")
    filled = values.copy()
    cell_mean = values[:, :, mask].mean(axis=-1)
    filled[:, :, ~mask] = cell_mean[:, :, None]
    if not np.isfinite(filled).all():
        raise DataError("observed cells contain non-finite values")
    return filled


def hosvd(tensor, ranks):
    """Truncated HOSVD with a canonical sign convention.

    Parameters
    ----------
    tensor : MortalityTensor
        Unobserved cells are mean-filled before the factorisation.
    ranks : tuple of 4 ints
        Retained components per mode; each must not exceed the mode size.

    Returns
    -------
    TuckerModel

    Notes
    -----
    Each factor holds the leading left singular vectors of the mode
    unfolding, with every column flipped so its largest-magnitude entry
    is positive.  Identical input therefore yields byte-identical output.
    """
    values = fill_missing(tensor.values, tensor.mask)
    if len(ranks) != 4:
        raise RankError("ranks must have one entry per mode")
    factors = []
    for mode, rank in enumerate(ranks):
        dim = values.shape[mode]
        if not 1 <= rank <= dim:
            raise RankError(
                f"rank {rank} invalid for {MODE_NAMES[mode]} mode of size {dim}")
        unfolding = np.moveaxis(values, mode, 0).reshape(dim, -1)
        u, _, _ = np.linalg.svd(unfolding, full_matrices=False)
        if rank > u.shape[1]:
            raise RankError(
                f"rank {rank} exceeds the spectrum of the {MODE_NAMES[mode]} mode")
        u = u[:, :rank].copy()
        flip = u[np.argmax(np.abs(u), axis=0), np.arange(rank)] < 0
        u[:, flip] *= -1.0
        factors.append(u)
    s, a, c, t = factors
    core = np.einsum("sact,si,aj,ck,tl->ijkl", values, s, a, c, t, optimize=True)
    return TuckerModel(sex_factor=s, age_factor=a, country_factor=c,
                       year_factor=t, core=core, countries=tensor.countries,
                       years=np.asarray(tensor.years).copy(),
                       ages=np.asarray(tensor.ages).copy())


def effective_core(model, c, t):
    """Core collapsed with country row c and year row t: an (r1, r2) matrix."""
    return np.einsum("ijkl,k,l->ij", model.core,
                     model.country_factor[c], model.year_factor[t])


def effective_core_grid(model):
    """Effective cores for every (country, year) cell, shape (C, T, r1, r2)."""
    return np.einsum("ijkl,ck,tl->ctij", model.core,
                     model.country_factor, model.year_factor, optimize=True)


def reconstruct_schedule(model, g):
    """Map an effective core back to a (sex, age) logit schedule."""
    return model.sex_factor @ g @ model.age_factor.T


def full_reconstruction(model):
    """Rebuild the whole tensor from the model (diagnostics and tests)."""
    return np.einsum("ijkl,si,aj,ck,tl->sact", model.core, *model.factors,
                     optimize=True)


def project_schedule(model, z):
    """Least-squares effective core for an arbitrary logit schedule.

    Solves min_g ||z - S g A^T||_F via the factor pseudoinverses, so an
    out-of-span component of z is discarded here and resurfaces as the
    jump-off residual.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (model.sex_factor.shape[0], model.age_factor.shape[0]):
        raise DataError(f"schedule shape {z.shape} does not match the model")
    if not np.isfinite(z).all():
        raise DataError("schedule contains non-finite values")
    return np.linalg.pinv(model.sex_factor) @ z @ np.linalg.pinv(model.age_factor).T
