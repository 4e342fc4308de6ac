import numpy as np
import pytest

from popctrl.model import (ControlRegion, DiffusionSpec, FertilityKernel,
                           GrowthModel, ModelSpec, MortalityModel)
from popctrl.rates import Bump, Constant, Poly


def build_spec(g=1.0, S=1.0, A=1.0, mu1=0.0, mu2=0.0, beta_amp=0.0,
               min_age=0.9, sigma=0.1, control=(0.3, 0.7, 0.1, 0.9, 0.2, 0.8),
               kernel="probabilistic", newborn=None, cutoff=0.95):
    """Small helper: a spec from scalars (constant rates) for unit tests."""
    growth = GrowthModel(rate=g if hasattr(g, "__call__") else Constant(g),
                         max_size=S)
    mort = MortalityModel(
        age_rate=mu1 if hasattr(mu1, "__call__") else Constant(mu1),
        size_rate=mu2 if hasattr(mu2, "__call__") else Constant(mu2),
        max_age=A, integrable_cutoff=cutoff)
    if kernel == "probabilistic":
        fert = FertilityKernel(
            variant="probabilistic", min_age=min_age,
            age_profile=beta_amp if hasattr(beta_amp, "__call__")
            else (Bump(lo=min_age, hi=A, amplitude=beta_amp) if beta_amp
                  else Constant(0.0)),
            newborn_profile=newborn or Poly([0.0, 0.0, 30.0, -60.0, 30.0]),
        )
    else:
        fert = FertilityKernel(
            variant=kernel, min_age=min_age,
            age_profile=beta_amp if hasattr(beta_amp, "__call__")
            else (Bump(lo=min_age, hi=A, amplitude=beta_amp) if beta_amp
                  else Constant(0.0)),
        )
    diff = DiffusionSpec(variant="nondegenerate_neumann",
                         conductivity=sigma if hasattr(sigma, "__call__")
                         else Constant(sigma))
    ctrl = ControlRegion(*[float(v) for v in control])
    return ModelSpec(growth, mort, fert, diff, ctrl)


def degenerate_spec(control=(0.3, 0.7, 0.1, 0.9, 0.2, 0.8), beta_amp=0.0,
                    min_age=0.9, mu=0.1):
    from popctrl.rates import ReciprocalGap
    growth = GrowthModel(rate=Constant(1.0), max_size=1.0)
    mort = MortalityModel(age_rate=ReciprocalGap(scale=mu, limit=1.0),
                          size_rate=ReciprocalGap(scale=mu, limit=1.0),
                          max_age=1.0)
    fert = FertilityKernel(
        variant="local", min_age=min_age,
        age_profile=Bump(lo=min_age, hi=1.0, amplitude=beta_amp) if beta_amp
        else Constant(0.0))
    diff = DiffusionSpec(variant="degenerate_dirichlet",
                         k=Poly([0.0, 1.0, -1.0]), b=None, m1=1.0, m2=1.0)
    ctrl = ControlRegion(*[float(v) for v in control])
    return ModelSpec(growth, mort, fert, diff, ctrl)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
