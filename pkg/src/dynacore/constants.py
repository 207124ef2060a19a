"""Physical constants and planet configuration."""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """Planet and dry-air constants.

    Defaults are standard Earth values; the radius is consistent with an
    average C96 grid spacing of 96.0 km.
    """

    a: float = 6371229.0          # planet radius [m]
    omega: float = 7.292e-5       # rotation rate [s^-1]
    g: float = 9.80616            # gravitational acceleration [m s^-2]
    R: float = 287.05             # gas constant for dry air [J kg^-1 K^-1]
    cp: float = 1005.0            # specific heat at constant pressure [J kg^-1 K^-1]
    p0: float = 1.0e5             # reference pressure [Pa]

    @property
    def kappa(self):
        return self.R / self.cp


EARTH = PhysicalConstants()
