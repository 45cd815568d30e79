"""Example applications: Poisson, Stokes channel, annulus convection and partition output."""
