"""hmlab: a desk-scale laboratory for harmonic measure on rough domains.

Subpackages map to the pipeline stages: domain oracles and boundary samples
(domains), Christ dyadic cubes (dyadic), Whitney/sawtooth geometry (whitney),
corkscrew and chain connectivity (connectivity), layer potentials and
Carleson functionals (potential), exact tree measures and dyadic weights
(treemeasure), corona stopping times and extrapolation (corona), and the
walk-on-spheres estimator with its boundary diagnostics (wos).
"""

__version__ = "0.1.0"
