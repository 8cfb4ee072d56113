"""Smooth self-similar blow-up profiles of 1D model PDEs.

Small physics-informed networks are trained on equation residuals with
a stochastic full-matrix Gauss-Newton optimizer; the self-similar
scaling exponent is found by gradient training, analytic origin
inference, or secant funnel inference; results are validated against a
closed-form profile oracle and a dense linear-stability oracle.

Submodules: jets, tape, net, ansatz, hilbert, equations, sampling,
loss, gnopt, lambdactl, multistage, stability, validate, config,
checkpoint, train, cli.
"""

__version__ = "0.1.0"
