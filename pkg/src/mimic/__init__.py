"""Pure-jump martingales with prescribed one-dimensional marginals: marginal
families, transport kernels, path simulation, total-variation bounds and the
sub-hedge check."""
