"""Reference targets: the nested Gaussian toy and the change-point model."""
