"""Common test parts."""

# Truncation levels small enough for fast ODE runs.
N_SMALL = 60
N_TEST = 80

# Immigration levels with closed form G(s) = s / 2.
CLOSED_FORM_LEVELS = (0.5, 1.0, 3.0, 10.0)

# R0 of the constant_linear model.
R0_CONSTANT_LINEAR = 2.0 / 3.0

# s_tilde of the logistic model: 3 < 1 + 3 (x - 1) / x + 0.5 for x > 2.
S_TILDE_LOGISTIC = 2.0

SEED = 1234
