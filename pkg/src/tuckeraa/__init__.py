"""Tucker-format cross approximation and Anderson acceleration."""
