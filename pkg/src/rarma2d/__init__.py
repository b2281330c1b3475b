"""2-D Rayleigh ARMA random fields: simulation, estimation, inference and anomaly detection."""
