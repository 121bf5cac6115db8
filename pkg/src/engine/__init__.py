# Sampler engine: targets, dynamics, methods, estimation