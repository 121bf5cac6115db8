# Numerics: autodiff tape, random streams
