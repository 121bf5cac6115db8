# Persistence Layer
