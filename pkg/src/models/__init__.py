# Configuration and record models
