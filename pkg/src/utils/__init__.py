# Utilities package initialization
