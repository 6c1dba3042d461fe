# Composition package initialization
