# Diffusion package initialization
