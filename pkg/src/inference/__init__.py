# Inference package initialization
