# Attention control package initialization
