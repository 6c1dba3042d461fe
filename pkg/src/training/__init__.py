# Training package initialization
