# Monitoring package initialization
