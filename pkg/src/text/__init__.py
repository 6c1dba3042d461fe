# Text conditioning package initialization
