# Functionality module initialization
