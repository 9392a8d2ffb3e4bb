# Synthetic data generation and dataset IO
