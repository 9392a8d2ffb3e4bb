# Evaluation metrics and experiments
