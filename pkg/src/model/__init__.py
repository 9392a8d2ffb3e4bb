# Toy multimodal model, objectives and training
