"""Visual adversarial imitation learning laboratory."""
