"""
Services d'entraînement et de gestion des checkpoints
"""
