"""
Services d'ingestion, de prétraitement et d'augmentation des données
"""
