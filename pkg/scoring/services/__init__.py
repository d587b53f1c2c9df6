"""
Services de calcul des métriques de segmentation
"""
