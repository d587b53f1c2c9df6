"""
Services pour l'application core
"""
