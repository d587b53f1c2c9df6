"""
Services de visualisation
"""
