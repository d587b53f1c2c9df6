"""
Services d'orchestration des expériences
"""
