"""
Workers module (etapas da CLI e executor de threads)
"""
