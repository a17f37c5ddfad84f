"""
DGRE - recomendação cross-market com protótipos duais
"""
__version__ = "1.0.0"
