"""
Graybox NLP - Package
Interior-point optimization with neural networks embedded as constraints
"""

__version__ = "1.0.0"
