"""
Late-Interaction Retrieval Workbench - Test Suite
"""

__version__ = "1.0.0"
