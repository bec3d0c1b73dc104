"""
Late-Interaction Retrieval Workbench - Source Code Package
MaxSim scoring, contrastive training, compression and cost modeling
"""

__version__ = "1.0.0"
__author__ = "Retrieval Workbench Team"
