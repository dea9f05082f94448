"""
FBNet Point Cloud Completion
Feedback refinement of partial point clouds into dense complete shapes
"""

__version__ = "1.0.0"
__description__ = "Feedback network for point cloud completion"
