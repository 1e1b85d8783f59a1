"""Single-loop-closure map merging for monocular multi-agent SLAM."""
__version__ = "0.1.0"
