"""Action-chunking CVAE policy trainer for the egoplan benchmark."""

__version__ = "0.1.0"
