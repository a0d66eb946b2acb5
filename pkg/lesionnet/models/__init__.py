"""Network definitions: backbone, Lesion-Net and the grading networks."""
