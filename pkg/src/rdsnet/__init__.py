"""Salient object detection with a top-down side-output network, trained and evaluated at desk scale."""
