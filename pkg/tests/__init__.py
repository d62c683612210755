"""Unit tests for bimodal-mesh-codec."""
