"""Two-scale phase-field model of precipitation and dissolution in porous media."""
