"""Random models on the periodic grid and the numeric checks built on them."""
