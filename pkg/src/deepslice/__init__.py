"""Deep slice interpolation toolkit."""
