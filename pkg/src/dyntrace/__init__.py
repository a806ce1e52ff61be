"""Static and dynamic implicit trace estimation from matrix-vector queries."""
