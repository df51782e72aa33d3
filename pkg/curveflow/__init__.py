"""Non-local curvature flows of closed plane curves and numerical checks of their theorems."""
