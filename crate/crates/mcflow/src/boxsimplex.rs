//! Extragradient solver for box-simplex games with a doubly-entropic area
//! convexity regularizer, and the ball-restricted oracle built on it.
