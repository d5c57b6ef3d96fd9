//! Multi-commodity flow applications: the reduction to composite l_{1,inf}
//! regression and the concurrent, maximum, and weighted variants built on it.
