//! Composite l_{1,inf} regression: norm scaling sweep over the saddle-point
//! core.
