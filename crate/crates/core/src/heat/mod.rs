//! 2D steady heat-conduction forward model.
