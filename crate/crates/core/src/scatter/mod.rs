//! 2D sound-soft acoustic scattering forward model.
