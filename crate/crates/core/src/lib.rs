//! Simulation and numerical verification toolkit for genealogies of
//! one-dimensional stepping stone and voter models.
//!
//! The crate has five parts:
//!
//! * [`dispersal`] — lattice dispersal kernels scaled by a parameter `N`
//!   (support width `~sqrt(N)`), with construction-time audits of the
//!   regularity assumptions the limit theorems need.
//! * [`genealogy`] — exact continuous-time simulators for the coalescence
//!   time of a pair of lineages (stepping stone colonies, a finite ring,
//!   and the long-range voter difference walk), plus the excursion/cycle
//!   decomposition of walk paths used to count strip crossings.
//! * [`limitlaw`] — the limiting survival function
//!   `u(t,x) = E_x exp(-lambda * l_0(t))` for Brownian local time at the
//!   origin, by two independent routes (closed-form density quadrature and
//!   a Crank–Nicolson heat solver with a Robin boundary), and the classical
//!   fixation-probability integral for the ring model.
//! * [`walk`] — exact finite-`k` step distributions by convolution, a local
//!   CLT error audit, the potential kernel with a certified series tail,
//!   and exact Green's functions / hitting probabilities on a centred
//!   interval via a banded linear solve.
//! * [`stats`] — empirical distributions with right-censoring,
//!   Kolmogorov–Smirnov distances, Laplace-functional estimates, a
//!   chi-square tail, and the reproducible per-replica seed plan.
//!
//! Every simulator draws from a [`stats::SeedPlan`] stream keyed by replica
//! index, so results are bit-identical regardless of how replicas are
//! scheduled across threads.

pub mod dispersal;
pub mod genealogy;
pub mod limitlaw;
pub mod stats;
pub mod walk;
