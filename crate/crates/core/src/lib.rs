//! Latency-minimal wireless federated learning over multi-hop relay networks.
//!
//! The crate has three layers:
//!
//! * a system model ([`net`], [`cost`]) that generates seeded multi-hop
//!   network instances (routes, Rayleigh channels, RF energy-harvesting
//!   relay chains) and evaluates every latency/energy term for a given set
//!   of decision variables;
//! * an optimizer ([`convex`], [`bcd`]) that assembles the three convexified
//!   subproblems (routing indicator, leaf nodes, relay nodes), solves them
//!   with a log-barrier interior-point method, and drives the outer block
//!   coordinate descent loop plus four baseline schemes;
//! * a desk-scale personalized FL trainer ([`pafl`]) and an experiment
//!   harness ([`harness`]) that orchestrates runs and writes CSV artifacts.

pub mod bcd;
pub mod convex;
pub mod cost;
pub mod harness;
pub mod net;
pub mod pafl;
