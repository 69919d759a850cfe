//! Bounded, executable inductive model of the TLS handshake: a Dolev-Yao
//! message algebra, the fifteen trace rules, a finite intruder, the security
//! properties as trace predicates and a breadth-first explorer that looks for
//! counterexamples.

pub mod algebra;
pub mod cli;
pub mod config;
pub mod explorer;
pub mod intruder;
pub mod properties;
pub mod rules;
pub mod syntax;
pub mod trace;
