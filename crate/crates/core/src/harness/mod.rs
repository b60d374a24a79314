//! Experiment engine: scenario files, Monte Carlo aggregation, noise
//! sweeps, terminal histograms, bound comparison and output files.

mod monte_carlo;
pub mod output;
mod scenario;
mod stats;

pub use monte_carlo::{
    compare_to_bounds, run_monte_carlo, sweep_noise_scale, terminal_distribution, ClaimCheck,
    Distribution, DominanceReport, Histogram, McSummary, PlayerDistribution, Sweep, SweepRow,
    CHUNK_SIZE, DEFAULT_DISTRIBUTION_REPLICAS, DEFAULT_SWEEP, DOMINANCE_SLACK, MODE_SMOOTHING_BINS,
};
pub use scenario::{
    default_probe_grid, AlgorithmSpec, Scenario, ScenarioFile, ScenarioMixing, TopologyMode,
    TopologySpec, DEFAULT_REPLICAS, DENSE_PROBE_LIMIT,
};
pub use stats::{Estimate, RunningStat};
