//! Numerical tolerances and fixed constants shared across modules.

/// Central record of numeric constants. Everything that compares or clamps
/// floating point values reads from here.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Lower clamp applied to `q` inside row KL divergences.
    pub kl_clamp: f64,
    /// Added under the square root when normalising vectors inside the graph.
    pub norm_eps: f64,
    /// Lower clamp on per-feature standard deviation in the collinearity loss.
    pub std_floor: f64,
    /// Norm of the probe displacement used by the perturbation stability mode.
    pub probe_norm: f64,
    /// Gradient infinity-norm at which logistic fitting is considered converged.
    pub logistic_grad_tol: f64,
    /// Row-sum tolerance for probability vectors read from disk.
    pub prob_row_tol: f64,
}

pub const TOL: Tolerances = Tolerances {
    kl_clamp: 1e-12,
    norm_eps: 1e-24,
    std_floor: 1e-8,
    probe_norm: 1e-3,
    logistic_grad_tol: 1e-6,
    prob_row_tol: 1e-6,
};
