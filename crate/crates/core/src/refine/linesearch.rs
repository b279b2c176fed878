//! Armijo backtracking over a box-projected gradient step.

/// Line-search constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    /// Shrink factor `β ∈ (0, 1)`.
    pub beta: f64,
    /// Sufficient-decrease constant `c > 0`.
    pub c: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { beta: 0.5, c: 1e-4, max_backtracks: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub x: Vec<f64>,
    /// Accepted step size; `0` marks a null step.
    pub eta: f64,
    pub value: f64,
    pub backtracks: usize,
}

impl StepResult {
    pub fn is_null(&self) -> bool {
        self.eta == 0.0
    }
}

/// Plain Armijo backtracking: the largest `η ∈ {η₀ βᵐ}` with
/// `f(x₀ − η g) ≤ f(x₀) − c η ‖g‖²`. Returns `x₀` with `η = 0` if no step
/// within the backtrack budget qualifies.
pub fn backtracking_step<F>(f: F, x0: &[f64], f0: f64, grad: &[f64], eta0: f64, armijo: &Armijo) -> StepResult
where
    F: FnMut(&[f64]) -> f64,
{
    projected_backtracking_step(f, x0, f0, grad, eta0, armijo, |_| {})
}

/// Backtracking with the trial point passed through `project`. Sufficient
/// decrease is measured along the projected displacement,
/// `f(x) ≤ f(x₀) + c gᵀ(x − x₀)`, which reduces to the plain rule when the
/// projection is inactive. `f` may return `+∞` or NaN to reject a point.
pub fn projected_backtracking_step<F, P>(
    mut f: F,
    x0: &[f64],
    f0: f64,
    grad: &[f64],
    eta0: f64,
    armijo: &Armijo,
    project: P,
) -> StepResult
where
    F: FnMut(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let mut eta = eta0;
    for m in 0..=armijo.max_backtracks {
        let mut x: Vec<f64> = x0.iter().zip(grad).map(|(a, g)| a - eta * g).collect();
        project(&mut x);
        let predicted: f64 = grad.iter().zip(x.iter().zip(x0)).map(|(g, (a, b))| g * (a - b)).sum();
        let value = f(&x);
        if value <= f0 + armijo.c * predicted {
            return StepResult { x, eta, value, backtracks: m };
        }
        eta *= armijo.beta;
    }
    StepResult { x: x0.to_vec(), eta: 0.0, value: f0, backtracks: armijo.max_backtracks }
}
