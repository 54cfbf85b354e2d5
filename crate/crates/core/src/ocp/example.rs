use std::sync::Arc;

use nalgebra::DVector;

use super::{Bounds, ControlProblem, ValueFunction};
use crate::{Error, Result};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Pure control-cost problem: `f = 0`, `M = 0`, `L(t, x, u) = g(u)`.
///
/// The state is a one-dimensional dummy on `[-1, 1]`. The optimal value is
/// `V*(t, x) = (T − t) · min g`, so solving the control problem amounts to
/// minimizing `g` over the control box.
#[derive(Clone)]
pub struct Example1 {
    cost: ScalarFn,
    horizon: f64,
    state_box: Bounds,
    control_box: Bounds,
    minimum: Option<f64>,
}

impl std::fmt::Debug for Example1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Example1")
            .field("horizon", &self.horizon)
            .field("control_box", &self.control_box)
            .field("minimum", &self.minimum)
            .finish_non_exhaustive()
    }
}

impl Example1 {
    pub fn new(cost: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, control_box: Bounds) -> Self {
        Self {
            cost: Arc::new(cost),
            horizon: 1.0,
            state_box: Bounds::cube(1, -1.0, 1.0).expect("valid box"),
            control_box,
            minimum: None,
        }
    }

    /// `g(u) = ‖u − center‖² + offset` with a known minimum over the box.
    pub fn shifted_quadratic(center: f64, offset: f64, control_box: Bounds) -> Self {
        let mut closest: Vec<f64> = vec![center; control_box.dim()];
        control_box.clamp(&mut closest);
        let minimum = closest.iter().map(|c| (c - center).powi(2)).sum::<f64>() + offset;
        let mut problem =
            Self::new(move |u: &[f64]| u.iter().map(|v| (v - center).powi(2)).sum::<f64>() + offset, control_box);
        problem.minimum = Some(minimum);
        problem
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn cost(&self, u: &[f64]) -> f64 {
        (self.cost)(u)
    }

    /// `min g` over the control box, when known in closed form.
    pub fn minimum(&self) -> Option<f64> {
        self.minimum
    }

    /// `V*`, when `min g` is known.
    pub fn optimal_value(&self) -> Option<Example1Value> {
        self.minimum.map(|minimum| Example1Value { minimum, horizon: self.horizon })
    }
}

/// `V*(t, x) = (T − t) · min g` for [`Example1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1Value {
    pub minimum: f64,
    pub horizon: f64,
}

impl ValueFunction for Example1Value {
    fn value(&self, t: f64, _x: &[f64]) -> f64 {
        (self.horizon - t) * self.minimum
    }
    fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        -self.minimum
    }
    fn gradient(&self, _t: f64, x: &[f64]) -> DVector<f64> {
        DVector::zeros(x.len())
    }
}

impl ControlProblem for Example1 {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        self.control_box.dim()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn state_box(&self) -> &Bounds {
        &self.state_box
    }
    fn control_box(&self) -> &Bounds {
        &self.control_box
    }
    fn dynamics(&self, _t: f64, _x: &[f64], _u: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn running_cost(&self, _t: f64, _x: &[f64], u: &[f64]) -> f64 {
        (self.cost)(u)
    }
    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn terminal_grad(&self, _x: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn terminal_laplacian(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

type VectorField = Arc<dyn Fn(f64, &[f64], &[f64]) -> DVector<f64> + Send + Sync>;
type CostField = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
type GradField = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// A problem assembled from closures.
#[derive(Clone)]
pub struct FnProblem {
    horizon: f64,
    state_box: Bounds,
    control_box: Bounds,
    dynamics: VectorField,
    running: CostField,
    terminal: ScalarFn,
    terminal_grad: GradField,
    terminal_laplacian: ScalarFn,
}

impl FnProblem {
    /// Starts from `f = 0`, `L = 0`, `M = 0`.
    pub fn builder(horizon: f64, state_box: Bounds, control_box: Bounds) -> FnProblemBuilder {
        let d = state_box.dim();
        FnProblemBuilder {
            inner: FnProblem {
                horizon,
                state_box,
                control_box,
                dynamics: Arc::new(move |_, _, _| DVector::zeros(d)),
                running: Arc::new(|_, _, _| 0.0),
                terminal: Arc::new(|_| 0.0),
                terminal_grad: Arc::new(move |_| DVector::zeros(d)),
                terminal_laplacian: Arc::new(|_| 0.0),
            },
        }
    }
}

pub struct FnProblemBuilder {
    inner: FnProblem,
}

impl FnProblemBuilder {
    pub fn dynamics(mut self, f: impl Fn(f64, &[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.inner.dynamics = Arc::new(f);
        self
    }

    pub fn running_cost(mut self, l: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.inner.running = Arc::new(l);
        self
    }

    /// Terminal cost with its gradient and Laplacian.
    pub fn terminal_cost(
        mut self,
        m: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        laplacian: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.inner.terminal = Arc::new(m);
        self.inner.terminal_grad = Arc::new(grad);
        self.inner.terminal_laplacian = Arc::new(laplacian);
        self
    }

    pub fn build(self) -> Result<FnProblem> {
        super::validate_problem(&self.inner)?;
        Ok(self.inner)
    }
}

impl ControlProblem for FnProblem {
    fn state_dim(&self) -> usize {
        self.state_box.dim()
    }
    fn control_dim(&self) -> usize {
        self.control_box.dim()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn state_box(&self) -> &Bounds {
        &self.state_box
    }
    fn control_box(&self) -> &Bounds {
        &self.control_box
    }
    fn dynamics(&self, t: f64, x: &[f64], u: &[f64]) -> DVector<f64> {
        (self.dynamics)(t, x, u)
    }
    fn running_cost(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.running)(t, x, u)
    }
    fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }
    fn terminal_grad(&self, x: &[f64]) -> DVector<f64> {
        (self.terminal_grad)(x)
    }
    fn terminal_laplacian(&self, x: &[f64]) -> f64 {
        (self.terminal_laplacian)(x)
    }
}
