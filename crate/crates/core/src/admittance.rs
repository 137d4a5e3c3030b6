//! Time-varying admittance dynamics
//!
//! `M ẍ_a + D ẋ_a + ∂P/∂x_a = F_e`
//!
//! with diagonal inertia and damping. Parameters change as piecewise-constant
//! switches between steps, so the Coriolis term vanishes. The optional
//! potential is a repulsive field centered on a (moving) obstacle.

use nalgebra::DVector;

use crate::error::AdmittanceError;

/// Distance floor used inside the repulsive field, which is singular at the
/// obstacle center.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Repulsive field `P(d) = ½ K (1/d − 1/D*)²` for `d < D*`, zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RepulsivePotential {
    gain: f64,
    activation_distance: f64,
    obstacle: DVector<f64>,
}

impl RepulsivePotential {
    pub fn new(
        gain: f64,
        activation_distance: f64,
        obstacle: DVector<f64>,
    ) -> Result<Self, AdmittanceError> {
        if !(gain.is_finite() && gain >= 0.0) {
            return Err(AdmittanceError::InvalidPotential(format!(
                "gain must be non-negative, got {gain}"
            )));
        }
        if !(activation_distance.is_finite() && activation_distance > 0.0) {
            return Err(AdmittanceError::InvalidPotential(format!(
                "activation distance must be positive, got {activation_distance}"
            )));
        }
        Ok(Self {
            gain,
            activation_distance,
            obstacle,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn activation_distance(&self) -> f64 {
        self.activation_distance
    }

    pub fn obstacle(&self) -> &DVector<f64> {
        &self.obstacle
    }

    pub fn set_obstacle(&mut self, obstacle: DVector<f64>) {
        self.obstacle = obstacle;
    }

    fn offset(&self, p: &DVector<f64>) -> (DVector<f64>, f64) {
        let diff = p - &self.obstacle;
        let d = diff.norm().max(MIN_DISTANCE);
        (diff, d)
    }

    /// Repulsive force `K (1/d − 1/D*) (p − p_obs) / d³` inside the
    /// activation distance, pointing away from the obstacle.
    pub fn force(&self, p: &DVector<f64>) -> DVector<f64> {
        let (diff, d) = self.offset(p);
        if d >= self.activation_distance {
            return DVector::zeros(p.len());
        }
        diff * (self.gain * (1.0 / d - 1.0 / self.activation_distance) / (d * d * d))
    }

    /// `∂P/∂p`, the negative of [`force`](Self::force).
    pub fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        -self.force(p)
    }

    pub fn energy(&self, p: &DVector<f64>) -> f64 {
        let (_, d) = self.offset(p);
        if d >= self.activation_distance {
            return 0.0;
        }
        let s = 1.0 / d - 1.0 / self.activation_distance;
        0.5 * self.gain * s * s
    }
}

/// Diagonal inertia and damping of the rendered admittance, plus an optional
/// repulsive potential.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceParams {
    inertia: DVector<f64>,
    damping: DVector<f64>,
    potential: Option<RepulsivePotential>,
}

impl AdmittanceParams {
    pub fn new(
        inertia: DVector<f64>,
        damping: DVector<f64>,
        potential: Option<RepulsivePotential>,
    ) -> Result<Self, AdmittanceError> {
        let mut params = Self {
            inertia: DVector::zeros(0),
            damping: DVector::zeros(0),
            potential: None,
        };
        params.set_inertia(inertia)?;
        params.set_damping(damping)?;
        params.set_potential(potential)?;
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.inertia.len()
    }

    pub fn inertia(&self) -> &DVector<f64> {
        &self.inertia
    }

    pub fn damping(&self) -> &DVector<f64> {
        &self.damping
    }

    pub fn potential(&self) -> Option<&RepulsivePotential> {
        self.potential.as_ref()
    }

    pub fn potential_mut(&mut self) -> Option<&mut RepulsivePotential> {
        self.potential.as_mut()
    }

    pub fn set_inertia(&mut self, inertia: DVector<f64>) -> Result<(), AdmittanceError> {
        if inertia.is_empty() || !inertia.iter().all(|m| m.is_finite() && *m > 0.0) {
            return Err(AdmittanceError::NonPositiveInertia);
        }
        if !self.inertia.is_empty() && inertia.len() != self.inertia.len() {
            return Err(AdmittanceError::DimensionMismatch {
                expected: self.inertia.len(),
                got: inertia.len(),
            });
        }
        self.inertia = inertia;
        Ok(())
    }

    pub fn set_damping(&mut self, damping: DVector<f64>) -> Result<(), AdmittanceError> {
        if !damping.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(AdmittanceError::NegativeDamping);
        }
        if damping.len() != self.inertia.len() {
            return Err(AdmittanceError::DimensionMismatch {
                expected: self.inertia.len(),
                got: damping.len(),
            });
        }
        self.damping = damping;
        Ok(())
    }

    pub fn set_potential(
        &mut self,
        potential: Option<RepulsivePotential>,
    ) -> Result<(), AdmittanceError> {
        if let Some(pot) = &potential {
            if pot.obstacle.len() != self.dim() {
                return Err(AdmittanceError::DimensionMismatch {
                    expected: self.dim(),
                    got: pot.obstacle.len(),
                });
            }
        }
        self.potential = potential;
        Ok(())
    }

    /// Integrates one step and returns the new state; the new `ẋ_a` is the
    /// desired velocity handed to the optimizer.
    ///
    /// The potential is evaluated at `contact_point`. Semi-implicit Euler:
    /// velocity first, then position with the updated velocity.
    pub fn step(
        &self,
        state: &AdmittanceState,
        external_force: &DVector<f64>,
        contact_point: &DVector<f64>,
        dt: f64,
    ) -> Result<AdmittanceState, AdmittanceError> {
        if !(dt > 0.0) {
            return Err(AdmittanceError::InvalidTimeStep(dt));
        }
        let dim = self.dim();
        for len in [
            state.position.len(),
            state.velocity.len(),
            external_force.len(),
            contact_point.len(),
        ] {
            if len != dim {
                return Err(AdmittanceError::DimensionMismatch {
                    expected: dim,
                    got: len,
                });
            }
        }
        let mut net = external_force - self.damping.component_mul(&state.velocity);
        if let Some(pot) = &self.potential {
            net -= pot.gradient(contact_point);
        }
        let accel = net.component_div(&self.inertia);
        let velocity = &state.velocity + accel * dt;
        let position = &state.position + &velocity * dt;
        Ok(AdmittanceState { position, velocity })
    }

    /// Storage function `P + ½ ẋ_aᵀ M ẋ_a`, with the potential evaluated at
    /// `contact_point`.
    pub fn storage_energy(&self, state: &AdmittanceState, contact_point: &DVector<f64>) -> f64 {
        let kinetic = 0.5
            * state
                .velocity
                .iter()
                .zip(self.inertia.iter())
                .map(|(v, m)| m * v * v)
                .sum::<f64>();
        let potential = self
            .potential
            .as_ref()
            .map_or(0.0, |p| p.energy(contact_point));
        kinetic + potential
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl AdmittanceState {
    pub fn at_rest(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
        }
    }
}
