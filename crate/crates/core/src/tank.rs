//! Energy tank that budgets the non-passive part of the rendered behavior.
//!
//! The stored energy `T = ½ x_t²` is kept as the primary quantity and always
//! equals the initial charge plus the accumulated port work, so the discrete
//! energy balance holds exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::LinearConstraintRow;
use crate::error::TankError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    initial: f64,
    accumulated: f64,
    floor: f64,
}

impl TankState {
    /// Charges the tank with `initial` joules; `floor` is the reserve ε̲ that
    /// must never be crossed.
    pub fn new(initial: f64, floor: f64) -> Result<Self, TankError> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(TankError::InvalidFloor(floor));
        }
        if !initial.is_finite() || initial < floor {
            return Err(TankError::BelowFloor { initial, floor });
        }
        Ok(Self {
            initial,
            accumulated: 0.0,
            floor,
        })
    }

    /// Stored energy `T` (J).
    pub fn energy(&self) -> f64 {
        self.initial + self.accumulated
    }

    /// Tank state `x_t = √(2T)`.
    pub fn charge(&self) -> f64 {
        (2.0 * self.energy()).max(0.0).sqrt()
    }

    pub fn initial_energy(&self) -> f64 {
        self.initial
    }

    /// Accumulated port work `Σ Δt F_eᵀ ẋ_des` (J).
    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Energy available above the floor.
    pub fn margin(&self) -> f64 {
        self.energy() - self.floor
    }

    /// Modulation `A = γ / x_t`, so that `A y_t = γ`. Fails once the tank has
    /// drained to half the floor, where the modulation becomes singular.
    pub fn modulation(&self, desired_velocity: &DVector<f64>) -> Result<DVector<f64>, TankError> {
        let energy = self.energy();
        if energy <= 0.5 * self.floor {
            return Err(TankError::Depleted { energy });
        }
        Ok(desired_velocity / self.charge())
    }

    /// Books the port work of one step. The returned state is valid only if it
    /// stays above the floor; anything else is a controller contract violation.
    pub fn step(
        &self,
        external_force: &DVector<f64>,
        desired_velocity: &DVector<f64>,
        dt: f64,
    ) -> Result<TankState, TankError> {
        if !(dt > 0.0) {
            return Err(TankError::InvalidTimeStep(dt));
        }
        let next = TankState {
            accumulated: self.accumulated + dt * external_force.dot(desired_velocity),
            ..*self
        };
        if next.energy() < self.floor {
            return Err(TankError::FloorViolated {
                energy: next.energy(),
                floor: self.floor,
            });
        }
        Ok(next)
    }

    /// Same bookkeeping as [`step`](Self::step) without the floor check, for
    /// callers that record the violation themselves.
    pub fn step_unchecked(
        &self,
        external_force: &DVector<f64>,
        desired_velocity: &DVector<f64>,
        dt: f64,
    ) -> TankState {
        TankState {
            accumulated: self.accumulated + dt * external_force.dot(desired_velocity),
            ..*self
        }
    }

    /// The tank-floor constraint for this cycle, linear in `q̇`:
    ///
    /// `Δt F_eᵀ J q̇ ≥ −(T − ε̲)`
    ///
    /// All past port work is already folded into `T`.
    pub fn passivity_row(
        &self,
        external_force: &DVector<f64>,
        jacobian: &DMatrix<f64>,
        dt: f64,
    ) -> LinearConstraintRow {
        LinearConstraintRow {
            coefficients: jacobian.tr_mul(external_force) * dt,
            slack: None,
            bound: -self.margin(),
        }
    }
}
