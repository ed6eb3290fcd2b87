use crate::{Error, Result, Vec3};

/// Resistance value that maps to a fully rigid constraint.
pub const RESISTANCE_SATURATION: f64 = 600.0;

/// Hair system parameters. Defaults are the production values used for guide simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct HairParams {
    /// kg per particle
    pub mass: f64,
    /// normal air drag, 1/s
    pub drag: f64,
    /// tangential air drag, 1/s
    pub tangential_drag: f64,
    pub damp: f64,
    pub stretch_damp: f64,
    pub stretch_resistance: f64,
    pub compression_resistance: f64,
    pub bend_resistance: f64,
    /// Accepted but inert: polylines carry no twist degrees of freedom.
    pub twist_resistance: f64,
    pub extra_bend_links: u32,
    pub start_curve_attract: f64,
    pub self_collide: bool,
    pub friction: f64,
    pub stickiness: f64,
    pub dynamics_weight: f64,
    /// Accepted but inert.
    pub static_cling: f64,
}

impl Default for HairParams {
    fn default() -> Self {
        Self {
            mass: 2.0,
            drag: 0.65,
            tangential_drag: 0.096,
            damp: 0.25,
            stretch_damp: 1.0,
            stretch_resistance: 600.0,
            compression_resistance: 600.0,
            bend_resistance: 10.0,
            twist_resistance: 1.718,
            extra_bend_links: 1,
            start_curve_attract: 2.0,
            self_collide: true,
            friction: 0.51087,
            stickiness: 0.51087,
            dynamics_weight: 1.0,
            static_cling: 0.025,
        }
    }
}

impl HairParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("mass", self.mass),
            ("drag", self.drag),
            ("tangential_drag", self.tangential_drag),
            ("damp", self.damp),
            ("stretch_damp", self.stretch_damp),
            ("stretch_resistance", self.stretch_resistance),
            ("compression_resistance", self.compression_resistance),
            ("bend_resistance", self.bend_resistance),
            ("twist_resistance", self.twist_resistance),
            ("start_curve_attract", self.start_curve_attract),
            ("friction", self.friction),
            ("stickiness", self.stickiness),
            ("dynamics_weight", self.dynamics_weight),
            ("static_cling", self.static_cling),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.mass <= 0.0 {
            return Err(Error::invalid("mass must be > 0"));
        }
        for (name, v) in [
            ("damp", self.damp),
            ("friction", self.friction),
            ("stickiness", self.stickiness),
            ("dynamics_weight", self.dynamics_weight),
        ] {
            if v > 1.0 {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-iteration projection factor for a resistance value.
///
/// `f = 1 - (1 - clamp(r / 600, 0, 1))^(1 / iters)`, so the stiffness reached after
/// `iters` sweeps does not depend on the iteration count.
pub fn projection_factor(resistance: f64, iters: usize) -> f64 {
    let s = (resistance / RESISTANCE_SATURATION).clamp(0.0, 1.0);
    1.0 - (1.0 - s).powf(1.0 / iters.max(1) as f64)
}

/// Wind force per unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Wind {
    pub direction: Vec3,
    pub strength: f64,
    /// Hz; `None` means a constant wind.
    pub gust_frequency: Option<f64>,
}

impl Default for Wind {
    fn default() -> Self {
        Self {
            direction: Vec3::x(),
            strength: 0.0,
            gust_frequency: None,
        }
    }
}

impl Wind {
    /// Acceleration at time `t`: `strength * dir * (1 + sin(2 pi f t)) / 2` with gusts.
    pub fn acceleration(&self, t: f64) -> Vec3 {
        if self.strength == 0.0 {
            return Vec3::zeros();
        }
        let gust = match self.gust_frequency {
            Some(f) => (1.0 + (2.0 * std::f64::consts::PI * f * t).sin()) / 2.0,
            None => 1.0,
        };
        self.direction * (self.strength * gust)
    }
}

/// Integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// substep length, seconds
    pub dt: f64,
    /// substeps per `step` call
    pub substeps: usize,
    pub solver_iters: usize,
    /// m/s^2
    pub gravity: Vec3,
    pub wind: Wind,
    /// particle radius used for self-collision, meters
    pub self_collision_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 600.0,
            substeps: 10,
            solver_iters: 10,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            wind: Wind::default(),
            self_collision_radius: 0.002,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.substeps == 0 || self.solver_iters == 0 {
            return Err(Error::invalid("substeps and solver_iters must be >= 1"));
        }
        if !self.gravity.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("gravity must be finite"));
        }
        let w = &self.wind;
        if !w.strength.is_finite() || w.strength < 0.0 {
            return Err(Error::invalid("wind_strength must be finite and >= 0"));
        }
        if w.strength > 0.0 && (w.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "wind_direction must be unit length, norm is {}",
                w.direction.norm()
            )));
        }
        if let Some(f) = w.gust_frequency {
            if !f.is_finite() || f < 0.0 {
                return Err(Error::invalid("wind_gust_frequency must be finite and >= 0"));
            }
        }
        if !(self.self_collision_radius > 0.0) {
            return Err(Error::invalid("self_collision_radius must be > 0"));
        }
        Ok(())
    }

    /// Seconds advanced by one `step` call.
    pub fn step_duration(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}
