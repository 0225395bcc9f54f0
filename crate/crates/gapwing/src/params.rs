//! Vehicle and scenario parameters: JSON config loading with defaults,
//! validation, and the sweep-dependent wing geometry model.
//!
//! Wing sweep is commanded through the normalized actuator position
//! `x_w ∈ [0, 1]` which maps affinely onto the sweep angle range. Span and
//! area follow cosine laws in the sweep angle,
//! `b_w(Θ) = b_r + 2 l_o cos Θ` and `S_w(Θ) = S_r + 2 c_o l_o cos Θ`,
//! whose constants are solved from the configured span/aspect-ratio
//! endpoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("degenerate wing geometry: {0}")]
    DegenerateGeometry(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ParamsError {
    ParamsError::Validation { field: field.to_string(), message: message.into() }
}

/// Flat-plate airfoil model constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirfoilParams {
    /// zero-alpha lift coefficient
    pub cl0: f64,
    /// 2D lift slope, 1/rad
    pub cl_alpha: f64,
    /// parasitic drag coefficient (calibration constant)
    pub cd0: f64,
    /// stall angle, rad
    pub alpha_stall: f64,
    /// stall blending sharpness
    pub blend_m: f64,
    /// Reynolds lift-degradation exponent `a` (calibration constant)
    pub re_exponent: f64,
    /// Reynolds number above which no lift degradation applies
    pub re_nominal: f64,
    /// zero-lift pitching moment coefficient
    pub ctau0: f64,
}

impl Default for AirfoilParams {
    fn default() -> Self {
        Self {
            cl0: 0.0,
            cl_alpha: 2.0 * std::f64::consts::PI,
            cd0: 0.05,
            alpha_stall: 14f64.to_radians(),
            blend_m: 30.0,
            re_exponent: 2.0,
            re_nominal: 1.0e5,
            ctau0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirParams {
    /// air density, kg/m^3
    pub rho: f64,
    /// dynamic viscosity, Pa*s
    pub mu: f64,
    /// gravitational acceleration, m/s^2
    pub g: f64,
}

impl Default for AirParams {
    fn default() -> Self {
        Self { rho: 1.225, mu: 1.81e-5, g: 9.81 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorParams {
    /// first-order speed time constant, s
    pub time_constant: f64,
    /// steady-state speed polynomial: omega_ss(u) = omega_max*(c1*u + c2*u^2),
    /// coefficients [c1, c2] with c1 + c2 = 1
    pub poly_speed: [f64; 2],
    /// thrust coefficient k_T in T = k_T * omega^2, N*s^2
    pub thrust_coeff: f64,
    /// thrust at full throttle steady state, N
    pub max_thrust: f64,
    /// body-z offset of the thrust line from the CG, m (positive down)
    pub thrust_moment_arm_z: f64,
}

impl MotorParams {
    /// Motor speed at full throttle, rad/s.
    pub fn omega_max(&self) -> f64 {
        (self.max_thrust / self.thrust_coeff).sqrt()
    }

    /// Steady-state motor speed for a throttle command; the ESC saturates
    /// commands outside [0, 1].
    pub fn omega_ss(&self, u_m: f64) -> f64 {
        let u = u_m.clamp(0.0, 1.0);
        self.omega_max() * (self.poly_speed[0] * u + self.poly_speed[1] * u * u)
    }
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            time_constant: 0.05,
            poly_speed: [0.7, 0.3],
            thrust_coeff: 2.72e-7,
            max_thrust: 1.2,
            thrust_moment_arm_z: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElevatorParams {
    /// deflection at |x_e| = 1, rad
    pub max_deflection: f64,
    /// normalized deflection rate limit, 1/s
    pub rate_limit: f64,
    /// fraction of the flow deflection that the tail surface sees
    pub effectiveness: f64,
    /// horizontal tail area, m^2
    pub tail_area: f64,
    /// tail center aft of the CG, m
    pub tail_arm_x: f64,
    /// tail center below the CG in body z, m
    pub tail_arm_z: f64,
}

impl Default for ElevatorParams {
    fn default() -> Self {
        Self {
            max_deflection: 25f64.to_radians(),
            rate_limit: 8.0,
            effectiveness: 0.6,
            // sized so the elevator still holds pitch balance at the slow
            // (post-stall) end of the trim envelope, with small deflection
            // in cruise
            tail_area: 0.018,
            tail_arm_x: 0.35,
            tail_arm_z: 0.0,
        }
    }
}

/// Second-order sweep servo model; the default natural frequency is solved
/// so a full-range step reaches 95% travel in the 0.10 s travel time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepActuatorParams {
    /// natural frequency, rad/s
    pub natural_freq: f64,
    /// damping ratio
    pub damping_ratio: f64,
}

impl Default for SweepActuatorParams {
    fn default() -> Self {
        Self { natural_freq: 40.1434, damping_ratio: 0.9 }
    }
}

/// Constants of the span/area cosine laws, solved from the configured
/// endpoints by [`derive_geometry`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConstants {
    /// fixed root span b_r, m
    pub span_root: f64,
    /// outer panel length l_o, m
    pub panel_length: f64,
    /// outer panel chord c_o, m
    pub panel_chord: f64,
    /// fixed root area S_r, m^2
    pub area_root: f64,
    /// wing area washed by the propeller slipstream, m^2
    pub slipstream_area: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    /// total mass, kg
    pub mass: f64,
    /// pitch inertia, kg*m^2
    pub inertia_yy: f64,
    /// wing span with wings fully extended, m
    pub span_extended: f64,
    /// wing span at full sweep, m
    pub span_swept: f64,
    /// sweep angle at x_w = 0, deg
    pub sweep_min_deg: f64,
    /// sweep angle at x_w = 1, deg
    pub sweep_max_deg: f64,
    /// full-range sweep travel time, s
    pub sweep_travel_time: f64,
    /// aspect ratio with wings fully extended
    pub aspect_extended: f64,
    /// aspect ratio at full sweep
    pub aspect_swept: f64,
    /// CG location slope vs sweep angle, m/rad
    pub cg_x_slope: f64,
    /// CG aft of the root leading edge, m; default 0.25 * mean chord at
    /// mid-sweep (resolved after the geometry solve)
    pub cg_x_intercept: Option<f64>,
    /// CG below the root leading edge plane, m
    pub cg_z: f64,
    pub airfoil: AirfoilParams,
    pub air: AirParams,
    pub motor: MotorParams,
    pub elevator: ElevatorParams,
    pub sweep_actuator: SweepActuatorParams,
    /// propeller radius, m
    pub prop_radius: f64,
    /// reproduce the published slipstream-drag expression that mixes the
    /// freestream speed into the slipstream drag term (off by default; the
    /// default uses the slipstream speed consistently for lift and drag)
    pub literal_slipstream_drag: bool,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            mass: 0.130,
            inertia_yy: 0.003,
            span_extended: 0.67,
            span_swept: 0.45,
            sweep_min_deg: -5.0,
            sweep_max_deg: 75.0,
            sweep_travel_time: 0.10,
            aspect_extended: 4.8,
            aspect_swept: 3.0,
            cg_x_slope: 0.0,
            cg_x_intercept: None,
            cg_z: 0.0,
            airfoil: AirfoilParams::default(),
            air: AirParams::default(),
            motor: MotorParams::default(),
            elevator: ElevatorParams::default(),
            sweep_actuator: SweepActuatorParams::default(),
            prop_radius: 0.0762,
            literal_slipstream_drag: false,
        }
    }
}

/// Fully resolved drone parameters: validated config plus the solved
/// geometry constants and CG law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroneParams {
    pub mass: f64,
    pub inertia_yy: f64,
    pub span_extended: f64,
    pub span_swept: f64,
    pub sweep_min_deg: f64,
    pub sweep_max_deg: f64,
    pub sweep_travel_time: f64,
    pub aspect_extended: f64,
    pub aspect_swept: f64,
    pub cg_x_slope: f64,
    pub cg_x_intercept: f64,
    pub cg_z: f64,
    pub airfoil: AirfoilParams,
    pub air: AirParams,
    pub motor: MotorParams,
    pub elevator: ElevatorParams,
    pub sweep_actuator: SweepActuatorParams,
    pub prop_radius: f64,
    pub literal_slipstream_drag: bool,
    pub geometry: GeometryConstants,
}

impl Default for DroneParams {
    fn default() -> Self {
        ConfigFile::default().resolve().expect("default config is valid")
    }
}

/// Wing geometry evaluated at one sweep position.
#[derive(Debug, Clone, Copy)]
pub struct WingGeometry {
    /// sweep angle, rad
    pub sweep: f64,
    /// span, m
    pub span: f64,
    /// area, m^2
    pub area: f64,
    /// mean chord area/span, m
    pub mean_chord: f64,
    /// aspect ratio span^2/area
    pub aspect: f64,
    /// CG aft of the root leading edge, m
    pub x_cg: f64,
}

/// Solve the span/area cosine-law constants from the configured endpoints.
///
/// Exact at both sweep endpoints: `b(Θ_min) = span_ext`, `b(Θ_max) = span_swept`,
/// and likewise for the areas implied by the aspect ratios.
pub fn derive_geometry(
    span_ext: f64,
    span_swept: f64,
    aspect_ext: f64,
    aspect_swept: f64,
    sweep_min: f64,
    sweep_max: f64,
    prop_radius: f64,
) -> Result<GeometryConstants, ParamsError> {
    let (c_min, c_max) = (sweep_min.cos(), sweep_max.cos());
    let dcos = c_min - c_max;
    if dcos.abs() < 1e-9 {
        return Err(ParamsError::DegenerateGeometry(
            "sweep endpoints have equal cosines; span law unsolvable".into(),
        ));
    }
    let area_ext = span_ext * span_ext / aspect_ext;
    let area_swept = span_swept * span_swept / aspect_swept;

    let two_lo = (span_ext - span_swept) / dcos;
    let span_root = span_ext - two_lo * c_min;
    let two_colo = (area_ext - area_swept) / dcos;
    let area_root = area_ext - two_colo * c_min;
    let panel_length = two_lo / 2.0;
    if panel_length <= 0.0 {
        return Err(ParamsError::DegenerateGeometry("non-positive panel length".into()));
    }
    let panel_chord = two_colo / two_lo;
    if panel_chord <= 0.0 || span_root <= 0.0 || area_root <= 0.0 {
        return Err(ParamsError::DegenerateGeometry(format!(
            "solved constants not physical (b_r={span_root:.4}, c_o={panel_chord:.4}, S_r={area_root:.4})"
        )));
    }
    // slipstream strip: propeller diameter wide, one root chord deep
    let root_chord = area_root / span_root;
    let slipstream_area = 2.0 * prop_radius * root_chord;
    Ok(GeometryConstants {
        span_root,
        panel_length,
        panel_chord,
        area_root,
        slipstream_area,
    })
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<DroneParams, ParamsError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {CONFIG_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let positive = [
            ("mass", self.mass),
            ("inertia_yy", self.inertia_yy),
            ("span_extended", self.span_extended),
            ("span_swept", self.span_swept),
            ("sweep_travel_time", self.sweep_travel_time),
            ("aspect_extended", self.aspect_extended),
            ("aspect_swept", self.aspect_swept),
            ("air.rho", self.air.rho),
            ("air.mu", self.air.mu),
            ("air.g", self.air.g),
            ("motor.time_constant", self.motor.time_constant),
            ("motor.thrust_coeff", self.motor.thrust_coeff),
            ("motor.max_thrust", self.motor.max_thrust),
            ("elevator.rate_limit", self.elevator.rate_limit),
            ("elevator.tail_area", self.elevator.tail_area),
            ("elevator.tail_arm_x", self.elevator.tail_arm_x),
            ("sweep_actuator.natural_freq", self.sweep_actuator.natural_freq),
            ("sweep_actuator.damping_ratio", self.sweep_actuator.damping_ratio),
            ("prop_radius", self.prop_radius),
            ("airfoil.blend_m", self.airfoil.blend_m),
            ("airfoil.re_nominal", self.airfoil.re_nominal),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.sweep_min_deg >= self.sweep_max_deg {
            return Err(invalid("sweep_min_deg", "sweep range must be increasing"));
        }
        if !(self.airfoil.alpha_stall > 0.0
            && self.airfoil.alpha_stall < std::f64::consts::FRAC_PI_2)
        {
            return Err(invalid("airfoil.alpha_stall", "must lie in (0, pi/2)"));
        }
        if self.airfoil.re_exponent < 1.0 {
            return Err(invalid("airfoil.re_exponent", "must be >= 1"));
        }
        if !(self.elevator.effectiveness > 0.0 && self.elevator.effectiveness <= 1.0) {
            return Err(invalid("elevator.effectiveness", "must lie in (0, 1]"));
        }
        if !(self.elevator.max_deflection > 0.0
            && self.elevator.max_deflection < std::f64::consts::FRAC_PI_2)
        {
            return Err(invalid("elevator.max_deflection", "must lie in (0, pi/2)"));
        }
        let poly_sum = self.motor.poly_speed[0] + self.motor.poly_speed[1];
        if (poly_sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "motor.poly_speed",
                format!("coefficients must sum to 1 so full throttle gives omega_max, got {poly_sum}"),
            ));
        }

        let sweep_min = self.sweep_min_deg.to_radians();
        let sweep_max = self.sweep_max_deg.to_radians();
        let geometry = derive_geometry(
            self.span_extended,
            self.span_swept,
            self.aspect_extended,
            self.aspect_swept,
            sweep_min,
            sweep_max,
            self.prop_radius,
        )?;

        // area at full sweep is the smallest; the slipstream strip must fit
        let area_min = geometry.area_root + 2.0 * geometry.panel_chord * geometry.panel_length * sweep_max.cos();
        if geometry.slipstream_area > area_min {
            return Err(invalid(
                "prop_radius",
                "slipstream strip exceeds the swept wing area",
            ));
        }

        let cg_x_intercept = match self.cg_x_intercept {
            Some(v) => v,
            None => {
                let mid = 0.5 * (sweep_min + sweep_max);
                let span = geometry.span_root + 2.0 * geometry.panel_length * mid.cos();
                let area = geometry.area_root
                    + 2.0 * geometry.panel_chord * geometry.panel_length * mid.cos();
                0.25 * area / span
            }
        };

        let params = DroneParams {
            mass: self.mass,
            inertia_yy: self.inertia_yy,
            span_extended: self.span_extended,
            span_swept: self.span_swept,
            sweep_min_deg: self.sweep_min_deg,
            sweep_max_deg: self.sweep_max_deg,
            sweep_travel_time: self.sweep_travel_time,
            aspect_extended: self.aspect_extended,
            aspect_swept: self.aspect_swept,
            cg_x_slope: self.cg_x_slope,
            cg_x_intercept,
            cg_z: self.cg_z,
            airfoil: self.airfoil.clone(),
            air: self.air.clone(),
            motor: self.motor.clone(),
            elevator: self.elevator.clone(),
            sweep_actuator: self.sweep_actuator.clone(),
            prop_radius: self.prop_radius,
            literal_slipstream_drag: self.literal_slipstream_drag,
            geometry,
        };

        let aspect_lo = params.geometry_at(1.0).aspect;
        let aspect_hi = params.geometry_at(0.0).aspect;
        if aspect_lo < 2.5 || aspect_hi > 5.5 {
            return Err(invalid(
                "aspect_extended",
                format!("aspect ratio range [{aspect_lo:.2}, {aspect_hi:.2}] outside [2.5, 5.5]"),
            ));
        }
        Ok(params)
    }
}

/// Parse a JSON config string; an empty document means all defaults.
pub fn parse_config(text: &str) -> Result<DroneParams, ParamsError> {
    let trimmed = text.trim();
    let file: ConfigFile =
        if trimmed.is_empty() { ConfigFile::default() } else { serde_json::from_str(trimmed)? };
    file.resolve()
}

/// Load a JSON config file; missing fields take documented defaults.
pub fn load_config(path: &std::path::Path) -> Result<DroneParams, ParamsError> {
    parse_config(&std::fs::read_to_string(path)?)
}

impl DroneParams {
    /// Sweep angle for a normalized actuator position, rad.
    pub fn sweep_angle(&self, x_w: f64) -> f64 {
        let lo = self.sweep_min_deg.to_radians();
        let hi = self.sweep_max_deg.to_radians();
        lo + x_w.clamp(0.0, 1.0) * (hi - lo)
    }

    /// Wing geometry at a normalized sweep position. Positions outside
    /// [0, 1] are clamped to the actuator hard stops.
    pub fn geometry_at(&self, x_w: f64) -> WingGeometry {
        let sweep = self.sweep_angle(x_w);
        let c = sweep.cos();
        let g = &self.geometry;
        let span = g.span_root + 2.0 * g.panel_length * c;
        let area = g.area_root + 2.0 * g.panel_chord * g.panel_length * c;
        WingGeometry {
            sweep,
            span,
            area,
            mean_chord: area / span,
            aspect: span * span / area,
            x_cg: self.cg_x_intercept + self.cg_x_slope * sweep,
        }
    }

    /// Weight force magnitude, N.
    pub fn weight(&self) -> f64 {
        self.mass * self.air.g
    }
}

/// Reference-trajectory objective selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// case 1: track the launch/gap altitude tightly everywhere
    AltitudeHold,
    /// case 2: hold the approach speed
    SpeedHold,
    /// case 3: minimize the time spent inside the gap threshold
    MinGapTime,
}

impl Objective {
    pub fn case_number(self) -> u8 {
        match self {
            Objective::AltitudeHold => 1,
            Objective::SpeedHold => 2,
            Objective::MinGapTime => 3,
        }
    }

    pub fn from_case_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Objective::AltitudeHold),
            2 => Some(Objective::SpeedHold),
            3 => Some(Objective::MinGapTime),
            _ => None,
        }
    }
}

/// One gap-crossing task: gap location, depth of the narrow section, launch
/// speed and the reference objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapScenario {
    /// gap x position, m
    pub gap_x: f64,
    /// gap depth in x over which the wings must stay swept, m
    pub gap_threshold: f64,
    /// gap center altitude, m (launch altitude is 0)
    pub gap_center_z: f64,
    /// launch/approach speed, m/s
    pub initial_speed: f64,
    pub objective: Objective,
    /// free distance after the threshold to recover level flight, m
    pub recovery_length: f64,
    /// steady segment length closing the reference, m
    pub steady_length: f64,
}

impl GapScenario {
    pub fn new(gap_x: f64, gap_threshold: f64, initial_speed: f64, objective: Objective) -> Self {
        Self {
            gap_x,
            gap_threshold,
            gap_center_z: 0.0,
            initial_speed,
            objective,
            recovery_length: 3.0,
            steady_length: 0.5,
        }
    }

    /// Where the anticipation phase hands over to the gap passage.
    pub fn anticipation_end_x(&self) -> f64 {
        self.gap_x - self.gap_threshold / 2.0
    }

    pub fn threshold_entry_x(&self) -> f64 {
        self.gap_x - self.gap_threshold / 2.0
    }

    pub fn threshold_exit_x(&self) -> f64 {
        self.gap_x + self.gap_threshold / 2.0
    }

    pub fn recovery_end_x(&self) -> f64 {
        self.threshold_exit_x() + self.recovery_length
    }

    pub fn total_length(&self) -> f64 {
        self.recovery_end_x() + self.steady_length
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.gap_threshold > 0.0) {
            return Err(invalid("gap_threshold", "must be positive"));
        }
        if self.anticipation_end_x() <= 0.0 {
            return Err(invalid("gap_x", "threshold entry must lie ahead of the launch point"));
        }
        if !(self.initial_speed > 0.0) {
            return Err(invalid("initial_speed", "must be positive"));
        }
        if !(self.recovery_length > 0.0) {
            return Err(invalid("recovery_length", "must be positive"));
        }
        if !(self.steady_length > 0.0) {
            return Err(invalid("steady_length", "must be positive"));
        }
        Ok(())
    }
}
