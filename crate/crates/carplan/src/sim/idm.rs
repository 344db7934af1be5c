//! Intelligent Driver Model car-following acceleration.

/// Standard literature defaults; only the model family is prescribed.
#[derive(Debug, Clone, Copy)]
pub struct IdmParams {
    /// Desired free-flow speed v₀ (m/s).
    pub v0: f64,
    /// Jam distance s₀ (m).
    pub s0: f64,
    /// Desired time headway T (s).
    pub t_headway: f64,
    /// Maximum comfortable acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable braking deceleration b (m/s², positive).
    pub b_comfort: f64,
    /// Emergency braking limit (m/s², positive); accelerations clamp here.
    pub b_max: f64,
    /// Free-flow exponent δ.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 15.0,
            s0: 2.0,
            t_headway: 1.5,
            a_max: 1.5,
            b_comfort: 2.0,
            b_max: 4.0,
            delta: 4.0,
        }
    }
}

/// IDM acceleration for speed `v`, optionally following a leader at bumper
/// gap `gap` moving at `v_lead`. Non-positive gap returns the emergency
/// braking value.
pub fn idm_accel(v: f64, lead: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = match lead {
        None => 0.0,
        Some((v_lead, gap)) => {
            if gap <= 0.0 {
                return -p.b_max;
            }
            let dv = v - v_lead;
            let s_star = p.s0 + v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comfort).sqrt());
            (s_star.max(0.0) / gap).powi(2)
        }
    };
    (p.a_max * (free - interaction)).clamp(-p.b_max, p.a_max)
}

/// Initial bumper gap that keeps IDM following collision-free even if the
/// leader is much slower: jam distance, headway, and a braking-distance
/// term with a safety factor.
pub fn safe_spawn_gap(v_follow: f64, v_lead: f64, p: &IdmParams) -> f64 {
    let braking = (v_follow * v_follow - v_lead * v_lead).max(0.0) / (2.0 * p.b_max);
    p.s0 + v_follow * p.t_headway + 1.3 * braking
}
