//! Predefined continuous components.
//!
//! Each update is a pure single step at a fixed `dt` using explicit Euler.
//! The arithmetic is written as a fixed sequence of binary operations; the C
//! emitter reproduces exactly the same sequence, so both produce identical
//! doubles.

use crate::model::BlockKind;

/// First-order lag `T·y' + y = K·u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pt1State {
    pub y: f64,
    pub gain: f64,
    /// Seconds, > 0.
    pub time_constant: f64,
}

impl Pt1State {
    pub fn new(gain: f64, time_constant: f64) -> Self {
        Self { y: 0.0, gain, time_constant }
    }
}

/// One Euler step: `y + (dt/T)·(K·u − y)`.
pub fn pt1_step(s: &Pt1State, u: f64, dt: f64) -> Pt1State {
    let rate = dt / s.time_constant;
    let target = s.gain * u;
    let delta = target - s.y;
    let inc = rate * delta;
    Pt1State { y: s.y + inc, ..*s }
}

/// PI controller with output limits and conditional integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    /// Integral of the error, error·seconds.
    pub integral: f64,
    pub kp: f64,
    /// Per second.
    pub ki: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PiState {
    pub fn new(kp: f64, ki: f64, lo: f64, hi: f64) -> Self {
        Self { integral: 0.0, kp, ki, lo, hi }
    }
}

/// One controller step for error `e` (setpoint − measured).
///
/// The integral is frozen for this step when the output computed with the
/// current integral is already beyond a limit and `e` pushes it further out.
pub fn pi_step(s: &PiState, e: f64, dt: f64) -> (PiState, f64) {
    let p = s.kp * e;
    let i_term = s.ki * s.integral;
    let pre = p + i_term;
    let push = s.ki * e;
    let saturated = (pre > s.hi && push > 0.0) || (pre < s.lo && push < 0.0);
    let integral = if saturated {
        s.integral
    } else {
        let de = e * dt;
        s.integral + de
    };
    let i_term = s.ki * integral;
    let raw = p + i_term;
    let out = limiter(raw, s.lo, s.hi);
    (PiState { integral, ..*s }, out)
}

/// Clamp `u` into `[lo, hi]`.
pub fn limiter(u: f64, lo: f64, hi: f64) -> f64 {
    if u < lo {
        lo
    } else if u > hi {
        hi
    } else {
        u
    }
}

/// Runtime state of whichever block an actor carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockState {
    Pt1(Pt1State),
    Pi { state: PiState, out: f64 },
    Limiter { lo: f64, hi: f64, out: f64 },
}

impl BlockState {
    /// Zero-initialized state for a block declaration.
    pub fn new(kind: BlockKind) -> Self {
        match kind {
            BlockKind::Pt1 { gain, time_constant } => BlockState::Pt1(Pt1State::new(gain, time_constant)),
            BlockKind::Pi { kp, ki, lo, hi } => BlockState::Pi { state: PiState::new(kp, ki, lo, hi), out: 0.0 },
            BlockKind::Limiter { lo, hi } => BlockState::Limiter { lo, hi, out: 0.0 },
        }
    }

    pub fn out(&self) -> f64 {
        match self {
            BlockState::Pt1(s) => s.y,
            BlockState::Pi { out, .. } | BlockState::Limiter { out, .. } => *out,
        }
    }

    /// Advance by one tick with block input `u`.
    pub fn step(&self, u: f64, dt: f64) -> BlockState {
        match self {
            BlockState::Pt1(s) => BlockState::Pt1(pt1_step(s, u, dt)),
            BlockState::Pi { state, .. } => {
                let (state, out) = pi_step(state, u, dt);
                BlockState::Pi { state, out }
            }
            BlockState::Limiter { lo, hi, .. } => {
                BlockState::Limiter { lo: *lo, hi: *hi, out: limiter(u, *lo, *hi) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pt1_single_step() {
        let s = pt1_step(&Pt1State::new(1.0, 1.0), 1.0, 0.1);
        assert_eq!(s.y, 0.1);
    }

    #[test]
    fn pt1_fixed_point() {
        for u in [-3.5, 0.0, 2.0, 1e6] {
            let s = Pt1State { y: 2.0 * u, gain: 2.0, time_constant: 0.7 };
            assert_eq!(pt1_step(&s, u, 0.01).y, s.y);
        }
    }

    #[test]
    fn pi_pure_integral() {
        let s = PiState { integral: 2.0, kp: 123.0, ki: 0.5, lo: -10.0, hi: 10.0 };
        let (n, out) = pi_step(&s, 0.0, 0.01);
        assert_eq!(out, 1.0);
        assert_eq!(n.integral, 2.0);
    }

    #[test]
    fn pi_proportional_only() {
        let s = PiState::new(2.0, 0.0, -10.0, 10.0);
        assert_eq!(pi_step(&s, 1.5, 0.01).1, 3.0);
    }

    #[test]
    fn pi_integral_frozen_under_saturation() {
        let mut s = PiState::new(1.0, 1.0, -1.0, 1.0);
        let mut after_first = None;
        for _ in 0..50 {
            let (n, out) = pi_step(&s, 100.0, 0.01);
            assert_eq!(out, 1.0);
            s = n;
            after_first.get_or_insert(s.integral);
            assert_eq!(s.integral, after_first.unwrap());
        }
    }

    #[test]
    fn pi_integrates_until_saturation() {
        // small Kp: the integral grows, then stops once the output is pinned
        let mut s = PiState::new(0.001, 1.0, -1.0, 1.0);
        let mut outs = Vec::new();
        for _ in 0..200 {
            let (n, out) = pi_step(&s, 100.0, 0.001);
            s = n;
            outs.push(out);
        }
        assert!(outs[0] < 1.0);
        assert_eq!(*outs.last().unwrap(), 1.0);
        assert!(s.integral < 1.1, "integral wound up to {}", s.integral);
    }

    #[test]
    fn limiter_cases() {
        assert_eq!(limiter(5.0, 0.0, 10.0), 5.0);
        assert_eq!(limiter(-3.0, 0.0, 10.0), 0.0);
    }

    proptest! {
        #[test]
        fn limiter_upper_clamp_and_idempotence(lo in -1e6f64..1e6, width in 1e-3f64..1e6, u in -1e7f64..1e7) {
            let hi = lo + width;
            prop_assert_eq!(limiter(hi + 1.0, lo, hi), hi);
            let once = limiter(u, lo, hi);
            prop_assert_eq!(limiter(once, lo, hi), once);
        }

        #[test]
        fn pi_output_stays_within_limits(
            integral in -1e4f64..1e4, kp in -50f64..50.0, ki in -50f64..50.0,
            lo in -100f64..0.0, width in 0.01f64..200.0, e in -1e3f64..1e3, dt in 1e-4f64..0.5,
        ) {
            let s = PiState { integral, kp, ki, lo, hi: lo + width };
            let (_, out) = pi_step(&s, e, dt);
            prop_assert!(out >= s.lo && out <= s.hi);
        }

        #[test]
        fn steps_are_bit_deterministic(y in -1e3f64..1e3, u in -1e3f64..1e3, t in 0.01f64..100.0) {
            let s = Pt1State { y, gain: 1.7, time_constant: t };
            prop_assert_eq!(pt1_step(&s, u, 0.001).y.to_bits(), pt1_step(&s, u, 0.001).y.to_bits());
        }
    }
}
