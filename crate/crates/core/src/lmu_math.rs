//! Shifted Legendre basis, the memory state-space matrices, their Euler
//! discretization, and the delay-reconstruction identity.
//!
//! Everything here is `f64` and pure; the network converts the discretized
//! matrices to its own precision once at construction time.

use crate::error::{ensure_arg, Result};

/// Continuous (A, B) and Euler-discretized (Ā, B̄) memory matrices for a
/// window of `theta` timesteps sampled every `dt`.
///
/// Storage is row-major. Entries of A and B come from a closed form in
/// integers: `a[i][j] = (2i+1)·(−1 if i<j else (−1)^(i−j+1))` and
/// `b[i] = (2i+1)·(−1)^i`; Ā = (dt/θ)·A + I and B̄ = (dt/θ)·B.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub d: usize,
    pub theta: f64,
    pub dt: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

impl StateSpace {
    pub fn new(d: usize, theta: f64, dt: f64) -> Result<Self> {
        ensure_arg!(d >= 1, "state-space order d must be >= 1, got {d}");
        ensure_arg!(theta > 0.0, "window theta must be positive, got {theta}");
        ensure_arg!(dt > 0.0 && dt <= theta, "timestep dt must satisfy 0 < dt <= theta, got dt={dt} theta={theta}");

        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for i in 0..d {
            let scale = (2 * i + 1) as f64;
            for j in 0..d {
                let sign = if i < j {
                    -1.0
                } else if (i - j + 1) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                a[i * d + j] = scale * sign;
            }
            b[i] = if i % 2 == 0 { scale } else { -scale };
        }

        let s = dt / theta;
        let mut a_bar = vec![0.0; d * d];
        let mut b_bar = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let identity = if i == j { 1.0 } else { 0.0 };
                a_bar[i * d + j] = s * a[i * d + j] + identity;
            }
            b_bar[i] = s * b[i];
        }

        Ok(StateSpace { d, theta, dt, a, b, a_bar, b_bar })
    }

    /// Runs the discrete memory recurrence m_t = Ā·m_{t−1} + B̄·u_t for
    /// t = 1..=T and returns the T visited states.
    pub fn simulate_memory(&self, u: &[f64], m0: &[f64]) -> Result<Vec<Vec<f64>>> {
        ensure_arg!(!u.is_empty(), "input sequence must have at least one step");
        ensure_arg!(
            m0.len() == self.d,
            "initial memory has dimension {}, state space expects {}",
            m0.len(),
            self.d
        );
        let d = self.d;
        let mut m = m0.to_vec();
        let mut out = Vec::with_capacity(u.len());
        let mut next = vec![0.0; d];
        for &u_t in u {
            for (i, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, mj) in self.a_bar[i * d..(i + 1) * d].iter().zip(&m) {
                    acc += a * mj;
                }
                *slot = acc + self.b_bar[i] * u_t;
            }
            m.copy_from_slice(&next);
            out.push(m.clone());
        }
        Ok(out)
    }
}

/// Largest closed-form degree. Above this the alternating binomial sum loses
/// too many digits in f64 (coefficients reach ~1e21 by degree 30), so the
/// stable three-term recurrence takes over.
const CLOSED_FORM_MAX_DEGREE: usize = 12;

/// Shifted Legendre polynomial P̃_i(x) on [0, 1].
///
/// Satisfies P̃_i(1) = 1 and P̃_i(0) = (−1)^i exactly. Arguments outside
/// [0, 1] are evaluated as-is (polynomial extrapolation).
pub fn shifted_legendre(degree: usize, x: f64) -> f64 {
    if degree <= CLOSED_FORM_MAX_DEGREE {
        shifted_legendre_closed_form(degree, x)
    } else {
        shifted_legendre_recurrence(degree, x)
    }
}

/// P̃_i(x) = (−1)^i Σ_j C(i,j)·C(i+j,j)·(−x)^j with exact integer binomials.
fn shifted_legendre_closed_form(degree: usize, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut x_pow = 1.0;
    for j in 0..=degree {
        let coeff = (binomial(degree, j) * binomial(degree + j, j)) as f64;
        let negative = (degree + j) % 2 == 1;
        let term = coeff * x_pow;
        sum += if negative { -term } else { term };
        x_pow *= x;
    }
    sum
}

/// Three-term recurrence on the shifted argument y = 2x − 1:
/// (n+1)·P_{n+1}(y) = (2n+1)·y·P_n(y) − n·P_{n−1}(y).
fn shifted_legendre_recurrence(degree: usize, x: f64) -> f64 {
    let y = 2.0 * x - 1.0;
    let mut prev = 1.0;
    let mut curr = y;
    if degree == 0 {
        return prev;
    }
    for n in 1..degree {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * y * curr - nf * prev) / (nf + 1.0);
        prev = curr;
        curr = next;
    }
    curr
}

fn binomial(n: usize, k: usize) -> i128 {
    let k = k.min(n - k.min(n));
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// Reconstructs the input delayed by `theta_prime` from a memory state:
/// Σ_i P̃_i(θ'/θ)·m_i.
pub fn delay_reconstruct(m: &[f64], theta_prime: f64, theta: f64) -> Result<f64> {
    ensure_arg!(theta > 0.0, "window theta must be positive, got {theta}");
    ensure_arg!(
        (0.0..=theta).contains(&theta_prime),
        "delay theta_prime must lie in [0, {theta}], got {theta_prime}"
    );
    let r = theta_prime / theta;
    let mut acc = 0.0;
    for (i, mi) in m.iter().enumerate() {
        acc += shifted_legendre(i, r) * mi;
    }
    Ok(acc)
}

/// Root-mean-square error of `estimate` against `reference`, normalized by
/// the reference's standard deviation.
pub fn nrmse(estimate: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(estimate.len(), reference.len(), "nrmse length mismatch");
    let n = reference.len() as f64;
    let mean = reference.iter().sum::<f64>() / n;
    let var = reference.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let mse = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r) * (e - r))
        .sum::<f64>()
        / n;
    (mse / var).sqrt()
}

/// Sum of sinusoids with periods `period/1, period/2, ..., period/harmonics`:
/// the band-limited probe used to exercise the delay property.
pub fn harmonic_signal(period: f64, phases: &[f64], len: usize) -> Vec<f64> {
    let mut u = vec![0.0; len];
    for (h, phase) in phases.iter().enumerate() {
        let omega = 2.0 * std::f64::consts::PI * (h + 1) as f64 / period;
        for (t, v) in u.iter_mut().enumerate() {
            *v += (omega * t as f64 + phase).sin();
        }
    }
    u
}

/// Feeds a band-limited signal through the memory and measures how well the
/// full-window delay u(t−θ) is reconstructed once one window of transient
/// has passed.
///
/// `theta_steps` is the window length in samples; `phases.len()` harmonics
/// of the window make up the probe signal. The continuous dynamics are
/// integrated by forward Euler with `substeps` per sample — the grid must be
/// fine enough that integrator error does not mask the basis-approximation
/// error this measures (32 is comfortably convergent for d ≤ 16; the
/// network's own one-step-per-sample recurrence is a far coarser regime).
pub fn delay_property_nrmse(
    d: usize,
    theta_steps: usize,
    total_steps: usize,
    phases: &[f64],
    substeps: usize,
) -> Result<f64> {
    ensure_arg!(substeps >= 1, "substeps must be >= 1");
    ensure_arg!(total_steps > 2 * theta_steps, "signal too short for one window of transient");
    let theta = theta_steps as f64;
    let k = substeps;
    let ss = StateSpace::new(d, theta, 1.0 / k as f64)?;

    let fine_len = total_steps * k;
    let mut u = vec![0.0; fine_len];
    for (h, phase) in phases.iter().enumerate() {
        let omega = 2.0 * std::f64::consts::PI * (h + 1) as f64 / theta;
        for (n, v) in u.iter_mut().enumerate() {
            *v += (omega * n as f64 / k as f64 + phase).sin();
        }
    }
    let states = ss.simulate_memory(&u, &vec![0.0; d])?;

    let mut estimate = Vec::new();
    let mut reference = Vec::new();
    // states[n] holds the memory after consuming the sample at time n/k.
    for t in 2 * theta_steps..total_steps {
        estimate.push(delay_reconstruct(&states[t * k], theta, theta)?);
        reference.push(u[(t - theta_steps) * k]);
    }
    Ok(nrmse(&estimate, &reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: unshifted Legendre recurrence evaluated at 2x−1,
    /// written against the textbook recurrence rather than the closed form.
    fn legendre_oracle(degree: usize, x: f64) -> f64 {
        let y = 2.0 * x - 1.0;
        match degree {
            0 => 1.0,
            1 => y,
            _ => {
                let mut p = vec![0.0; degree + 1];
                p[0] = 1.0;
                p[1] = y;
                for n in 1..degree {
                    let nf = n as f64;
                    p[n + 1] = ((2.0 * nf + 1.0) * y * p[n] - nf * p[n - 1]) / (nf + 1.0);
                }
                p[degree]
            }
        }
    }

    #[test]
    fn degree_zero_is_constant_one() {
        assert_eq!(shifted_legendre(0, 0.37), 1.0);
    }

    #[test]
    fn degree_one_root_at_half() {
        // Closed form P̃_1(x) = 2x − 1.
        assert_eq!(shifted_legendre(1, 0.5), 0.0);
    }

    #[test]
    fn degree_two_at_one() {
        // Closed form P̃_2(x) = 6x² − 6x + 1, checked against the recurrence oracle.
        assert_eq!(shifted_legendre(2, 1.0), 1.0);
        let x = 0.3;
        assert!((shifted_legendre(2, x) - legendre_oracle(2, x)).abs() < 1e-12);
        assert!((shifted_legendre(2, x) - (6.0 * x * x - 6.0 * x + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn endpoint_identities_hold_for_all_degrees() {
        for i in 0..=40 {
            assert_eq!(shifted_legendre(i, 1.0), 1.0, "P̃_{i}(1)");
            let want = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(shifted_legendre(i, 0.0), want, "P̃_{i}(0)");
        }
    }

    #[test]
    fn closed_form_matches_recurrence_oracle_across_degrees() {
        for i in 0..=20 {
            for step in 0..=50 {
                let x = step as f64 / 50.0;
                let got = shifted_legendre(i, x);
                let want = legendre_oracle(i, x);
                assert!(
                    (got - want).abs() < 1e-7,
                    "P̃_{i}({x}): got {got}, oracle {want}"
                );
            }
        }
    }

    #[test]
    fn orthogonality_by_trapezoid() {
        // ∫₀¹ P̃_i P̃_j dx = δ_ij / (2i+1), 1024-point trapezoid.
        let n = 1024usize;
        for i in 0..=8 {
            for j in 0..=8 {
                let mut acc = 0.0;
                for k in 0..=n {
                    let x = k as f64 / n as f64;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    acc += w * shifted_legendre(i, x) * shifted_legendre(j, x);
                }
                acc /= n as f64;
                let want = if i == j { 1.0 / (2 * i + 1) as f64 } else { 0.0 };
                assert!(
                    (acc - want).abs() < 1e-3,
                    "orthogonality ({i},{j}): {acc} vs {want}"
                );
            }
        }
    }

    #[test]
    fn state_space_first_orders() {
        let ss = StateSpace::new(1, 1.0, 1.0).unwrap();
        assert_eq!(ss.a, vec![-1.0]);
        assert_eq!(ss.b, vec![1.0]);

        let ss = StateSpace::new(2, 1.0, 1.0).unwrap();
        assert_eq!(ss.a, vec![-1.0, -1.0, 3.0, -3.0]);
        assert_eq!(ss.b, vec![1.0, -3.0]);
    }

    #[test]
    fn discretization_d2_theta10() {
        let ss = StateSpace::new(2, 10.0, 1.0).unwrap();
        let want_a = [0.9, -0.1, 0.3, 0.7];
        for (got, want) in ss.a_bar.iter().zip(want_a.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
        let want_b = [0.1, -0.3];
        for (got, want) in ss.b_bar.iter().zip(want_b.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(StateSpace::new(0, 1.0, 1.0).is_err());
        assert!(StateSpace::new(2, 0.0, 1.0).is_err());
        assert!(StateSpace::new(2, 1.0, 0.0).is_err());
        assert!(StateSpace::new(2, 1.0, 2.0).is_err());
        assert!(delay_reconstruct(&[0.0], -0.1, 1.0).is_err());
        assert!(delay_reconstruct(&[0.0], 1.1, 1.0).is_err());
        let ss = StateSpace::new(2, 10.0, 1.0).unwrap();
        assert!(ss.simulate_memory(&[1.0], &[0.0]).is_err());
        assert!(ss.simulate_memory(&[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let ss = StateSpace::new(3, 10.0, 1.0).unwrap();
        let states = ss.simulate_memory(&[0.0; 20], &[0.0; 3]).unwrap();
        assert_eq!(states.len(), 20);
        assert!(states.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn scalar_memory_is_a_geometric_series() {
        let ss = StateSpace::new(1, 10.0, 1.0).unwrap();
        let t = 200;
        let states = ss.simulate_memory(&vec![1.0; t], &[0.0]).unwrap();
        // m_t = 0.1·Σ_{k<t} 0.9^k, limit 1.
        let mut expect = 0.0;
        let mut pow = 1.0;
        for k in 0..t {
            if k > 0 {
                pow *= 0.9;
            }
            expect += 0.1 * pow;
        }
        assert!((states[t - 1][0] - expect).abs() < 1e-12);
        assert!((states[t - 1][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bounded_trajectory_and_subunit_spectral_radius() {
        let d = 6;
        let ss = StateSpace::new(d, 40.0, 1.0).unwrap();
        // Power iteration estimates the spectral radius of Ā.
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let mut w = vec![0.0; d];
            for (i, wi) in w.iter_mut().enumerate() {
                for (j, vj) in v.iter().enumerate() {
                    *wi += ss.a_bar[i * d + j] * vj;
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm;
            for x in &mut w {
                *x /= norm;
            }
            v = w;
        }
        assert!(lambda < 1.0, "spectral radius {lambda} not < 1");

        let u = harmonic_signal(40.0, &[0.1, 1.3, 2.9], 400);
        let states = ss.simulate_memory(&u, &vec![0.0; d]).unwrap();
        let max = states
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |a, &b| a.max(b.abs()));
        assert!(max.is_finite() && max < 1e3, "trajectory max {max}");
    }

    #[test]
    fn zero_memory_reconstructs_zero() {
        assert_eq!(delay_reconstruct(&[0.0; 8], 0.3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_input_reconstructs_constant_at_any_delay() {
        let d = 6;
        let c = 0.7;
        let ss = StateSpace::new(d, 20.0, 1.0).unwrap();
        let states = ss.simulate_memory(&vec![c; 600], &vec![0.0; d]).unwrap();
        let m = states.last().unwrap();
        for k in 0..=10 {
            let tp = 20.0 * k as f64 / 10.0;
            let got = delay_reconstruct(m, tp, 20.0).unwrap();
            assert!((got - c).abs() < 1e-2, "delay {tp}: {got} vs {c}");
        }
    }

    #[test]
    fn one_hz_sinusoid_delay_reconstruction() {
        // 1 Hz at θ = 1 s sampled 40 steps/window: one harmonic.
        let err = delay_property_nrmse(12, 40, 400, &[0.3], 32).unwrap();
        assert!(err < 0.15, "NRMSE {err}");
    }

    #[test]
    fn reconstruction_error_shrinks_with_memory_order() {
        let phases = [0.3, 1.1, 2.2];
        let errs: Vec<f64> = [2usize, 4, 8, 12]
            .iter()
            .map(|&d| delay_property_nrmse(d, 40, 400, &phases, 32).unwrap())
            .collect();
        for pair in errs.windows(2) {
            assert!(pair[1] <= pair[0], "NRMSE not monotone: {errs:?}");
        }
        assert!(errs[3] < 0.15, "d=12 NRMSE {}", errs[3]);
    }

    #[test]
    fn a_bar_minus_identity_scales_linearly_in_dt_over_theta() {
        let d = 5;
        let one = StateSpace::new(d, 40.0, 1.0).unwrap();
        let two = StateSpace::new(d, 40.0, 2.0).unwrap();
        for i in 0..d {
            for j in 0..d {
                let identity = if i == j { 1.0 } else { 0.0 };
                let lhs = two.a_bar[i * d + j] - identity;
                let rhs = 2.0 * (one.a_bar[i * d + j] - identity);
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn state_space_entries_match_integer_oracle(d in 1usize..=64) {
            let ss = StateSpace::new(d, 1.0, 1.0).unwrap();
            for i in 0..d {
                for j in 0..d {
                    // Parity-based restatement of the closed form.
                    let magnitude = (2 * i as i64 + 1) as f64;
                    let value = if i < j || (i - j) % 2 == 0 { -magnitude } else { magnitude };
                    prop_assert_eq!(ss.a[i * d + j], value);
                }
                let b = if i % 2 == 0 { (2 * i as i64 + 1) as f64 } else { -((2 * i as i64 + 1) as f64) };
                prop_assert_eq!(ss.b[i], b);
            }
        }

        #[test]
        fn reconstruction_is_linear_in_memory(scale in -4.0f64..4.0, tp in 0.0f64..1.0) {
            let m: Vec<f64> = (0..6).map(|i| 0.1 * (i as f64 + 1.0)).collect();
            let scaled: Vec<f64> = m.iter().map(|v| v * scale).collect();
            let base = delay_reconstruct(&m, tp, 1.0).unwrap();
            let got = delay_reconstruct(&scaled, tp, 1.0).unwrap();
            prop_assert!((got - scale * base).abs() < 1e-9);
        }
    }
}
