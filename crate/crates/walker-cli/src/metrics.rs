//! Run summaries: periodicity, energy tracking, speed, and the phase
//! portrait with the nominal pendulum orbit for overlay.

use crate::csvio::StepRow;

/// Analysis windows: the first `energy` steps are treated as transient for
/// energy statistics, the first `delta` steps for periodicity deltas.
#[derive(Debug, Clone, Copy)]
pub struct Transients {
    pub energy: usize,
    pub delta: usize,
}

impl Default for Transients {
    fn default() -> Self {
        Self {
            energy: 5,
            delta: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub steps: usize,
    pub requested: Option<usize>,
    pub outcome: Option<String>,
    /// Largest step-to-step pre-impact `(x, L)` delta after the transient.
    pub max_delta: Option<f64>,
    /// Mean relative post-impact energy error after the transient.
    pub mean_energy_err: Option<f64>,
    /// Distance walked over total stepping time, m/s.
    pub mean_speed: Option<f64>,
    pub transients: Transients,
    pub e_star: f64,
}

pub fn report(rows: &[StepRow], requested: Option<usize>, outcome: Option<String>,
              e_star: f64, transients: Transients) -> Report {
    let max_delta = rows
        .windows(2)
        .filter(|w| w[1].step > transients.delta)
        .map(|w| {
            let dx = w[1].x_minus - w[0].x_minus;
            let dl = w[1].l_minus - w[0].l_minus;
            dx.hypot(dl)
        })
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let post: Vec<f64> = rows
        .iter()
        .filter(|r| r.step >= transients.energy)
        .map(|r| (r.e_plus - e_star).abs() / e_star)
        .collect();
    let mean_energy_err = if post.is_empty() {
        None
    } else {
        Some(post.iter().sum::<f64>() / post.len() as f64)
    };
    let dist: f64 = rows.iter().map(|r| r.stone_l).sum();
    let time: f64 = rows.iter().map(|r| r.t_s).sum();
    let mean_speed = (time > 0.0).then(|| dist / time);
    Report {
        steps: rows.len(),
        requested,
        outcome,
        max_delta,
        mean_energy_err,
        mean_speed,
        transients,
        e_star,
    }
}

pub fn render(r: &Report) -> String {
    let mut out = String::new();
    let requested = r
        .requested
        .map(|n| format!(" of {n}"))
        .unwrap_or_default();
    out.push_str(&format!("steps completed:      {}{}\n", r.steps, requested));
    if let Some(o) = &r.outcome {
        out.push_str(&format!("outcome:              {o}\n"));
    }
    if let Some(v) = r.mean_speed {
        out.push_str(&format!("mean forward speed:   {v:.3} m/s\n"));
    }
    if let Some(v) = r.max_delta {
        out.push_str(&format!(
            "max step delta:       {v:.3e}  (pre-impact (x, L), after step {})\n",
            r.transients.delta
        ));
    }
    if let Some(v) = r.mean_energy_err {
        out.push_str(&format!(
            "mean |E+ - E*|/E*:    {v:.3}  (E* = {}, after step {})\n",
            r.e_star, r.transients.energy
        ));
    }
    if let (Some(req), false) = (r.requested, r.steps == r.requested.unwrap_or(r.steps)) {
        out.push_str(&format!(
            "run ended early at step {} of {req}\n",
            r.steps
        ));
    }
    out
}

/// Forward-walking branch of the constant-energy pendulum orbit
/// `E = (L/z)^2 - (g/z) x^2` at height `z_tilde`, sampled over `[x_lo, x_hi]`.
pub fn nominal_orbit(
    e_star: f64,
    z_tilde: f64,
    g: f64,
    x_lo: f64,
    x_hi: f64,
    n: usize,
) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let x = x_lo + (x_hi - x_lo) * i as f64 / (n - 1) as f64;
            let l2 = e_star + (g / z_tilde) * x * x;
            (x, z_tilde * l2.max(0.0).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use walker_core::lip::{orbital_energy, LipParams};
    use walker_core::ReducedState;

    #[test]
    fn nominal_orbit_sits_on_the_energy_level_set() {
        let (e_star, z, g) = (0.6, 0.7, 9.81);
        let p = LipParams::new(z, g).unwrap();
        for (x, l) in nominal_orbit(e_star, z, g, -0.3, 0.3, 25) {
            let e = orbital_energy(ReducedState::new(x, l), &p);
            assert_abs_diff_eq!(e, e_star, epsilon = 1e-12);
        }
    }

    #[test]
    fn report_windows_respect_the_transients() {
        let rows: Vec<StepRow> = (0..10)
            .map(|i| StepRow {
                step: i,
                stone_l: 0.7,
                stone_h: 0.0,
                t_s: 0.7,
                u_des: -0.5,
                dz_minus: -0.5,
                e_plus: if i < 5 { 10.0 } else { 0.55 },
                speed: 1.0,
                x_minus: 0.42,
                l_minus: if i == 3 { 9.0 } else { 0.8 },
            })
            .collect();
        let r = report(&rows, Some(10), None, 0.5, Transients { energy: 5, delta: 4 });
        // The step-3 spike is inside the delta transient; post-transient
        // rows are identical.
        assert!(r.max_delta.unwrap() < 1e-12);
        assert_abs_diff_eq!(r.mean_energy_err.unwrap(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean_speed.unwrap(), 1.0, epsilon = 1e-12);
    }
}
