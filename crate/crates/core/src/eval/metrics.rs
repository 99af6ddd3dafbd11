use crate::error::{Error, Result};
use crate::tracker::FAIL_DISTANCE;

/// Link positions over time: `frames[t][link] = [x, z]`.
pub type LinkTrajectory = Vec<Vec<[f64; 2]>>;

fn check_shapes(a: &LinkTrajectory, b: &LinkTrajectory) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("trajectories have {} and {} frames", a.len(), b.len())));
    }
    for (t, (fa, fb)) in a.iter().zip(b).enumerate() {
        if fa.len() != fb.len() {
            return Err(Error::shape(format!("frame {t} has {} and {} links", fa.len(), fb.len())));
        }
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean per-link position error in millimetres.
pub fn mpjpe(executed: &LinkTrajectory, reference: &LinkTrajectory) -> Result<f64> {
    check_shapes(executed, reference)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fa, fb) in executed.iter().zip(reference) {
        for (&a, &b) in fa.iter().zip(fb) {
            sum += dist(a, b);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { 1000.0 * sum / n as f64 })
}

/// Mean per-link error of frame-differenced velocities, in millimetres per frame.
pub fn mpjve(executed: &LinkTrajectory, reference: &LinkTrajectory) -> Result<f64> {
    check_shapes(executed, reference)?;
    if executed.len() < 2 {
        return Err(Error::domain("velocity error needs at least two frames"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 1..executed.len() {
        for l in 0..executed[t].len() {
            let va = [executed[t][l][0] - executed[t - 1][l][0], executed[t][l][1] - executed[t - 1][l][1]];
            let vb = [reference[t][l][0] - reference[t - 1][l][0], reference[t][l][1] - reference[t - 1][l][1]];
            sum += dist(va, vb);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { 1000.0 * sum / n as f64 })
}

/// Per-step tracking errors of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepError {
    pub mean_link: f64,
    pub height: f64,
}

/// Whether an episode counts as tracked under `threshold`.
pub fn success_at(errors: &[StepError], terminated_early: bool, threshold: f64) -> bool {
    !terminated_early
        && errors
            .iter()
            .all(|e| e.mean_link <= threshold && e.height.abs() <= threshold)
}

pub fn success(errors: &[StepError], terminated_early: bool) -> bool {
    success_at(errors, terminated_early, FAIL_DISTANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(t: usize, l: usize, off: f64) -> LinkTrajectory {
        (0..t)
            .map(|i| (0..l).map(|k| [i as f64 * 0.01 + k as f64 + off, 0.5 - k as f64 * 0.1]).collect())
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let a = traj(5, 3, 0.0);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        assert_eq!(mpjve(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let a = traj(5, 3, 0.0);
        let b = traj(5, 3, 0.01);
        assert!((mpjpe(&a, &b).unwrap() - 10.0).abs() < 1e-9);
        assert!(mpjve(&a, &b).unwrap().abs() < 1e-9);
    }

    #[test]
    fn shape_and_length_errors() {
        let a = traj(5, 3, 0.0);
        assert!(mpjpe(&a, &traj(4, 3, 0.0)).is_err());
        assert!(mpjpe(&a, &traj(5, 2, 0.0)).is_err());
        assert!(mpjve(&traj(1, 3, 0.0), &traj(1, 3, 0.0)).is_err());
    }

    #[test]
    fn success_rule() {
        let ok = [StepError { mean_link: 0.1, height: 0.05 }];
        let bad = [StepError { mean_link: 0.1, height: 0.21 }];
        assert!(success(&ok, false));
        assert!(!success(&bad, false));
        assert!(!success(&ok, true));
    }
}
