use super::{ModelError, TargetMode};

/// Embedded expert trajectory `[φ(s_0), …, φ(s_T)]` with its goal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTrajectory {
    pub states: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
}

impl EmbeddedTrajectory {
    pub fn width(&self) -> usize {
        self.goal.len()
    }

    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn target(&self, t: usize, mode: TargetMode) -> Vec<f64> {
        match mode {
            TargetMode::State => self.states[t + 1].clone(),
            TargetMode::Delta => self.states[t + 1].iter().zip(&self.states[t]).map(|(a, b)| a - b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionExample {
    /// `[φ(s_t) ∥ φ(g)]`
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// One example per consecutive state pair of every trajectory.
pub fn build_pairs(trajectories: &[EmbeddedTrajectory], mode: TargetMode) -> Result<Vec<TransitionExample>, ModelError> {
    let Some(width) = trajectories.first().map(EmbeddedTrajectory::width) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for traj in trajectories {
        for v in traj.states.iter().chain(std::iter::once(&traj.goal)) {
            if v.len() != width {
                return Err(ModelError::DimensionMismatch { expected: width, found: v.len() });
            }
        }
        for t in 0..traj.steps() {
            let mut input = Vec::with_capacity(2 * width);
            input.extend_from_slice(&traj.states[t]);
            input.extend_from_slice(&traj.goal);
            out.push(TransitionExample { input, target: traj.target(t, mode) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_example_per_transition() {
        let t = EmbeddedTrajectory {
            states: vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            goal: vec![0.0, 2.0],
        };
        let pairs = build_pairs(std::slice::from_ref(&t), TargetMode::Delta).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].input, vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(pairs[0].target, vec![0.0, 1.0]);
        assert_eq!(pairs[1].target, vec![0.0, 0.0]);
        let state = build_pairs(&[t], TargetMode::State).unwrap();
        assert_eq!(state[0].target, vec![1.0, 1.0]);
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let a = EmbeddedTrajectory { states: vec![vec![0.0; 2]; 2], goal: vec![0.0; 2] };
        let b = EmbeddedTrajectory { states: vec![vec![0.0; 3]; 2], goal: vec![0.0; 3] };
        assert!(matches!(
            build_pairs(&[a, b], TargetMode::State),
            Err(ModelError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }
}
