use super::{EmbeddedTrajectory, Memory, TargetMode, TransitionModel};

/// Replays the true deltas of one expert trajectory. Memory is the step
/// index; past the end of the trajectory it predicts no change.
#[derive(Debug, Clone)]
pub struct OracleDeltaModel {
    deltas: Vec<Vec<f64>>,
    width: usize,
}

impl OracleDeltaModel {
    pub fn new(expert: &EmbeddedTrajectory) -> Self {
        let deltas = (0..expert.steps()).map(|t| expert.target(t, TargetMode::Delta)).collect();
        Self { deltas, width: expert.width() }
    }
}

impl TransitionModel for OracleDeltaModel {
    fn mode(&self) -> TargetMode {
        TargetMode::Delta
    }

    fn width(&self) -> usize {
        self.width
    }

    fn initial_memory(&self) -> Memory {
        Memory::Step(0)
    }

    fn step(&self, memory: &Memory, _state: &[f64], _goal: &[f64]) -> (Vec<f64>, Memory) {
        let t = match memory {
            Memory::Step(t) => *t,
            _ => 0,
        };
        let out = self.deltas.get(t).cloned().unwrap_or_else(|| vec![0.0; self.width]);
        (out, Memory::Step(t + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::predict;

    #[test]
    fn reconstructs_the_next_expert_embedding() {
        let e = EmbeddedTrajectory {
            states: vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 3.0]],
            goal: vec![0.0; 3],
        };
        let m = OracleDeltaModel::new(&e);
        let mut mem = m.initial_memory();
        for t in 0..2 {
            let (v, next) = predict(&m, &mem, &e.states[t], &e.goal).unwrap();
            assert_eq!(v, e.states[t + 1]);
            mem = next;
        }
        let (v, _) = predict(&m, &mem, &e.states[2], &e.goal).unwrap();
        assert_eq!(v, e.states[2]);
    }
}
