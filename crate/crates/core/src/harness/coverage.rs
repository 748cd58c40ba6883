use std::fmt;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Mean and population standard deviation of per-seed success rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coverage {
    Rate { mean: f64, std: f64 },
    /// No instances to divide by.
    NoInstances,
}

impl Coverage {
    pub fn mean(&self) -> Option<f64> {
        match self {
            Coverage::Rate { mean, .. } => Some(*mean),
            Coverage::NoInstances => None,
        }
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Rate { mean, std } => write!(f, "{mean:.2} ± {std:.2}"),
            Coverage::NoInstances => f.write_str("n/a"),
        }
    }
}

/// `outcomes[i]` holds the per-instance successes under `seeds[i]`.
pub fn compute_coverage(outcomes: &[Vec<bool>], seeds: &[u64]) -> Result<Coverage, HarnessError> {
    if outcomes.len() != seeds.len() {
        return Err(HarnessError::SeedMismatch { expected: seeds.len(), found: outcomes.len() });
    }
    let Some(n) = outcomes.first().map(Vec::len) else {
        return Ok(Coverage::NoInstances);
    };
    if let Some(bad) = outcomes.iter().find(|o| o.len() != n) {
        return Err(HarnessError::Config(format!(
            "per-seed outcome lists differ in length ({n} vs {})",
            bad.len()
        )));
    }
    if n == 0 {
        return Ok(Coverage::NoInstances);
    }
    let rates: Vec<f64> = outcomes.iter().map(|o| o.iter().filter(|&&s| s).count() as f64 / n as f64).collect();
    let k = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / k;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k;
    Ok(Coverage::Rate { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_successes() {
        let c = compute_coverage(&[vec![true; 4], vec![true; 4], vec![true; 4]], &[0, 1, 2]).unwrap();
        assert_eq!(c.to_string(), "1.00 ± 0.00");
    }

    #[test]
    fn population_std_over_seeds() {
        let c = compute_coverage(&[vec![true, true], vec![false, false], vec![true, false]], &[0, 1, 2]).unwrap();
        // rates 1, 0, 0.5: mean 0.5, variance (0.25 + 0.25 + 0) / 3
        let Coverage::Rate { mean, std } = c else { panic!() };
        assert_eq!(mean, 0.5);
        assert!((std - (0.5f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(c.to_string(), "0.50 ± 0.41");
    }

    #[test]
    fn empty_split_is_marked() {
        let c = compute_coverage(&[vec![], vec![]], &[0, 1]).unwrap();
        assert_eq!(c, Coverage::NoInstances);
        assert_eq!(c.to_string(), "n/a");
        assert_eq!(compute_coverage(&[], &[]).unwrap(), Coverage::NoInstances);
    }

    #[test]
    fn seed_count_must_match() {
        assert!(matches!(
            compute_coverage(&[vec![true]], &[0, 1]),
            Err(HarnessError::SeedMismatch { expected: 2, found: 1 })
        ));
        assert!(compute_coverage(&[vec![true], vec![true, false]], &[0, 1]).is_err());
    }
}
