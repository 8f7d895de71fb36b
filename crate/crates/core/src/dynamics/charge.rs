/// Charge bookkeeping: each titratable residue is paired with a buffer
/// whose charge moves opposite to it, keeping the system neutral.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeLedger {
    /// (protonated, deprotonated) residue charges per site.
    pub residue: Vec<(f64, f64)>,
}

pub const BUFFER_CHARGE_PROT: f64 = -0.834;

impl ChargeLedger {
    pub fn new(residue: Vec<(f64, f64)>) -> Self {
        Self { residue }
    }

    pub fn residue_charge(&self, site: usize, lambda_p: f64) -> f64 {
        let (q0, q1) = self.residue[site];
        q0 + (q1 - q0) * lambda_p
    }

    /// Buffer charge: −0.834 e at λ = 0 up to +0.166 e at λ = 1.
    pub fn buffer_charge(lambda_p: f64) -> f64 {
        BUFFER_CHARGE_PROT + lambda_p
    }

    pub fn total(&self, lambda_p: &[f64]) -> f64 {
        lambda_p.iter().enumerate().map(|(i, &l)| self.residue_charge(i, l) + Self::buffer_charge(l)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn buffer_endpoints() {
        assert_eq!(ChargeLedger::buffer_charge(0.0), -0.834);
        assert!((ChargeLedger::buffer_charge(1.0) - 0.166).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn total_is_constant_along_any_path(path in proptest::collection::vec(proptest::collection::vec(-0.15f64..1.15, 3), 1..50)) {
            let ledger = ChargeLedger::new(vec![(0.0, -1.0), (1.0, 0.0), (0.0, -1.0)]);
            let t0 = ledger.total(&[0.0, 0.0, 0.0]);
            for frame in &path {
                prop_assert!((ledger.total(frame) - t0).abs() < 1e-12);
            }
        }
    }
}
