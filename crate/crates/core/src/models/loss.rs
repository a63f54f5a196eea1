use crate::error::{Error, Result};
use crate::nncore::{bce_loss, Tape, Var};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("KD weight must be finite and ≥ 0, got {lambda}")));
    }
    Ok(())
}

/// `BCE(ŷ_V, y) + λ·BCE(ŷ_V, ŷ_F)` for one sample.
pub fn joint_loss(p_vm: f64, p_fm: f64, y: u8, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(bce_loss(p_vm, y as f64) + lambda * bce_loss(p_vm, p_fm))
}

/// Batch-mean joint loss on a tape; the KD term is omitted when `λ = 0`.
pub fn record_joint_loss(tape: &mut Tape, p_vm: Var, labels: &[f64], soft: &[f64], lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let task = tape.bce(p_vm, labels)?;
    if lambda == 0.0 {
        return Ok(task);
    }
    let kd = tape.bce(p_vm, soft)?;
    let kd = tape.scale(kd, lambda);
    tape.add(task, kd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, Matrix, ParamStore};

    #[test]
    fn hand_value() {
        let v = joint_loss(0.5, 0.8, 1, 1.0).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn degenerate_forms() {
        for &(p, y) in &[(0.3, 1u8), (0.9, 0u8)] {
            assert_eq!(joint_loss(p, 0.77, y, 0.0).unwrap(), bce_loss(p, y as f64));
            let hard = joint_loss(p, y as f64, y, 2.5).unwrap();
            assert!((hard - 3.5 * bce_loss(p, y as f64)).abs() < 1e-12);
        }
        assert!(matches!(joint_loss(0.5, 0.5, 1, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn tape_form_matches_and_checks() {
        let mut store = ParamStore::new();
        store.insert("z", Matrix::column(&[0.4, -1.2, 2.0])).unwrap();
        let (y, soft) = ([1.0, 0.0, 1.0], [0.7, 0.2, 0.95]);
        let f = |p: &ParamStore| {
            let mut t = Tape::new();
            let z = t.param(p, "z")?;
            let pv = t.sigmoid(z);
            let l = record_joint_loss(&mut t, pv, &y, &soft, 0.7)?;
            Ok((t.scalar(l), t.backward(l, p)?))
        };
        let (l, _) = f(&store).unwrap();
        let zs = [0.4f64, -1.2, 2.0];
        let manual: f64 = (0..3)
            .map(|i| joint_loss(crate::nncore::sigmoid(zs[i]), soft[i], y[i] as u8, 0.7).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((l - manual).abs() < 1e-12);
        assert!(grad_check(f, &store, usize::MAX, 1e-6, 0).unwrap() < 1e-6);
    }
}
