//! Finite-difference and λ-quadrature checks of the first and second
//! linear functional derivatives for every registered functional.

use condflow::measures::{
    fd_check_dm, fd_check_dm2, integral_identity_dm, integral_identity_dm2, EmpiricalMeasure, MeasurePair,
};

fn main() -> condflow::Result<()> {
    let pair = MeasurePair::new(
        EmpiricalMeasure::from_scalars(&[-1.0, 0.25, 1.5])?,
        EmpiricalMeasure::from_scalars(&[-0.5, 0.0, 0.8, 2.0])?,
    )?;
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    for u in condflow::registry::functionals() {
        let d1 = fd_check_dm(&u, &pair, &eps)?;
        let d2 = fd_check_dm2(&u, &pair, &eps, None)?;
        let orders: Vec<String> =
            d1.rows.iter().filter_map(|r| r.observed_order).map(|p| format!("{p:.2}")).collect();
        println!("{:<22} δ orders [{}]  δ² ok {}", u.name(), orders.join(", "), d2.order_ok);
        let i1 = integral_identity_dm(&u, &pair)?;
        let i2 = integral_identity_dm2(&u, &pair, &[0.3])?;
        println!("{:<22} identity errors {:.1e} {:.1e}", "", i1.error, i2.error);
    }
    Ok(())
}
