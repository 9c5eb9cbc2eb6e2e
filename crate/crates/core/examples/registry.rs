//! Registry keys and the value of each scalar functional at a small
//! empirical measure.

use condflow::measures::EmpiricalMeasure;

fn main() -> condflow::Result<()> {
    let m = EmpiricalMeasure::from_scalars(&[-1.0, 0.5, 2.0])?;
    for name in condflow::registry::names() {
        match condflow::registry::functional(name) {
            Ok(u) => println!("{name:<22} u(m) = {:.6}", u.eval(&m)?),
            Err(_) => println!("{name}"),
        }
    }
    Ok(())
}
