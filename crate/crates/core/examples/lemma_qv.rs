//! Weighted quadratic-variation sums of Brownian motion, `H ≡ 1` and
//! `H(t) = t`, as the grid is refined by factors of four.

use condflow::quadvar::{brownian_lemma_study, BrownianWeight};

fn main() -> condflow::Result<()> {
    for weight in [BrownianWeight::One, BrownianWeight::Time] {
        let study = brownian_lemma_study(weight, 1.0, &[256, 1024, 4096], 200, 17)?;
        println!("H = {weight:?}");
        for r in &study.rows {
            let ratio = r.ratio.map(|q| format!("{q:.2}")).unwrap_or_default();
            println!("  n = {:>5}  E|err| = {:.3e} ± {:.1e}  ratio {ratio}", r.n, r.mean_abs_error, r.stderr);
        }
        println!("  trend ok: {:?}", study.trend_ok);
    }
    Ok(())
}
