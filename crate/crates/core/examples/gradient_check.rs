//! Finite-difference verification of the hand-written backward passes
//! through the bidirectional encoder, every aggregation and the MLP.
//!
//!     cargo run --release --example gradient_check

use seatrack::baselines::{mlp_gradient_check, FlatShape};
use seatrack::seq2seq::{encdec_gradient_check, EncDecConfig, GRADCHECK_CASES};

fn main() -> seatrack::Result<()> {
    for (agg, labeled, teacher_forcing, seed) in GRADCHECK_CASES {
        let c = EncDecConfig {
            q: 3,
            ell: 4,
            h: 3,
            d: 2,
            patterns: 2,
            labeled,
            aggregation: agg,
            teacher_forcing,
        };
        let g = encdec_gradient_check(&c, seed, 1e-6, false)?;
        let (err, at) = g.max_relative_error();
        println!(
            "EncDec-{agg} labeled={labeled:<5} tf={teacher_forcing:<5} {} params, worst relative error {err:.2e} ({at})",
            g.params.size()
        );
    }
    let shape = FlatShape {
        ell: 4,
        h: 3,
        d: 2,
        patterns: 2,
        labeled: true,
    };
    let g = mlp_gradient_check(shape, 8, 0, 1e-6)?;
    let (err, at) = g.max_relative_error();
    println!("MLP width 8: {} params, worst relative error {err:.2e} ({at})", g.params.size());
    Ok(())
}
