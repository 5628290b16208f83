//! Evaluates each loss on hand-picked inputs: negative learning on an
//! OR-label, the memory regularizer under both signs, the unimodal hinge and
//! the memory bank's EMA.
//!
//! `cargo run --example losses_tour`

use ordinal_noise::data::or_label;
use ordinal_noise::losses::{mu_total_loss, nl_loss, one_hot, ce_loss, reg_loss, unimodal_loss, MemoryBank, RegSign};

fn main() -> ordinal_noise::Result<()> {
    let p = [0.05, 0.15, 0.5, 0.2, 0.1];
    let y_or = or_label(&[2, 3], 5);
    println!("OR-label of grades {{3,4}}: {y_or:?}");
    println!("nl loss: {:.4}", nl_loss(&p, &y_or)?.value);

    let bumpy = [0.3, 0.1, 0.4, 0.1, 0.1];
    println!("unimodal hinge, smooth p: {:.4}", unimodal_loss(&p, 2)?.value);
    println!("unimodal hinge, bimodal p: {:.4}", unimodal_loss(&bumpy, 2)?.value);

    let mut bank = MemoryBank::new(5, 0.9)?;
    let pseudo = [0.0, 0.1, 0.7, 0.2, 0.0];
    for t in 1..=3 {
        bank.update(0, &pseudo)?;
        println!("memory after {t} updates: {:?}", bank.get(0).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    let m = bank.get(0);
    let prose = reg_loss(&p, &m, RegSign::Prose)?;
    let literal = reg_loss(&p, &m, RegSign::Literal)?;
    println!("reg loss: prose {:.4}, literal {:.4}", prose.value, literal.value);

    let ce = ce_loss(&p, &one_hot(2, 5))?;
    let uni = unimodal_loss(&p, 2)?;
    let total = mu_total_loss(&ce, &prose, &uni, 0.8, 3.0)?;
    println!("total = ce {:.4} + 0.8 reg {:.4} + 3 uni {:.4} = {:.4}", total.ce, total.reg, total.uni, total.total);
    Ok(())
}
