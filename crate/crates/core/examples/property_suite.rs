//! Randomized checks of the Parisi recursion.

use parisi::invariants::{run_suite, SuiteOptions};

fn main() -> parisi::Result<()> {
    let opts = SuiteOptions {
        trials: 30,
        ..SuiteOptions::default()
    };
    for o in run_suite(&opts)? {
        println!(
            "{:<18} {:>3}/{:<3} worst {:.2e} (tolerance {:.0e})",
            o.name,
            o.trials - o.failures,
            o.trials,
            o.worst,
            o.tolerance
        );
    }
    Ok(())
}
