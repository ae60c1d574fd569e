//! Bookkeeping for the acceptance suite: one verdict per criterion.

use std::fmt;
use std::time::Duration;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    /// Measured quantities and the bounds they were held to.
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{:>2} {:<4} {:<34} {} [{:.1}s]", self.id, status, self.name, self.detail, self.elapsed.as_secs_f64())
    }
}

/// Prints every verdict and a closing count; true when all passed.
pub fn summarize(verdicts: &[Verdict]) -> bool {
    for v in verdicts {
        println!("{v}");
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {} failed", verdicts.len() - failed, failed);
    failed == 0
}
