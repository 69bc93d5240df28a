//! Finite-difference verification of the analytic gradients. Each parameter
//! block is compared as a whole: relative error
//! ‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂ + ‖g_numeric‖₂, NORM_FLOOR).
//! The floor matters: central differences at eps carry ≈ulp(loss)/(2·eps) of
//! roundoff per entry (~1e-11 at eps 1e-5), so a plain ratio explodes on
//! blocks whose true gradient is nearly zero — reset gates on short
//! prefixes, attention matrices under a weight softmax. With the floor the
//! comparison turns absolute there, still orders of magnitude tighter than
//! any real defect. Runs without dropout so the loss is a deterministic
//! function of the parameters.

use crate::error::Result;
use crate::model::{backward, forward, DropoutMasks, NarmConfig, NarmParams};
use crate::numerics::{finite_difference_grad, l2_norm, RngState};

/// Denominator floor for the per-block relative error; below this the check
/// degrades into an absolute comparison at floor × tolerance.
pub const NORM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: &'static str,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    /// One row per block, tab-separated, plus a verdict line.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "block\tanalytic_norm\tnumeric_norm\trel_error\tstatus");
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{}",
                b.name,
                b.analytic_norm,
                b.numeric_norm,
                b.rel_error,
                if b.pass { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "max_rel_error\t{:.6e}\ttolerance\t{:.6e}\t{}",
            self.max_rel_error,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        );
        out
    }
}

/// Compare analytic and central-difference gradients for one (params,
/// prefix, label) case. `corrupt` deliberately perturbs the named analytic
/// block first — a self-test hook proving the harness can fail.
pub fn gradient_check(
    params: &NarmParams,
    config: &NarmConfig,
    prefix: &[u32],
    label: u32,
    eps: f64,
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let t = prefix.len().min(config.truncation).max(1);
    let masks = DropoutMasks::ones(config, t);
    let trace = forward(params, config, prefix, label, masks.clone())?;
    let mut analytic = backward(params, config, &trace)?;

    if let Some(block) = corrupt {
        if let Some(b) = analytic.block_mut(block) {
            b.scale(1.5);
            let s = b.as_mut_slice();
            s[0] += 0.01;
        }
    }

    let mut blocks = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (name, block) in params.blocks() {
        let theta: Vec<f64> = block.as_slice().to_vec();
        let numeric = finite_difference_grad(
            |candidate| {
                let mut p = params.clone();
                p.block_mut(name).unwrap().as_mut_slice().copy_from_slice(candidate);
                forward(&p, config, prefix, label, masks.clone())
                    .expect("forward in finite-difference probe")
                    .loss
            },
            &theta,
            eps,
        );
        let ga = analytic.block(name).unwrap().as_slice();
        let diff: Vec<f64> = ga.iter().zip(&numeric).map(|(&a, &n)| a - n).collect();
        let analytic_norm = l2_norm(ga);
        let numeric_norm = l2_norm(&numeric);
        let rel_error = l2_norm(&diff) / (analytic_norm + numeric_norm).max(NORM_FLOOR);
        max_rel = max_rel.max(rel_error);
        blocks.push(BlockCheck {
            name,
            analytic_norm,
            numeric_norm,
            rel_error,
            pass: rel_error <= tolerance,
        });
    }
    let pass = blocks.iter().all(|b| b.pass);
    Ok(GradCheckReport { blocks, max_rel_error: max_rel, tolerance, pass })
}

/// Run `gradient_check` on freshly initialized models over several seeds;
/// prefixes and labels are drawn from the seed too. Returns the reports in
/// seed order.
pub fn gradient_check_seeds(
    config: &NarmConfig,
    prefix_len: usize,
    seeds: impl IntoIterator<Item = u64>,
    eps: f64,
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for seed in seeds {
        let mut rng = RngState::new(seed);
        let params = NarmParams::init(config, &mut rng)?;
        let m = config.vocab_size as u64;
        let prefix: Vec<u32> =
            (0..prefix_len.max(1)).map(|_| 1 + rng.below(m) as u32).collect();
        let label = 1 + rng.below(m) as u32;
        reports.push(gradient_check(&params, config, &prefix, label, eps, tolerance, corrupt)?);
    }
    Ok(reports)
}
