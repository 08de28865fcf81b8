//! The single-dataset example: effect curves over HB at two heart-rate
//! responses, the estimated threshold and chain diagnostics.

use enrichment::illustrate::{illustrate, IllustrationConfig};

fn main() -> enrichment::Result<()> {
    let out = illustrate(&IllustrationConfig::default())?;
    for t in &out.thresholds {
        println!(
            "dHR {:>4}: mean crosses zero at {:?}, significant from {:?}",
            t.dhr, t.mean_crossing, t.significance_threshold
        );
    }
    println!("threshold interval {:?} (true {:.1})", out.threshold_interval, out.true_threshold);
    println!("largest gap between levels {:.3}", out.max_level_gap);
    for b in out.bands.iter().filter(|b| b.hb % 40.0 == 0.0) {
        println!("dHR {:>4} HB {:>5}: {:>6.2} [{:>6.2}, {:>6.2}]", b.dhr, b.hb, b.mean, b.lower, b.upper);
    }
    Ok(())
}
