//! Draws the three biomarker laws and prints their quantiles, then the
//! truncated-Poisson priors on knot and term counts.

use enrichment::dist::{
    quantiles, sample_truncated_normal, sample_truncated_t, stream, TruncatedNormalSpec, TruncatedPoissonSpec,
    TruncatedTSpec,
};

fn main() -> enrichment::Result<()> {
    let mut rng = stream(1);
    let n = 10_000;
    let hb: Vec<f64> = (0..n).map(|_| sample_truncated_t(&TruncatedTSpec::HYPOXIC_BURDEN, &mut rng)).collect::<Result<_, _>>()?;
    let dhr: Vec<f64> =
        (0..n).map(|_| sample_truncated_t(&TruncatedTSpec::HEART_RATE_RESPONSE, &mut rng)).collect::<Result<_, _>>()?;
    let vcb: Vec<f64> = (0..n)
        .map(|_| sample_truncated_normal(&TruncatedNormalSpec::VASOCONSTRICTIVE_BURDEN, &mut rng))
        .collect::<Result<_, _>>()?;

    println!("HB quintile edges:   {:?}", round(&quantiles(&hb, &[0.2, 0.4, 0.6, 0.8])));
    println!("dHR quartile edges:  {:?}", round(&quantiles(&dhr, &[0.25, 0.5, 0.75])));
    println!("VCB quartile edges:  {:?}", round(&quantiles(&vcb, &[0.25, 0.5, 0.75])));

    for (rate, max) in [(3.0, 5), (3.0, 4), (5.0, 14)] {
        let tp = TruncatedPoissonSpec::new(rate, max)?;
        let pmf: Vec<f64> = (0..=max).map(|k| tp.pmf(k)).collect::<Result<_, _>>()?;
        println!("TP(rate {rate}, max {max}): {:?}", round(&pmf));
    }
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
