//! Sampling `P` of `n` clients and scaling their weights by `n/P` leaves
//! the server aggregate unbiased: averaging over every possible subset
//! recovers the full-participation aggregate.

use fedbilevel::oracle::expected_aggregate_brute;
use fedbilevel::sampling::sample_clients;
use nalgebra::DVector;

fn main() -> fedbilevel::Result<()> {
    let p = [0.1, 0.2, 0.3, 0.15, 0.25];
    let updates: Vec<DVector<f64>> = (0..p.len())
        .map(|i| DVector::from_vec(vec![i as f64, 1.0 - i as f64 * 0.5]))
        .collect();
    let full: DVector<f64> = updates.iter().zip(&p).map(|(u, pi)| u * *pi).sum();
    println!("full participation: {:?}", full.as_slice());

    for participants in 1..=p.len() {
        let expected = expected_aggregate_brute(&updates, &p, participants)?;
        println!(
            "P = {participants}: subset average {:?}, gap {:.1e}",
            expected.as_slice(),
            (&expected - &full).amax()
        );
    }

    let n = p.len();
    let rounds = 20_000;
    let mut mean = DVector::zeros(2);
    for round in 0..rounds {
        for i in sample_clients(n, 2, round, 1)? {
            mean += &updates[i] * (n as f64 / 2.0 * p[i] / rounds as f64);
        }
    }
    println!("P = 2, Monte Carlo over {rounds} rounds: {:?}", mean.as_slice());
    Ok(())
}
