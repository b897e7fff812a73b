// The two row-wise composite operators: two-phase softmax (exp-scan, then
// aggregate-divide) and layer normalization, with their defining invariants.

use blockformer::pipeline::{layer_norm, softmax_aggregate_divide, softmax_exp_scan, softmax_two_phase};
use blockformer::tensor::{elementwise_map, BlockedMatrix, MapFn};
use blockformer::Result;

fn main() -> Result<()> {
    let data: Vec<f32> = (0..24).map(|i| ((i * 11 % 17) as f32) - 8.0).collect();
    let x = BlockedMatrix::partition(&data, 4, 6, 3)?;

    // Phase one subtracts each row's max before exponentiating, so the
    // largest exponent is exactly 0 and overflow cannot happen.
    let e = softmax_exp_scan(&x);
    let probs = softmax_aggregate_divide(&e);
    for (r, row) in probs.reassemble()?.chunks(6).enumerate() {
        let sum: f32 = row.iter().sum();
        println!("softmax row {r}: sum = {sum}");
    }

    // Shifting every entry of a row by the same constant does not change its
    // softmax.
    let shifted = elementwise_map(&x, MapFn::AddConst(100.0))?;
    let p2 = softmax_two_phase(&shifted);
    let max_diff = probs
        .reassemble()?
        .iter()
        .zip(p2.reassemble()?)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("shift by +100: max softmax change = {max_diff:e}");

    // Extreme inputs stay finite thanks to the max subtraction.
    let hot = BlockedMatrix::partition(&[1e30, 0.0, -1e30, 1e30], 1, 4, 2)?;
    let hp = softmax_two_phase(&hot);
    println!("softmax([1e30, 0, -1e30, 1e30]) = {:?}", hp.reassemble()?);

    // Layer norm: each row ends up with mean 0 and unit variance (population
    // variance, shrunk slightly by eps).
    let n = layer_norm(&x, 1e-5);
    for (r, row) in n.reassemble()?.chunks(6).enumerate() {
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / 6.0;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 6.0;
        println!("layer_norm row {r}: mean = {mean:+.2e}, var = {var:.6}");
    }

    // A constant row has zero variance; the convention is to emit zeros.
    let flat = BlockedMatrix::partition(&[5.0; 4], 1, 4, 2)?;
    println!("layer_norm(constant row) = {:?}", layer_norm(&flat, 1e-5).reassemble()?);
    Ok(())
}
