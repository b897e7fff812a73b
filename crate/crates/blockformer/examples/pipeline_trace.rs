// Wire a small pipeline of relational stages by hand, run it in memory and
// again with every intermediate persisted, and compare the traces.

use blockformer::pipeline::{run_pipeline, ExecMode, MemoryStore, Pipeline, StageOp, TensorSet};
use blockformer::tensor::{BlockedMatrix, MapFn};
use blockformer::Result;

fn main() -> Result<()> {
    // q and k for a toy attention-score computation: scale, transpose,
    // matmul, then the two softmax phases.
    let q = BlockedMatrix::partition(&(0..20).map(|i| i as f32 * 0.1).collect::<Vec<_>>(), 4, 5, 2)?;
    let k = BlockedMatrix::partition(&(0..20).map(|i| (19 - i) as f32 * 0.1).collect::<Vec<_>>(), 4, 5, 2)?;

    let mut p = Pipeline::new();
    p.push("k_transpose", vec!["k".into()], "kt", StageOp::Transpose);
    p.push("scores.matmul", vec!["q".into(), "kt".into()], "scores", StageOp::MatMul);
    p.push(
        "scores.scale",
        vec!["scores".into()],
        "scaled",
        StageOp::Map(MapFn::Scale(1.0 / (5.0f32).sqrt())),
    );
    p.push("softmax.exp_scan", vec!["scaled".into()], "exp", StageOp::ExpScan);
    p.push("softmax.aggregate_divide", vec!["exp".into()], "probs", StageOp::AggregateDivide);

    let inputs = || {
        vec![
            TensorSet::new("q", q.clone()),
            TensorSet::new("k", k.clone()),
        ]
    };

    let (probs, traces) = run_pipeline(&p, inputs(), &mut ExecMode::Memory)?;
    println!("in-memory run, output set '{}':", probs.name);
    for t in &traces {
        println!(
            "  {:<26} {:?} -> {:<8} {:>9.1?} {:>3} blocks",
            t.stage_name, t.input_sets, t.output_set, t.wall_time, t.blocks_processed
        );
    }

    // Same pipeline, but every stage output goes through a store and is read
    // back before the next stage uses it.
    let mut store = MemoryStore::new();
    let (probs2, _) = run_pipeline(&p, inputs(), &mut ExecMode::MaterializeEachStage(&mut store))?;
    let identical = probs
        .value
        .reassemble()?
        .iter()
        .zip(probs2.value.reassemble()?)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("\nmaterialized run produced bit-identical output: {identical}");
    println!("sets persisted: {:?}", store.set_names().collect::<Vec<_>>());

    let row0: Vec<f32> = probs.value.reassemble()?[..4].to_vec();
    println!("probs row 0: {row0:?} (sums to {})", row0.iter().sum::<f32>());
    Ok(())
}
