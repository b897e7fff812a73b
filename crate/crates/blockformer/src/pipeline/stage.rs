//! Named tensor sets, relational stages, and the traced pipeline executor.
//!
//! A pipeline is a straight-line or fan-in DAG of stages over declared set
//! names. In materialize mode every stage output goes through the intermediate
//! writer and is read back before the next stage consumes it, matching a
//! materialize-then-read dataflow; in memory mode the writer is skipped and
//! materialization is a traced no-op.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::pipeline::rowwise;
use crate::tensor::{self, BlockedMatrix, MapFn};

/// A named matrix flowing through a pipeline.
#[derive(Debug, Clone)]
pub struct TensorSet {
    pub name: String,
    pub value: BlockedMatrix,
    pub materialized: bool,
}

impl TensorSet {
    pub fn new(name: impl Into<String>, value: BlockedMatrix) -> Self {
        Self {
            name: name.into(),
            value,
            materialized: false,
        }
    }
}

/// One executed stage: what ran, on which sets, for how long.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub stage_name: String,
    pub input_sets: Vec<String>,
    pub output_set: String,
    pub wall_time: Duration,
    pub blocks_processed: usize,
}

/// The operator a stage applies.
#[derive(Debug, Clone)]
pub enum StageOp {
    /// Element-wise map over the single input.
    Map(MapFn),
    Transpose,
    /// `inputs[0] * inputs[1]`.
    MatMul,
    /// Key-equality join adding `inputs[0]` and `inputs[1]` element-wise.
    JoinAdd,
    /// `inputs[0]` (n x c) plus the single-row set `inputs[1]` (1 x c),
    /// broadcast over rows.
    BroadcastRowAdd,
    /// Softmax phase 1: row-max subtraction and exponentiation.
    ExpScan,
    /// Softmax phase 2: per-row aggregation of exponentials and division.
    AggregateDivide,
    LayerNorm { eps: f32 },
    SliceCols { start: usize, count: usize },
    /// Column-concatenate all inputs left to right.
    ConcatCols,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub op: StageOp,
}

/// An ordered list of stages over named sets.
#[derive(Debug, Clone, Default)]
pub struct Pipeline {
    pub stages: Vec<Stage>,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        inputs: Vec<String>,
        output: impl Into<String>,
        op: StageOp,
    ) {
        self.stages.push(Stage {
            name: name.into(),
            inputs,
            output: output.into(),
            op,
        });
    }

    /// Check the wiring: every stage input must be a declared input set or a
    /// prior stage output, and output names must be unique.
    pub fn validate(&self, input_names: &BTreeSet<String>) -> Result<()> {
        let mut known = input_names.clone();
        for stage in &self.stages {
            for input in &stage.inputs {
                if !known.contains(input) {
                    return Err(Error::Wiring(format!(
                        "stage '{}' reads undeclared set '{}'",
                        stage.name, input
                    )));
                }
            }
            if !known.insert(stage.output.clone()) {
                return Err(Error::Wiring(format!(
                    "stage '{}' would overwrite set '{}'",
                    stage.name, stage.output
                )));
            }
        }
        Ok(())
    }
}

/// Storage backend for the intermediate writer.
pub trait SetStore {
    fn write_set(&mut self, name: &str, value: &BlockedMatrix) -> Result<()>;
    fn read_set(&self, name: &str) -> Result<BlockedMatrix>;
    fn contains_set(&self, name: &str) -> bool;
}

/// In-memory [`SetStore`]; useful in tests and examples.
#[derive(Debug, Default)]
pub struct MemoryStore {
    sets: BTreeMap<String, BlockedMatrix>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_names(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(|s| s.as_str())
    }
}

impl SetStore for MemoryStore {
    fn write_set(&mut self, name: &str, value: &BlockedMatrix) -> Result<()> {
        if self.sets.contains_key(name) {
            return Err(Error::NameCollision(name.to_string()));
        }
        self.sets.insert(name.to_string(), value.clone());
        Ok(())
    }

    fn read_set(&self, name: &str) -> Result<BlockedMatrix> {
        self.sets
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Corruption(format!("set '{}' not found in store", name)))
    }

    fn contains_set(&self, name: &str) -> bool {
        self.sets.contains_key(name)
    }
}

/// How a pipeline run treats stage outputs.
pub enum ExecMode<'a> {
    /// Keep every set in memory; materialization is a traced no-op.
    Memory,
    /// Persist every stage output through the intermediate writer and read it
    /// back before the next stage consumes it.
    MaterializeEachStage(&'a mut dyn SetStore),
}

/// Persist a set under its name and return it flagged as materialized.
pub fn materialize(set: TensorSet, store: &mut dyn SetStore) -> Result<TensorSet> {
    store.write_set(&set.name, &set.value)?;
    let value = store.read_set(&set.name)?;
    Ok(TensorSet {
        name: set.name,
        value,
        materialized: true,
    })
}

/// Residual connection: element-wise addition of two same-shaped sets via the
/// join operator, traced as one stage.
pub fn residual_add(x: &TensorSet, fx: &TensorSet) -> Result<(TensorSet, StageTrace)> {
    let start = Instant::now();
    let value = tensor::elementwise_add(&x.value, &fx.value)?;
    let blocks = value.num_blocks();
    let output = format!("{}+{}", x.name, fx.name);
    let trace = StageTrace {
        stage_name: "residual.join".into(),
        input_sets: vec![x.name.clone(), fx.name.clone()],
        output_set: output.clone(),
        wall_time: start.elapsed(),
        blocks_processed: blocks,
    };
    Ok((TensorSet::new(output, value), trace))
}

fn unary<'a>(inputs: &[&'a BlockedMatrix]) -> Result<&'a BlockedMatrix> {
    if inputs.len() != 1 {
        return Err(Error::Wiring(format!(
            "unary stage got {} inputs",
            inputs.len()
        )));
    }
    Ok(inputs[0])
}

fn binary<'a>(inputs: &[&'a BlockedMatrix]) -> Result<(&'a BlockedMatrix, &'a BlockedMatrix)> {
    if inputs.len() != 2 {
        return Err(Error::Wiring(format!(
            "binary stage got {} inputs",
            inputs.len()
        )));
    }
    Ok((inputs[0], inputs[1]))
}

fn apply_op(op: &StageOp, inputs: &[&BlockedMatrix]) -> Result<BlockedMatrix> {
    match op {
        StageOp::Map(f) => tensor::elementwise_map(unary(inputs)?, *f),
        StageOp::Transpose => Ok(tensor::block_transpose(unary(inputs)?)),
        StageOp::MatMul => {
            let (a, b) = binary(inputs)?;
            tensor::block_matmul(a, b)
        }
        StageOp::JoinAdd => {
            let (a, b) = binary(inputs)?;
            tensor::elementwise_add(a, b)
        }
        StageOp::BroadcastRowAdd => {
            let (a, bias) = binary(inputs)?;
            if bias.logical_rows() != 1 {
                return Err(Error::Shape(format!(
                    "broadcast bias set must have one row, got {}",
                    bias.logical_rows()
                )));
            }
            tensor::broadcast_row_add(a, &bias.reassemble()?)
        }
        StageOp::ExpScan => Ok(rowwise::softmax_exp_scan(unary(inputs)?)),
        StageOp::AggregateDivide => Ok(rowwise::softmax_aggregate_divide(unary(inputs)?)),
        StageOp::LayerNorm { eps } => Ok(rowwise::layer_norm(unary(inputs)?, *eps)),
        StageOp::SliceCols { start, count } => tensor::slice_cols(unary(inputs)?, *start, *count),
        StageOp::ConcatCols => tensor::concat_cols(inputs),
    }
}

/// Execute the stages in order over the named inputs. The wiring is checked
/// before anything runs; one trace entry is recorded per stage; the final
/// stage's output set is returned.
pub fn run_pipeline(
    pipeline: &Pipeline,
    inputs: Vec<TensorSet>,
    mode: &mut ExecMode<'_>,
) -> Result<(TensorSet, Vec<StageTrace>)> {
    let last_output = pipeline
        .stages
        .last()
        .ok_or_else(|| Error::InvalidArgument("pipeline has no stages".into()))?
        .output
        .clone();

    let mut env: BTreeMap<String, BlockedMatrix> = BTreeMap::new();
    for set in inputs {
        if env.insert(set.name.clone(), set.value).is_some() {
            return Err(Error::Wiring(format!("duplicate input set '{}'", set.name)));
        }
    }
    pipeline.validate(&env.keys().cloned().collect())?;

    let mut traces = Vec::with_capacity(pipeline.stages.len());
    for stage in &pipeline.stages {
        let start = Instant::now();
        let refs: Vec<&BlockedMatrix> = stage
            .inputs
            .iter()
            .map(|name| env.get(name).expect("validated wiring"))
            .collect();
        let wrap = |e: Error| Error::Stage {
            stage: stage.name.clone(),
            source: Box::new(e),
        };
        let mut value = apply_op(&stage.op, &refs).map_err(wrap)?;
        if let ExecMode::MaterializeEachStage(store) = mode {
            store.write_set(&stage.output, &value).map_err(wrap)?;
            value = store.read_set(&stage.output).map_err(wrap)?;
        }
        traces.push(StageTrace {
            stage_name: stage.name.clone(),
            input_sets: stage.inputs.clone(),
            output_set: stage.output.clone(),
            wall_time: start.elapsed(),
            blocks_processed: value.num_blocks(),
        });
        env.insert(stage.output.clone(), value);
    }

    let value = env.remove(&last_output).expect("last stage ran");
    let materialized = matches!(mode, ExecMode::MaterializeEachStage(_));
    Ok((
        TensorSet {
            name: last_output,
            value,
            materialized,
        },
        traces,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_blocked(seed: u64, rows: usize, cols: usize, bd: usize) -> BlockedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        BlockedMatrix::partition(&dense, rows, cols, bd).unwrap()
    }

    #[test]
    fn residual_identity_and_doubling() {
        let x = TensorSet::new("x", random_blocked(1, 4, 6, 3));
        let zero = TensorSet::new("z", BlockedMatrix::zeros(4, 6, 3).unwrap());
        let (out, trace) = residual_add(&x, &zero).unwrap();
        assert_eq!(out.value, x.value);
        assert_eq!(trace.input_sets, vec!["x".to_string(), "z".to_string()]);

        let (doubled, _) = residual_add(&x, &x).unwrap();
        let want = tensor::elementwise_map(&x.value, MapFn::Scale(2.0)).unwrap();
        for (a, b) in doubled
            .value
            .reassemble()
            .unwrap()
            .iter()
            .zip(want.reassemble().unwrap())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn materialize_roundtrip_and_collision() {
        let mut store = MemoryStore::new();
        let set = TensorSet::new("a", random_blocked(2, 10, 64, 8));
        let original = set.value.clone();
        let set = materialize(set, &mut store).unwrap();
        assert!(set.materialized);
        assert_eq!(set.value, original);
        assert_eq!(store.read_set("a").unwrap(), original);

        let dup = TensorSet::new("a", original);
        assert!(matches!(
            materialize(dup, &mut store),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn single_stage_equals_direct_kernel() {
        let x = random_blocked(3, 5, 7, 2);
        let mut p = Pipeline::new();
        p.push("relu", vec!["x".into()], "y", StageOp::Map(MapFn::Relu));
        let (out, traces) = run_pipeline(
            &p,
            vec![TensorSet::new("x", x.clone())],
            &mut ExecMode::Memory,
        )
        .unwrap();
        assert_eq!(out.value, tensor::elementwise_map(&x, MapFn::Relu).unwrap());
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].blocks_processed, x.num_blocks());
        assert!(!out.materialized);
    }

    #[test]
    fn undeclared_set_fails_before_execution() {
        let mut p = Pipeline::new();
        p.push("relu", vec!["x".into()], "y", StageOp::Map(MapFn::Relu));
        p.push("boom", vec!["ghost".into()], "z", StageOp::Map(MapFn::Relu));
        let err = run_pipeline(
            &p,
            vec![TensorSet::new("x", random_blocked(4, 4, 4, 2))],
            &mut ExecMode::Memory,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Wiring(_)));
    }

    #[test]
    fn memory_and_materialize_agree_bitwise() {
        let x = random_blocked(5, 10, 16, 8);
        let mut p = Pipeline::new();
        p.push("norm", vec!["x".into()], "n", StageOp::LayerNorm { eps: 1e-5 });
        p.push("exp_scan", vec!["n".into()], "e", StageOp::ExpScan);
        p.push("aggregate_divide", vec!["e".into()], "s", StageOp::AggregateDivide);
        p.push(
            "residual.join",
            vec!["s".into(), "x".into()],
            "y",
            StageOp::JoinAdd,
        );

        let (mem, mem_traces) = run_pipeline(
            &p,
            vec![TensorSet::new("x", x.clone())],
            &mut ExecMode::Memory,
        )
        .unwrap();
        let mut store = MemoryStore::new();
        let (mat, mat_traces) = run_pipeline(
            &p,
            vec![TensorSet::new("x", x)],
            &mut ExecMode::MaterializeEachStage(&mut store),
        )
        .unwrap();

        let a = mem.value.reassemble().unwrap();
        let b = mat.value.reassemble().unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(mat.materialized);
        assert_eq!(mem_traces.len(), mat_traces.len());
        assert!(store.contains_set("e"));
        assert!(store.contains_set("y"));
    }
}
