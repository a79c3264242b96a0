//! Parametric control-flow graphs and a block-counting interpreter.
//!
//! A [`CfgProgram`] is a list of kernels, each a list of [`BasicBlock`]s whose
//! terminators jump, branch on an integer predicate, or exit. Loop counters
//! and other scalars live in per-kernel variables that start at zero on every
//! launch. Block ids are dense and global across the program, assigned in
//! creation order.

mod dataset;
mod expr;
mod interp;
mod suite;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{generate_dataset, Axis, GridSpec};
pub use expr::{CmpOp, Expr, Pred};
pub use interp::{interpret, CountTrace, Interpreter, DEFAULT_STEP_BUDGET};
pub use suite::{builtin_suite, family, Family, FAMILY_NAMES};

#[derive(Debug, Error)]
pub enum CfgError {
    #[error("block {block} has no terminator")]
    MissingTerminator { block: u32 },
    #[error("kernel {kernel} has {found} exit blocks, expected exactly one")]
    ExitCount { kernel: u32, found: usize },
    #[error("kernel {kernel} has no blocks")]
    EmptyKernel { kernel: u32 },
    #[error("block {block} targets {target}, which is not a block of the same kernel")]
    BadTarget { block: u32, target: u32 },
    #[error("block {block} of kernel {kernel} is unreachable from the entry block")]
    Unreachable { kernel: u32, block: u32 },
    #[error("block {block} refers to parameter #{index}, program declares {declared}")]
    UnknownParam { block: u32, index: usize, declared: usize },
    #[error("block {block} refers to variable #{index}, kernel declares {declared}")]
    UnknownVar { block: u32, index: usize, declared: usize },
    #[error("parameter `{name}` has empty range [{min}, {max}]")]
    BadRange { name: String, min: i64, max: i64 },
    #[error("parameter `{0}` declared twice")]
    DuplicateParam(String),
    #[error("block ids are not dense: expected {expected}, found {found}")]
    NonDenseIds { expected: u32, found: u32 },
    #[error("expected {expected} parameter values, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter `{name}` = {value} is outside [{min}, {max}]")]
    OutOfRange { name: String, value: i64, min: i64, max: i64 },
    #[error("step budget of {budget} block entries exceeded (non-terminating or oversized configuration)")]
    BudgetExceeded { budget: u64 },
    #[error("arithmetic error in block {block}: {reason}")]
    Arithmetic { block: u32, reason: &'static str },
    #[error("grid spec: {0}")]
    Grid(String),
    #[error("trace sink: {0}")]
    Sink(#[from] csv::Error),
    #[error("trace sink: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CfgError> = std::result::Result<T, E>;

/// `var := value`, executed in order when the block is entered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assign {
    pub var: usize,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    Jump(u32),
    CondBranch { pred: Pred, then_target: u32, else_target: u32 },
    Exit,
}

impl Terminator {
    fn targets(&self) -> impl Iterator<Item = u32> {
        let (a, b) = match *self {
            Terminator::Jump(t) => (Some(t), None),
            Terminator::CondBranch { then_target, else_target, .. } => {
                (Some(then_target), Some(else_target))
            }
            Terminator::Exit => (None, None),
        };
        a.into_iter().chain(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: u32,
    pub kernel_id: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stmts: Vec<Assign>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub num_vars: usize,
    /// The first block is the entry.
    pub blocks: Vec<BasicBlock>,
}

impl Kernel {
    pub fn entry(&self) -> u32 {
        self.blocks[0].id
    }

    fn first_id(&self) -> u32 {
        self.blocks[0].id
    }

    fn contains(&self, id: u32) -> bool {
        id >= self.first_id() && ((id - self.first_id()) as usize) < self.blocks.len()
    }

    fn local(&self, id: u32) -> usize {
        (id - self.first_id()) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub min: i64,
    pub max: i64,
}

/// Immutable, validated program. Deserialization runs the same checks as the
/// builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProgramDef")]
pub struct CfgProgram {
    name: String,
    params: Vec<ParamDecl>,
    kernels: Vec<Kernel>,
}

#[derive(Deserialize)]
struct ProgramDef {
    name: String,
    params: Vec<ParamDecl>,
    kernels: Vec<Kernel>,
}

impl TryFrom<ProgramDef> for CfgProgram {
    type Error = CfgError;

    fn try_from(def: ProgramDef) -> Result<Self> {
        CfgProgram::new(def.name, def.params, def.kernels)
    }
}

impl CfgProgram {
    pub fn new(name: impl Into<String>, params: Vec<ParamDecl>, kernels: Vec<Kernel>) -> Result<Self> {
        let program = CfgProgram { name: name.into(), params, kernels };
        program.validate()?;
        Ok(program)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamDecl] {
        &self.params
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn num_blocks(&self) -> usize {
        self.kernels.iter().map(|k| k.blocks.len()).sum()
    }

    /// `(kernel_id, bb_id)` for every block, in id order.
    pub fn block_keys(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.kernels.iter().flat_map(|k| k.blocks.iter().map(|b| (b.kernel_id, b.id)))
    }

    pub fn check_params(&self, values: &[i64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(CfgError::ParamCount { expected: self.params.len(), found: values.len() });
        }
        for (decl, &value) in self.params.iter().zip(values) {
            if value < decl.min || value > decl.max {
                return Err(CfgError::OutOfRange {
                    name: decl.name.clone(),
                    value,
                    min: decl.min,
                    max: decl.max,
                });
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for p in &self.params {
            if p.min > p.max {
                return Err(CfgError::BadRange { name: p.name.clone(), min: p.min, max: p.max });
            }
            if !names.insert(p.name.as_str()) {
                return Err(CfgError::DuplicateParam(p.name.clone()));
            }
        }

        let mut next_id = 0u32;
        for kernel in &self.kernels {
            if kernel.blocks.is_empty() {
                return Err(CfgError::EmptyKernel { kernel: kernel.id });
            }
            for block in &kernel.blocks {
                if block.id != next_id {
                    return Err(CfgError::NonDenseIds { expected: next_id, found: block.id });
                }
                next_id += 1;
                self.validate_block(kernel, block)?;
            }
            let exits = kernel.blocks.iter().filter(|b| b.terminator == Terminator::Exit).count();
            if exits != 1 {
                return Err(CfgError::ExitCount { kernel: kernel.id, found: exits });
            }
            check_reachable(kernel)?;
        }
        Ok(())
    }

    fn validate_block(&self, kernel: &Kernel, block: &BasicBlock) -> Result<()> {
        for target in block.terminator.targets() {
            if !kernel.contains(target) {
                return Err(CfgError::BadTarget { block: block.id, target });
            }
        }
        let mut exprs: Vec<&Expr> = Vec::new();
        for stmt in &block.stmts {
            if stmt.var >= kernel.num_vars {
                return Err(CfgError::UnknownVar {
                    block: block.id,
                    index: stmt.var,
                    declared: kernel.num_vars,
                });
            }
            exprs.push(&stmt.value);
        }
        if let Terminator::CondBranch { pred, .. } = &block.terminator {
            pred.collect_exprs(&mut exprs);
        }
        for e in exprs {
            if let Some(index) = e.max_param() {
                if index >= self.params.len() {
                    return Err(CfgError::UnknownParam {
                        block: block.id,
                        index,
                        declared: self.params.len(),
                    });
                }
            }
            if let Some(index) = e.max_var() {
                if index >= kernel.num_vars {
                    return Err(CfgError::UnknownVar {
                        block: block.id,
                        index,
                        declared: kernel.num_vars,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_reachable(kernel: &Kernel) -> Result<()> {
    let mut seen = vec![false; kernel.blocks.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(local) = queue.pop_front() {
        for target in kernel.blocks[local].terminator.targets() {
            let t = kernel.local(target);
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(local) => Err(CfgError::Unreachable { kernel: kernel.id, block: kernel.blocks[local].id }),
        None => Ok(()),
    }
}

/// Incremental construction of a [`CfgProgram`].
///
/// Parameters must be declared before the kernels that use them. Blocks are
/// created first and terminated later so that back edges can be expressed.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    name: String,
    params: Vec<ParamDecl>,
    kernels: Vec<Kernel>,
    next_id: u32,
}

impl ProgramBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        ProgramBuilder { name: name.into(), ..Default::default() }
    }

    /// Declares an inclusive-range integer parameter and returns an expression
    /// reading it.
    pub fn param(&mut self, name: impl Into<String>, min: i64, max: i64) -> Expr {
        self.params.push(ParamDecl { name: name.into(), min, max });
        Expr::Param(self.params.len() - 1)
    }

    pub fn kernel(&mut self, name: impl Into<String>) -> KernelBuilder<'_> {
        let id = self.kernels.len() as u32;
        KernelBuilder { program: self, id, name: name.into(), num_vars: 0, blocks: Vec::new() }
    }

    pub fn build(self) -> Result<CfgProgram> {
        CfgProgram::new(self.name, self.params, self.kernels)
    }
}

pub struct KernelBuilder<'a> {
    program: &'a mut ProgramBuilder,
    id: u32,
    name: String,
    num_vars: usize,
    blocks: Vec<(BasicBlock, bool)>,
}

impl KernelBuilder<'_> {
    /// A fresh kernel-local variable, zero at launch.
    pub fn var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    /// Creates a block; the first block created is the kernel entry.
    pub fn block(&mut self) -> u32 {
        let id = self.program.next_id;
        self.program.next_id += 1;
        let block = BasicBlock { id, kernel_id: self.id, stmts: Vec::new(), terminator: Terminator::Exit };
        self.blocks.push((block, false));
        id
    }

    fn slot(&mut self, block: u32) -> &mut (BasicBlock, bool) {
        let first = self.blocks.first().map(|(b, _)| b.id).unwrap_or(0);
        &mut self.blocks[(block - first) as usize]
    }

    pub fn assign(&mut self, block: u32, var: usize, value: Expr) -> &mut Self {
        self.slot(block).0.stmts.push(Assign { var, value });
        self
    }

    fn terminate(&mut self, block: u32, terminator: Terminator) {
        let slot = self.slot(block);
        slot.0.terminator = terminator;
        slot.1 = true;
    }

    pub fn jump(&mut self, block: u32, target: u32) {
        self.terminate(block, Terminator::Jump(target));
    }

    pub fn branch(&mut self, block: u32, pred: Pred, then_target: u32, else_target: u32) {
        self.terminate(block, Terminator::CondBranch { pred, then_target, else_target });
    }

    pub fn exit(&mut self, block: u32) {
        self.terminate(block, Terminator::Exit);
    }

    pub fn finish(self) -> Result<()> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (block, terminated) in self.blocks {
            if !terminated {
                return Err(CfgError::MissingTerminator { block: block.id });
            }
            blocks.push(block);
        }
        self.program.kernels.push(Kernel { id: self.id, name: self.name, num_vars: self.num_vars, blocks });
        Ok(())
    }
}
