use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CfgError, CfgProgram, Result, Terminator};

/// Block entries allowed per `interpret` call before giving up.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

/// Per-block entry counts of one program run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTrace {
    pub program_name: String,
    pub param_values: Vec<i64>,
    /// `(kernel_id, bb_id) -> entries`; every block of the program is present,
    /// including those never entered.
    pub counts: BTreeMap<(u32, u32), u64>,
}

impl CountTrace {
    pub fn count(&self, kernel_id: u32, bb_id: u32) -> Option<u64> {
        self.counts.get(&(kernel_id, bb_id)).copied()
    }

    /// Counts in block-id order.
    pub fn to_vec(&self) -> Vec<u64> {
        self.counts.values().copied().collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Interpreter {
    budget: u64,
}

impl Default for Interpreter {
    fn default() -> Self {
        Interpreter { budget: DEFAULT_STEP_BUDGET }
    }
}

impl Interpreter {
    pub fn with_budget(budget: u64) -> Self {
        Interpreter { budget }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Launches every kernel once, in order, counting one entry per dynamic
    /// execution of a block.
    pub fn run(&self, program: &CfgProgram, params: &[i64]) -> Result<CountTrace> {
        program.check_params(params)?;
        let mut counts = vec![0u64; program.num_blocks()];
        let mut steps = 0u64;

        for kernel in program.kernels() {
            let mut vars = vec![0i64; kernel.num_vars];
            let mut local = 0usize;
            loop {
                let block = &kernel.blocks[local];
                steps += 1;
                if steps > self.budget {
                    return Err(CfgError::BudgetExceeded { budget: self.budget });
                }
                counts[block.id as usize] += 1;

                let fault = |reason| CfgError::Arithmetic { block: block.id, reason };
                for stmt in &block.stmts {
                    vars[stmt.var] = stmt.value.eval(params, &vars).map_err(fault)?;
                }
                let next = match &block.terminator {
                    Terminator::Exit => break,
                    Terminator::Jump(t) => *t,
                    Terminator::CondBranch { pred, then_target, else_target } => {
                        if pred.eval(params, &vars).map_err(fault)? {
                            *then_target
                        } else {
                            *else_target
                        }
                    }
                };
                local = kernel.local(next);
            }
        }

        let counts = program.block_keys().zip(counts).collect();
        Ok(CountTrace { program_name: program.name().to_string(), param_values: params.to_vec(), counts })
    }
}

pub fn interpret(program: &CfgProgram, params: &[i64]) -> Result<CountTrace> {
    Interpreter::default().run(program, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{family, Expr, Pred, ProgramBuilder};

    /// entry -> header -> body -> latch -> header ... -> exit, trip count `t`.
    fn counted_loop() -> CfgProgram {
        let mut p = ProgramBuilder::new("fig2");
        let t = p.param("t", 0, 100);
        let mut k = p.kernel("loop");
        let i = k.var();
        let entry = k.block();
        let header = k.block();
        let body = k.block();
        let latch = k.block();
        let exit = k.block();
        k.assign(entry, i, Expr::c(0));
        k.jump(entry, header);
        k.branch(header, Pred::lt(Expr::var(i), t), body, exit);
        k.jump(body, latch);
        k.assign(latch, i, Expr::var(i) + 1);
        k.jump(latch, header);
        k.exit(exit);
        k.finish().unwrap();
        p.build().unwrap()
    }

    #[test]
    fn straight_line_block_counts_once() {
        let mut p = ProgramBuilder::new("one");
        let mut k = p.kernel("k");
        let b = k.block();
        k.exit(b);
        k.finish().unwrap();
        let trace = interpret(&p.build().unwrap(), &[]).unwrap();
        assert_eq!(trace.to_vec(), vec![1]);
    }

    #[test]
    fn loop_shape_hand_traced() {
        let program = counted_loop();
        // [entry, header, body, latch, exit] for t = 0, 1, 5
        let expected = [(0, [1, 1, 0, 0, 1]), (1, [1, 2, 1, 1, 1]), (5, [1, 6, 5, 5, 1])];
        for (t, counts) in expected {
            assert_eq!(interpret(&program, &[t]).unwrap().to_vec(), counts.to_vec(), "t = {t}");
        }
    }

    #[test]
    fn gemm_nest_innermost_count() {
        let gemm = family("trilinear").unwrap();
        let trace = interpret(&gemm.program, &[4, 5, 6]).unwrap();
        assert_eq!(trace.count(0, 1), Some(120));
    }

    #[test]
    fn out_of_range_and_arity() {
        let program = counted_loop();
        assert!(matches!(interpret(&program, &[101]), Err(CfgError::OutOfRange { value: 101, .. })));
        assert!(matches!(interpret(&program, &[1, 2]), Err(CfgError::ParamCount { expected: 1, found: 2 })));
    }

    #[test]
    fn budget_stops_runaway_loop() {
        let mut p = ProgramBuilder::new("spin");
        let mut k = p.kernel("k");
        let a = k.block();
        let b = k.block();
        k.branch(a, Pred::eq(Expr::c(0), Expr::c(0)), a, b);
        k.exit(b);
        k.finish().unwrap();
        let program = p.build().unwrap();
        let err = Interpreter::with_budget(1000).run(&program, &[]).unwrap_err();
        assert!(matches!(err, CfgError::BudgetExceeded { budget: 1000 }));
    }

    #[test]
    fn budget_counts_all_kernels() {
        let program = counted_loop();
        // t = 5 takes 18 entries.
        assert!(Interpreter::with_budget(18).run(&program, &[5]).is_ok());
        assert!(Interpreter::with_budget(17).run(&program, &[5]).is_err());
    }

    #[test]
    fn division_by_zero_names_block() {
        let mut p = ProgramBuilder::new("div");
        let n = p.param("n", 0, 3);
        let mut k = p.kernel("k");
        let v = k.var();
        let a = k.block();
        k.assign(a, v, Expr::c(6) / n);
        k.exit(a);
        k.finish().unwrap();
        let program = p.build().unwrap();
        assert!(interpret(&program, &[2]).is_ok());
        assert!(matches!(interpret(&program, &[0]), Err(CfgError::Arithmetic { block: 0, .. })));
    }
}
